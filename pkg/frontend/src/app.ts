/**
 * Entry point: wires browser storage, the gateway link, the console state
 * machine, and the renderer together. Configuration is a single gateway_url;
 * without one the gateway is assumed to live on the serving host.
 */

import { ConsoleCore } from "./console.js";
import { GatewayLink } from "./gateway.js";
import { Keystore } from "./keystore.js";
import { ConsoleRenderer } from "./render.js";

declare global {
  interface Window {
    CONSOLE_CONFIG?: { gateway_url?: string };
  }
}

function gatewayUrl(): string {
  const configured = window.CONSOLE_CONFIG?.gateway_url;
  if (configured !== undefined && configured !== "") return configured;
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/gateway`;
}

function main(): void {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app element");
  const url = gatewayUrl();
  const core = new ConsoleCore(new Keystore(window.localStorage), url);
  const link = new GatewayLink(url, {
    onOpen: () => core.onConnected(),
    onMessage: (msg) => core.onServerMessage(msg),
    onStatus: (status, retryInMs) => {
      if (status === "retrying" || status === "closed") core.onDisconnected(retryInMs);
    },
  });
  core.transport = link;
  new ConsoleRenderer(root, core).render();
  link.connect();
}

main();
