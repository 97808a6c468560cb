/**
 * DOM renderer for the console. Every view re-renders from ConsoleCore state
 * on change. User-controlled strings (addresses, message bodies, server error
 * text) are only ever assigned through textContent, so markup in a message
 * body renders as inert text instead of executing.
 */

import { ConsoleCore, TranscriptRow } from "./console.js";

export class ConsoleRenderer {
  constructor(
    private root: HTMLElement,
    private core: ConsoleCore,
  ) {
    core.onChange = () => this.render();
  }

  private doc(): Document {
    return this.root.ownerDocument;
  }

  private el(tag: string, className: string, text?: string): HTMLElement {
    const node = this.doc().createElement(tag);
    node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  render(): void {
    // carry typed-but-unsent input across re-renders triggered by deliveries
    const keep = new Map<string, string>();
    for (const input of this.root.querySelectorAll<HTMLInputElement>("input[data-keep]")) {
      keep.set(input.dataset["keep"]!, input.value);
    }
    this.root.replaceChildren();
    if (this.core.keyMismatch !== null) {
      this.root.appendChild(this.keyMismatchScreen());
      return;
    }
    if (this.core.banner !== null) {
      this.root.appendChild(this.el("div", "banner", this.core.banner));
    }
    const view = this.core.view;
    if (view.kind === "login") {
      this.root.appendChild(this.loginView(keep));
    } else if (view.kind === "roster") {
      this.root.appendChild(this.rosterView(keep));
    } else {
      this.root.appendChild(this.chatView(view.buddy, keep));
    }
    this.root.appendChild(this.toastArea());
  }

  // -- key mismatch -----------------------------------------------------------------

  private keyMismatchScreen(): HTMLElement {
    const mismatch = this.core.keyMismatch!;
    const pane = this.el("div", "key-mismatch");
    pane.appendChild(this.el("h1", "warning-title", "SERVER KEY CHANGED"));
    pane.appendChild(
      this.el(
        "p",
        "warning-text",
        "The server presented a key that does not match the pinned one. " +
          "Someone could be intercepting this connection. Do not log in " +
          "unless you know why the key changed.",
      ),
    );
    pane.appendChild(this.el("p", "fingerprint", `pinned:   ${mismatch.pinnedFingerprint}`));
    pane.appendChild(this.el("p", "fingerprint", `received: ${mismatch.receivedFingerprint}`));
    const trust = this.el("button", "trust-button", "trust the new key");
    trust.addEventListener("click", () => this.core.trustNewKey());
    pane.appendChild(trust);
    return pane;
  }

  // -- login ------------------------------------------------------------------------

  private input(name: string, placeholder: string, type = "text"): HTMLInputElement {
    const node = this.doc().createElement("input");
    node.type = type;
    node.placeholder = placeholder;
    node.dataset["keep"] = name;
    node.className = `input-${name}`;
    return node;
  }

  private loginView(keep: Map<string, string>): HTMLElement {
    const pane = this.el("div", "login-pane");
    pane.appendChild(this.el("h1", "title", "relaymesh console"));
    const user = this.input("user", "user name");
    const email = this.input("email", "email (registration only)");
    const password = this.input("password", "password", "password");
    for (const node of [user, email, password]) {
      node.value = keep.get(node.dataset["keep"]!) ?? "";
      pane.appendChild(node);
    }
    const row = this.el("div", "button-row");
    const loginButton = this.el("button", "login-button", "log in");
    loginButton.addEventListener("click", () => {
      void this.core.login(user.value.trim(), password.value);
    });
    const registerButton = this.el("button", "register-button", "register");
    registerButton.addEventListener("click", () => {
      void this.core.register(user.value.trim(), email.value.trim(), password.value);
    });
    row.appendChild(loginButton);
    row.appendChild(registerButton);
    pane.appendChild(row);
    pane.appendChild(this.importControl(user));
    const status = this.core.connected ? "gateway connected" : "gateway offline";
    pane.appendChild(this.el("p", "link-status", status));
    return pane;
  }

  private importControl(user: HTMLInputElement): HTMLElement {
    const wrap = this.el("div", "import-row");
    const file = this.doc().createElement("input");
    file.type = "file";
    file.className = "import-file";
    file.addEventListener("change", () => {
      const chosen = file.files?.[0];
      if (chosen === undefined || user.value.trim() === "") return;
      void chosen.arrayBuffer().then((buf) => {
        this.core.importKeys(user.value.trim(), new Uint8Array(buf));
      });
    });
    wrap.appendChild(this.el("span", "import-label", "import keystore:"));
    wrap.appendChild(file);
    return wrap;
  }

  // -- roster -----------------------------------------------------------------------

  private rosterView(keep: Map<string, string>): HTMLElement {
    const pane = this.el("div", "roster-pane");
    const header = this.el("div", "pane-header");
    header.appendChild(this.el("span", "own-address", this.core.address ?? ""));
    const exportButton = this.el("button", "export-button", "export keys");
    exportButton.addEventListener("click", () => this.downloadKeys());
    header.appendChild(exportButton);
    const logout = this.el("button", "logout-button", "log out");
    logout.addEventListener("click", () => this.core.logout());
    header.appendChild(logout);
    pane.appendChild(header);

    const addRow = this.el("div", "add-row");
    const email = this.input("buddy-email", "buddy email");
    email.value = keep.get("buddy-email") ?? "";
    const addButton = this.el("button", "add-button", "add");
    addButton.addEventListener("click", () => {
      if (email.value.trim() !== "") this.core.addBuddy(email.value.trim());
      email.value = "";
    });
    addRow.appendChild(email);
    addRow.appendChild(addButton);
    pane.appendChild(addRow);

    const list = this.el("ul", "buddy-list");
    for (const buddy of this.core.buddies()) {
      const item = this.el("li", "buddy-row");
      item.appendChild(this.el("span", buddy.online ? "presence online" : "presence offline", buddy.online ? "●" : "○"));
      const name = this.el("span", "buddy-address", buddy.address);
      item.appendChild(name);
      if (buddy.unread > 0) {
        item.appendChild(this.el("span", "unread-badge", String(buddy.unread)));
      }
      item.addEventListener("click", () => this.core.openChat(buddy.address));
      list.appendChild(item);
    }
    pane.appendChild(list);
    return pane;
  }

  private downloadKeys(): void {
    const user = this.core.user;
    if (user === null) return;
    let blob: Uint8Array;
    try {
      blob = this.core.exportKeys(user);
    } catch {
      return;
    }
    try {
      const url = URL.createObjectURL(new Blob([blob.slice().buffer]));
      const anchor = this.doc().createElement("a");
      anchor.href = url;
      anchor.download = `${user}.skey`;
      anchor.click();
      URL.revokeObjectURL(url);
    } catch {
      // headless environments have no object URLs; the keystore API still works
    }
  }

  // -- chat -------------------------------------------------------------------------

  private chatView(buddy: string, keep: Map<string, string>): HTMLElement {
    const pane = this.el("div", "chat-pane");
    const header = this.el("div", "pane-header");
    const back = this.el("button", "back-button", "< roster");
    back.addEventListener("click", () => this.core.closeChat());
    header.appendChild(back);
    header.appendChild(this.el("span", "chat-buddy", buddy));
    pane.appendChild(header);

    const rows = this.el("div", "transcript");
    for (const row of this.core.transcript(buddy)) {
      rows.appendChild(this.transcriptRow(row));
    }
    pane.appendChild(rows);

    const composeRow = this.el("div", "compose-row");
    const compose = this.input("compose", "type a message");
    compose.value = keep.get("compose") ?? "";
    const sendButton = this.el("button", "send-button", "send");
    const submit = () => {
      const text = compose.value;
      compose.value = "";
      void this.core.sendMessage(text);
    };
    sendButton.addEventListener("click", submit);
    compose.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") submit();
    });
    composeRow.appendChild(compose);
    composeRow.appendChild(sendButton);
    pane.appendChild(composeRow);
    return pane;
  }

  private transcriptRow(row: TranscriptRow): HTMLElement {
    if (row.kind === "tamper") {
      return this.el("div", "row tamper-row", `envelope could not be opened (${row.detail})`);
    }
    if (row.kind === "error") {
      return this.el("div", "row error-row", row.detail);
    }
    const node = this.el("div", "row message-row");
    const mine = row.author === this.core.address;
    node.classList.add(mine ? "mine" : "theirs");
    node.appendChild(this.el("span", "author", `${row.author}: `));
    node.appendChild(this.el("span", "body", row.body));
    node.appendChild(this.el("span", "stamp", new Date(row.sentAt).toLocaleTimeString()));
    return node;
  }

  // -- toasts -----------------------------------------------------------------------

  private toastArea(): HTMLElement {
    const area = this.el("div", "toast-area");
    this.core.toasts.forEach((text, index) => {
      const toast = this.el("div", "toast", text);
      toast.addEventListener("click", () => this.core.dismissToast(index));
      area.appendChild(toast);
    });
    return area;
  }
}
