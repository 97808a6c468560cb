"""Command-line entry points: server, relay, entry, client, simnet."""
