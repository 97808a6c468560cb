"""Relay-hop secure messaging: sealed envelopes, blind relays, auditing servers."""

__version__ = "0.1.0"
