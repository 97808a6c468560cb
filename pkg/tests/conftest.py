"""Shared fixtures: fast password-hash parameters and small live stacks."""

from __future__ import annotations

import pytest

from relaymesh.config import ServerConfig
from relaymesh.envelope import generate_keypair
from relaymesh.server import AgencyServer


def fast_config(agency: str = "A", **kwargs) -> ServerConfig:
    """Server settings with test-speed scrypt cost."""
    kwargs.setdefault("scrypt_n", 16)
    return ServerConfig(agency=agency, **kwargs)


@pytest.fixture
def server_a() -> AgencyServer:
    return AgencyServer(fast_config("A"), generate_keypair(seed=1001))
