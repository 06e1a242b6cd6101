import socket
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
SIGNAL = FIXTURES / "signal"

_acceptance_lines = []


def report(criterion, passed, detail):
    """Record one acceptance line; printed in the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    _acceptance_lines.append(line)
    print(line)
    return passed


@pytest.fixture
def acceptance():
    return report


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Every test runs with outbound sockets disabled."""
    def refuse(*args, **kwargs):
        raise OSError("network access is disabled during tests")
    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.delenv("GEONAMES_USER", raising=False)
    monkeypatch.delenv("PLACES_API_KEY", raising=False)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
