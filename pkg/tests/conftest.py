import socket

import pytest

from corpus import build_corpus
from deeper.litclients import ClientConfig, FakeClock, HttpGateway, LiteratureClients, ReplayTransport


class _NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Every test runs with outbound connections refused."""

    def refuse(*args, **kwargs):
        raise _NetworkBlocked("network access attempted during tests")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("replay")
    build_corpus().write(d)
    return d


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def replay(fixture_dir):
    return ReplayTransport(fixture_dir)


@pytest.fixture
def clients(replay, clock, tmp_path):
    return LiteratureClients(HttpGateway(replay, ClientConfig(cache_dir=tmp_path / "cache"), clock))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
