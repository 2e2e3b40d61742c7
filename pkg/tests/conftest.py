import socket

import pytest

from gistgraph.config import load_config
from gistgraph.pipeline import Retriever, build_index
from gistgraph.synthetic import make_planted_corpus, write_planted


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Every test runs offline; any socket connect fails loudly."""

    def refuse(*args, **kwargs):
        raise NetworkBlocked("network access attempted during tests")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.fixture(scope="session")
def planted(tmp_path_factory):
    """Planted corpus indexed once per session: (config, index, examples)."""
    root = tmp_path_factory.mktemp("planted")
    cfg = load_config(write_planted(root, seed=0))
    index = build_index(cfg)
    return cfg, index, make_planted_corpus(seed=0).examples


@pytest.fixture(scope="session")
def planted_retriever(planted):
    cfg, index, _ = planted
    return Retriever(index, cfg)
