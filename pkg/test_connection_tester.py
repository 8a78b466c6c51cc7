"""
Tests für den Verbindungstest der Live-Backends (ohne Netzwerk)
"""

from types import SimpleNamespace

import numpy as np
import pytest

import connection_tester
import live_providers
from config_manager import build_run_config
from corpus import PaperRecord
from providers import Embedding
from survey_errors import BackendUnreachable


@pytest.fixture
def live_config():
    config = build_run_config({'topic': 'T'}, credentials={'llm': 'k', 'embedding': 'k'})
    config.llm.model_name = 'test-model'
    return config


class _FakeEmbedder:
    def __init__(self, config):
        self.config = config

    def embed(self, texts):
        return [Embedding(np.ones(8)) for _ in texts]


class _FakeScholar:
    def __init__(self, config):
        pass

    def search_papers(self, query, limit):
        return [PaperRecord('x2024paper', 'p1', 'A' * 100)]


def test_all_backends_reachable(live_config, monkeypatch):
    client = SimpleNamespace(models=SimpleNamespace(retrieve=lambda name: SimpleNamespace(id=name)))
    monkeypatch.setattr(live_providers, '_openai_client', lambda config: client)
    monkeypatch.setattr(live_providers, 'OpenAIEmbeddingProvider', _FakeEmbedder)
    monkeypatch.setattr(live_providers, 'SemanticScholarProvider', _FakeScholar)

    results = connection_tester.check_backends(live_config)
    assert [name for name, _, _ in results] == ['LLM', 'Embedding', 'Semantic Scholar', 'Rerank']
    assert all(ok for _, ok, _ in results)
    messages = {name: message for name, _, message in results}
    assert messages['LLM'] == "Modell test-model verfügbar"
    assert messages['Embedding'].endswith('Dimension 8')
    assert messages['Semantic Scholar'] == f"Erreichbar, z.B. '{'A' * 80}'"
    assert messages['Rerank'].startswith('Kein Endpunkt')


def test_failures_are_reported_not_raised(live_config, monkeypatch):
    def unreachable(config):
        raise BackendUnreachable("Verbindung verweigert", stage='check')

    class _FailingReranker:
        def __init__(self, config):
            pass

        def rerank(self, query, documents):
            raise BackendUnreachable("503", stage='check')

    monkeypatch.setattr(live_providers, '_openai_client', unreachable)
    monkeypatch.setattr(live_providers, 'OpenAIEmbeddingProvider', unreachable)
    monkeypatch.setattr(live_providers, 'SemanticScholarProvider', unreachable)
    monkeypatch.setattr(live_providers, 'HttpReranker', _FailingReranker)
    live_config.rerank.endpoint = 'https://rerank.example.org'

    results = connection_tester.check_backends(live_config)
    assert [ok for _, ok, _ in results] == [False, False, False, False]
    assert results[0][2] == "Verbindung verweigert"
    assert results[3][2] == "503"


def test_scholarly_without_hits(live_config, monkeypatch):
    class _Empty(_FakeScholar):
        def search_papers(self, query, limit):
            return []

    monkeypatch.setattr(live_providers, 'SemanticScholarProvider', _Empty)
    assert connection_tester.test_scholarly_connection(live_config.scholarly) == (True, "Erreichbar, aber keine Treffer")


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
