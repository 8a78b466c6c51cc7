"""
Gemeinsame Fixtures für die Tests der Survey-Erzeugung
Alle Tests laufen offline gegen die Mock-Provider und das Fixture-Korpus
"""

import json
from pathlib import Path

import pytest

import run_logger
from config_manager import PROVIDER_NAMES, build_run_config
from mock_providers import create_mock_providers
from retrieval import TopicSpec


# Referenzmaterial und Build-Ausgaben nicht sammeln
collect_ignore = ['examples', 'build', 'dist']

FIXTURES = Path(__file__).parent / 'fixtures'
MOCK_CORPUS = FIXTURES / 'mock_corpus.json'

TOPIC = "Parameter-Efficient Fine-Tuning for Large Language Models"
DESCRIPTION = ("Methods that adapt large language models by training a small number of parameters, "
               "such as adapters, low-rank adaptation and prompt tuning.")


@pytest.fixture(autouse=True)
def fresh_logger(monkeypatch, tmp_path):
    """Jeder Test bekommt einen frischen Logger ohne Datei; kein survey_config.json aus dem Arbeitsverzeichnis"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv('LOG_LEVEL', raising=False)
    run_logger.reset_logger()
    yield run_logger.get_logger()
    run_logger.reset_logger()


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / 'survey_out'
    path.mkdir()
    return path


@pytest.fixture
def run_config(out_dir):
    config = build_run_config({
        'topic': TOPIC,
        'description': DESCRIPTION,
        'mock': True,
        'out_dir': str(out_dir),
        'fixture_corpus': str(MOCK_CORPUS),
    }, credentials={})
    # Wiederholungen ohne Wartezeit
    for name in PROVIDER_NAMES:
        getattr(config, name).retry_backoff = 0.0
    return config


@pytest.fixture
def topic_spec():
    return TopicSpec(TOPIC, DESCRIPTION)


@pytest.fixture
def providers(run_config):
    return create_mock_providers(run_config)


@pytest.fixture
def corpus_data():
    with open(MOCK_CORPUS, 'r', encoding='utf-8') as f:
        return json.load(f)


@pytest.fixture
def fixture_path():
    def _path(name):
        return FIXTURES / name
    return _path
