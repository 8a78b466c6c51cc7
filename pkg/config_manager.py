"""
Config Manager für die Survey-Erzeugung
Verwaltet .env (Credentials), survey_config.json und die Laufkonfiguration
"""

import copy
import json
import os
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv, dotenv_values

from providers import ProviderConfig
from retrieval import RetrievalConfig
from survey_errors import ConfigError


SURVEY_CONFIG_FILE = 'survey_config.json'
SCHEMA_VERSION = 1

# Credentials nur aus der Umgebung
CREDENTIAL_ENV = {
    'llm': 'SURVEY_LLM_API_KEY',
    'embedding': 'SURVEY_EMBEDDING_API_KEY',
    'scholarly': 'SEMANTIC_SCHOLAR_API_KEY',
    'rerank': 'SURVEY_RERANK_API_KEY',
}
PROVIDER_NAMES = tuple(CREDENTIAL_ENV)

# Standard-Konfiguration - zentrale Definition
DEFAULT_SURVEY_CONFIG = {
    'schema_version': SCHEMA_VERSION,
    'target_length': 6000,
    'seed': 7,
    'mock': False,
    'n_candidates': 3,
    'parallelism': 4,
    'fixture_corpus': None,
    'providers': {
        'llm': {'endpoint': '', 'model_name': 'gpt-4o-mini', 'request_timeout': 120.0, 'max_retries': 2,
                'retry_backoff': 1.0, 'requests_per_second': 0.0},
        'embedding': {'endpoint': '', 'model_name': 'text-embedding-3-small', 'request_timeout': 60.0,
                      'max_retries': 2, 'retry_backoff': 1.0, 'requests_per_second': 0.0},
        'scholarly': {'endpoint': 'https://api.semanticscholar.org/graph/v1', 'model_name': '',
                      'request_timeout': 30.0, 'max_retries': 3, 'retry_backoff': 2.0, 'requests_per_second': 1.0},
        'rerank': {'endpoint': '', 'model_name': 'rerank-english-v3.0', 'request_timeout': 30.0,
                   'max_retries': 2, 'retry_backoff': 1.0, 'requests_per_second': 0.0},
    },
    'retrieval': asdict(RetrievalConfig()),
    'writing': {
        'rag_top_k': 30,
        'rag_final_k': 10,
        'chunk_size': 1000,
        'chunk_overlap': 200,
        'table_threshold': 10,
        'context_cap': 60000,
    },
    'ablation': {
        'enable_citation_trace': True,
        'enable_plan_update': True,
        'enable_final_refine': True,
    },
    'evaluation': {
        'reference_year': None,
        'k_list': [1, 3, 5, 7, 10],
        'judge': True,
    },
}

ENV_TEMPLATE = {
    'SURVEY_LLM_API_KEY': '',
    'SURVEY_EMBEDDING_API_KEY': '',
    'SEMANTIC_SCHOLAR_API_KEY': '',
    'SURVEY_RERANK_API_KEY': '',
    'LOG_LEVEL': 'INFO',
}


@dataclass
class RunConfig:
    topic: str
    description: str = ''
    out_dir: str = 'survey_out'
    target_length: int = 6000
    mock: bool = False
    seed: int = 7
    n_candidates: int = 3
    parallelism: int = 4
    llm: ProviderConfig = field(default_factory=ProviderConfig)
    embedding: ProviderConfig = field(default_factory=ProviderConfig)
    scholarly: ProviderConfig = field(default_factory=ProviderConfig)
    rerank: ProviderConfig = field(default_factory=ProviderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    fixture_corpus: Optional[str] = None
    rag_top_k: int = 30
    rag_final_k: int = 10
    chunk_size: int = 1000
    chunk_overlap: int = 200
    table_threshold: int = 10
    context_cap: int = 60000
    enable_citation_trace: bool = True
    enable_plan_update: bool = True
    enable_final_refine: bool = True
    reference_year: Optional[int] = None
    k_list: list = field(default_factory=lambda: [1, 3, 5, 7, 10])
    judge: bool = True

    def to_dict(self):
        """Serialisierbar und über --config wieder einlesbar; ohne Credentials und Ausgabeverzeichnis"""
        return {
            'schema_version': SCHEMA_VERSION,
            'topic': self.topic,
            'description': self.description,
            'target_length': self.target_length,
            'seed': self.seed,
            'mock': self.mock,
            'n_candidates': self.n_candidates,
            'parallelism': self.parallelism,
            'fixture_corpus': self.fixture_corpus,
            'providers': {name: _provider_dict(getattr(self, name)) for name in PROVIDER_NAMES},
            'retrieval': asdict(self.retrieval),
            'writing': {name: getattr(self, name) for name in DEFAULT_SURVEY_CONFIG['writing']},
            'ablation': {name: getattr(self, name) for name in DEFAULT_SURVEY_CONFIG['ablation']},
            'evaluation': {name: getattr(self, name) for name in DEFAULT_SURVEY_CONFIG['evaluation']},
        }


def _provider_dict(config):
    data = config.to_dict()
    data.pop('mock_seed', None)
    return data


def _deep_merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_survey_config_with_fallback(config_file=None):
    """Lade Konfiguration aus JSON über die Standardwerte; ohne Datei gelten die Standardwerte"""
    explicit = config_file is not None
    config_file = Path(config_file or SURVEY_CONFIG_FILE)

    if not config_file.exists():
        if explicit:
            raise ConfigError(f"Konfigurationsdatei nicht gefunden: {config_file}")
        return copy.deepcopy(DEFAULT_SURVEY_CONFIG)

    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            overrides = json.load(f)
    except (OSError, ValueError) as e:
        if explicit:
            raise ConfigError(f"Konfigurationsdatei {config_file} nicht lesbar: {e}")
        print(f"Warnung: Konnte {config_file} nicht laden: {e}")
        return copy.deepcopy(DEFAULT_SURVEY_CONFIG)
    if not isinstance(overrides, dict):
        raise ConfigError(f"{config_file}: erwartet ein JSON-Objekt")
    return _deep_merge(DEFAULT_SURVEY_CONFIG, overrides)


def ensure_survey_config(work_path=None):
    """Stelle sicher dass survey_config.json existiert"""
    config_file = Path(work_path or '.') / SURVEY_CONFIG_FILE

    if config_file.exists():
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                json.load(f)
            return config_file
        except Exception as e:
            print(f"✗ Fehler in {SURVEY_CONFIG_FILE}: {e}")

    with open(config_file, 'w', encoding='utf-8') as f:
        json.dump(DEFAULT_SURVEY_CONFIG, f, indent=2, ensure_ascii=False)
        f.write('\n')
    print(f"✓ {SURVEY_CONFIG_FILE} erstellt mit Standardwerten")
    return config_file


# ========== CREDENTIALS ==========

def load_credentials(env_file=None):
    """Lies API-Keys aus Umgebung bzw. .env; der Embedding-Key fällt auf den LLM-Key zurück"""
    load_dotenv(env_file or '.env', override=False)
    credentials = {name: os.getenv(var, '') for name, var in CREDENTIAL_ENV.items()}
    if not credentials['embedding']:
        credentials['embedding'] = credentials['llm']
    return credentials


def save_env(work_path, env_vars, log_callback=None):
    """Speichere .env mit den Credential-Variablen"""
    try:
        env_path = Path(work_path) / ".env"

        with open(env_path, 'w', encoding='utf-8') as f:
            f.write("# ========== SURVEY-KONFIGURATION ==========\n")
            for key, value in env_vars.items():
                f.write(f"{key}={value}\n")
            f.write("# ==========================================\n")

        if log_callback:
            log_callback("Konfiguration gespeichert: .env")
        return True
    except Exception as e:
        if log_callback:
            log_callback(f"Fehler beim Speichern der Konfiguration: {str(e)}")
        return False


def load_env_file(env_path):
    """Lade .env Datei und gebe Dictionary zurück"""
    env_path = Path(env_path)
    if not env_path.exists():
        return {}
    return {key: value or '' for key, value in dotenv_values(env_path).items()}


# ========== LAUFKONFIGURATION ==========

def _provider_config(data, credential):
    known = {f.name for f in fields(ProviderConfig)} - {'credential', 'mock_seed'}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unbekannte Provider-Einstellungen: {sorted(unknown)}")
    return ProviderConfig(credential=credential, **data)


def build_run_config(overrides=None, config_file=None, credentials=None):
    """Standardwerte -> JSON-Datei -> CLI-Flags; None-Werte in overrides werden ignoriert"""
    data = load_survey_config_with_fallback(config_file)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    # Retrieval-Flags kommen als Teil-Dict und überschreiben nur ihre Felder
    retrieval_overrides = {k: v for k, v in (overrides.pop('retrieval', None) or {}).items() if v is not None}
    data['retrieval'] = _deep_merge(data['retrieval'], retrieval_overrides)
    credentials = credentials if credentials is not None else load_credentials()

    try:
        retrieval = RetrievalConfig(**data['retrieval'])
    except TypeError as e:
        raise ConfigError(f"Ungültige Retrieval-Einstellungen: {e}")

    values = {
        'topic': data.get('topic', ''),
        'description': data.get('description', ''),
        'target_length': data['target_length'],
        'mock': data['mock'],
        'seed': data['seed'],
        'n_candidates': data['n_candidates'],
        'parallelism': data['parallelism'],
        'fixture_corpus': data.get('fixture_corpus'),
        'retrieval': retrieval,
    }
    for name in PROVIDER_NAMES:
        values[name] = _provider_config(data['providers'].get(name, {}), credentials.get(name, ''))
    for group in ('writing', 'ablation', 'evaluation'):
        for name, value in data[group].items():
            if name not in DEFAULT_SURVEY_CONFIG[group]:
                raise ConfigError(f"Unbekannte Einstellung {group}.{name}")
            values[name] = value

    for name, value in overrides.items():
        if name not in {f.name for f in fields(RunConfig)}:
            raise ConfigError(f"Unbekannte Einstellung: {name}")
        values[name] = value
    return RunConfig(**values)


def validate_run_config(config, require_topic=True):
    """Vor jedem Provider-Aufruf; Live-Modus braucht mindestens den LLM-Key"""
    if require_topic and not (config.topic or '').strip():
        raise ConfigError("Thema (--topic) fehlt")
    if config.target_length < 1:
        raise ConfigError(f"target_length muss >= 1 sein, nicht {config.target_length}")
    for name in ('n_candidates', 'parallelism', 'rag_top_k', 'rag_final_k', 'table_threshold', 'chunk_size',
                 'context_cap'):
        if getattr(config, name) < 1:
            raise ConfigError(f"{name} muss >= 1 sein, nicht {getattr(config, name)}")
    if config.rag_final_k > config.rag_top_k:
        raise ConfigError("rag_final_k darf nicht größer als rag_top_k sein")
    if not 0 <= config.chunk_overlap < config.chunk_size:
        raise ConfigError("chunk_overlap muss in [0, chunk_size) liegen")
    if not config.k_list or any(int(k) < 1 for k in config.k_list):
        raise ConfigError(f"k_list ungültig: {config.k_list}")

    if config.mock:
        if config.fixture_corpus and not Path(config.fixture_corpus).is_file():
            raise ConfigError(f"Fixture-Korpus nicht gefunden: {config.fixture_corpus}")
        return config
    if not config.llm.credential:
        raise ConfigError(f"Live-Modus ohne {CREDENTIAL_ENV['llm']}")
    if not config.embedding.credential:
        raise ConfigError(f"Live-Modus ohne {CREDENTIAL_ENV['embedding']}")
    if config.rerank.endpoint and not config.rerank.credential:
        raise ConfigError(f"Rerank-Endpunkt konfiguriert, aber {CREDENTIAL_ENV['rerank']} fehlt")
    return config
