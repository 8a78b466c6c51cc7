"""
Provider-Schnittstellen der Survey-Pipeline
LLM, Embedding, wissenschaftliche Suche, Reranking und Textextraktion
"""

import json
import re
import threading
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import jsonschema
import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from prompt_templates import (
    DEFAULT_PROMPT_TEMPLATES, OUTPUT_SCHEMAS, load_prompt_templates_with_fallback,
    render_template, template_slots,
)
from run_logger import print_detail, log_event
from survey_errors import (
    ConfigError, ProviderError, BackendUnreachable, RateLimited, ProviderTimeout,
    SchemaViolation, EmptyInputError, PreconditionError,
)


PROMPT_ROLES = tuple(DEFAULT_PROMPT_TEMPLATES)
LINK_DIRECTIONS = ('references', 'citations')
RETRYABLE_ERRORS = (BackendUnreachable, ProviderTimeout, RateLimited)


@dataclass
class ProviderConfig:
    endpoint: str = ''
    credential: str = field(default='', repr=False)
    model_name: str = ''
    request_timeout: float = 60.0
    max_retries: int = 2
    mock_seed: Optional[int] = None
    retry_backoff: float = 1.0
    requests_per_second: float = 0.0

    def __post_init__(self):
        if self.request_timeout <= 0:
            raise ConfigError(f"request_timeout muss > 0 sein, nicht {self.request_timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries darf nicht negativ sein: {self.max_retries}")
        if self.retry_backoff < 0 or self.requests_per_second < 0:
            raise ConfigError("retry_backoff und requests_per_second dürfen nicht negativ sein")

    def to_dict(self):
        data = asdict(self)
        data.pop('credential')
        return data


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=float)
        if vector.ndim != 1 or vector.size == 0:
            raise ValueError("Embedding braucht einen eindimensionalen, nicht leeren Vektor")
        if not np.all(np.isfinite(vector)):
            raise ValueError("Embedding enthält nicht-endliche Werte")
        object.__setattr__(self, 'vector', vector)

    @property
    def dimension(self):
        return int(self.vector.shape[0])


@dataclass
class StructuredPrompt:
    template_id: str
    slots: dict

    def __post_init__(self):
        if self.template_id not in PROMPT_ROLES:
            raise PreconditionError(f"Unbekannte Prompt-Rolle: {self.template_id}")

    @classmethod
    def build(cls, template_id, **slots):
        """Baue Prompt; Listen und Dicts werden als JSON-Text eingesetzt"""
        filled = {'feedback': ''}
        for name, value in slots.items():
            if isinstance(value, str):
                filled[name] = value
            else:
                filled[name] = json.dumps(value, ensure_ascii=False)
        return cls(template_id, filled)

    def missing_slots(self, template_text):
        return sorted(template_slots(template_text) - set(self.slots))

    def json_slot(self, name, default=None):
        """Lies einen JSON-kodierten Slot zurück (für Mocks)"""
        try:
            return json.loads(self.slots[name])
        except (KeyError, ValueError):
            return default


def parse_json_reply(raw):
    """Parse eine LLM-Antwort als JSON-Objekt (Code-Fences werden entfernt)"""
    text = (raw or '').strip()
    fenced = re.match(r'^```(?:json)?\s*(.*?)\s*```$', text, re.DOTALL)
    if fenced:
        text = fenced.group(1)
    try:
        value = json.loads(text)
    except ValueError:
        start, end = text.find('{'), text.rfind('}')
        if start < 0 or end <= start:
            raise ValueError("Antwort enthält kein JSON-Objekt")
        value = json.loads(text[start:end + 1])
    if not isinstance(value, dict):
        raise ValueError("Antwort ist kein JSON-Objekt")
    return value


class TokenBucket:
    """Token-Bucket pro Backend; ein Token wird unter dem Lock reserviert, gewartet wird danach"""

    def __init__(self, rate, capacity=1.0, clock=time.monotonic, sleep=time.sleep):
        self.rate = float(rate)
        self.capacity = float(capacity)
        self.tokens = float(capacity)
        self._clock = clock
        self._sleep = sleep
        self.updated = clock()
        self._lock = threading.Lock()

    def reserve(self):
        """Token abziehen und die nötige Wartezeit liefern; negative Bestände sind offene Reservierungen"""
        with self._lock:
            now = self._clock()
            self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
            self.updated = now
            self.tokens -= 1.0
            return max(0.0, -self.tokens / self.rate)

    def acquire(self):
        if self.rate <= 0:
            return 0.0
        wait = self.reserve()
        if wait > 0:
            self._sleep(wait)
        return wait


class BaseProvider:
    """Gemeinsame Logik: Retry mit exponentiellem Backoff, Aufrufprotokoll"""
    kind = 'provider'

    def __init__(self, config):
        self.config = config
        self.call_log = []
        self._log_lock = threading.Lock()
        self.rate_limiter = TokenBucket(config.requests_per_second)

    def _retrying(self, max_retries=None, extra_errors=()):
        retries = self.config.max_retries if max_retries is None else max_retries
        return Retrying(
            stop=stop_after_attempt(retries + 1),
            wait=wait_exponential(multiplier=self.config.retry_backoff, max=60),
            retry=retry_if_exception_type(RETRYABLE_ERRORS + tuple(extra_errors)),
            before_sleep=self._log_retry,
            reraise=True,
        )

    def _log_retry(self, retry_state):
        error = retry_state.outcome.exception()
        print_detail(f"{self.kind}: Versuch {retry_state.attempt_number} fehlgeschlagen ({error}), wiederhole",
                     level='WARNING')

    def _call(self, operation, fn, *args):
        """Führe einen Backend-Aufruf mit Rate-Limit und Retry aus"""
        attempts = 0

        def attempt():
            nonlocal attempts
            attempts += 1
            self.rate_limiter.acquire()
            return fn(*args)

        try:
            result = self._retrying()(attempt)
        except ProviderError:
            self._record(operation=operation, attempts=attempts, ok=False)
            raise
        self._record(operation=operation, attempts=attempts, ok=True)
        return result

    def _record(self, **entry):
        with self._log_lock:
            self.call_log.append(entry)
        log_event('provider_call', provider=self.kind, **entry)


# ========== LLM ==========

class LLMProvider(BaseProvider):
    kind = 'llm'

    def __init__(self, config, templates=None):
        super().__init__(config)
        self.templates = templates or load_prompt_templates_with_fallback()
        self.last_retry_count = 0

    def render(self, prompt, feedback=None):
        slots = dict(prompt.slots)
        if feedback:
            slots['feedback'] = feedback
        return render_template(self.templates[prompt.template_id], slots)

    def _complete_text(self, prompt, feedback):
        raise NotImplementedError

    def complete_structured(self, prompt, schema_tag, max_retries=None):
        """Hole eine schema-validierte Antwort; ungültige Antworten lösen einen Reparatur-Prompt aus"""
        missing = prompt.missing_slots(self.templates[prompt.template_id])
        if missing:
            raise PreconditionError(f"Prompt {prompt.template_id}: Slots fehlen: {', '.join(missing)}")
        schema = OUTPUT_SCHEMAS.get(schema_tag)
        if schema is None:
            raise PreconditionError(f"Unbekanntes Ausgabeschema: {schema_tag}")

        attempts = 0
        feedback = None

        def attempt():
            nonlocal attempts, feedback
            attempts += 1
            raw = self._complete_text(prompt, feedback)
            try:
                value = parse_json_reply(raw)
                jsonschema.validate(value, schema)
            except (ValueError, jsonschema.ValidationError) as e:
                reason = getattr(e, 'message', str(e))[:200]
                feedback = (f"Your previous reply was rejected: {reason}. "
                            "Reply again with valid JSON in exactly the requested shape.")
                raise SchemaViolation(f"Antwort für {prompt.template_id} verletzt Schema {schema_tag}: {reason}",
                                      raw_text=raw or '')
            return value

        try:
            value = self._retrying(max_retries, extra_errors=(SchemaViolation,))(attempt)
        except ProviderError:
            self._record(template_id=prompt.template_id, schema_tag=schema_tag, attempts=attempts, ok=False)
            raise
        self.last_retry_count = attempts - 1
        self._record(template_id=prompt.template_id, schema_tag=schema_tag, attempts=attempts, ok=True)
        return value

    def calls_for(self, template_id):
        return [entry for entry in self.call_log if entry.get('template_id') == template_id]


# ========== EMBEDDING ==========

class EmbeddingProvider(BaseProvider):
    kind = 'embedding'

    def _embed_texts(self, texts):
        raise NotImplementedError

    def embed(self, texts):
        texts = list(texts)
        if not texts:
            raise EmptyInputError("embed() braucht mindestens einen Text")
        if any(not isinstance(t, str) or not t.strip() for t in texts):
            raise EmptyInputError("embed() erhielt einen leeren Text")
        vectors = self._call('embed', self._embed_texts, texts)
        if len(vectors) != len(texts):
            raise BackendUnreachable(f"Embedding-Backend lieferte {len(vectors)} statt {len(texts)} Vektoren")
        return [Embedding(v) for v in vectors]


# ========== WISSENSCHAFTLICHE SUCHE ==========

class ScholarlyProvider(BaseProvider):
    kind = 'scholarly'

    def _search(self, query, limit):
        raise NotImplementedError

    def _linked(self, paper_id, direction, limit):
        raise NotImplementedError

    def _resolve(self, reference):
        raise NotImplementedError

    def _fetch(self, record):
        return None

    @staticmethod
    def _dedup(records, limit):
        seen = set()
        result = []
        for record in records:
            if record.paper_id in seen or not record.title.strip():
                continue
            seen.add(record.paper_id)
            result.append(record)
            if len(result) >= limit:
                break
        return result

    def search_papers(self, query, limit):
        if not query or not query.strip():
            raise PreconditionError("search_papers() braucht eine nicht leere Anfrage")
        if limit < 1:
            raise PreconditionError(f"limit muss >= 1 sein, nicht {limit}")
        return self._dedup(self._call('search', self._search, query.strip(), limit), limit)

    def get_linked_papers(self, paper_id, direction, limit):
        if direction not in LINK_DIRECTIONS:
            raise PreconditionError(f"Unbekannte Richtung: {direction}")
        if limit < 1:
            raise PreconditionError(f"limit muss >= 1 sein, nicht {limit}")
        return self._dedup(self._call(direction, self._linked, paper_id, direction, limit), limit)

    def resolve_citation(self, reference):
        if not reference or not reference.strip():
            raise PreconditionError("resolve_citation() braucht einen nicht leeren Verweis")
        return self._call('resolve', self._resolve, reference.strip())

    def fetch_document(self, record):
        """Lade das Dokument eines Papers; None wenn keines verfügbar ist"""
        return self._call('fetch', self._fetch, record)


# ========== RERANKING ==========

class Reranker(BaseProvider):
    kind = 'rerank'

    def _score(self, query, texts):
        raise NotImplementedError

    def rerank(self, query, texts):
        texts = list(texts)
        if not texts:
            return []
        scores = self._call('rerank', self._score, query, texts)
        return [float(s) for s in scores]


class EmbeddingReranker(Reranker):
    """Kosinus zwischen Anfrage und Passage, wenn kein Rerank-Endpunkt konfiguriert ist"""

    def __init__(self, config, embedder):
        super().__init__(config)
        self.embedder = embedder

    def _score(self, query, texts):
        safe = [t if t.strip() else '-' for t in texts]
        embeddings = self.embedder.embed([query] + safe)
        query_vector = embeddings[0].vector
        return [cosine(query_vector, e.vector) for e in embeddings[1:]]


# ========== TEXTEXTRAKTION ==========

class TextExtractor:
    kind = 'extractor'

    def _extract_pages(self, data):
        raise NotImplementedError

    def extract_text(self, data):
        """Extrahiere Klartext; leerer String signalisiert Fehler (Abstract als Ersatz)"""
        if not data:
            raise PreconditionError("extract_text() braucht nicht leere Bytes")
        try:
            pages = self._extract_pages(data)
        except Exception as e:
            print_detail(f"Dokument nicht lesbar, verwende Abstract: {e}", level='WARNING')
            return ''
        pages = [p.replace('\r\n', '\n').replace('\r', '\n').strip('\n') for p in pages]
        return '\n'.join(p for p in pages if p)


def cosine(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b) / norm)


@dataclass
class ProviderSet:
    llm: LLMProvider
    embedder: EmbeddingProvider
    scholarly: ScholarlyProvider
    reranker: Reranker
    extractor: TextExtractor


def create_providers(run_config):
    """Erzeuge Mock- oder Live-Provider passend zur Konfiguration"""
    if run_config.mock:
        from mock_providers import create_mock_providers
        return create_mock_providers(run_config)
    from live_providers import create_live_providers
    return create_live_providers(run_config)
