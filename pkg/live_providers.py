"""
Live-Provider: OpenAI-kompatible Completion/Embedding, Semantic Scholar Graph API,
optionaler HTTP-Reranker und PDF-Extraktion mit PyMuPDF
"""

import fitz
import openai
import requests
from openai import OpenAI

from corpus import PaperRecord
from providers import (
    LLMProvider, EmbeddingProvider, ScholarlyProvider, Reranker, EmbeddingReranker, TextExtractor,
    ProviderSet,
)
from run_logger import print_detail
from survey_errors import BackendUnreachable, RateLimited, ProviderTimeout, UnknownPaperId, ConfigError


S2_DEFAULT_ENDPOINT = 'https://api.semanticscholar.org/graph/v1'
S2_FIELDS = 'paperId,title,abstract,year,url,authors,publicationTypes,openAccessPdf'


def _translate_openai_error(e):
    """openai-Exceptions auf die Fehlerfamilie der Pipeline abbilden"""
    if isinstance(e, openai.RateLimitError):
        return RateLimited(f"LLM-Backend: Rate-Limit ({e})")
    if isinstance(e, openai.APITimeoutError):
        return ProviderTimeout(f"LLM-Backend: Timeout ({e})")
    if isinstance(e, (openai.APIConnectionError, openai.InternalServerError)):
        return BackendUnreachable(f"LLM-Backend nicht erreichbar: {e}")
    if isinstance(e, openai.AuthenticationError):
        return ConfigError(f"LLM-Backend lehnt den API-Key ab: {e}")
    return BackendUnreachable(f"LLM-Backend: {e}")


def _openai_client(config):
    return OpenAI(
        api_key=config.credential,
        base_url=config.endpoint or None,
        timeout=config.request_timeout,
        max_retries=0,
    )


class OpenAILLMProvider(LLMProvider):

    def __init__(self, config, templates=None, temperature=0.2):
        super().__init__(config, templates)
        self.client = _openai_client(config)
        self.temperature = temperature

    def _complete_text(self, prompt, feedback):
        self.rate_limiter.acquire()
        try:
            response = self.client.chat.completions.create(
                model=self.config.model_name,
                messages=[{'role': 'user', 'content': self.render(prompt, feedback)}],
                temperature=self.temperature,
                seed=self.config.mock_seed,
                response_format={'type': 'json_object'},
            )
        except openai.OpenAIError as e:
            raise _translate_openai_error(e) from e
        return response.choices[0].message.content or ''


class OpenAIEmbeddingProvider(EmbeddingProvider):

    def __init__(self, config):
        super().__init__(config)
        self.client = _openai_client(config)

    def _embed_texts(self, texts):
        try:
            response = self.client.embeddings.create(model=self.config.model_name, input=texts)
        except openai.OpenAIError as e:
            raise _translate_openai_error(e) from e
        data = sorted(response.data, key=lambda item: item.index)
        return [item.embedding for item in data]


class SemanticScholarProvider(ScholarlyProvider):
    """Graph-API-Client (paper/search, references, citations, search/match)"""

    def __init__(self, config):
        super().__init__(config)
        self.base_url = (config.endpoint or S2_DEFAULT_ENDPOINT).rstrip('/')
        self.session = requests.Session()
        if config.credential:
            self.session.headers['x-api-key'] = config.credential

    def _get(self, path, params=None, allow_404=False):
        url = f"{self.base_url}/{path.lstrip('/')}"
        try:
            response = self.session.get(url, params=params, timeout=self.config.request_timeout)
        except requests.Timeout as e:
            raise ProviderTimeout(f"Semantic Scholar: Timeout bei {path}") from e
        except requests.RequestException as e:
            raise BackendUnreachable(f"Semantic Scholar nicht erreichbar: {e}") from e

        if response.status_code == 429:
            raise RateLimited("Semantic Scholar: Rate-Limit erreicht",
                              retry_after=response.headers.get('retry-after'))
        if response.status_code == 404 and allow_404:
            return None
        if response.status_code >= 500:
            raise BackendUnreachable(f"Semantic Scholar: HTTP {response.status_code} bei {path}")
        try:
            response.raise_for_status()
        except requests.HTTPError as e:
            raise BackendUnreachable(f"Semantic Scholar: {e}") from e
        return response.json()

    @staticmethod
    def _to_record(item):
        if not item or not item.get('paperId') or not (item.get('title') or '').strip():
            return None
        pdf = item.get('openAccessPdf') or {}
        return PaperRecord.create(
            paper_id=item['paperId'],
            title=item['title'],
            abstract=item.get('abstract') or '',
            year=item.get('year'),
            url=pdf.get('url') or item.get('url'),
            authors=[a.get('name', '') for a in item.get('authors') or [] if a.get('name')],
            publication_types=item.get('publicationTypes'),
        )

    def _search(self, query, limit):
        data = self._get('paper/search', {'query': query, 'limit': min(limit, 100), 'fields': S2_FIELDS})
        records = [self._to_record(item) for item in data.get('data') or []]
        return [r for r in records if r]

    def _linked(self, paper_id, direction, limit):
        data = self._get(f"paper/{paper_id}/{direction}",
                         {'limit': min(limit, 1000), 'fields': S2_FIELDS}, allow_404=True)
        if data is None:
            raise UnknownPaperId(f"Semantic Scholar kennt paper_id {paper_id} nicht")
        key = 'citedPaper' if direction == 'references' else 'citingPaper'
        records = [self._to_record(item.get(key)) for item in data.get('data') or []]
        return [r for r in records if r]

    def _resolve(self, reference):
        data = self._get('paper/search/match', {'query': reference, 'fields': S2_FIELDS}, allow_404=True)
        if not data or not data.get('data'):
            return None
        best = data['data'][0]
        # search/match liefert immer einen Treffer; ohne Score keine Vertrauensaussage
        if best.get('matchScore') is not None and best['matchScore'] < 50:
            return None
        return self._to_record(best)

    def _fetch(self, record):
        if not record.url:
            return None
        try:
            response = self.session.get(record.url, timeout=self.config.request_timeout, allow_redirects=True)
        except requests.RequestException as e:
            print_detail(f"Download fehlgeschlagen für {record.bibkey}: {e}", level='WARNING')
            return None
        if response.status_code != 200 or 'pdf' not in response.headers.get('content-type', '').lower():
            return None
        return response.content


class HttpReranker(Reranker):
    """Rerank-Endpunkt im Cohere/Jina-Stil: {model, query, documents} -> results[{index, relevance_score}]"""

    def __init__(self, config):
        super().__init__(config)
        self.session = requests.Session()
        if config.credential:
            self.session.headers['Authorization'] = f"Bearer {config.credential}"

    def _score(self, query, texts):
        payload = {'model': self.config.model_name, 'query': query, 'documents': texts, 'top_n': len(texts)}
        try:
            response = self.session.post(self.config.endpoint, json=payload, timeout=self.config.request_timeout)
        except requests.Timeout as e:
            raise ProviderTimeout("Rerank-Endpunkt: Timeout") from e
        except requests.RequestException as e:
            raise BackendUnreachable(f"Rerank-Endpunkt nicht erreichbar: {e}") from e
        if response.status_code == 429:
            raise RateLimited("Rerank-Endpunkt: Rate-Limit erreicht")
        if response.status_code >= 400:
            raise BackendUnreachable(f"Rerank-Endpunkt: HTTP {response.status_code}")
        scores = [0.0] * len(texts)
        for result in response.json().get('results', []):
            scores[result['index']] = float(result['relevance_score'])
        return scores


class PdfTextExtractor(TextExtractor):

    def _extract_pages(self, data):
        with fitz.open(stream=data, filetype='pdf') as doc:
            return [page.get_text() for page in doc]


def create_live_providers(run_config):
    """Live-Provider aus der Laufkonfiguration; Credentials wurden vorher validiert"""
    embedder = OpenAIEmbeddingProvider(run_config.embedding)
    if run_config.rerank.endpoint:
        reranker = HttpReranker(run_config.rerank)
    else:
        print_detail("Kein Rerank-Endpunkt konfiguriert, verwende Embedding-Kosinus", level='INFO')
        reranker = EmbeddingReranker(run_config.rerank, embedder)
    return ProviderSet(
        llm=OpenAILLMProvider(run_config.llm),
        embedder=embedder,
        scholarly=SemanticScholarProvider(run_config.scholarly),
        reranker=reranker,
        extractor=PdfTextExtractor(),
    )
