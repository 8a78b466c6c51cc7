"""
Literatursuche: Survey-Ebene und Unterabschnitts-Ebene
Keywords -> Suche -> semantischer Filter -> Zitations-Expansion -> Filter -> Relevanz -> Auswahl
"""

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

from corpus import TAG_SURVEY, subsection_tag
from providers import StructuredPrompt, cosine
from run_logger import print_detail, print_summary, log_event
from survey_errors import ConfigError, DegenerateOutputError, PreconditionError, ProviderError, SurveyError


MIN_KEYWORDS = 3
MAX_KEYWORDS = 10
ABSTRACT_PROMPT_CHARS = 1200


@dataclass
class TopicSpec:
    topic: str
    description: str = ''

    def __post_init__(self):
        self.topic = (self.topic or '').strip()
        self.description = (self.description or '').strip()
        if not self.topic:
            raise PreconditionError("Thema darf nicht leer sein")

    def query_text(self):
        return f"{self.topic}. {self.description}" if self.description else self.topic


@dataclass
class RetrievalConfig:
    similarity_threshold: float = 0.3
    relevance_threshold: int = 70
    fallback_top_n: int = 5
    per_query_cap: int = 30
    expansion_top_m: int = 10
    search_limit: int = 20
    link_limit: int = 20
    score_batch_size: int = 10
    enable_expansion: bool = True
    refine_query: bool = True
    fetch_full_text: bool = True
    max_workers: int = 4

    def __post_init__(self):
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ConfigError(f"similarity_threshold außerhalb [-1,1]: {self.similarity_threshold}")
        if not 0 <= self.relevance_threshold <= 100:
            raise ConfigError(f"relevance_threshold außerhalb [0,100]: {self.relevance_threshold}")
        for name in ('fallback_top_n', 'per_query_cap', 'expansion_top_m', 'search_limit', 'link_limit',
                     'score_batch_size', 'max_workers'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} muss >= 1 sein")


@dataclass
class RetrievalResult:
    papers: list
    report: dict = field(default_factory=dict)

    @property
    def insufficient_corpus(self):
        return bool(self.report.get('insufficient_corpus'))


@contextmanager
def _stage(name):
    """Fehler tragen den Namen des Retrieval-Schritts"""
    try:
        yield
    except SurveyError as e:
        if e.stage is None:
            e.stage = f"retrieval:{name}"
        raise


def _clean_keywords(raw):
    keywords = []
    seen = set()
    for keyword in raw:
        keyword = ' '.join(str(keyword).split())
        if keyword and keyword.lower() not in seen:
            seen.add(keyword.lower())
            keywords.append(keyword)
    return keywords


def generate_keywords(spec, llm):
    """3-10 deduplizierte Keywords; leere Antwort wird einmal wiederholt"""
    prompt = StructuredPrompt.build('keyword-gen', topic=spec.topic, description=spec.description)
    keywords = _clean_keywords(llm.complete_structured(prompt, 'keywords')['keywords'])
    if not keywords:
        print_detail("Keyword-Liste leer, frage erneut", level='WARNING')
        retry = StructuredPrompt.build('keyword-gen', topic=spec.topic, description=spec.description)
        retry.slots['feedback'] = "Your previous keyword list was empty. Return at least 3 keywords."
        keywords = _clean_keywords(llm.complete_structured(retry, 'keywords')['keywords'])
    if not keywords:
        raise DegenerateOutputError("Keyword-Generierung lieferte zweimal eine leere Liste", stage='retrieval:keywords')
    if len(keywords) < MIN_KEYWORDS:
        print_detail(f"Nur {len(keywords)} Keyword(s) erhalten: {keywords}", level='WARNING')
    return keywords[:MAX_KEYWORDS]


def refine_query(spec, llm):
    prompt = StructuredPrompt.build('query-refine', topic=spec.topic, description=spec.description)
    return ' '.join(llm.complete_structured(prompt, 'refined_query')['query'].split())


def _search_all(queries, limit, scholarly, max_workers):
    """Eine Anfrage pro Query; Vereinigung in Query-Reihenfolge, dedupliziert nach paper_id"""
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda q: scholarly.search_papers(q, limit), queries))
    merged = []
    seen = set()
    for query, records in zip(queries, results):
        print_detail(f"Suche '{query}': {len(records)} Treffer", level='DEBUG')
        for record in records:
            if record.paper_id not in seen:
                seen.add(record.paper_id)
                merged.append(record)
    return merged


def semantic_filter(candidates, query, theta, embedder):
    """Behalte Kandidaten mit cos(query, abstract) >= theta; Reihenfolge bleibt erhalten"""
    candidates = list(candidates)
    if not candidates:
        return []
    query_text = query.query_text() if isinstance(query, TopicSpec) else str(query)
    with_abstract = [c for c in candidates if c.abstract.strip()]
    similarities = {}
    if with_abstract:
        embeddings = embedder.embed([query_text] + [c.abstract for c in with_abstract])
        query_vector = embeddings[0].vector
        for record, embedding in zip(with_abstract, embeddings[1:]):
            similarities[id(record)] = cosine(query_vector, embedding.vector)

    retained = []
    for record in candidates:
        if id(record) not in similarities:
            print_detail(f"Kein Abstract, Filter übersprungen: {record.title}", level='WARNING')
            retained.append(replace(record, similarity=None))
            continue
        similarity = similarities[id(record)]
        if similarity >= theta:
            retained.append(replace(record, similarity=similarity))
    return retained


def expand_citations(seeds, scholarly, limit=20, max_workers=4):
    """Referenzen und Zitierende der Seeds; Seeds selbst ausgeschlossen"""
    seeds = list(seeds)
    if not seeds:
        raise PreconditionError("expand_citations() braucht mindestens ein Seed-Paper")

    def linked(seed):
        records = []
        try:
            for direction in ('references', 'citations'):
                records.extend(scholarly.get_linked_papers(seed.paper_id, direction, limit))
        except ProviderError as e:
            print_detail(f"Expansion für {seed.paper_id} übersprungen: {e}", level='WARNING')
            return []
        return records

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(linked, seeds))

    seed_ids = {s.paper_id for s in seeds}
    expanded = []
    seen = set()
    for records in results:
        for record in records:
            if record.paper_id in seed_ids or record.paper_id in seen:
                continue
            seen.add(record.paper_id)
            expanded.append(record)
    return expanded


def _score_batch(batch, spec, llm):
    payload = [{'id': p.paper_id, 'title': p.title, 'abstract': p.abstract[:ABSTRACT_PROMPT_CHARS]} for p in batch]
    prompt = StructuredPrompt.build('relevance-score', topic=spec.topic, description=spec.description,
                                    papers=payload)
    try:
        reply = llm.complete_structured(prompt, 'relevance_scores')
    except ProviderError as e:
        print_detail(f"Relevanzbewertung fehlgeschlagen, Score 0 für {len(batch)} Papers: {e}", level='WARNING')
        return [0] * len(batch)

    by_id = {}
    for item in reply['scores']:
        by_id.setdefault(str(item['id']), item['score'])
    scores = []
    for paper in batch:
        score = by_id.get(paper.paper_id)
        if score is None:
            print_detail(f"Kein Score für {paper.paper_id}, setze 0", level='WARNING')
            scores.append(0)
            continue
        if not 0 <= score <= 100:
            print_detail(f"Score {score} für {paper.paper_id} außerhalb [0,100], begrenzt", level='WARNING')
            score = min(100, max(0, score))
        scores.append(int(round(score)))
    return scores


def score_relevance(papers, spec, llm, batch_size=10, max_workers=4):
    """LLM-Relevanzscore 0-100 pro Paper, gebündelt; Reihenfolge bleibt erhalten"""
    papers = list(papers)
    if not papers:
        raise PreconditionError("score_relevance() braucht mindestens ein Paper")
    batches = [papers[i:i + batch_size] for i in range(0, len(papers), batch_size)]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda b: _score_batch(b, spec, llm), batches))
    scores = [score for batch_scores in results for score in batch_scores]
    return [replace(p, relevance_score=s) for p, s in zip(papers, scores)]


def _rank_key(record):
    return (-(record.relevance_score or 0), -(record.year or 0), record.bibkey)


def select_final(papers, config):
    """Score >= Schwelle, höchstens per_query_cap; sonst Fallback auf die besten fallback_top_n"""
    ranked = sorted(papers, key=_rank_key)
    passing = [p for p in ranked if (p.relevance_score or 0) >= config.relevance_threshold]
    if passing:
        return passing[:config.per_query_cap]
    if ranked:
        print_detail(f"Kein Paper über Schwelle {config.relevance_threshold}, "
                     f"Fallback auf Top {config.fallback_top_n}", level='WARNING')
    return ranked[:min(config.fallback_top_n, config.per_query_cap)]


def acquire_full_texts(records, providers, max_workers=4):
    """Lade und extrahiere Volltexte; ohne Dokument bleibt der Abstract"""

    def acquire(record):
        if record.full_text:
            return record
        try:
            data = providers.scholarly.fetch_document(record)
        except ProviderError as e:
            print_detail(f"Volltext für {record.title} nicht abrufbar: {e}", level='WARNING')
            return record
        if not data:
            return record
        text = providers.extractor.extract_text(data)
        return replace(record, full_text=text) if text else record

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(acquire, records))


def _retrieve(spec, query_text, config, providers, extra_queries=()):
    report = {'insufficient_corpus': False}

    with _stage('keywords'):
        keywords = generate_keywords(spec, providers.llm)
    report['keywords'] = keywords
    queries = _clean_keywords(list(keywords) + [spec.topic] + list(extra_queries))
    report['queries'] = len(queries)

    with _stage('search'):
        candidates = _search_all(queries, config.search_limit, providers.scholarly, config.max_workers)
    report['searched'] = len(candidates)
    if not candidates:
        report['insufficient_corpus'] = True
        print_summary(f"⚠ Keine Papers gefunden für '{spec.topic}'")
        return RetrievalResult([], report)

    with _stage('filter'):
        filtered = semantic_filter(candidates, query_text, config.similarity_threshold, providers.embedder)
    report['filtered'] = len(filtered)

    pool = list(filtered)
    report['expanded'] = report['refiltered'] = 0
    if config.enable_expansion and filtered:
        seeds = sorted((r for r in filtered if r.similarity is not None), key=lambda r: -r.similarity)
        seeds = seeds[:config.expansion_top_m]
        if seeds:
            with _stage('expand'):
                known = {c.paper_id for c in candidates}
                expanded = [r for r in expand_citations(seeds, providers.scholarly, config.link_limit,
                                                        config.max_workers)
                            if r.paper_id not in known]
                refiltered = semantic_filter(expanded, query_text, config.similarity_threshold, providers.embedder)
            report['expanded'] = len(expanded)
            report['refiltered'] = len(refiltered)
            pool.extend(refiltered)

    if not pool:
        report['insufficient_corpus'] = True
        print_summary(f"⚠ Kein Paper hat den semantischen Filter für '{spec.topic}' passiert")
        return RetrievalResult([], report)

    with _stage('score'):
        scored = score_relevance(pool, spec, providers.llm, config.score_batch_size, config.max_workers)
    report['scored'] = len(scored)
    final = select_final(scored, config)
    report['selected'] = len(final)

    if config.fetch_full_text:
        with _stage('fulltext'):
            final = acquire_full_texts(final, providers, config.max_workers)
        report['full_texts'] = sum(1 for r in final if r.full_text)
    return RetrievalResult(final, report)


def survey_level_retrieve(spec, config, providers, store=None):
    """Survey-Ebene (P*); mit store werden die Papers als survey-level eingetragen"""
    extra = []
    if config.refine_query:
        with _stage('query-refine'):
            extra.append(refine_query(spec, providers.llm))
    result = _retrieve(spec, spec.query_text(), config, providers, extra)
    if store is not None and result.papers:
        keys = store.upsert(result.papers, TAG_SURVEY)
        result.papers = [store.get(k) for k in keys]
    log_event('retrieval', scope='survey', **{k: v for k, v in result.report.items() if k != 'keywords'})
    print_summary(f"✓ Survey-Ebene: {len(result.papers)} Papers ausgewählt")
    return result


def subsection_query_text(title, description, section_title='', section_description=''):
    parts = [section_title, section_description, title, description]
    return '. '.join(p.strip().rstrip('.') for p in parts if p and p.strip())


def subsection_retrieve(title, description, config, providers, section_title='', section_description='',
                        subsection_id=None, store=None):
    """Unterabschnitts-Ebene (P_i); nur aufrufen wenn das Plan-Flag gesetzt ist"""
    query_text = subsection_query_text(title, description, section_title, section_description)
    spec = TopicSpec(title, query_text)
    result = _retrieve(spec, query_text, config, providers)
    if store is not None and subsection_id and result.papers:
        keys = store.upsert(result.papers, subsection_tag(subsection_id))
        result.papers = [store.get(k) for k in keys]
    log_event('retrieval', scope='subsection', subsection_id=subsection_id,
              **{k: v for k, v in result.report.items() if k != 'keywords'})
    print_detail(f"Unterabschnitt '{title}': {len(result.papers)} zusätzliche Papers", level='INFO')
    return result
