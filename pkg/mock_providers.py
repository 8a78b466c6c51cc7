"""
Deterministische Mock-Provider für Offline-Läufe und Tests
Alle Ausgaben sind reine Funktionen von (Eingabe, Seed)
"""

import hashlib
import json
import random
import re
import threading
from collections import Counter
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from citation_markers import strip_markers, remove_cites
from corpus import PaperRecord
from providers import (
    LLMProvider, EmbeddingProvider, ScholarlyProvider, Reranker, TextExtractor, ProviderSet,
)
from survey_errors import UnknownPaperId


DEFAULT_FIXTURE_CORPUS = Path(__file__).parent / 'fixtures' / 'mock_corpus.json'
MOCK_DIMENSION = 384

STOPWORDS = {
    'a', 'an', 'the', 'and', 'or', 'of', 'for', 'in', 'on', 'to', 'with', 'by', 'from', 'at', 'as', 'is',
    'are', 'was', 'were', 'be', 'been', 'this', 'that', 'these', 'those', 'it', 'its', 'we', 'our', 'their',
    'which', 'into', 'than', 'such', 'can', 'also', 'while', 'both', 'each', 'how', 'what', 'when', 'where',
    'who', 'not', 'but', 'they', 'them', 'has', 'have', 'had', 'via', 'over', 'under', 'between', 'about',
    'more', 'most', 'less', 'other', 'some', 'any', 'all', 'one', 'two', 'do', 'does', 'using', 'use', 'used',
}
CLAIM_CUE_RE = re.compile(r"\b(improv\w*|outperform\w*|achiev\w*|reduc\w*|\d+(?:\.\d+)?\s?%)", re.IGNORECASE)
TRACE_CUES = ('introduc', 'propos', 'first', 'original', 'seminal', 'pioneer', 'formulat', 'builds on',
              'based on', 'follow')
BACKGROUND_CUES = ('e.g.', 'for example', 'see also', 'background', 'survey', 'such as', 'related work')
GENERIC_TERMS = {'paper', 'method', 'approach', 'result', 'show', 'propose', 'present', 'model', 'task',
                 'work', 'study', 'new', 'based', 'different', 'performance', 'data', 'experiment'}
SENTENCE_SPLIT_RE = re.compile(r'(?<=[.!?])(\s+)')


def _stem(word):
    if len(word) > 4 and word.endswith('ies'):
        return word[:-3] + 'y'
    if len(word) > 3 and word.endswith('s') and not word.endswith('ss'):
        return word[:-1]
    return word


def content_tokens(text):
    """Kleingeschriebene Inhaltswörter ohne Stoppwörter, einfach gestemmt"""
    words = re.findall(r'[a-z0-9]+', (text or '').lower())
    return [_stem(w) for w in words if w not in STOPWORDS and len(w) > 1]


def _digest_int(*parts):
    payload = '\x1f'.join(str(p) for p in parts).encode('utf-8')
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], 'big')


@lru_cache(maxsize=100000)
def _token_vector(token, seed, dimension):
    rng = np.random.default_rng(_digest_int('embed', seed, token))
    vector = rng.standard_normal(dimension)
    return vector / np.linalg.norm(vector)


def _first_sentence(text, max_words=30):
    sentence = re.split(r'(?<=[.!?])\s+', text.strip())[0] if text.strip() else ''
    words = sentence.split()
    if len(words) > max_words:
        sentence = ' '.join(words[:max_words])
    return sentence.rstrip(' .;:,')


def _title_case(text):
    small = {'for', 'of', 'and', 'in', 'on', 'the', 'a', 'an', 'to', 'with'}
    words = []
    for i, word in enumerate(text.split()):
        if i > 0 and word.lower() in small:
            words.append(word.lower())
        else:
            words.append('-'.join(part[:1].upper() + part[1:] for part in word.split('-')))
    return ' '.join(words)


def _unique(items):
    seen = set()
    result = []
    for item in items:
        key = item.lower()
        if item and key not in seen:
            seen.add(key)
            result.append(item)
    return result


# ========== EMBEDDING ==========

class MockEmbeddingProvider(EmbeddingProvider):
    """Bag-of-Words-Hashing: Summe gesäter Zufallsvektoren pro Inhaltswort, normiert"""

    def __init__(self, config, dimension=MOCK_DIMENSION):
        super().__init__(config)
        self.dimension = dimension
        self.seed = config.mock_seed or 0

    def _embed_texts(self, texts):
        vectors = []
        for text in texts:
            tokens = content_tokens(text) or [text.strip().lower()]
            vector = np.sum([_token_vector(t, self.seed, self.dimension) for t in tokens], axis=0)
            norm = np.linalg.norm(vector)
            vectors.append(vector / norm if norm else _token_vector(text, self.seed, self.dimension))
        return vectors


# ========== WISSENSCHAFTLICHE SUCHE ==========

class MockScholarlyProvider(ScholarlyProvider):
    """Suche und Zitationsgraph über ein Fixture-Korpus (JSON)"""

    def __init__(self, config, corpus=None):
        super().__init__(config)
        if corpus is None or isinstance(corpus, (str, Path)):
            with open(corpus or DEFAULT_FIXTURE_CORPUS, 'r', encoding='utf-8') as f:
                corpus = json.load(f)
        self.papers = {str(p['paper_id']): p for p in corpus.get('papers', [])}
        self.order = [str(p['paper_id']) for p in corpus.get('papers', [])]
        self.links = {
            'references': corpus.get('references', {}),
            'citations': corpus.get('citations', {}),
        }

    def _paper_record(self, paper_id):
        paper = self.papers[paper_id]
        return PaperRecord.create(
            paper_id=paper_id,
            title=paper['title'],
            abstract=paper.get('abstract', ''),
            year=paper.get('year'),
            url=paper.get('url'),
            authors=paper.get('authors', []),
            publication_types=paper.get('publication_types'),
        )

    def _tokens(self, paper_id):
        paper = self.papers[paper_id]
        return set(content_tokens(f"{paper['title']} {paper.get('abstract', '')}"))

    def _search(self, query, limit):
        wanted = set(content_tokens(query))
        if not wanted:
            return []
        return [self._paper_record(pid) for pid in self.order if wanted <= self._tokens(pid)][:limit]

    def _linked(self, paper_id, direction, limit):
        if paper_id not in self.papers:
            raise UnknownPaperId(f"Unbekannte paper_id: {paper_id}")
        linked = [pid for pid in self.links[direction].get(paper_id, []) if pid in self.papers]
        return [self._paper_record(pid) for pid in linked[:limit]]

    @staticmethod
    def _normalize(text):
        return ' '.join(re.findall(r'[a-z0-9]+', (text or '').lower()))

    def _first_surname(self, paper_id):
        authors = self.papers[paper_id].get('authors') or []
        if not authors:
            return ''
        return self._normalize(authors[0].split()[-1])

    def _resolve(self, reference):
        normalized = self._normalize(reference)
        exact = [pid for pid in self.order if self._normalize(self.papers[pid]['title']) == normalized]
        if exact:
            return self._paper_record(exact[0])

        author_year = re.search(r"([A-Z][A-Za-z'’\-]+)(?:\s+et\s+al\.?|\s+(?:&|and)\s+[A-Z][A-Za-z'’\-]+)?,?\s*\(?((?:19|20)\d{2})",
                                reference)
        if author_year:
            surname = self._normalize(author_year.group(1))
            year = int(author_year.group(2))
            candidates = [pid for pid in self.order
                          if self._first_surname(pid) == surname and self.papers[pid].get('year') == year]
            if len(candidates) == 1:
                return self._paper_record(candidates[0])

        # Titel im Verweis enthalten (Literaturliste) oder Verweis ist ein Titelfragment
        wanted = set(content_tokens(reference))
        if not wanted:
            return None
        candidates = []
        for pid in self.order:
            title_tokens = set(content_tokens(self.papers[pid]["title"]))
            if not title_tokens:
                continue
            shared = len(wanted & title_tokens)
            if shared / len(title_tokens) >= 0.8 or (len(wanted) >= 3 and shared / len(wanted) >= 0.8):
                candidates.append(pid)
        return self._paper_record(candidates[0]) if len(candidates) == 1 else None

    def _fetch(self, record):
        paper = self.papers.get(record.paper_id)
        if not paper:
            return None
        pages = paper.get('pages') or ([paper['full_text']] if paper.get('full_text') else [])
        if not pages:
            return None
        return '\f'.join(pages).encode('utf-8')


class MockTextExtractor(TextExtractor):
    """Fixture-Dokumente sind UTF-8-Text mit Seitenvorschub als Seitengrenze"""

    def _extract_pages(self, data):
        text = data.decode('utf-8')
        if '\x00' in text:
            raise ValueError("Binärdaten statt Text")
        return text.split('\f')


class MockReranker(Reranker):
    """Anteil der Anfragewörter, die in der Passage vorkommen"""

    def _score(self, query, texts):
        wanted = set(content_tokens(query))
        if not wanted:
            return [0.0 for _ in texts]
        return [len(wanted & set(content_tokens(t))) / len(wanted) for t in texts]


# ========== LLM ==========

class MockLLMProvider(LLMProvider):
    """Regelbasierte Antworten pro Vorlage; optionale Skript-Antworten werden zuerst verbraucht"""

    def __init__(self, config, templates=None, scripted=None):
        super().__init__(config, templates)
        self.seed = config.mock_seed or 0
        self.scripted = {k: list(v) for k, v in (scripted or {}).items()}
        self._script_lock = threading.Lock()

    def script(self, template_id, *replies):
        """Hänge Rohantworten (Text oder Exception) für eine Vorlage an"""
        with self._script_lock:
            self.scripted.setdefault(template_id, []).extend(replies)

    def _rng(self, prompt):
        slots = {k: v for k, v in prompt.slots.items() if k != 'feedback'}
        return random.Random(_digest_int(self.seed, prompt.template_id, json.dumps(slots, sort_keys=True)))

    def _complete_text(self, prompt, feedback):
        with self._script_lock:
            queue = self.scripted.get(prompt.template_id)
            scripted = queue.pop(0) if queue else None
        if isinstance(scripted, Exception):
            raise scripted
        if scripted is not None:
            return scripted if isinstance(scripted, str) else json.dumps(scripted)
        handler = getattr(self, '_reply_' + prompt.template_id.replace('-', '_'))
        return json.dumps(handler(prompt, self._rng(prompt)), ensure_ascii=False)

    # --- Retrieval ---

    def _reply_keyword_gen(self, prompt, rng):
        topic_words = [w for w in re.findall(r'[a-z0-9]+', prompt.slots['topic'].lower()) if w not in STOPWORDS]
        phrases = [' '.join(topic_words[i:i + 2]) for i in range(len(topic_words) - 1)] or topic_words[:1]
        topic_stems = {_stem(w) for w in topic_words}
        description_words = [w for w in re.findall(r'[a-z0-9]+', prompt.slots['description'].lower())
                             if w not in STOPWORDS and len(w) > 3 and _stem(w) not in topic_stems]
        frequent = [w for w, _ in Counter(description_words).most_common(2)]
        keywords = _unique(phrases + frequent)
        rng.shuffle(keywords)
        keywords = keywords[:8]
        for word in topic_words:
            if len(keywords) >= 3:
                break
            if word not in keywords:
                keywords.append(word)
        return {'keywords': keywords}

    def _reply_query_refine(self, prompt, rng):
        words = [w for w in re.findall(r'[a-z0-9]+', prompt.slots['topic'].lower()) if w not in STOPWORDS]
        return {'query': ' '.join(words) or prompt.slots['topic']}

    def _reply_relevance_score(self, prompt, rng):
        topic = set(content_tokens(prompt.slots['topic']))
        scores = []
        for paper in prompt.json_slot('papers', []):
            tokens = set(content_tokens(f"{paper.get('title', '')} {paper.get('abstract', '')}"))
            score = 50 if not topic else round(40 + 60 * len(topic & tokens) / len(topic))
            scores.append({'id': paper['id'], 'score': score})
        return {'scores': scores}

    # --- Planung ---

    def _reply_review_outline(self, prompt, rng):
        headings = []
        for line in prompt.slots['text'].splitlines():
            match = re.match(r'^\s*\d+(?:\.\d+)*\.?\s+([A-Z][^.]{2,80})$', line)
            if match:
                headings.append(match.group(1).strip())
        if not headings:
            sentences = re.split(r'(?<=[.!?])\s+', prompt.slots['text'].strip())
            headings = [' '.join(s.split()[:8]) for s in sentences[:4] if s.strip()]
        return {'outline': headings[:20]}

    def _reply_outline_gen(self, prompt, rng):
        topic = prompt.slots['topic'].strip()
        title = _title_case(topic)
        lower = topic.lower()
        topic_tokens = set(content_tokens(topic))
        counts = Counter(t for t in content_tokens(prompt.slots['context'])
                         if t not in topic_tokens and t not in GENERIC_TERMS and len(t) >= 4 and not t.isdigit())
        focus_candidates = [t for t, _ in counts.most_common(3)] or ['hybrid']
        focus = rng.choice(focus_candidates)
        focus_title = focus[:1].upper() + focus[1:]
        sections = [
            {
                'section_title': f"Foundations of {title}",
                'section_description': f"Background, terminology and problem setting of {lower}.",
                'subsections': [
                    {'subsection_title': f"Core Concepts of {title}",
                     'subsection_description': f"Defines the central concepts and terminology of {lower}."},
                    {'subsection_title': f"Evolution of {title}",
                     'subsection_description': f"Traces how {lower} developed from early approaches to current practice."},
                ],
            },
            {
                'section_title': f"Methods for {title}",
                'section_description': f"Families of methods proposed for {lower}.",
                'subsections': [
                    {'subsection_title': f"Taxonomy of {title} Methods",
                     'subsection_description': f"Organizes existing methods for {lower} into families."},
                    {'subsection_title': f"{focus_title}-Based Approaches",
                     'subsection_description': f"Reviews approaches to {lower} that build on {focus}."},
                    {'subsection_title': f"Comparison of {title} Approaches",
                     'subsection_description': f"Compares representative approaches to {lower} in efficiency and quality."},
                ],
            },
            {
                'section_title': "Applications and Open Challenges",
                'section_description': f"Where {lower} is applied and which problems remain open.",
                'subsections': [
                    {'subsection_title': f"Applications of {title}",
                     'subsection_description': f"Surveys application domains in which {lower} has been adopted."},
                    {'subsection_title': "Open Challenges and Future Directions",
                     'subsection_description': f"Discusses unresolved problems and promising research directions for {lower}."},
                ],
            },
        ]
        return {'sections': sections}

    def _reply_outline_refine(self, prompt, rng):
        outline = prompt.json_slot('outline', {})
        sections = outline.get('sections', outline) if isinstance(outline, dict) else outline
        for section in sections:
            section['section_title'] = ' '.join(section['section_title'].split())
            for subsection in section.get('subsections', []):
                subsection['subsection_title'] = ' '.join(subsection['subsection_title'].split())
        return {'sections': sections}

    @staticmethod
    def _outline_sections(prompt):
        outline = prompt.json_slot('outline', {})
        return outline.get('sections', []) if isinstance(outline, dict) else outline

    def _reply_raw_plan(self, prompt, rng):
        entries = []
        for section in self._outline_sections(prompt):
            for subsection in section['subsections']:
                title = subsection['subsection_title']
                entries.append({
                    'subsection_title': title,
                    'trigger_additional_search': _digest_int(self.seed, 'retrieve', title) % 3 == 0,
                    'generate_table': any(w in title for w in ('Taxonomy', 'Comparison', 'Approaches')),
                })
        return {'entries': entries}

    def _reply_dep_graph(self, prompt, rng):
        dependencies = []
        previous_first = None
        for section in self._outline_sections(prompt):
            titles = [s['subsection_title'] for s in section['subsections']]
            for i, title in enumerate(titles):
                depends_on = [previous_first] if previous_first else []
                if i > 0 and title.startswith(('Comparison', 'Open Challenges')):
                    depends_on.append(titles[i - 1])
                dependencies.append({'subsection_title': title, 'depends_on': depends_on})
            if titles:
                previous_first = titles[0]
        return {'dependencies': dependencies}

    def _reply_revision(self, prompt, rng):
        unwritten = set(prompt.json_slot('unwritten', []))
        actions = []
        for section in self._outline_sections(prompt):
            candidates = [s for s in section['subsections'] if s.get('subsection_id') in unwritten]
            for i, first in enumerate(candidates):
                for second in candidates[i + 1:]:
                    a = set(content_tokens(first['subsection_title']))
                    b = set(content_tokens(second['subsection_title']))
                    if a and b and len(a & b) / len(a | b) >= 0.75:
                        actions.append({
                            'kind': 'merge',
                            'targets': [first['subsection_id'], second['subsection_id']],
                            'description': f"{first['subsection_description']} {second['subsection_description']}",
                        })
        return {'actions': actions[:1]}

    # --- Schreiben ---

    def _reply_skeleton(self, prompt, rng):
        title = prompt.slots['title']
        description = prompt.slots['description']
        clauses = [c.strip(' .') for c in re.split(r'[,;]|\band\b', description) if len(c.split()) >= 3]
        context_tokens = set(content_tokens(f"{title} {description}"))
        terms = [t for t in prompt.json_slot('memory_terms', [])
                 if set(content_tokens(t)) & context_tokens or t.lower() in f"{title} {description}".lower()]
        points = [f"Introduce the scope of {title}"]
        points += [f"Explain that the subsection {c[:1].lower() + c[1:]}" for c in clauses[:6]]
        points.append(f"Discuss representative work and evidence on {title}")
        if terms:
            points.append(f"Relate {title} to the established terms {', '.join(terms[:5])}")
        points.append(f"Summarize the key insights on {title}")
        return {'points': points[:10], 'terminology': terms}

    def _reply_subsection_write(self, prompt, rng):
        skeleton = prompt.json_slot('skeleton', {})
        points = skeleton.get('points', [])
        index = int(prompt.slots.get('candidate_index', '0') or 0)
        passages = prompt.json_slot('context', [])
        if passages:
            shift = index % len(passages)
            passages = passages[shift:] + passages[:shift]
        covered = points[:max(1, len(points) - index)]

        sentences = []
        for i, point in enumerate(covered):
            sentences.append(point.rstrip('.') + '.')
            if passages:
                passage = passages[i % len(passages)]
                claim = _first_sentence(strip_markers(passage['text']))
                if claim:
                    sentences.append(f"{claim} \\cite{{{passage['bibkey']}}}.")
        for traced in prompt.json_slot('traced', []):
            sentences.append(f"The underlying idea was originally introduced in {traced['title'].rstrip('.')} "
                             f"\\cite{{{traced['bibkey']}}}.")
        terms = skeleton.get('terminology', [])
        if terms:
            sentences.append(f"This discussion uses the established terms {', '.join(terms)}.")
        return {'text': ' '.join(sentences)}

    def _reply_draft_select(self, prompt, rng):
        points = [p.rstrip('.') for p in prompt.json_slot('skeleton', {}).get('points', [])]
        candidates = prompt.json_slot('candidates', [])
        coverage = [sum(1 for p in points if p in candidate) for candidate in candidates]
        best = coverage.index(max(coverage)) if coverage else 0
        return {'best_index': best,
                'justification': f"Candidate {best} covers {coverage[best] if coverage else 0} of {len(points)} skeleton points."}

    def _reply_refinement(self, prompt, rng):
        text = prompt.slots['text']
        pass_name = prompt.slots['pass_name']
        flagged = []
        if pass_name == 'citation':
            sources = prompt.json_slot('context', [])
            key = sources[0]['bibkey'] if sources else None
            pieces = SENTENCE_SPLIT_RE.split(text)
            for i in range(0, len(pieces), 2):
                sentence = pieces[i]
                if '\\cite{' in sentence or not CLAIM_CUE_RE.search(sentence):
                    continue
                if key:
                    stripped = sentence.rstrip('.')
                    sentence = f"{stripped} \\cite{{{key}}}."
                    pieces[i] = sentence
                flagged.append(sentence)
            text = ''.join(pieces)
        elif pass_name == 'polish':
            text = re.sub(r'[ \t]{2,}', ' ', text).strip()
        elif pass_name == 'global':
            instructions = prompt.json_slot('instructions', {})
            for term in instructions.get('terms', []):
                text = re.sub(rf"\b{re.escape(term)}\b", term, text, flags=re.IGNORECASE)
        return {'text': text, 'flagged_claims': flagged, 'remapped': []}

    def _reply_traceworthiness(self, prompt, rng):
        passage = prompt.slots['passage']
        assessments = []
        for marker in prompt.json_slot('markers', []):
            start, end = marker['span']
            before = passage.rfind('. ', 0, start)
            sentence_start = before + 2 if before >= 0 else 0
            sentence_end = passage.find('. ', end)
            sentence = passage[sentence_start:sentence_end if sentence_end >= 0 else len(passage)].lower()
            cue = next((c for c in TRACE_CUES if c in sentence), None)
            background = next((c for c in BACKGROUND_CUES if c in sentence), None)
            worthy = bool(cue) and not background
            if worthy:
                explanation = f"The sentence attributes a core contribution to the cited work (cue '{cue}')."
            elif background:
                explanation = f"The citation appears in a background aside (cue '{background}')."
            else:
                explanation = "The citation supports a peripheral statement."
            assessments.append({'marker': marker['label'], 'traceworthy': worthy, 'explanation': explanation})
        return {'assessments': assessments}

    def _reply_terminology_extract(self, prompt, rng):
        text = remove_cites(prompt.slots['text'])
        candidates = re.findall(r'\b[A-Za-z]*[A-Z][a-z0-9]*[A-Z][A-Za-z0-9]*\b', text)
        words = [w for w in re.findall(r'[A-Za-z][a-z\-]{5,}', text) if w.lower() not in STOPWORDS]
        candidates += [w for w, _ in Counter(w.lower() for w in words).most_common(15)]
        terms = _unique(candidates)[:15]
        sentences = re.split(r'(?<=[.!?])\s+', text)
        entries = []
        for term in terms:
            definition = next((s for s in sentences if term.lower() in s.lower()), '')
            entries.append({'term': term, 'definition': definition[:200]})
        return {'terms': entries}

    def _reply_diagnosis(self, prompt, rng):
        terms = [t for t in prompt.json_slot('terminology', []) if any(c.isupper() for c in t) and len(t) >= 3]
        flagged = []
        for subsection in prompt.json_slot('document', []):
            for term in terms:
                variants = {m.group(0) for m in re.finditer(rf"\b{re.escape(term)}\b", subsection['text'], re.IGNORECASE)}
                if variants - {term}:
                    flagged.append({'subsection_id': subsection['subsection_id'],
                                    'issue': f"inconsistent spelling of {term}"})
                    break
        return {'flagged': flagged}

    def _reply_judge(self, prompt, rng):
        document = prompt.slots['document']
        citations = len(re.findall(r'\[@|\\cite\{', document))
        return {dimension: {'score': 4.0,
                            'explanation': f"Assessed {dimension} over {len(document.split())} words and {citations} citations."}
                for dimension in ('coverage', 'relevance', 'structure', 'synthesis', 'consistency')}

    # --- Tabellen ---

    def _reply_table_categories(self, prompt, rng):
        papers = prompt.json_slot('papers', [])
        previous = {t for c in prompt.json_slot('previous_categories', []) for t in content_tokens(c)}
        excluded = set(content_tokens(prompt.slots['description'])) | previous | GENERIC_TERMS
        document_frequency = Counter()
        for paper in papers:
            document_frequency.update(set(content_tokens(paper.get('title', ''))))
        limit = max(2, int(0.6 * len(papers)))
        ranked = [t for t, n in document_frequency.most_common()
                  if t not in excluded and len(t) >= 4 and not t.isdigit() and n <= limit]
        categories = [f"{t[:1].upper() + t[1:]} methods" for t in ranked[:5]] or ['General methods']
        return {'core_aspect': 'method family', 'categories': categories}

    def _reply_table_classify(self, prompt, rng):
        paper = prompt.json_slot('paper', {})
        tokens = set(content_tokens(f"{paper.get('title', '')} {paper.get('abstract', '')}"))
        assigned = [c for c in prompt.json_slot('categories', []) if content_tokens(c) and content_tokens(c)[0] in tokens]
        return {'categories': assigned or ['Others']}

    def _reply_table_aspects(self, prompt, rng):
        papers = prompt.json_slot('papers', [])
        excluded = set(content_tokens(prompt.slots['description'])) | GENERIC_TERMS
        document_frequency = Counter()
        for paper in papers:
            document_frequency.update(set(content_tokens(f"{paper.get('title', '')} {paper.get('abstract', '')}")))
        ranked = [t for t, _ in document_frequency.most_common()
                  if t not in excluded and len(t) >= 5 and not t.isdigit()]
        aspects = [t[:1].upper() + t[1:] for t in ranked[:3]]
        for fallback in ('Core idea', 'Training signal', 'Reported limitation'):
            if len(aspects) >= 3:
                break
            aspects.append(fallback)
        return {'aspects': aspects}

    def _reply_table_cell(self, prompt, rng):
        evidence = prompt.json_slot('evidence', [])
        text = strip_markers(evidence[0]) if evidence else ''
        words = text.split()[:12]
        return {'value': ' '.join(words).rstrip('.,;') if words else 'not reported'}


def create_mock_providers(run_config, corpus=None, scripted=None):
    """Mock-Provider mit dem Seed der Laufkonfiguration; ohne Ratenbegrenzung"""
    def seeded(config):
        return replace(config, mock_seed=run_config.seed, requests_per_second=0.0)

    embedder = MockEmbeddingProvider(seeded(run_config.embedding))
    return ProviderSet(
        llm=MockLLMProvider(seeded(run_config.llm), scripted=scripted),
        embedder=embedder,
        scholarly=MockScholarlyProvider(seeded(run_config.scholarly), corpus or run_config.fixture_corpus or None),
        reranker=MockReranker(seeded(run_config.rerank)),
        extractor=MockTextExtractor(),
    )
