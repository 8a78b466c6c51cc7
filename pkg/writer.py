"""
Schreiben eines Unterabschnitts
RAG-Kontext, Zitations-Rückverfolgung, Skelett, Best-of-N und dreistufige Verfeinerung
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from citation_markers import NUMERIC, AUTHOR_YEAR, detect_markers, cite_keys
from corpus import TAG_TRACED
from providers import StructuredPrompt
from run_logger import print_detail, log_event
from survey_errors import ProviderError, PreconditionError, SubsectionError


DEFAULT_RAG_TOP_K = 30
DEFAULT_RAG_FINAL_K = 10
MIN_SKELETON_POINTS = 3
MAX_SKELETON_POINTS = 10
MIN_WORD_BUDGET = 80
REFERENCE_LINE_RE = re.compile(r'^\s*\[(\d{1,4})\]\s+(.+?)\s*$', re.MULTILINE)

REFINEMENT_PASSES = ('structure', 'citation', 'polish')
REFINEMENT_INSTRUCTIONS = {
    'structure': "Reorganize the text so that it follows the skeleton points in order; do not add new claims.",
    'citation': "Check every factual claim. Attach a \\cite{bibkey} from the available sources to each claim "
                "that lacks one and list the sentences you changed in flagged_claims.",
    'polish': "Polish wording and flow without changing content or citations.",
}


# ========== TYPEN ==========

@dataclass
class Passage:
    key: str
    bibkey: str
    text: str
    score: float

    def to_dict(self):
        return {'key': self.key, 'bibkey': self.bibkey, 'score': round(self.score, 6)}


@dataclass
class TraceAssessment:
    marker: object
    traceworthy: bool
    explanation: str = ''


@dataclass
class TracedEntry:
    record: object
    # (passage_key, marker_label) je zitierender Stelle
    backlinks: list = field(default_factory=list)

    def to_dict(self):
        return {
            'bibkey': self.record.bibkey,
            'title': self.record.title,
            'backlinks': [{'passage': key, 'marker': label} for key, label in self.backlinks],
        }


@dataclass
class EnrichedContext:
    base: list
    traced: list = field(default_factory=list)

    @property
    def allowed_bibkeys(self):
        keys = {p.bibkey for p in self.base}
        keys.update(t.record.bibkey for t in self.traced)
        return keys

    def traced_bibkeys(self):
        return {t.record.bibkey for t in self.traced}

    def prompt_passages(self):
        return [{'bibkey': p.bibkey, 'text': p.text} for p in self.base]

    def prompt_traced(self):
        return [{'bibkey': t.record.bibkey, 'title': t.record.title, 'abstract': t.record.abstract}
                for t in self.traced]


@dataclass
class Skeleton:
    points: list
    terminology: list = field(default_factory=list)

    def to_dict(self):
        return {'points': list(self.points), 'terminology': list(self.terminology)}


@dataclass
class SubsectionDraft:
    """Ergebnis eines Unterabschnitts inklusive JSON-Sidecar-Inhalt"""
    subsection_id: str
    title: str
    text: str
    skeleton: Skeleton
    context: EnrichedContext
    candidates: list = field(default_factory=list)
    selected_index: int = 0
    justification: str = ''
    refinement_log: list = field(default_factory=list)
    markers: list = field(default_factory=list)

    def cited_bibkeys(self):
        return cite_keys(self.text)

    def to_dict(self):
        return {
            'subsection_id': self.subsection_id,
            'title': self.title,
            'text': self.text,
            'skeleton': self.skeleton.to_dict(),
            'passages': [p.to_dict() for p in self.context.base],
            'markers': self.markers,
            'traced': [t.to_dict() for t in self.context.traced],
            'candidates': self.candidates,
            'selected_index': self.selected_index,
            'justification': self.justification,
            'refinement': self.refinement_log,
            'cited_bibkeys': self.cited_bibkeys(),
        }


def save_sidecar(draft, directory):
    path = Path(directory) / f"{draft.subsection_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(draft.to_dict(), f, indent=2, ensure_ascii=False)
        f.write('\n')
    return path


def word_budget(target_length, subsection_count):
    """Zielumfang gleichmäßig auf die Unterabschnitte verteilt"""
    if subsection_count < 1:
        raise PreconditionError("word_budget() braucht mindestens einen Unterabschnitt")
    return max(MIN_WORD_BUDGET, int(target_length) // subsection_count)


# ========== RAG-KONTEXT ==========

def build_rag_context(title, description, index, embedder, reranker, bibkeys=None,
                      k=DEFAULT_RAG_TOP_K, final_k=DEFAULT_RAG_FINAL_K):
    """Dichte Top-k-Suche, dann Reranking; liefert min(final_k, Kandidaten) Passagen absteigend"""
    if index is None or len(index) == 0:
        print_detail(f"Leerer Index für '{title}', kein Kontext", level='WARNING')
        return []
    query = f"{title}. {description}".strip()
    hits = index.search(embedder.embed([query])[0], k, bibkeys)
    if not hits:
        print_detail(f"Keine Kandidaten-Passagen für '{title}'", level='WARNING')
        return []

    try:
        scores = reranker.rerank(query, [entry.text for entry, _ in hits])
    except ProviderError as e:
        print_detail(f"Reranking für '{title}' fehlgeschlagen, verwende Kosinus: {e}", level='WARNING')
        scores = [score for _, score in hits]

    ranked = sorted(range(len(hits)), key=lambda i: -scores[i])[:final_k]
    return [Passage(hits[i][0].key, hits[i][0].bibkey, hits[i][0].text, float(scores[i])) for i in ranked]


# ========== ZITATIONS-RÜCKVERFOLGUNG ==========

def assess_traceworthiness(markers, title, description, passage_text, llm):
    """Genau eine Bewertung pro Marker; fehlende Bewertungen gelten als nicht rückverfolgenswert"""
    markers = list(markers)
    if not markers:
        return []
    prompt = StructuredPrompt.build('traceworthiness', title=title, description=description,
                                    passage=passage_text, markers=[m.to_dict() for m in markers])
    try:
        reply = llm.complete_structured(prompt, 'trace_assessments')
    except ProviderError as e:
        print_detail(f"Bewertung der Zitationen für '{title}' fehlgeschlagen: {e}", level='WARNING')
        return [TraceAssessment(m, False, 'assessment failed') for m in markers]

    by_label = {}
    for item in reply['assessments']:
        by_label.setdefault(item['marker'], item)
    assessments = []
    for marker in markers:
        item = by_label.get(marker.label) or by_label.get(marker.surface)
        if item is None:
            assessments.append(TraceAssessment(marker, False, 'no assessment returned'))
        else:
            assessments.append(TraceAssessment(marker, bool(item['traceworthy']), item.get('explanation', '')))
    return assessments


def reference_list(full_text):
    """Nummerierte Literaturliste eines Volltexts: {Nummer: Eintrag}"""
    entries = {}
    for match in REFERENCE_LINE_RE.finditer(full_text or ''):
        entries.setdefault(int(match.group(1)), match.group(2))
    return entries


def resolve_marker(marker, citing_record, scholarly):
    """Marker auf Paper-Datensätze abbilden; numerische Marker nur über die Literaturliste des Volltexts"""
    if marker.kind == AUTHOR_YEAR:
        references = [marker.reference_text()]
    else:
        listed = reference_list(citing_record.full_text if citing_record else None)
        references = [listed[n] for n in marker.numbers if n in listed]
        if not references:
            print_detail(f"{marker.label}: keine Literaturliste zum Auflösen", level='INFO')
            return []

    resolved = []
    for reference in references:
        try:
            record = scholarly.resolve_citation(reference)
        except ProviderError as e:
            print_detail(f"Auflösung von {marker.label} fehlgeschlagen: {e}", level='WARNING')
            continue
        if record is not None:
            resolved.append(record)
    return resolved


def find_traceworthy(passages, title, description, llm):
    """Marker-Erkennung und Bewertung für alle Passagen; liefert (Passage, Marker) der rückverfolgenswerten"""
    worthy = []
    for passage in passages:
        markers = detect_markers(passage.text, passage.key)
        for assessment in assess_traceworthiness(markers, title, description, passage.text, llm):
            if assessment.traceworthy:
                worthy.append((passage, assessment.marker))
    return worthy


def resolve_traced(passages, worthy, store, scholarly):
    """Löst Marker höchstens einmal auf, übernimmt Treffer als 'traced' in den Store"""
    traced = {}
    cache = {}
    for passage, marker in worthy:
        citing = store.get(passage.bibkey)
        # numerische Labels gelten nur innerhalb eines zitierenden Papers
        cache_key = (passage.bibkey if marker.kind == NUMERIC else '', marker.label)
        if cache_key not in cache:
            cache[cache_key] = resolve_marker(marker, citing, scholarly)
            if not cache[cache_key]:
                print_detail(f"Marker {marker.label} aus {passage.key} nicht auflösbar", level='INFO')
                log_event('trace_miss', passage=passage.key, marker=marker.label)
        for record in cache[cache_key]:
            if citing is not None and record.paper_id == citing.paper_id:
                continue
            bibkey = store.upsert([record], TAG_TRACED)[0]
            entry = traced.setdefault(bibkey, TracedEntry(store.get(bibkey)))
            backlink = (passage.key, marker.label)
            if backlink not in entry.backlinks:
                entry.backlinks.append(backlink)
    return EnrichedContext(list(passages), list(traced.values()))


def enrich_context(passages, title, description, store, llm, scholarly):
    """Basis-Passagen bleiben unverändert, rückverfolgte Quellen werden angehängt"""
    worthy = find_traceworthy(passages, title, description, llm)
    return resolve_traced(passages, worthy, store, scholarly)


# ========== SKELETT UND ENTWÜRFE ==========

def make_skeleton(title, description, memory, llm):
    memory_terms = [entry.term for entry in memory.terminology]
    prompt = StructuredPrompt.build('skeleton', title=title, description=description, memory_terms=memory_terms)
    reply = llm.complete_structured(prompt, 'skeleton')
    points = [' '.join(p.split()) for p in reply['points'] if p.strip()][:MAX_SKELETON_POINTS]
    if len(points) < MIN_SKELETON_POINTS:
        raise SubsectionError(f"Skelett für '{title}' hat nur {len(points)} Punkte", stage='writing')
    canonical = {t.lower(): t for t in memory_terms}
    terminology = []
    for term in reply.get('terminology', []):
        known = canonical.get(term.strip().lower())
        if known and known not in terminology:
            terminology.append(known)
    return Skeleton(points, terminology)


def _draft_prompt(title, description, skeleton, context, budget, index):
    return StructuredPrompt.build(
        'subsection-write', title=title, description=description, skeleton=skeleton.to_dict(),
        context=context.prompt_passages(), traced=context.prompt_traced(),
        word_budget=str(budget), candidate_index=str(index),
    )


def write_candidates(title, description, skeleton, context, n, llm, budget, subsection_id=None):
    """N Entwürfe; unbekannte Bibkeys lösen einen Reparatur-Prompt aus, sonst wird verworfen"""
    if n < 1:
        raise PreconditionError(f"n_candidates muss >= 1 sein, nicht {n}")
    allowed = context.allowed_bibkeys
    drafts = []
    for index in range(n):
        prompt = _draft_prompt(title, description, skeleton, context, budget, index)
        try:
            text = llm.complete_structured(prompt, 'draft')['text'].strip()
            unknown = sorted(set(cite_keys(text)) - allowed)
            if unknown:
                print_detail(f"Entwurf {index} für '{title}' zitiert unbekannte Bibkeys {unknown}, repariere",
                             level='WARNING')
                prompt.slots['feedback'] = (f"Your draft cites unknown bibkeys {unknown}. "
                                            f"Use only these bibkeys: {sorted(allowed)}.")
                text = llm.complete_structured(prompt, 'draft')['text'].strip()
                unknown = sorted(set(cite_keys(text)) - allowed)
        except ProviderError as e:
            print_detail(f"Entwurf {index} für '{title}' fehlgeschlagen: {e}", level='WARNING')
            continue
        if unknown:
            print_detail(f"Entwurf {index} für '{title}' verworfen, weiterhin unbekannte Bibkeys {unknown}",
                         level='WARNING')
            continue
        if not text:
            print_detail(f"Entwurf {index} für '{title}' ist leer, verworfen", level='WARNING')
            continue
        drafts.append(text)
    if not drafts:
        raise SubsectionError(f"Kein gültiger Entwurf für '{title}'", subsection_id=subsection_id, stage='writing')
    return drafts


def select_best(title, skeleton, drafts, llm):
    """(Index, Begründung); ein Entwurf oder identische Entwürfe ohne Bewertungsaufruf"""
    if not drafts:
        raise PreconditionError("select_best() braucht mindestens einen Entwurf")
    if len(drafts) == 1:
        return 0, 'single candidate'
    if len(set(drafts)) == 1:
        return 0, 'identical candidates'
    prompt = StructuredPrompt.build('draft-select', title=title, skeleton=skeleton.to_dict(), candidates=drafts)
    try:
        reply = llm.complete_structured(prompt, 'selection')
    except ProviderError as e:
        print_detail(f"Auswahl für '{title}' fehlgeschlagen, nehme Entwurf 0: {e}", level='WARNING')
        return 0, 'selection failed'
    best = reply['best_index']
    if not 0 <= best < len(drafts):
        print_detail(f"Auswahl für '{title}' liefert ungültigen Index {best}, nehme Entwurf 0", level='WARNING')
        return 0, reply.get('justification', '')
    return best, reply.get('justification', '')


# ========== VERFEINERUNG ==========

def _pass_violation(pass_name, before, reply, allowed):
    after = reply['text'].strip()
    if not after:
        return "leerer Text"
    after_keys = set(cite_keys(after))
    unknown = sorted(after_keys - allowed)
    if unknown:
        return f"unbekannte Bibkeys {unknown}"
    remapped = {item['from']: item['to'] for item in reply.get('remapped', [])}
    dropped = sorted(k for k in set(cite_keys(before)) - after_keys if remapped.get(k) not in after_keys)
    if dropped:
        return f"Zitate entfernt {dropped}"
    if pass_name == 'citation':
        uncited = [c for c in reply.get('flagged_claims', []) if '\\cite{' not in c]
        if uncited:
            return f"{len(uncited)} markierte Aussage(n) ohne Zitat"
    return None


def refine_subsection(title, text, skeleton, context, llm):
    """Struktur, Zitate, Stil; ein fehlgeschlagener Durchgang behält den Text davor"""
    allowed = context.allowed_bibkeys
    log = []
    for pass_name in REFINEMENT_PASSES:
        prompt = StructuredPrompt.build(
            'refinement', pass_name=pass_name, title=title, instructions=REFINEMENT_INSTRUCTIONS[pass_name],
            skeleton=skeleton.to_dict(), context=context.prompt_passages() + context.prompt_traced(), text=text,
        )
        try:
            reply = llm.complete_structured(prompt, 'refinement')
        except ProviderError as e:
            print_detail(f"Verfeinerung '{pass_name}' für '{title}' fehlgeschlagen: {e}", level='WARNING')
            log.append({'pass': pass_name, 'applied': False, 'reason': 'provider error'})
            continue
        violation = _pass_violation(pass_name, text, reply, allowed)
        if violation:
            print_detail(f"Verfeinerung '{pass_name}' für '{title}' verworfen: {violation}", level='WARNING')
            log.append({'pass': pass_name, 'applied': False, 'reason': violation})
            continue
        changed = reply['text'].strip() != text
        text = reply['text'].strip()
        log.append({'pass': pass_name, 'applied': True, 'changed': changed,
                    'flagged_claims': len(reply.get('flagged_claims', []))})
    return text, log


# ========== GESAMTABLAUF ==========

def write_subsection(sub, context, memory, llm, n_candidates, budget):
    """Skelett, N Entwürfe, Auswahl und Verfeinerung für einen Unterabschnitt"""
    if not context.base:
        raise SubsectionError(f"Kein Kontext für '{sub.title}'", subsection_id=sub.subsection_id, stage='writing')
    skeleton = make_skeleton(sub.title, sub.description, memory, llm)
    drafts = write_candidates(sub.title, sub.description, skeleton, context, n_candidates, llm, budget,
                              sub.subsection_id)
    index, justification = select_best(sub.title, skeleton, drafts, llm)
    text, refinement_log = refine_subsection(sub.title, drafts[index], skeleton, context, llm)
    markers = []
    for passage in context.base:
        markers.extend(m.to_dict() for m in detect_markers(passage.text, passage.key))
    print_detail(f"Unterabschnitt '{sub.title}' geschrieben: {len(text.split())} Wörter, "
                 f"{len(cite_keys(text))} Quellen", level='INFO')
    return SubsectionDraft(sub.subsection_id, sub.title, text, skeleton, context, drafts, index, justification,
                           refinement_log, markers)
