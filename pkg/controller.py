"""
Ablaufsteuerung der Survey-Erzeugung
Retrieval, Planung, stufenweises Schreiben mit Gedächtnis, Umplanung, globale Verfeinerung und Tabellen
"""

import copy
import json
import shutil
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from citation_markers import cite_keys
from corpus import TAG_SURVEY, subsection_tag, build_index, save_csv, load_csv, PaperStore
from document import SurveyDocument, DocumentSection, DocumentSubsection
from planning import (
    Outline, StagedPlan, outline_from_dict, plan_from_dict, build_planning_context, generate_outline,
    refine_outline, build_plan,
)
from providers import StructuredPrompt
from replanner import propose_revisions, apply_revisions, replan
from retrieval import survey_level_retrieve, subsection_retrieve
from run_logger import print_detail, print_summary, log_event
from survey_errors import PipelineError, PreconditionError, ProviderError, SurveyError
from tables import generate_table, save_table
from writer import (
    build_rag_context, find_traceworthy, resolve_traced, write_subsection, save_sidecar, word_budget,
)


SCHEMA_VERSION = 1
MAX_TERMS_PER_SUBSECTION = 15
CHECKPOINT_DIR = 'checkpoints'
PLANNED_CHECKPOINT = 'planned'
SUBSECTIONS_DIR = 'subsections'
TABLES_DIR = 'tables'


# ========== GEDÄCHTNIS ==========

@dataclass
class TermEntry:
    term: str
    definition: str = ''
    source: str = ''


@dataclass
class StructureMemory:
    drafts: dict = field(default_factory=OrderedDict)
    terminology: list = field(default_factory=list)

    def has_term(self, term):
        key = term.strip().lower()
        return any(entry.term.lower() == key for entry in self.terminology)

    def add_terms(self, entries, source):
        """Begriffe case-insensitiv dedupliziert anhängen; liefert die Anzahl neuer Einträge"""
        added = 0
        for entry in entries:
            term = ' '.join(entry.get('term', '').split())
            if not term or self.has_term(term):
                continue
            self.terminology.append(TermEntry(term, entry.get('definition', '').strip(), source))
            added += 1
        return added

    def snapshot(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {
            'drafts': dict(self.drafts),
            'terminology': [{'term': e.term, 'definition': e.definition, 'source': e.source}
                            for e in self.terminology],
        }


def memory_from_dict(data):
    memory = StructureMemory(OrderedDict(data.get('drafts', {})))
    memory.terminology = [TermEntry(e['term'], e.get('definition', ''), e.get('source', ''))
                          for e in data.get('terminology', [])]
    return memory


def update_memory(memory, subsection_id, text, llm, title=''):
    """Entwurf ablegen und Terminologie extrahieren; bei Fehler bleibt nur der Entwurf"""
    if not text or not text.strip():
        raise PreconditionError(f"update_memory() für {subsection_id} mit leerem Entwurf", stage='writing')
    memory.drafts[subsection_id] = text
    prompt = StructuredPrompt.build('terminology-extract', title=title or subsection_id, text=text)
    try:
        terms = llm.complete_structured(prompt, 'terminology')['terms'][:MAX_TERMS_PER_SUBSECTION]
    except ProviderError as e:
        print_detail(f"Terminologie für {subsection_id} nicht extrahierbar, nur Entwurf gespeichert: {e}",
                     level='WARNING')
        return memory
    added = memory.add_terms(terms, subsection_id)
    print_detail(f"Gedächtnis: {subsection_id} gespeichert, {added} neue Begriffe", level='DEBUG')
    return memory


# ========== ZUSTAND ==========

@dataclass
class StageSet:
    stage: int
    subsection_ids: list

    def __post_init__(self):
        if not self.subsection_ids:
            raise PreconditionError("Leere Stufe", stage='writing')


@dataclass
class RunState:
    outline: Outline
    plan: StagedPlan
    memory: StructureMemory = field(default_factory=StructureMemory)
    completed: list = field(default_factory=list)
    current_stage: int = -1
    stages_done: int = 0
    plan_history: list = field(default_factory=list)
    traced: dict = field(default_factory=dict)

    def unwritten(self):
        return [sid for sid in self.plan.ids() if sid not in self.completed]

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'outline': self.outline.to_dict(),
            'plan': self.plan.to_dict(),
            'memory': self.memory.to_dict(),
            'completed': list(self.completed),
            'current_stage': self.current_stage,
            'stages_done': self.stages_done,
            'plan_history': self.plan_history,
            'traced': self.traced,
        }


def state_from_dict(data):
    outline = outline_from_dict(data['outline'])
    plan = plan_from_dict(data['plan'])
    return RunState(
        outline=outline,
        plan=plan,
        memory=memory_from_dict(data.get('memory', {})),
        completed=list(data.get('completed', [])),
        current_stage=data.get('current_stage', -1),
        stages_done=data.get('stages_done', 0),
        plan_history=list(data.get('plan_history', [])),
        traced=dict(data.get('traced', {})),
    )


def next_stage(state):
    """Alle ungeschriebenen Unterabschnitte mit minimaler Stufe; None wenn alles geschrieben ist"""
    remaining = [e for e in state.plan.entries if e.subsection_id not in state.completed]
    if not remaining:
        return None
    stage = min(e.stage for e in remaining)
    return StageSet(stage, [e.subsection_id for e in remaining if e.stage == stage])


# ========== CHECKPOINTS ==========

def save_checkpoint(state, store, out_dir, name):
    directory = Path(out_dir) / CHECKPOINT_DIR / name
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    save_csv(store, directory / 'papers.csv')
    with open(directory / 'state.json', 'w', encoding='utf-8') as f:
        json.dump(state.to_dict(), f, indent=2, ensure_ascii=False)
        f.write('\n')
    log_event('checkpoint', name=name, completed=len(state.completed))
    print_detail(f"Checkpoint {name} geschrieben", level='INFO')
    return directory


def latest_checkpoint(out_dir):
    root = Path(out_dir) / CHECKPOINT_DIR
    if not root.is_dir():
        return None
    candidates = sorted(p for p in root.iterdir() if (p / 'state.json').is_file())
    return candidates[-1] if candidates else None


def load_checkpoint(directory):
    with open(Path(directory) / 'state.json', 'r', encoding='utf-8') as f:
        state = state_from_dict(json.load(f))
    return state, load_csv(Path(directory) / 'papers.csv')


class CachingEmbedder:
    """Merkt sich Embeddings pro Text; der Index wird pro Stufe neu gebaut"""

    def __init__(self, inner):
        self.inner = inner
        self._cache = {}
        self._lock = threading.Lock()

    def embed(self, texts):
        texts = list(texts)
        if not texts:
            return self.inner.embed(texts)
        with self._lock:
            missing = list(OrderedDict.fromkeys(t for t in texts if t not in self._cache))
        if missing:
            for text, embedding in zip(missing, self.inner.embed(missing)):
                with self._lock:
                    self._cache.setdefault(text, embedding)
        with self._lock:
            return [self._cache[t] for t in texts]


# ========== GLOBALE VERFEINERUNG ==========

def _global_violation(before, reply, store):
    after = reply['text'].strip()
    if not after:
        return "leerer Text"
    before_keys = set(cite_keys(before))
    after_keys = set(cite_keys(after))
    remapped = reply.get('remapped', [])
    unknown_sources = sorted({item['from'] for item in remapped} - before_keys)
    if unknown_sources:
        return f"Umleitung von nicht zitierten Keys {unknown_sources}"
    unknown_targets = sorted(item['to'] for item in remapped if item['to'] not in store)
    if unknown_targets:
        return f"Umleitung auf unbekannte Bibkeys {unknown_targets}"
    remap_targets = {item['to'] for item in remapped}
    new_keys = sorted(after_keys - before_keys - remap_targets)
    if new_keys:
        return f"neue Zitate {new_keys}"
    missing = sorted(k for k in after_keys if k not in store)
    if missing:
        return f"unbekannte Bibkeys {missing}"
    remap_sources = {item['from'] for item in remapped}
    dropped = sorted(before_keys - after_keys - remap_sources)
    if dropped:
        return f"Zitate ohne Umleitung entfernt {dropped}"
    return None


def final_refine(texts, titles, memory, llm, store):
    """Nur die von der Diagnose markierten Unterabschnitte werden neu geschrieben; Zitate müssen im Store liegen"""
    texts = OrderedDict(texts)
    document = [{'subsection_id': sid, 'title': titles.get(sid, sid), 'text': text} for sid, text in texts.items()]
    terms = [entry.term for entry in memory.terminology]
    prompt = StructuredPrompt.build('diagnosis', terminology=terms, document=document)
    try:
        flagged = llm.complete_structured(prompt, 'diagnosis')['flagged']
    except ProviderError as e:
        print_detail(f"Globale Diagnose fehlgeschlagen, Dokument bleibt unverfeinert: {e}", level='WARNING')
        return texts, []

    issues = OrderedDict()
    for item in flagged:
        sid = item['subsection_id']
        if sid not in texts:
            print_detail(f"Diagnose nennt unbekannten Unterabschnitt {sid}", level='WARNING')
            continue
        issues.setdefault(sid, item.get('issue', ''))

    report = []
    for sid, issue in issues.items():
        before = texts[sid]
        refine_prompt = StructuredPrompt.build(
            'refinement', pass_name='global', title=titles.get(sid, sid),
            instructions={'issue': issue, 'terms': terms}, skeleton={'points': [], 'terminology': terms},
            context=[], text=before,
        )
        try:
            reply = llm.complete_structured(refine_prompt, 'refinement')
        except ProviderError as e:
            print_detail(f"Globale Verfeinerung von {sid} fehlgeschlagen: {e}", level='WARNING')
            report.append({'subsection_id': sid, 'issue': issue, 'applied': False, 'reason': 'provider error'})
            continue
        violation = _global_violation(before, reply, store)
        if violation:
            print_detail(f"Globale Verfeinerung von {sid} zurückgenommen: {violation}", level='WARNING')
            report.append({'subsection_id': sid, 'issue': issue, 'applied': False, 'reason': violation})
            continue
        texts[sid] = reply['text'].strip()
        report.append({'subsection_id': sid, 'issue': issue, 'applied': True,
                       'remapped': reply.get('remapped', [])})
    log_event('final_refine', flagged=list(issues), applied=[r['subsection_id'] for r in report if r['applied']])
    return texts, report


# ========== TABELLEN ==========

def table_papers(store, subsection_id):
    """Nicht-Review-Papers aus P* und P_i, nach Relevanz"""
    keys = {r.bibkey for r in store.records_with_tag(TAG_SURVEY)}
    keys.update(r.bibkey for r in store.records_with_tag(subsection_tag(subsection_id)))
    papers = [store.get(k) for k in sorted(keys) if not store.get(k).is_review]
    return sorted(papers, key=lambda p: (-(p.relevance_score or 0), p.bibkey))


def dispatch_tables(state, store, texts, index, providers, threshold, max_workers=4):
    """Genau die Unterabschnitte mit generate_table erhalten eine Tabelle; Fehler überspringen die Tabelle"""
    tables = OrderedDict()
    for entry in state.plan.entries:
        if not entry.table_flag:
            continue
        papers = table_papers(store, entry.subsection_id)
        if not papers:
            print_detail(f"Tabelle für '{entry.subsection_title}' übersprungen: keine Papers", level='WARNING')
            continue
        try:
            table = generate_table(papers, entry.subsection_title, entry.description, texts[entry.subsection_id],
                                   index, providers, entry.subsection_id, threshold, max_workers)
            table.validate(store)
        except (PipelineError, ProviderError) as e:
            print_detail(f"Tabelle für '{entry.subsection_title}' übersprungen: {e}", level='WARNING')
            continue
        tables[entry.subsection_id] = table
    return tables


# ========== PLANUNG ==========

def plan_survey(spec, config, providers, out_dir=None, store=None):
    """Retrieval auf Survey-Ebene und Planung; liefert (RunState, PaperStore)"""
    store = store if store is not None else PaperStore()
    result = survey_level_retrieve(spec, config.retrieval, providers, store)
    if not result.papers:
        raise PipelineError(f"Keine Papers für '{spec.topic}' gefunden", stage='retrieval')
    if result.insufficient_corpus:
        print_detail("Korpus möglicherweise unzureichend", level='WARNING')

    context = build_planning_context(result.papers, providers.llm, config.context_cap, config.parallelism)
    outline = refine_outline(generate_outline(context, spec, providers.llm), spec, providers.llm)
    plan = build_plan(outline, providers.llm)
    state = RunState(outline, plan)
    state.plan_history.append({'after_stage': None, 'actions': [], 'plan': plan.to_dict()['plan']})
    if out_dir is not None:
        save_checkpoint(state, store, out_dir, PLANNED_CHECKPOINT)
    return state, store


# ========== STUFEN ==========

def _retrieval_bibkeys(store, subsection_id):
    keys = {r.bibkey for r in store.records_with_tag(TAG_SURVEY)}
    keys.update(r.bibkey for r in store.records_with_tag(subsection_tag(subsection_id)))
    return keys


def run_stage(state, store, stage_set, config, providers, embedder, out_dir):
    """Eine Schreibstufe in Phasen; Store-Änderungen immer in Outline-Reihenfolge"""
    outline = state.outline
    entries = [state.plan.entry(sid) for sid in stage_set.subsection_ids]
    subs = [outline.get(sid) for sid in stage_set.subsection_ids]
    workers = config.parallelism

    def retrieve(entry):
        section = outline.section_of(entry.subsection_id)
        return subsection_retrieve(entry.subsection_title, entry.description, config.retrieval, providers,
                                   section.title, section.description, entry.subsection_id)

    flagged = [e for e in entries if e.retrieval_flag]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(retrieve, flagged))
    for entry, result in zip(flagged, results):
        if result.papers:
            store.upsert(result.papers, subsection_tag(entry.subsection_id))

    index = build_index(store, embedder, config.chunk_size, config.chunk_overlap)

    def gather(sub):
        passages = build_rag_context(sub.title, sub.description, index, embedder, providers.reranker,
                                     _retrieval_bibkeys(store, sub.subsection_id), config.rag_top_k,
                                     config.rag_final_k)
        worthy = []
        if config.enable_citation_trace:
            worthy = find_traceworthy(passages, sub.title, sub.description, providers.llm)
        return passages, worthy

    with ThreadPoolExecutor(max_workers=workers) as pool:
        gathered = list(pool.map(gather, subs))
    contexts = [resolve_traced(passages, worthy, store, providers.scholarly) for passages, worthy in gathered]

    snapshot = state.memory.snapshot()
    budget = word_budget(config.target_length, len(outline.ids()))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        drafts = list(pool.map(
            lambda job: write_subsection(job[0], job[1], snapshot, providers.llm, config.n_candidates, budget),
            zip(subs, contexts)))

    for sub, draft in zip(subs, drafts):
        update_memory(state.memory, sub.subsection_id, draft.text, providers.llm, sub.title)
        state.traced[sub.subsection_id] = sorted(draft.context.traced_bibkeys())
        state.completed.append(sub.subsection_id)
        if out_dir is not None:
            save_sidecar(draft, Path(out_dir) / SUBSECTIONS_DIR)
    state.current_stage = stage_set.stage
    state.stages_done += 1
    return drafts


def revise_structure(state, providers):
    """Umplanung nach einer Stufe; ohne akzeptierte Aktionen bleibt der Plan unverändert"""
    unwritten = state.unwritten()
    actions = propose_revisions(state.outline, state.memory, unwritten, providers.llm)
    if not actions:
        print_detail("Keine Strukturrevision nach dieser Stufe", level='INFO')
        return []
    revised = apply_revisions(state.outline, actions, taken_ids=state.completed)
    state.plan = replan(revised, state.completed, state.plan, providers.llm, state.current_stage)
    state.outline = revised
    state.plan_history.append({'after_stage': state.current_stage,
                               'actions': [a.to_dict() for a in actions],
                               'plan': state.plan.to_dict()['plan']})
    print_summary(f"  ✓ Struktur revidiert: {len(actions)} Aktion(en), "
                  f"{len(state.unwritten())} Unterabschnitte offen")
    return actions


# ========== GESAMTLAUF ==========

def write_state_artifacts(state, store, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in (('outline.json', state.outline.to_dict()), ('plan.json', state.plan.to_dict()),
                       ('plan_history.json', {'schema_version': SCHEMA_VERSION, 'history': state.plan_history})):
        with open(out_dir / name, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
            f.write('\n')
    save_csv(store, out_dir / 'papers.csv')


def assemble_document(title, state, store, texts, tables):
    """Dokument in Outline-Reihenfolge, unabhängig von der Schreibreihenfolge"""
    traced = set()
    for keys in state.traced.values():
        traced.update(keys)
    sections = []
    for section in state.outline.sections:
        subs = [DocumentSubsection(s.subsection_id, s.title, texts[s.subsection_id], tables.get(s.subsection_id))
                for s in section.subsections]
        sections.append(DocumentSection(section.title, section.description, subs))
    document = SurveyDocument(title, sections, store, traced)
    missing = [k for k in document.cited_bibkeys() if k not in store]
    if missing:
        raise PipelineError(f"Dokument zitiert unbekannte Bibkeys {missing}", stage='assembly')
    return document


def run_pipeline(spec, config, providers, out_dir, resume=False):
    """Kompletter Lauf; nach der Planung und jeder Stufe wird ein Checkpoint geschrieben"""
    out_dir = Path(out_dir)
    embedder = CachingEmbedder(providers.embedder)

    checkpoint = latest_checkpoint(out_dir) if resume else None
    if checkpoint is not None:
        state, store = load_checkpoint(checkpoint)
        print_summary(f"✓ Fortsetzung ab Checkpoint {checkpoint.name} "
                      f"({len(state.completed)}/{len(state.plan.ids())} geschrieben)")
        log_event('resume', checkpoint=checkpoint.name, completed=len(state.completed))
    else:
        if resume:
            print_summary("⚠ Kein Checkpoint gefunden, starte neu")
        state, store = plan_survey(spec, config, providers, out_dir)

    log_event('ablation', enable_citation_trace=config.enable_citation_trace,
              enable_plan_update=config.enable_plan_update, enable_final_refine=config.enable_final_refine)

    while True:
        stage_set = next_stage(state)
        if stage_set is None:
            break
        print_summary(f"\n→ Stufe {stage_set.stage}: {len(stage_set.subsection_ids)} Unterabschnitt(e)")
        log_event('stage_start', stage=stage_set.stage, subsections=stage_set.subsection_ids)
        try:
            run_stage(state, store, stage_set, config, providers, embedder, out_dir)
        except SurveyError as e:
            log_event('stage_failed', stage=stage_set.stage, error=e.to_dict())
            print_summary(f"✗ Stufe {stage_set.stage} abgebrochen, Fortsetzung mit --resume möglich")
            raise
        log_event('stage_end', stage=stage_set.stage, completed=len(state.completed))

        if state.unwritten() and config.enable_plan_update:
            revise_structure(state, providers)
        save_checkpoint(state, store, out_dir, f"stage_{state.stages_done:02d}")

    titles = {s.subsection_id: s.title for s in state.outline.subsections()}
    texts = OrderedDict((sid, state.memory.drafts[sid]) for sid in state.outline.ids())
    if config.enable_final_refine:
        texts, _ = final_refine(texts, titles, state.memory, providers.llm, store)

    index = build_index(store, embedder, config.chunk_size, config.chunk_overlap)
    tables = dispatch_tables(state, store, texts, index, providers, config.table_threshold, config.parallelism)
    for table in tables.values():
        save_table(table, out_dir / TABLES_DIR)

    write_state_artifacts(state, store, out_dir)
    document = assemble_document(spec.topic, state, store, texts, tables)
    print_summary(f"✓ Dokument: {len(document.subsections())} Unterabschnitte, "
                  f"{len(document.cited_bibkeys())} Quellen, {len(tables)} Tabelle(n)")
    return document
