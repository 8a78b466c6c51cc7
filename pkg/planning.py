"""
Struktur-Planung: Outline aus Reviews und Abstracts, Roh-Plan, Abhängigkeitsgraph,
Zyklen-Auflösung und Stufen-Zuweisung (längster Pfad)
"""

import copy
import json
import re
import unicodedata
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx

from providers import StructuredPrompt
from run_logger import print_detail, print_summary, log_event
from survey_errors import (
    CyclicGraphError, DegenerateOutputError, PipelineError, PreconditionError, ProviderError,
)


SCHEMA_VERSION = 1
DEFAULT_CONTEXT_CAP = 60000
REVIEW_TEXT_CHARS = 15000


# ========== OUTLINE ==========

def slugify(text, max_length=60):
    text = unicodedata.normalize('NFKD', text or '').encode('ascii', 'ignore').decode('ascii')
    slug = re.sub(r'[^a-z0-9]+', '-', text.lower()).strip('-')
    return slug[:max_length].rstrip('-') or 'subsection'


def unique_id(base, taken):
    """Slug mit -2, -3, ... entkollidiert"""
    if base not in taken:
        return base
    counter = 2
    while f"{base}-{counter}" in taken:
        counter += 1
    return f"{base}-{counter}"


def _title_key(title):
    return ' '.join(title.lower().split())


@dataclass
class SubsectionSpec:
    subsection_id: str
    title: str
    description: str


@dataclass
class Section:
    title: str
    description: str = ''
    subsections: list = field(default_factory=list)


@dataclass
class Outline:
    sections: list

    def subsections(self):
        return [sub for section in self.sections for sub in section.subsections]

    def ids(self):
        return [sub.subsection_id for sub in self.subsections()]

    def get(self, subsection_id):
        for sub in self.subsections():
            if sub.subsection_id == subsection_id:
                return sub
        return None

    def section_of(self, subsection_id):
        for section in self.sections:
            if any(sub.subsection_id == subsection_id for sub in section.subsections):
                return section
        return None

    def by_title(self):
        return {_title_key(sub.title): sub.subsection_id for sub in self.subsections()}

    def duplicate_titles(self):
        seen = set()
        duplicates = []
        for sub in self.subsections():
            key = _title_key(sub.title)
            if key in seen:
                duplicates.append(sub.title)
            seen.add(key)
        return duplicates

    def incomplete_subsections(self):
        return [sub.title or sub.subsection_id for sub in self.subsections()
                if not sub.title.strip() or not sub.description.strip()]

    def validate(self):
        """Titel eindeutig, jede Beschreibung nicht leer, IDs eindeutig"""
        if not self.sections or not self.subsections():
            raise PreconditionError("Outline ohne Unterabschnitte", stage='planning')
        duplicates = self.duplicate_titles()
        if duplicates:
            raise PreconditionError(f"Doppelte Unterabschnitts-Titel: {duplicates}", stage='planning')
        ids = self.ids()
        if len(set(ids)) != len(ids):
            raise PreconditionError("Doppelte Unterabschnitts-IDs", stage='planning')
        for sub in self.subsections():
            if not sub.title.strip() or not sub.description.strip():
                raise PreconditionError(f"Unterabschnitt {sub.subsection_id} ohne Titel oder Beschreibung",
                                        stage='planning')
        return self

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self, with_ids=True, written=None):
        sections = []
        for section in self.sections:
            subsections = []
            for sub in section.subsections:
                entry = {'subsection_title': sub.title, 'subsection_description': sub.description}
                if with_ids:
                    entry = {'subsection_id': sub.subsection_id, **entry}
                if written is not None:
                    entry['written'] = sub.subsection_id in written
                subsections.append(entry)
            sections.append({
                'section_title': section.title,
                'section_description': section.description,
                'subsections': subsections,
            })
        return {'schema_version': SCHEMA_VERSION, 'sections': sections}


def outline_from_dict(data, previous=None):
    """Parse Outline-JSON (Feldnamen wie section_title/subsection_title); IDs bleiben über Titel erhalten"""
    if isinstance(data, list):
        data = {'sections': data}
    known = previous.by_title() if previous else {}
    taken = set()
    sections = []
    for raw_section in data.get('sections', []):
        subsections = []
        for raw in raw_section.get('subsections', []):
            title = ' '.join(str(raw.get('subsection_title', '')).split())
            subsection_id = raw.get('subsection_id') or known.get(_title_key(title)) or slugify(title)
            subsection_id = unique_id(subsection_id, taken)
            taken.add(subsection_id)
            subsections.append(SubsectionSpec(subsection_id, title,
                                              ' '.join(str(raw.get('subsection_description', '')).split())))
        sections.append(Section(' '.join(str(raw_section.get('section_title', '')).split()),
                                str(raw_section.get('section_description', '')).strip(), subsections))
    return Outline(sections)


def load_outline(path):
    with open(path, 'r', encoding='utf-8') as f:
        return outline_from_dict(json.load(f))


# ========== PLANUNGSKONTEXT ==========

@dataclass
class PlanningContext:
    review_outlines: list
    abstracts: list
    dropped_abstracts: int = 0

    @property
    def text(self):
        return compose_context(self.review_outlines, self.abstracts)


def compose_context(review_outlines, abstracts):
    parts = []
    if review_outlines:
        parts.append("Structural patterns of existing reviews:\n" + '\n\n'.join(review_outlines))
    if abstracts:
        parts.append("Abstracts of relevant papers:\n" + '\n'.join(f"- {t}: {a}" for t, a in abstracts))
    return '\n\n'.join(parts)


def _review_outline(record, llm):
    if not record.full_text:
        return f"Review: {record.title}\n{record.abstract}"
    prompt = StructuredPrompt.build('review-outline', title=record.title,
                                    text=record.full_text[:REVIEW_TEXT_CHARS])
    try:
        headings = llm.complete_structured(prompt, 'review_outline')['outline']
    except ProviderError as e:
        print_detail(f"Gliederung von '{record.title}' nicht extrahierbar, übersprungen: {e}", level='WARNING')
        return None
    headings = [h.strip() for h in headings if h.strip()]
    if not headings:
        return None
    return f"Review: {record.title}\n" + '\n'.join(f"- {h}" for h in headings)


def build_planning_context(papers, llm, cap=DEFAULT_CONTEXT_CAP, max_workers=4):
    """Reviews liefern Strukturmuster, Nicht-Reviews Titel und Abstract; Kappung an Gesamtlänge"""
    papers = list(papers)
    if not papers:
        raise PreconditionError("build_planning_context() braucht mindestens ein Paper", stage='planning')

    reviews = [p for p in papers if p.is_review]
    others = [p for p in papers if not p.is_review and p.abstract]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        review_outlines = [r for r in pool.map(lambda p: _review_outline(p, llm), reviews) if r]

    # niedrigste Relevanz zuerst verwerfen, Gleichstand: spätere Position zuerst
    drop_order = sorted(range(len(others)), key=lambda i: (others[i].relevance_score or 0, -i))
    kept = set(range(len(others)))
    entry_length = {i: len(f"- {others[i].title}: {others[i].abstract}\n") for i in kept}
    total = len(compose_context(review_outlines, [(p.title, p.abstract) for p in others]))
    for i in drop_order:
        if total <= cap:
            break
        kept.discard(i)
        total -= entry_length[i]
    abstracts = [(others[i].title, others[i].abstract) for i in sorted(kept)]
    dropped = len(others) - len(abstracts)
    if dropped:
        print_detail(f"Planungskontext gekappt: {dropped} Abstract(s) verworfen", level='INFO')
    return PlanningContext(review_outlines, abstracts, dropped)


# ========== OUTLINE-GENERIERUNG ==========

def generate_outline(context, spec, llm):
    """Erste Outline O_0 aus dem Planungskontext"""
    prompt = StructuredPrompt.build('outline-gen', topic=spec.topic, description=spec.description,
                                    context=context.text)
    return outline_from_dict(llm.complete_structured(prompt, 'outline'))


def refine_outline(outline, spec, llm):
    """Verfeinerte Outline O; doppelte Titel oder leere Beschreibungen lösen genau einen Reparatur-Prompt aus"""
    feedback = ''
    for attempt in range(2):
        prompt = StructuredPrompt.build('outline-refine', topic=spec.topic,
                                        outline=outline.to_dict(with_ids=False))
        prompt.slots['feedback'] = feedback
        refined = outline_from_dict(llm.complete_structured(prompt, 'outline'), previous=outline)
        duplicates = refined.duplicate_titles()
        incomplete = refined.incomplete_subsections()
        if not duplicates and not incomplete:
            return refined.validate()
        problems = []
        if duplicates:
            problems.append(f"duplicate subsection titles {duplicates}")
        if incomplete:
            problems.append(f"subsections without title or description {incomplete}")
        print_detail(f"Outline unvollständig ({'; '.join(problems)}), frage erneut", level='WARNING')
        feedback = (f"The outline still contains {'; '.join(problems)}. Merge or rename duplicates so that every "
                    "subsection title is unique, and give every subsection a non-empty description.")
    raise DegenerateOutputError(f"Outline-Verfeinerung weiterhin fehlerhaft: {'; '.join(problems)}",
                                stage='planning')


# ========== PLAN ==========

@dataclass
class PlanEntry:
    subsection_id: str
    section_title: str
    subsection_title: str
    description: str
    retrieval_flag: bool = False
    table_flag: bool = False
    stage: Optional[int] = None
    depends_on: list = field(default_factory=list)

    def to_dict(self, titles):
        return {
            'section_title': self.section_title,
            'subsection_id': self.subsection_id,
            'subsection_title': self.subsection_title,
            'subsection_description': self.description,
            'index': self.stage,
            'trigger_additional_search': self.retrieval_flag,
            'generate_table': self.table_flag,
            'depends_on': [titles[d] for d in self.depends_on],
        }


@dataclass
class StagedPlan:
    entries: list

    def __post_init__(self):
        self._by_id = {e.subsection_id: e for e in self.entries}

    def __eq__(self, other):
        if not isinstance(other, StagedPlan):
            return NotImplemented
        return self.entries == other.entries

    def entry(self, subsection_id):
        return self._by_id.get(subsection_id)

    def ids(self):
        return [e.subsection_id for e in self.entries]

    def stages(self):
        return {e.subsection_id: e.stage for e in self.entries}

    def max_stage(self):
        return max((e.stage for e in self.entries), default=-1)

    def stage_sets(self):
        """Einträge gruppiert nach Stufe, in Outline-Reihenfolge"""
        groups = OrderedDict()
        for stage in sorted({e.stage for e in self.entries}):
            groups[stage] = [e.subsection_id for e in self.entries if e.stage == stage]
        return groups

    def graph(self):
        G = nx.DiGraph()
        G.add_nodes_from(self.ids())
        for e in self.entries:
            G.add_edges_from((d, e.subsection_id) for d in e.depends_on)
        return G

    def restricted(self, subsection_ids):
        keep = set(subsection_ids)
        return [copy.deepcopy(e) for e in self.entries if e.subsection_id in keep]

    def to_dict(self):
        titles = {e.subsection_id: e.subsection_title for e in self.entries}
        return {'schema_version': SCHEMA_VERSION, 'plan': [e.to_dict(titles) for e in self.entries]}


def plan_from_dict(data):
    """Parse Plan-JSON; akzeptiert {"plan": [...]} und die nackte Liste"""
    raw_entries = data.get('plan', []) if isinstance(data, dict) else data
    if not isinstance(raw_entries, list) or not raw_entries:
        raise PipelineError("Plan-JSON enthält keine Einträge", stage='planning')
    taken = set()
    entries = []
    for raw in raw_entries:
        try:
            title = ' '.join(raw['subsection_title'].split())
            subsection_id = unique_id(raw.get('subsection_id') or slugify(title), taken)
            taken.add(subsection_id)
            entries.append(PlanEntry(
                subsection_id=subsection_id,
                section_title=raw.get('section_title', ''),
                subsection_title=title,
                description=raw.get('subsection_description', ''),
                retrieval_flag=bool(raw['trigger_additional_search']),
                table_flag=bool(raw['generate_table']),
                stage=int(raw['index']),
                depends_on=list(raw.get('depends_on', [])),
            ))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise PipelineError(f"Ungültiger Plan-Eintrag {raw!r}: {e}", stage='planning')

    ids_by_title = {_title_key(e.subsection_title): e.subsection_id for e in entries}
    for e in entries:
        resolved = []
        for title in e.depends_on:
            target = ids_by_title.get(_title_key(title))
            if target is None:
                raise PipelineError(f"'{e.subsection_title}' hängt von unbekanntem '{title}' ab", stage='planning')
            resolved.append(target)
        e.depends_on = resolved
    return StagedPlan(entries)


def load_plan(path):
    with open(path, 'r', encoding='utf-8') as f:
        return plan_from_dict(json.load(f))


def plan_to_outline(plan):
    """Outline aus einem Plan (Abschnitte in Reihenfolge des ersten Auftretens)"""
    sections = OrderedDict()
    for e in plan.entries:
        sections.setdefault(e.section_title, []).append(SubsectionSpec(e.subsection_id, e.subsection_title,
                                                                       e.description))
    return Outline([Section(title, '', subs) for title, subs in sections.items()])


def generate_raw_plan(outline, llm):
    """Genau ein Eintrag pro Unterabschnitt mit Such- und Tabellen-Flag"""
    titles = outline.by_title()
    feedback = ''
    for attempt in range(2):
        prompt = StructuredPrompt.build('raw-plan', outline=outline.to_dict())
        prompt.slots['feedback'] = feedback
        flags = {}
        for item in llm.complete_structured(prompt, 'raw_plan')['entries']:
            subsection_id = titles.get(_title_key(item['subsection_title']))
            if subsection_id is None:
                print_detail(f"Roh-Plan: unbekannter Unterabschnitt '{item['subsection_title']}' ignoriert",
                             level='WARNING')
                continue
            flags.setdefault(subsection_id, (item['trigger_additional_search'], item['generate_table']))
        missing = [sub.title for sub in outline.subsections() if sub.subsection_id not in flags]
        if not missing:
            break
        print_detail(f"Roh-Plan ohne Einträge für {missing}, frage erneut", level='WARNING')
        feedback = f"Your plan is missing entries for these subsections: {missing}. Return one entry per subsection."
    else:
        raise DegenerateOutputError(f"Roh-Plan fehlen Einträge: {missing}", stage='planning')

    entries = []
    for section in outline.sections:
        for sub in section.subsections:
            retrieval_flag, table_flag = flags[sub.subsection_id]
            entries.append(PlanEntry(sub.subsection_id, section.title, sub.title, sub.description,
                                     retrieval_flag, table_flag))
    return entries


def build_dependency_graph(outline, llm):
    """G_raw: Kante i -> j wenn i Voraussetzung für j ist; unbekannte Namen und Selbstkanten verworfen"""
    G = nx.DiGraph()
    G.add_nodes_from(outline.ids())
    titles = outline.by_title()
    prompt = StructuredPrompt.build('dep-graph', outline=outline.to_dict())
    for item in llm.complete_structured(prompt, 'dependencies')['dependencies']:
        target = titles.get(_title_key(item['subsection_title']))
        if target is None:
            print_detail(f"Abhängigkeit für unbekannten Unterabschnitt '{item['subsection_title']}' verworfen",
                         level='WARNING')
            continue
        for name in item['depends_on']:
            source = titles.get(_title_key(name))
            if source is None:
                print_detail(f"Unbekannte Voraussetzung '{name}' für '{item['subsection_title']}' verworfen",
                             level='WARNING')
            elif source == target:
                print_detail(f"Selbstkante bei '{name}' verworfen", level='DEBUG')
            else:
                G.add_edge(source, target)
    return G


def break_cycles(G, order=None):
    """Tiefensuche in Outline-Reihenfolge; jede Rückkante schließt einen Zyklus und wird entfernt"""
    order = list(order) if order is not None else list(G.nodes)
    position = {node: i for i, node in enumerate(order)}
    for node in G.nodes:
        position.setdefault(node, len(position))

    def successors(node):
        return sorted(G.successors(node), key=position.__getitem__)

    dag = G.copy()
    removed = []
    state = {}
    for root in sorted(G.nodes, key=position.__getitem__):
        if root in state:
            continue
        state[root] = 'active'
        stack = [(root, iter(successors(root)))]
        while stack:
            node, children = stack[-1]
            child = next(children, None)
            if child is None:
                state[node] = 'done'
                stack.pop()
            elif state.get(child) == 'active':
                dag.remove_edge(node, child)
                removed.append((node, child))
            elif child not in state:
                state[child] = 'active'
                stack.append((child, iter(successors(child))))
    if removed:
        print_detail(f"Zyklen aufgelöst, entfernte Kanten: {removed}", level='WARNING')
    return dag, removed


def assign_stages(G, frozen=None, floor=0):
    """Stufe = Länge des längsten Pfades (in Kanten) bis zum Knoten; eingefrorene Knoten behalten ihre Stufe"""
    frozen = frozen or {}
    try:
        order = list(nx.lexicographical_topological_sort(G, key=str))
    except nx.NetworkXUnfeasible as e:
        raise CyclicGraphError("assign_stages() braucht einen azyklischen Graphen", stage='planning') from e
    stages = {}
    for node in order:
        if node in frozen:
            stages[node] = frozen[node]
            continue
        predecessors = list(G.predecessors(node))
        if predecessors:
            stages[node] = max(floor, 1 + max(stages[p] for p in predecessors))
        else:
            stages[node] = floor
    return stages


def finalize_plan(raw_entries, stages, G):
    """Stufen und Voraussetzungen anhängen; depends_on in Outline-Reihenfolge"""
    position = {e.subsection_id: i for i, e in enumerate(raw_entries)}
    entries = []
    for raw in raw_entries:
        if raw.subsection_id not in stages:
            raise PreconditionError(f"Keine Stufe für {raw.subsection_id}", stage='planning')
        entry = copy.deepcopy(raw)
        entry.stage = stages[raw.subsection_id]
        entry.depends_on = sorted(G.predecessors(raw.subsection_id), key=lambda d: position.get(d, len(position)))
        entries.append(entry)
    plan = StagedPlan(entries)
    validate_plan(plan, strict=False)
    return plan


def validate_plan(plan, strict=True, floor=None):
    """Plan-Invarianten: DAG, Voraussetzungen auf kleinerer Stufe; strict prüft längsten Pfad exakt"""
    ids = set(plan.ids())
    G = plan.graph()
    if not nx.is_directed_acyclic_graph(G):
        raise CyclicGraphError("Plan enthält einen Zyklus", stage='planning')
    for e in plan.entries:
        if e.stage is None or e.stage < 0:
            raise PipelineError(f"{e.subsection_id}: ungültige Stufe {e.stage}", stage='planning')
        for d in e.depends_on:
            if d not in ids:
                raise PipelineError(f"{e.subsection_id} hängt von unbekanntem {d} ab", stage='planning')
            if plan.entry(d).stage >= e.stage:
                raise PipelineError(f"{e.subsection_id} (Stufe {e.stage}) nicht nach Voraussetzung {d}",
                                    stage='planning')
        if strict:
            expected = 1 + max((plan.entry(d).stage for d in e.depends_on), default=-1)
            if e.stage != expected:
                raise PipelineError(f"{e.subsection_id}: Stufe {e.stage}, erwartet {expected}", stage='planning')
        if floor is not None and e.stage < floor:
            raise PipelineError(f"{e.subsection_id}: Stufe {e.stage} unter Untergrenze {floor}", stage='planning')
    return plan


def build_plan(outline, llm):
    """Roh-Plan, Abhängigkeitsgraph, Zyklen-Auflösung und Stufen in einem Schritt"""
    raw_entries = generate_raw_plan(outline, llm)
    G_raw = build_dependency_graph(outline, llm)
    G, removed = break_cycles(G_raw, outline.ids())
    plan = finalize_plan(raw_entries, assign_stages(G), G)
    log_event('plan', subsections=len(plan.entries), max_stage=plan.max_stage(), removed_edges=removed)
    print_summary(f"✓ Plan: {len(plan.entries)} Unterabschnitte in {plan.max_stage() + 1} Stufe(n)")
    return plan
