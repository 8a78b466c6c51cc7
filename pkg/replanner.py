"""
Strukturrevision zwischen den Schreibstufen
Nur ungeschriebene Unterabschnitte werden verändert, danach wird der Plan neu abgeleitet
"""

from dataclasses import dataclass, field, asdict
from typing import Optional

import networkx as nx

from planning import (
    SubsectionSpec, slugify, unique_id, _title_key,
    generate_raw_plan, build_dependency_graph, break_cycles, assign_stages, finalize_plan, validate_plan,
)
from providers import StructuredPrompt
from run_logger import print_detail, log_event
from survey_errors import PreconditionError, ProviderError


ACTION_KINDS = ('merge', 'delete', 'rename', 'reorder', 'add')
APPLY_ORDER = ('merge', 'delete', 'rename', 'add', 'reorder')
MEMORY_DRAFT_CHARS = 600


@dataclass
class RevisionAction:
    kind: str
    targets: list = field(default_factory=list)
    title: Optional[str] = None
    description: Optional[str] = None
    position: Optional[int] = None
    section_title: Optional[str] = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v not in (None, [])}


def _invalid_reason(action, outline, written):
    known = set(outline.ids())
    if action.kind not in ACTION_KINDS:
        return f"unbekannte Aktion {action.kind}"
    if action.kind == 'add':
        if action.targets:
            return "add darf keine Ziele haben"
        if not (action.title or '').strip() or not (action.description or '').strip():
            return "add braucht Titel und Beschreibung"
        return None
    if not action.targets:
        return f"{action.kind} ohne Ziel"
    if action.kind == 'merge' and len(set(action.targets)) < 2:
        return "merge braucht mindestens zwei Ziele"
    if action.kind in ('rename', 'reorder') and len(action.targets) != 1:
        return f"{action.kind} braucht genau ein Ziel"
    touched_written = [t for t in action.targets if t in written]
    if touched_written:
        return f"betrifft geschriebene Unterabschnitte {touched_written}"
    unknown = [t for t in action.targets if t not in known]
    if unknown:
        return f"unbekannte Ziele {unknown}"
    if action.kind == 'rename' and not (action.title or action.description):
        return "rename ohne neuen Titel oder Beschreibung"
    if action.kind == 'reorder' and action.position is None:
        return "reorder ohne Position"
    return None


def memory_summary(memory):
    return {
        'terminology': [entry.term for entry in memory.terminology],
        'drafts': {sid: text[:MEMORY_DRAFT_CHARS] for sid, text in memory.drafts.items()},
    }


def propose_revisions(outline, memory, unwritten, llm):
    """Revisionsvorschläge für den ungeschriebenen Teil; ungültige werden verworfen"""
    unwritten = set(unwritten)
    if not unwritten:
        raise PreconditionError("propose_revisions() braucht ungeschriebene Unterabschnitte", stage='replanning')
    written = set(outline.ids()) - unwritten
    prompt = StructuredPrompt.build(
        'revision',
        outline=outline.to_dict(written=written),
        memory=memory_summary(memory),
        unwritten=[sid for sid in outline.ids() if sid in unwritten],
    )
    try:
        reply = llm.complete_structured(prompt, 'revisions')
    except ProviderError as e:
        print_detail(f"Keine Strukturrevision möglich, Plan bleibt unverändert: {e}", level='WARNING')
        return []

    actions = []
    for raw in reply['actions']:
        action = RevisionAction(
            kind=raw['kind'],
            targets=list(raw.get('targets', [])),
            title=raw.get('title'),
            description=raw.get('description'),
            position=raw.get('position'),
            section_title=raw.get('section_title'),
        )
        reason = _invalid_reason(action, outline, written)
        if reason:
            print_detail(f"Revision {action.kind} {action.targets} abgelehnt: {reason}", level='WARNING')
            log_event('revision', status='rejected', reason=reason, **action.to_dict())
            continue
        actions.append(action)
        log_event('revision', status='accepted', **action.to_dict())
    return actions


def _locate(outline, subsection_id):
    for section in outline.sections:
        for i, sub in enumerate(section.subsections):
            if sub.subsection_id == subsection_id:
                return section, i
    return None, None


def _title_taken(outline, title, except_id=None):
    key = _title_key(title)
    return any(_title_key(s.title) == key and s.subsection_id != except_id for s in outline.subsections())


def _apply_merge(outline, action):
    first_section, first_index = _locate(outline, action.targets[0])
    if first_section is None or any(_locate(outline, t)[0] is None for t in action.targets):
        return "Ziel existiert nicht mehr"
    subs = [outline.get(t) for t in action.targets]
    merged = first_section.subsections[first_index]
    if action.title and action.title.strip() and not _title_taken(outline, action.title, merged.subsection_id):
        merged.title = ' '.join(action.title.split())
    merged.description = (action.description or ' '.join(s.description for s in subs)).strip()
    for target in action.targets[1:]:
        section, index = _locate(outline, target)
        del section.subsections[index]
    return None


def _apply_delete(outline, action):
    if any(_locate(outline, t)[0] is None for t in action.targets):
        return "Ziel existiert nicht mehr"
    for target in action.targets:
        section, index = _locate(outline, target)
        del section.subsections[index]
    return None


def _apply_rename(outline, action):
    sub = outline.get(action.targets[0])
    if sub is None:
        return "Ziel existiert nicht mehr"
    if action.title and action.title.strip():
        if _title_taken(outline, action.title, sub.subsection_id):
            return f"Titel '{action.title}' bereits vergeben"
        sub.title = ' '.join(action.title.split())
    if action.description and action.description.strip():
        sub.description = action.description.strip()
    return None


def _apply_add(outline, action, taken_ids):
    if _title_taken(outline, action.title):
        return f"Titel '{action.title}' bereits vergeben"
    if action.section_title:
        section = next((s for s in outline.sections if _title_key(s.title) == _title_key(action.section_title)),
                       None)
        if section is None:
            return f"unbekannter Abschnitt '{action.section_title}'"
    else:
        section = outline.sections[-1]
    subsection_id = unique_id(slugify(action.title), taken_ids)
    taken_ids.add(subsection_id)
    new = SubsectionSpec(subsection_id, ' '.join(action.title.split()), action.description.strip())
    position = len(section.subsections) if action.position is None else min(action.position, len(section.subsections))
    section.subsections.insert(position, new)
    return None


def _apply_reorder(outline, action):
    section, index = _locate(outline, action.targets[0])
    if section is None:
        return "Ziel existiert nicht mehr"
    sub = section.subsections.pop(index)
    section.subsections.insert(min(action.position, len(section.subsections)), sub)
    return None


def apply_revisions(outline, actions, taken_ids=None):
    """Reihenfolge merge -> delete -> rename -> add -> reorder; Konflikte verwerfen die spätere Aktion"""
    revised = outline.copy()
    if not actions:
        return revised
    taken_ids = set(taken_ids or ()) | set(outline.ids())
    for kind in APPLY_ORDER:
        for action in (a for a in actions if a.kind == kind):
            if kind == 'merge':
                conflict = _apply_merge(revised, action)
            elif kind == 'delete':
                conflict = _apply_delete(revised, action)
            elif kind == 'rename':
                conflict = _apply_rename(revised, action)
            elif kind == 'add':
                conflict = _apply_add(revised, action, taken_ids)
            else:
                conflict = _apply_reorder(revised, action)
            if conflict:
                print_detail(f"Revision {kind} {action.targets} verworfen: {conflict}", level='WARNING')
                log_event('revision', status='dropped', reason=conflict, **action.to_dict())
    revised.sections = [s for s in revised.sections if s.subsections]
    return revised.validate()


def replan(outline, written, old_plan, llm, current_stage):
    """Plan für die revidierte Outline; geschriebene Einträge eingefroren, neue Stufen >= current_stage + 1"""
    written = set(written)
    floor = current_stage + 1
    unwritten_ids = [sid for sid in outline.ids() if sid not in written]

    raw_by_id = {e.subsection_id: e for e in generate_raw_plan(outline, llm)}
    G_new = build_dependency_graph(outline, llm)
    old_graph = old_plan.graph()

    G = nx.DiGraph()
    G.add_nodes_from(outline.ids())
    G.add_edges_from((u, v) for u, v in old_graph.edges if u in written and v in written)
    for u, v in G_new.edges:
        if v in written:
            continue
        G.add_edge(u, v)
    G, removed = break_cycles(G, outline.ids())

    raw_entries = []
    for section in outline.sections:
        for sub in section.subsections:
            if sub.subsection_id in written:
                raw_entries.append(old_plan.entry(sub.subsection_id))
            else:
                raw_entries.append(raw_by_id[sub.subsection_id])
    frozen = {sid: old_plan.entry(sid).stage for sid in written if sid in G}
    stages = assign_stages(G, frozen=frozen, floor=floor)
    plan = finalize_plan(raw_entries, stages, G)
    for sid in unwritten_ids:
        if plan.entry(sid).stage < floor:
            raise PreconditionError(f"{sid} wurde in eine abgeschlossene Stufe geplant", stage='replanning')
    log_event('replan', current_stage=current_stage, unwritten=len(unwritten_ids), removed_edges=removed)
    return plan
