"""
Tabellen für Unterabschnitte mit generate_table-Flag
Methoden-Aggregation bei vielen Papers, sonst Aspekt-Vergleich
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from providers import StructuredPrompt
from run_logger import print_detail, log_event
from survey_errors import PreconditionError, PipelineError, ProviderError


KIND_AGGREGATION = 'aggregation'
KIND_ASPECT = 'aspect'
DEFAULT_TABLE_THRESHOLD = 10
MIN_CATEGORIES = 2
MAX_CATEGORIES = 6
MIN_CATEGORY_SIZE = 2
OTHERS_LABELS = {'others', 'other'}
ASPECT_EVIDENCE_K = 5
ASPECT_EVIDENCE_KEEP = 2
CLASSIFY_EVIDENCE_K = 3
NOT_REPORTED = 'not reported'
CHECK_MARK = '✓'
PROMPT_ABSTRACT_CHARS = 600
PROMPT_TEXT_CHARS = 4000


@dataclass
class GeneratedTable:
    kind: str
    caption: str
    columns: list
    rows: list
    cited_bibkeys: list = field(default_factory=list)
    subsection_id: Optional[str] = None

    def validate(self, store=None):
        """Rechteckig, zitierte Bibkeys bekannt, Spaltenzahl passend zur Art"""
        width = len(self.columns)
        for row in self.rows:
            if len(row) != width:
                raise PipelineError(f"Tabelle {self.subsection_id}: Zeile mit {len(row)} statt {width} Zellen",
                                    stage='tables')
        data_columns = width - 1
        if self.kind == KIND_AGGREGATION and not MIN_CATEGORIES <= data_columns <= MAX_CATEGORIES:
            raise PipelineError(f"Aggregationstabelle mit {data_columns} Kategorien", stage='tables')
        if self.kind == KIND_ASPECT and not 3 <= data_columns <= 5:
            raise PipelineError(f"Aspekttabelle mit {data_columns} Aspekten", stage='tables')
        if store is not None:
            unknown = [k for k in self.cited_bibkeys if k not in store]
            if unknown:
                raise PipelineError(f"Tabelle zitiert unbekannte Bibkeys {unknown}", stage='tables')
        return self

    def to_dict(self):
        return {
            'subsection_id': self.subsection_id,
            'kind': self.kind,
            'caption': self.caption,
            'columns': list(self.columns),
            'rows': [list(r) for r in self.rows],
            'cited_bibkeys': list(self.cited_bibkeys),
        }


def table_from_dict(data):
    return GeneratedTable(data['kind'], data['caption'], data['columns'], data['rows'],
                          data.get('cited_bibkeys', []), data.get('subsection_id'))


def save_table(table, directory):
    path = Path(directory) / f"{table.subsection_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(table.to_dict(), f, indent=2, ensure_ascii=False)
        f.write('\n')
    return path


def decide_table_kind(count, threshold=DEFAULT_TABLE_THRESHOLD):
    if count < 1:
        raise PreconditionError(f"decide_table_kind() braucht mindestens ein Paper, nicht {count}")
    return KIND_AGGREGATION if count >= threshold else KIND_ASPECT


def _paper_json(record):
    return {'bibkey': record.bibkey, 'title': record.title, 'abstract': record.abstract[:PROMPT_ABSTRACT_CHARS]}


def _paper_cell(record):
    return f"\\cite{{{record.bibkey}}}"


def _evidence(index, embedding, record, k):
    if index is None:
        return []
    return [entry.text for entry, _ in index.search(embedding, k, bibkeys=[record.bibkey])]


# ========== AGGREGATION ==========

def _propose_categories(description, text, papers, llm, previous=()):
    prompt = StructuredPrompt.build('table-categories', description=description, text=text[:PROMPT_TEXT_CHARS],
                                    papers=[_paper_json(p) for p in papers],
                                    previous_categories=list(previous))
    reply = llm.complete_structured(prompt, 'table_categories')
    categories = []
    for category in reply['categories']:
        category = ' '.join(category.split())
        if category and category.lower() not in OTHERS_LABELS and category not in categories:
            categories.append(category)
    return categories


def _classify(record, categories, index, embedder, llm):
    """Kategorien eines Papers oder None bei Fehler"""
    try:
        query = f"{record.title}. {', '.join(categories)}"
        evidence = _evidence(index, embedder.embed([query])[0], record, CLASSIFY_EVIDENCE_K)
        prompt = StructuredPrompt.build('table-classify', categories=categories, paper=_paper_json(record),
                                        evidence=evidence)
        assigned = llm.complete_structured(prompt, 'table_classification')['categories']
    except ProviderError as e:
        print_detail(f"Klassifikation von {record.bibkey} fehlgeschlagen, nicht in der Tabelle: {e}",
                     level='WARNING')
        return None
    canonical = {c.lower(): c for c in categories}
    result = []
    for label in assigned:
        category = canonical.get(' '.join(label.split()).lower())
        if category and category not in result:
            result.append(category)
    return result


def prune_categories(categories, assignments):
    """Kategorien mit < 2 Papers und 'Others' entfallen; höchstens 6, die größten zuerst"""
    sizes = {c: sum(1 for cats in assignments.values() if c in cats) for c in categories}
    survivors = [c for c in categories if c.lower() not in OTHERS_LABELS and sizes[c] >= MIN_CATEGORY_SIZE]
    if len(survivors) > MAX_CATEGORIES:
        largest = sorted(survivors, key=lambda c: (-sizes[c], survivors.index(c)))[:MAX_CATEGORIES]
        survivors = [c for c in survivors if c in largest]
    return survivors


def build_aggregation_table(papers, title, description, text, index, providers, subsection_id=None,
                            max_workers=4):
    """Methoden-Aggregation; None wenn auch nach einem zweiten Vorschlag < 2 Kategorien übrig bleiben"""
    papers = list(papers)
    previous = []
    for attempt in range(2):
        categories = _propose_categories(description, text, papers, providers.llm, previous)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(
                lambda p: _classify(p, categories, index, providers.embedder, providers.llm), papers))
        assignments = {p.bibkey: cats for p, cats in zip(papers, results) if cats is not None}
        survivors = prune_categories(categories, assignments)
        if len(survivors) >= MIN_CATEGORIES:
            break
        print_detail(f"Tabelle '{title}': nur {len(survivors)} Kategorie(n) nach dem Beschneiden "
                     f"von {categories}", level='WARNING')
        previous = previous + categories
    else:
        return None

    rows = []
    cited = []
    for paper in papers:
        cats = assignments.get(paper.bibkey) or []
        if not any(c in survivors for c in cats):
            continue
        rows.append([_paper_cell(paper)] + [CHECK_MARK if c in cats else '' for c in survivors])
        cited.append(paper.bibkey)
    return GeneratedTable(KIND_AGGREGATION, f"Method categories of the papers on {title}",
                          ['Paper'] + survivors, rows, cited, subsection_id)


# ========== ASPEKTVERGLEICH ==========

def _cell(record, aspect, aspect_embedding, index, providers):
    try:
        candidates = _evidence(index, aspect_embedding, record, ASPECT_EVIDENCE_K)
        if not candidates:
            return NOT_REPORTED
        scores = providers.reranker.rerank(aspect, candidates)
        ranked = sorted(range(len(candidates)), key=lambda i: -scores[i])
        evidence = [candidates[i] for i in ranked if scores[i] > 0][:ASPECT_EVIDENCE_KEEP]
        if not evidence:
            return NOT_REPORTED
        prompt = StructuredPrompt.build('table-cell', aspect=aspect, paper=_paper_json(record), evidence=evidence)
        value = ' '.join(providers.llm.complete_structured(prompt, 'table_cell')['value'].split())
    except ProviderError as e:
        print_detail(f"Zelle {record.bibkey}/{aspect} nicht ermittelbar: {e}", level='WARNING')
        return NOT_REPORTED
    return value or NOT_REPORTED


def build_aspect_table(papers, title, description, text, index, providers, subsection_id=None, max_workers=4):
    """Zeilen = Papers, Spalten = 3-5 Aspekte; fehlende Belege ergeben 'not reported'"""
    papers = list(papers)
    prompt = StructuredPrompt.build('table-aspects', description=description, text=text[:PROMPT_TEXT_CHARS],
                                    papers=[_paper_json(p) for p in papers])
    aspects = []
    for aspect in providers.llm.complete_structured(prompt, 'table_aspects')['aspects']:
        aspect = ' '.join(aspect.split())
        if aspect and aspect not in aspects:
            aspects.append(aspect)
    if len(aspects) < 3:
        raise PipelineError(f"Tabelle '{title}': nur {len(aspects)} verschiedene Aspekte", stage='tables')

    aspect_embeddings = providers.embedder.embed(aspects)
    jobs = [(p, a, e) for p in papers for a, e in zip(aspects, aspect_embeddings)]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        values = list(pool.map(lambda job: _cell(job[0], job[1], job[2], index, providers), jobs))

    rows = []
    width = len(aspects)
    for i, paper in enumerate(papers):
        rows.append([_paper_cell(paper)] + values[i * width:(i + 1) * width])
    return GeneratedTable(KIND_ASPECT, f"Comparison of representative papers on {title}",
                          ['Paper'] + aspects, rows, [p.bibkey for p in papers], subsection_id)


# ========== EINSTIEG ==========

def generate_table(papers, title, description, text, index, providers, subsection_id=None,
                   threshold=DEFAULT_TABLE_THRESHOLD, max_workers=4):
    """Art nach Paper-Anzahl; Aggregation ohne tragfähige Kategorien fällt auf Aspekte über die Top-Papers zurück"""
    papers = list(papers)
    kind = decide_table_kind(len(papers), threshold)
    table = None
    if kind == KIND_AGGREGATION:
        table = build_aggregation_table(papers, title, description, text, index, providers, subsection_id,
                                        max_workers)
        if table is None:
            top = sorted(papers, key=lambda p: (-(p.relevance_score or 0), p.bibkey))[:threshold - 1]
            print_detail(f"Tabelle '{title}': Aspektvergleich über {len(top)} Papers als Ersatz", level='WARNING')
            papers = top
    if table is None:
        table = build_aspect_table(papers, title, description, text, index, providers, subsection_id,
                                   max_workers)
    log_event('table', subsection_id=subsection_id, table_kind=table.kind, rows=len(table.rows),
              columns=len(table.columns))
    return table
