"""
Bewertung fertiger Surveys
NR, CD und RR@k auf Markdown/LaTeX mit BibTeX sowie Inhaltsbewertung durch ein LLM
"""

import csv
import json
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

import bibtexparser

from citation_markers import CITE_RE, detect_markers
from document import MARKDOWN_HEADER, TRACED_MARK_MARKDOWN, TRACED_MARK_LATEX
from providers import StructuredPrompt
from run_logger import print_detail
from survey_errors import DocumentParseError, PreconditionError


SCHEMA_VERSION = 1
DEFAULT_K_LIST = (1, 3, 5, 7, 10)
CD_SCALE = 10_000
JUDGE_DIMENSIONS = ('coverage', 'relevance', 'structure', 'synthesis', 'consistency')
JUDGE_DOCUMENT_CHARS = 60000

PANDOC_GROUP_RE = re.compile(r'\[((?:\s*-?@[\w:.#$%&\-+?<>~/]+\s*;?)+)\]')
PANDOC_KEY_RE = re.compile(r'@([\w:.#$%&\-+?<>~/]+)')
MD_REFERENCES_RE = re.compile(r'^#{1,6}\s*(references|bibliography)\s*$', re.IGNORECASE | re.MULTILINE)
MD_REFERENCE_LINE_RE = re.compile(r'^-\s*\[([^\]]+)\]\*?\s+(.*)$', re.MULTILINE)
YEAR_RE = re.compile(r'\((\d{4})\)')
LATEX_BODY_END_RE = re.compile(r'\\bibliographystyle|\\bibliography\{|\\begin\{thebibliography\}')
HTML_COMMENT_RE = re.compile(r'<!--.*?-->', re.DOTALL)


# ========== TYPEN ==========

@dataclass
class DocumentStats:
    body: str
    markers: list
    marker_occurrences: int
    body_characters: int
    cited_works: set
    reference_years: dict = field(default_factory=dict)

    @property
    def unique_markers(self):
        return len(self.markers)


@dataclass
class MetricsReport:
    nr: int
    cd: float
    rr: dict
    undated_references: int
    unique_markers: int = 0
    body_characters: int = 0
    reference_year: Optional[int] = None
    judge: Optional[object] = None

    def to_dict(self):
        data = {
            'schema_version': SCHEMA_VERSION,
            'NR': self.nr,
            'CD': self.cd,
            'RR': {f"RR@{k}": v for k, v in self.rr.items()},
            'undated_references': self.undated_references,
            'unique_markers': self.unique_markers,
            'body_characters': self.body_characters,
            'reference_year': self.reference_year,
        }
        if self.judge is not None:
            data['judge'] = self.judge.to_dict()
        return data


@dataclass
class JudgeScores:
    coverage: float
    relevance: float
    structure: float
    synthesis: float
    consistency: float
    explanations: dict = field(default_factory=dict)

    @property
    def cqs(self):
        return sum(getattr(self, d) for d in JUDGE_DIMENSIONS) / len(JUDGE_DIMENSIONS)

    def to_dict(self):
        data = {d: {'score': getattr(self, d), 'explanation': self.explanations.get(d, '')} for d in JUDGE_DIMENSIONS}
        data['CQS'] = self.cqs
        return data


# ========== PARSEN ==========

def _normalize_title(title):
    return ' '.join(re.findall(r'[a-z0-9]+', (title or '').lower()))


def read_bibliography(bib_text):
    """{Bibkey: (Titel, Jahr)}; None wenn die Datei nicht lesbar ist"""
    if bib_text is None:
        return None
    try:
        parser = bibtexparser.bparser.BibTexParser(common_strings=True)
        database = bibtexparser.loads(bib_text, parser=parser)
    except Exception as e:
        print_detail(f"Literaturverzeichnis nicht lesbar: {e}", level='WARNING')
        return None
    if not database.entries and '@' in bib_text:
        print_detail("Literaturverzeichnis enthält keine lesbaren Einträge", level='WARNING')
        return None
    entries = {}
    for entry in database.entries:
        match = re.search(r'\d{4}', entry.get('year', ''))
        entries[entry['ID']] = (entry.get('title', ''), int(match.group(0)) if match else None)
    return entries


def _markdown_reference_years(references_text):
    entries = {}
    for match in MD_REFERENCE_LINE_RE.finditer(references_text or ''):
        year = YEAR_RE.search(match.group(2))
        entries[match.group(1)] = ('', int(year.group(1)) if year else None)
    return entries


def _is_latex(text):
    return '\\begin{document}' in text or re.search(r'\\(sub)*section\{', text) is not None


def split_body(text):
    """(Body, Literaturteil) ohne das Literaturverzeichnis im Body"""
    if _is_latex(text):
        start = text.find('\\begin{document}')
        body = text[start + len('\\begin{document}'):] if start >= 0 else text
        end = LATEX_BODY_END_RE.search(body)
        return (body[:end.start()], body[end.start():]) if end else (body, '')
    match = MD_REFERENCES_RE.search(text)
    if match:
        return text[:match.start()], text[match.end():]
    return text, ''


def _cite_groups(body):
    """Zitationsgruppen als Schlüssel-Tupel in Textreihenfolge"""
    found = []
    for match in PANDOC_GROUP_RE.finditer(body):
        found.append((match.start(), tuple(PANDOC_KEY_RE.findall(match.group(1)))))
    for match in CITE_RE.finditer(body):
        found.append((match.start(), tuple(k.strip() for k in match.group(1).split(',') if k.strip())))
    return [keys for _, keys in sorted(found) if keys]


def strip_markup(body, latex=False):
    """Sichtbarer Text ohne Markup und ohne Zitationsmarker, Leerraum zusammengefasst"""
    text = HTML_COMMENT_RE.sub(' ', body)
    text = text.replace(TRACED_MARK_MARKDOWN, '').replace(TRACED_MARK_LATEX, '')
    text = CITE_RE.sub(' ', PANDOC_GROUP_RE.sub(' ', text))
    if latex:
        text = re.sub(r'\\(?:begin|end)\{[^}]*\}(?:\{[^}]*\})?', ' ', text)
        text = re.sub(r'\\\\', ' ', text)
        text = re.sub(r'\\[a-zA-Z]+\*?(?:\[[^\]]*\])?', ' ', text)
        text = text.replace('{', '').replace('}', '').replace('&', ' ')
    else:
        text = re.sub(r'^#{1,6}\s*', '', text, flags=re.MULTILINE)
        text = re.sub(r'^\|?[\s:|-]*-{3,}[\s:|-]*$', ' ', text, flags=re.MULTILINE)
        text = text.replace('|', ' ').replace('**', '').replace('`', '')
    return ' '.join(text.split())


def parse_document(text, bib_text=None, location='document'):
    """DocumentStats für dieses System (Bibkey-Identität) oder fremde Dokumente (Titel/Jahr-Identität)"""
    if '\x00' in text:
        raise DocumentParseError("Binärdaten statt Dokument", location=location)
    stripped = text.strip()
    if not stripped:
        raise DocumentParseError("Leeres Dokument", location=location)
    if stripped[0] in '{[':
        try:
            json.loads(stripped)
        except ValueError:
            pass
        else:
            raise DocumentParseError("JSON statt Dokument", location=location)

    latex = _is_latex(text)
    own = text.startswith(MARKDOWN_HEADER)
    body, references = split_body(text)
    groups = _cite_groups(body)

    bibliography = read_bibliography(bib_text)
    if bibliography is None and not latex:
        bibliography = _markdown_reference_years(references) or None
    if bibliography is None and bib_text is not None:
        print_detail(f"{location}: NR nur aus den Markern im Text", level='WARNING')

    reference_years = {}
    if groups:
        marker_keys = list(dict.fromkeys(tuple(sorted(set(g))) for g in groups))
        occurrences = len(groups)
        for key in {k for g in groups for k in g}:
            title, year = (bibliography or {}).get(key, ('', None))
            identity = key if own or not title else (_normalize_title(title), year)
            reference_years.setdefault(identity, year)
    else:
        # fremde Dokumente ohne Bibkeys: numerische und Autor-Jahr-Marker
        markers = detect_markers(body)
        marker_keys = [m.label for m in markers]
        occurrences = len(markers)
        for marker in markers:
            if marker.numbers:
                for number in marker.numbers:
                    reference_years.setdefault(f"#{number}", None)
            else:
                year = re.search(r'\d{4}', marker.label)
                reference_years.setdefault(marker.label, int(year.group(0)) if year else None)

    visible = strip_markup(body, latex)
    if not visible:
        raise DocumentParseError("Dokument ohne Text außerhalb des Literaturverzeichnisses", location=location)
    return DocumentStats(body, marker_keys, occurrences, len(visible), set(reference_years), reference_years)


# ========== METRIKEN ==========

def count_references(stats):
    return len(stats.cited_works)


def citation_density(stats):
    if stats.body_characters <= 0:
        raise DocumentParseError("Body ohne Zeichen, CD nicht definiert")
    return stats.unique_markers / stats.body_characters * CD_SCALE


def recency_ratio(stats, k, reference_year):
    """Anteil datierter Quellen mit Jahr >= reference_year - k + 1; None ohne datierte Quellen"""
    if k < 1:
        raise PreconditionError(f"k muss >= 1 sein, nicht {k}")
    dated = [year for year in stats.reference_years.values() if year is not None]
    if not dated:
        return None
    return sum(1 for year in dated if year >= reference_year - k + 1) / len(dated)


def compute_metrics(stats, k_list=DEFAULT_K_LIST, reference_year=None):
    if reference_year is None:
        reference_year = date.today().year
    k_list = sorted(set(k_list))
    undated = sum(1 for year in stats.reference_years.values() if year is None)
    if undated:
        print_detail(f"{undated} Quelle(n) ohne Jahr, nicht in RR@k enthalten", level='INFO')
    return MetricsReport(
        nr=count_references(stats),
        cd=citation_density(stats),
        rr={k: recency_ratio(stats, k, reference_year) for k in k_list},
        undated_references=undated,
        unique_markers=stats.unique_markers,
        body_characters=stats.body_characters,
        reference_year=reference_year,
    )


def _sibling_bib(path):
    for candidate in (path.with_suffix('.bib'), path.parent / 'references.bib'):
        if candidate.is_file():
            return candidate
    return None


def read_document(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DocumentParseError(f"Dokument nicht lesbar: {e}", location=str(path))
    try:
        return raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise DocumentParseError(f"Kein UTF-8-Text (Byte {e.start})", location=f"{path}:byte {e.start}")


def evaluate_document(path, k_list=DEFAULT_K_LIST, reference_year=None, bib_path=None):
    """MetricsReport für eine Dokumentdatei; references.bib daneben wird automatisch gelesen"""
    path = Path(path)
    text = read_document(path)
    bib_path = Path(bib_path) if bib_path else _sibling_bib(path)
    bib_text = bib_path.read_text(encoding='utf-8') if bib_path else None
    stats = parse_document(text, bib_text, location=str(path))
    return compute_metrics(stats, k_list, reference_year)


# ========== LLM-BEWERTUNG ==========

def judge_quality(document_text, llm):
    """Fünf Dimensionen im Bereich [1,5]; CQS wird lokal berechnet"""
    prompt = StructuredPrompt.build('judge', document=document_text[:JUDGE_DOCUMENT_CHARS])
    reply = llm.complete_structured(prompt, 'judge_scores', max_retries=1)
    scores = {}
    explanations = {}
    for dimension in JUDGE_DIMENSIONS:
        score = float(reply[dimension]['score'])
        clamped = min(5.0, max(1.0, score))
        if clamped != score:
            print_detail(f"Bewertung {dimension}={score} außerhalb [1,5], auf {clamped} begrenzt", level='WARNING')
        scores[dimension] = clamped
        explanations[dimension] = reply[dimension].get('explanation', '')
    return JudgeScores(explanations=explanations, **scores)


# ========== AUSGABE ==========

def _format_ratio(value):
    return 'n/a' if value is None else f"{value:.3f}"


def render_metrics_table(rows, k_list=DEFAULT_K_LIST):
    """Vergleichstabelle: eine Zeile pro (Name, MetricsReport)"""
    k_list = sorted(set(k_list))
    header = ['System'] + [f"RR@{k}" for k in k_list] + ['CD', 'NR']
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '|'.join('---' for _ in header) + '|']
    for name, report in rows:
        cells = [name] + [_format_ratio(report.rr.get(k)) for k in k_list] + [f"{report.cd:.2f}", str(report.nr)]
        lines.append('| ' + ' | '.join(cells) + ' |')
    return '\n'.join(lines) + '\n'


def export_metrics_csv(rows, path):
    """Body-Länge, NR und CD pro Dokument zum externen Plotten"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['document', 'body_characters', 'NR', 'CD'])
        for name, report in rows:
            writer.writerow([name, report.body_characters, report.nr, f"{report.cd:.4f}"])
    return path
