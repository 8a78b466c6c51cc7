"""
SurveyDocument und die beiden Ausgabeformate
Markdown (Vergleich/Tests) und LaTeX mit BibTeX-Datei
"""

import re
from dataclasses import dataclass, field
from typing import Optional

from citation_markers import CITE_RE, cite_groups, cite_keys
from corpus import compile_bibtex


SCHEMA_VERSION = 1
MARKDOWN_HEADER = f"<!-- survey-engine schema_version={SCHEMA_VERSION} -->"
MARKDOWN_REFERENCES_HEADING = '## References'
TRACED_MARK_MARKDOWN = '^*^'
TRACED_MARK_LATEX = '\\textsuperscript{*}'
BIB_FILENAME = 'references'

LATEX_SPECIAL = {
    '\\': r'\textbackslash{}', '&': r'\&', '%': r'\%', '$': r'\$', '#': r'\#', '_': r'\_',
    '{': r'\{', '}': r'\}', '~': r'\textasciitilde{}', '^': r'\textasciicircum{}',
}
LATEX_SPECIAL_RE = re.compile(r'[\\&%$#_{}~^]')


@dataclass
class DocumentSubsection:
    subsection_id: str
    title: str
    text: str
    table: Optional[object] = None


@dataclass
class DocumentSection:
    title: str
    description: str = ''
    subsections: list = field(default_factory=list)


@dataclass
class SurveyDocument:
    title: str
    sections: list
    store: object
    traced_bibkeys: set = field(default_factory=set)

    def subsections(self):
        return [sub for section in self.sections for sub in section.subsections]

    def cited_bibkeys(self):
        """Zitierte Bibkeys in Reihenfolge des ersten Auftretens (Text, dann Tabelle)"""
        keys = []
        for sub in self.subsections():
            sources = [sub.text]
            if sub.table is not None:
                sources.extend(cell for row in sub.table.rows for cell in row)
            for source in sources:
                for key in cite_keys(source):
                    if key not in keys:
                        keys.append(key)
        return keys

    def bibliography(self):
        return compile_bibtex(self.store, self.cited_bibkeys())

    def render_markdown(self):
        return render_markdown(self)

    def render_latex(self):
        return render_latex(self)


def render(document, fmt):
    if fmt == 'markdown':
        return render_markdown(document)
    if fmt == 'latex':
        return render_latex(document)
    raise ValueError(f"Unbekanntes Format: {fmt}")


# ========== MARKDOWN ==========

def _markdown_cites(text, traced):
    def replace(match):
        keys = [k.strip() for k in match.group(1).split(',') if k.strip()]
        rendered = '[' + '; '.join(f"@{k}" for k in keys) + ']'
        if any(k in traced for k in keys):
            rendered += TRACED_MARK_MARKDOWN
        return rendered
    return CITE_RE.sub(replace, text)


def _markdown_cell(cell, traced):
    return _markdown_cites(str(cell), traced).replace('|', '\\|').replace('\n', ' ')


def _markdown_table(table, number, traced):
    lines = [f"Table {number}: {table.caption}", '']
    lines.append('| ' + ' | '.join(_markdown_cell(c, traced) for c in table.columns) + ' |')
    lines.append('|' + '|'.join('---' for _ in table.columns) + '|')
    for row in table.rows:
        lines.append('| ' + ' | '.join(_markdown_cell(c, traced) for c in row) + ' |')
    return lines


def _reference_line(record):
    parts = []
    if record.authors:
        parts.append(', '.join(record.authors))
    parts.append(f"({record.year})" if record.year else '(n.d.)')
    line = ' '.join(parts) + f". {record.title.rstrip('.')}."
    if record.url:
        line += f" {record.url}"
    return line


def render_markdown(document):
    traced = document.traced_bibkeys
    lines = [MARKDOWN_HEADER, f"# {document.title}", '']
    table_number = 0
    for section in document.sections:
        lines.extend([f"## {section.title}", ''])
        for sub in section.subsections:
            lines.extend([f"### {sub.title}", '', _markdown_cites(sub.text, traced), ''])
            if sub.table is not None:
                table_number += 1
                lines.extend(_markdown_table(sub.table, table_number, traced))
                lines.append('')

    lines.extend([MARKDOWN_REFERENCES_HEADING, ''])
    for key in sorted(document.cited_bibkeys()):
        mark = '*' if key in traced else ''
        lines.append(f"- [{key}]{mark} {_reference_line(document.store.get(key))}")
    return '\n'.join(lines).rstrip('\n') + '\n'


# ========== LATEX ==========

def latex_escape(text):
    return LATEX_SPECIAL_RE.sub(lambda m: LATEX_SPECIAL[m.group(0)], str(text))


def _latex_text(text, traced):
    """Text escapen, \\cite-Gruppen unverändert übernehmen"""
    pieces = []
    cursor = 0
    for match, keys in cite_groups(text):
        pieces.append(latex_escape(text[cursor:match.start()]))
        pieces.append(f"\\cite{{{','.join(keys)}}}")
        if any(k in traced for k in keys):
            pieces.append(TRACED_MARK_LATEX)
        cursor = match.end()
    pieces.append(latex_escape(text[cursor:]))
    return ''.join(pieces)


def _latex_table(table, traced):
    spec = 'l' + 'c' * (len(table.columns) - 1)
    lines = [
        '\\begin{table}[ht]',
        '\\centering',
        f"\\caption{{{latex_escape(table.caption)}}}",
        f"\\begin{{tabular}}{{{spec}}}",
        '\\hline',
        ' & '.join(_latex_text(c, traced) for c in table.columns) + ' \\\\',
        '\\hline',
    ]
    for row in table.rows:
        lines.append(' & '.join(_latex_text(c, traced) for c in row) + ' \\\\')
    lines.extend(['\\hline', '\\end{tabular}', '\\end{table}'])
    return lines


def render_latex(document):
    traced = document.traced_bibkeys
    lines = [
        '\\documentclass{article}',
        '\\usepackage[utf8]{inputenc}',
        '\\usepackage{amssymb}',
        '\\usepackage{newunicodechar}',
        '\\newunicodechar{✓}{\\checkmark}',
        f"\\title{{{latex_escape(document.title)}}}",
        '\\date{}',
        '\\begin{document}',
        '\\maketitle',
        '',
    ]
    for section in document.sections:
        lines.extend([f"\\section{{{latex_escape(section.title)}}}", ''])
        for sub in section.subsections:
            lines.extend([f"\\subsection{{{latex_escape(sub.title)}}}", '', _latex_text(sub.text, traced), ''])
            if sub.table is not None:
                lines.extend(_latex_table(sub.table, traced))
                lines.append('')
    lines.extend([
        '\\bibliographystyle{plain}',
        f"\\bibliography{{{BIB_FILENAME}}}",
        '',
        '\\end{document}',
    ])
    return '\n'.join(lines) + '\n'
