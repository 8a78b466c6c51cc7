"""
Tests für Markdown- und LaTeX-Ausgabe des Survey-Dokuments
"""

import re

import bibtexparser
import pytest

from corpus import TAG_SURVEY, TAG_TRACED, PaperRecord, PaperStore
from document import (
    MARKDOWN_HEADER, MARKDOWN_REFERENCES_HEADING, TRACED_MARK_LATEX, DocumentSection, DocumentSubsection,
    SurveyDocument, latex_escape, render,
)
from tables import KIND_ASPECT, GeneratedTable


@pytest.fixture
def document():
    store = PaperStore()
    store.upsert([
        PaperRecord('hu2022lora', 'p02', 'LoRA: Low-Rank Adaptation of Large Language Models', year=2022,
                    authors=['Edward J. Hu', 'Yelong Shen'], url='https://example.org/lora'),
        PaperRecord('houlsby2019parameter', 'p01', 'Parameter-Efficient Transfer Learning for NLP', year=2019,
                    authors=['Neil Houlsby']),
        PaperRecord('unused2020paper', 'p50', 'Never cited'),
    ], TAG_SURVEY)
    store.upsert([PaperRecord('aghajanyan2021intrinsic', 'p16', 'Intrinsic Dimensionality', year=2021)], TAG_TRACED)

    table = GeneratedTable(KIND_ASPECT, 'Memory & rank', ['Paper', 'Rank', 'Memory', 'Latency'],
                           [['\\cite{hu2022lora}', 'r | 8', '3x less', 'none']], ['hu2022lora'], 'lora')
    sections = [
        DocumentSection('Background', 'desc', [
            DocumentSubsection('adapters', 'Adapters', 'Adapters add 3% parameters \\cite{houlsby2019parameter}.'),
        ]),
        DocumentSection('Low-Rank Methods', 'desc', [
            DocumentSubsection('lora', 'LoRA & Friends',
                               'LoRA freezes weights \\cite{hu2022lora, aghajanyan2021intrinsic}. '
                               'Adapters came first \\cite{houlsby2019parameter}.', table),
        ]),
    ]
    return SurveyDocument('PEFT_Survey', sections, store, {'aghajanyan2021intrinsic'})


def test_cited_bibkeys_in_order_of_appearance(document):
    assert document.cited_bibkeys() == ['houlsby2019parameter', 'hu2022lora', 'aghajanyan2021intrinsic']


def test_render_markdown(document):
    text = document.render_markdown()
    lines = text.splitlines()
    assert lines[0] == MARKDOWN_HEADER
    assert lines[1] == '# PEFT_Survey'
    assert '## Low-Rank Methods' in lines
    assert '### LoRA & Friends' in lines
    assert 'LoRA freezes weights [@hu2022lora; @aghajanyan2021intrinsic]^*^. ' \
           'Adapters came first [@houlsby2019parameter].' in lines
    assert 'Table 1: Memory & rank' in lines
    assert '| [@hu2022lora] | r \\| 8 | 3x less | none |' in lines
    assert text.endswith('\n')

    references = lines[lines.index(MARKDOWN_REFERENCES_HEADING) + 2:]
    assert references == [
        '- [aghajanyan2021intrinsic]* (2021). Intrinsic Dimensionality.',
        '- [houlsby2019parameter] Neil Houlsby (2019). Parameter-Efficient Transfer Learning for NLP.',
        '- [hu2022lora] Edward J. Hu, Yelong Shen (2022). LoRA: Low-Rank Adaptation of Large Language Models. '
        'https://example.org/lora',
    ]


def test_render_latex(document):
    text = render(document, 'latex')
    assert '\\title{PEFT\\_Survey}' in text
    assert '\\subsection{LoRA \\& Friends}' in text
    assert 'Adapters add 3\\% parameters \\cite{houlsby2019parameter}.' in text
    assert f"\\cite{{hu2022lora,aghajanyan2021intrinsic}}{TRACED_MARK_LATEX}." in text
    assert '\\caption{Memory \\& rank}' in text
    assert '\\begin{tabular}{lccc}' in text
    assert '\\bibliography{references}' in text
    assert text.count(TRACED_MARK_LATEX) == 1


def test_markdown_and_latex_cite_the_same_keys(document):
    markdown_keys = set(re.findall(r'@([\w\-]+)', render(document, 'markdown').split(MARKDOWN_REFERENCES_HEADING)[0]))
    latex_keys = {k for group in re.findall(r'\\cite\{([^}]*)\}', render(document, 'latex')) for k in group.split(',')}
    assert markdown_keys == latex_keys == set(document.cited_bibkeys())


def test_bibliography_contains_only_cited(document):
    entries = bibtexparser.loads(document.bibliography()).entries
    assert sorted(e['ID'] for e in entries) == sorted(document.cited_bibkeys())


def test_latex_escape():
    assert latex_escape('50% of $x_1$ & {y} #2 ~ ^') == \
        '50\\% of \\$x\\_1\\$ \\& \\{y\\} \\#2 \\textasciitilde{} \\textasciicircum{}'
    assert latex_escape('a\\b') == 'a\\textbackslash{}b'


def test_render_unknown_format(document):
    with pytest.raises(ValueError):
        render(document, 'html')


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
