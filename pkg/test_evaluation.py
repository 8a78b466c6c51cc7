"""
Tests für NR, CD, RR@k und die LLM-Inhaltsbewertung
"""

import csv

import pytest

from document import MARKDOWN_HEADER
from evaluation import (
    DEFAULT_K_LIST, JudgeScores, MetricsReport, parse_document, compute_metrics, evaluate_document, read_document,
    read_bibliography, recency_ratio, split_body, strip_markup, judge_quality, render_metrics_table,
    export_metrics_csv,
)
from survey_errors import DocumentParseError, PreconditionError


YEARS = {'a': 2025, 'b': 2025, 'c': 2024, 'd': 2023, 'e': 2021, 'f': 2018, 'g': 2012}
MARKERS = ['[@a]', '[@b]', '[@c]', '[@d]', '[@e]', '[@f]', '[@g]', '[@a; @b]', '[@c; @d]', '[@a]']


def _bib(years=YEARS):
    return '\n'.join(f"@article{{{key},\n  title = {{Paper {key.upper()}}},\n  year = {{{year}}}\n}}\n"
                     for key, year in years.items())


def _body():
    """12000 sichtbare Zeichen, Marker als eigene Tokens dazwischen"""
    words = ['abcdef'] + ['abcde'] * 1999
    tokens = []
    for i, word in enumerate(words):
        tokens.append(word)
        if i % 200 == 0 and i // 200 < len(MARKERS):
            tokens.append(MARKERS[i // 200])
    return ' '.join(tokens)


@pytest.fixture
def survey_file(tmp_path):
    path = tmp_path / 'survey.md'
    path.write_text(f"{MARKDOWN_HEADER}\n{_body()}\n\n## References\n\n- [a] Someone (2025). Paper A.\n",
                    encoding='utf-8')
    (tmp_path / 'references.bib').write_text(_bib(), encoding='utf-8')
    return path


# ========== METRIKEN ==========

def test_metrics_on_reference_document(survey_file):
    report = evaluate_document(survey_file, reference_year=2025)
    assert report.nr == 7
    assert report.unique_markers == 9
    assert report.body_characters == 12000
    assert report.cd == pytest.approx(7.5)
    assert report.rr == pytest.approx({1: 2 / 7, 3: 4 / 7, 5: 5 / 7, 7: 5 / 7, 10: 6 / 7})
    assert report.undated_references == 0
    data = report.to_dict()
    assert data['RR']['RR@10'] == pytest.approx(6 / 7)
    assert data['schema_version'] == 1


def test_recency_ratio_monotonic_in_k(survey_file):
    stats = parse_document(read_document(survey_file), _bib())
    ratios = [recency_ratio(stats, k, 2025) for k in range(1, 20)]
    assert ratios == sorted(ratios)
    assert ratios[-1] == 1.0
    with pytest.raises(PreconditionError):
        recency_ratio(stats, 0, 2025)


def test_undated_references_are_excluded():
    years = dict(YEARS, g=None)
    bib = _bib({k: v for k, v in years.items() if v}) + '@misc{g,\n  title = {Paper G}\n}\n'
    stats = parse_document(f"{MARKDOWN_HEADER}\n{_body()}\n", bib)
    report = compute_metrics(stats, reference_year=2025)
    assert report.nr == 7
    assert report.undated_references == 1
    assert report.rr[1] == pytest.approx(2 / 6)


def test_no_dated_references_gives_none():
    stats = parse_document('Plain text citing [1] and [2, 3].')
    report = compute_metrics(stats, k_list=[5], reference_year=2025)
    assert report.nr == 3
    assert report.rr == {5: None}
    assert report.undated_references == 3


def test_foreign_document_with_author_year_markers():
    stats = parse_document('LoRA (Hu et al., 2022) extends adapters (Houlsby et al., 2019) and [4].')
    assert stats.cited_works == {'(Hu et al., 2022)', '(Houlsby et al., 2019)', '#4'}
    report = compute_metrics(stats, k_list=[4], reference_year=2025)
    assert report.rr[4] == pytest.approx(0.5)


def test_foreign_bibliography_identity_by_title_and_year():
    text = 'Two keys for one work [@x] and [@y], another [@z].'
    bib = ('@article{x, title = {Same Title}, year = {2020}}\n@article{y, title = {Same  title.}, year = {2020}}\n'
           '@article{z, title = {Other}, year = {2021}}\n')
    assert compute_metrics(parse_document(text, bib), reference_year=2025).nr == 2


def test_markdown_reference_years_without_bib():
    text = f"{MARKDOWN_HEADER}\nText [@a] and [@b].\n\n## References\n\n- [a]* X (2024). A.\n- [b] Y (n.d.). B.\n"
    report = compute_metrics(parse_document(text), k_list=[1], reference_year=2024)
    assert report.nr == 2
    assert report.undated_references == 1
    assert report.rr[1] == 1.0


def test_latex_document():
    text = ('\\documentclass{article}\n\\begin{document}\n\\section{Intro}\n'
            'Low-rank \\cite{a,b} and adapters \\cite{c}\\textsuperscript{*}.\n'
            '\\bibliographystyle{plain}\n\\bibliography{references}\n\\end{document}\n')
    stats = parse_document(text, _bib())
    assert stats.unique_markers == 2
    assert stats.cited_works == {'a', 'b', 'c'}
    assert 'bibliography' not in stats.body
    assert stats.body_characters == len('Intro Low-rank and adapters .')


def test_unreadable_bibliography_warns(fresh_logger):
    assert read_bibliography('@article{broken') is None
    assert read_bibliography(None) is None
    stats = parse_document('Text [@a].', '@article{broken')
    assert stats.cited_works == {'a'}
    assert fresh_logger.warnings


def test_split_body_and_strip_markup():
    body, references = split_body('Text.\n## Bibliography\n- [a] A (2020). T.\n')
    assert body == 'Text.\n'
    assert 'A (2020)' in references
    assert strip_markup('# Head\n| a | b |\n|---|---|\nSee [@a; @b]^*^ **now**.') == 'Head a b See now.'


@pytest.mark.parametrize('text', ['', '   \n', '{"sections": []}', '[1, 2]', 'bin\x00ary',
                                  '## References\n- [a] A (2020). T.\n'])
def test_parse_document_rejects(text):
    with pytest.raises(DocumentParseError):
        parse_document(text)


def test_read_document_rejects_non_utf8(tmp_path):
    path = tmp_path / 'doc.md'
    path.write_bytes(b'valid \xff invalid')
    with pytest.raises(DocumentParseError) as info:
        read_document(path)
    assert info.value.location.endswith('byte 6')
    with pytest.raises(DocumentParseError):
        read_document(tmp_path / 'missing.md')


# ========== LLM-BEWERTUNG ==========

def test_judge_quality_with_mock(providers):
    scores = judge_quality('A short survey [@a].', providers.llm)
    assert scores.cqs == pytest.approx(4.0)
    assert 'CQS' in scores.to_dict()


def test_judge_quality_clamps(providers, fresh_logger):
    providers.llm.script('judge', {
        'coverage': {'score': 7}, 'relevance': {'score': 4}, 'structure': {'score': 4},
        'synthesis': {'score': 4, 'explanation': 'ok'}, 'consistency': {'score': 0},
    })
    scores = judge_quality('A short survey.', providers.llm)
    assert scores.coverage == 5.0
    assert scores.consistency == 1.0
    assert scores.cqs == pytest.approx((5 + 4 + 4 + 4 + 1) / 5)
    assert len(fresh_logger.warnings) == 2


# ========== AUSGABE ==========

def _report(nr, cd, rr):
    return MetricsReport(nr=nr, cd=cd, rr=rr, undated_references=0, body_characters=1000)


def test_render_metrics_table():
    rows = [('ours', _report(7, 7.5, {1: 2 / 7, 3: None})), ('baseline', _report(3, 1.234, {1: 0.0, 3: 1.0}))]
    lines = render_metrics_table(rows, k_list=[3, 1]).splitlines()
    assert lines[0] == '| System | RR@1 | RR@3 | CD | NR |'
    assert lines[2] == '| ours | 0.286 | n/a | 7.50 | 7 |'
    assert lines[3] == '| baseline | 0.000 | 1.000 | 1.23 | 3 |'


def test_export_metrics_csv(tmp_path):
    path = export_metrics_csv([('ours', _report(7, 7.5, {}))], tmp_path / 'out' / 'metrics.csv')
    with open(path, encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    assert rows == [['document', 'body_characters', 'NR', 'CD'], ['ours', '1000', '7', '7.5000']]


def test_judge_scores_with_report():
    judge = JudgeScores(4, 4, 4, 4, 4)
    report = _report(1, 1.0, {k: 1.0 for k in DEFAULT_K_LIST})
    report.judge = judge
    assert report.to_dict()['judge']['CQS'] == pytest.approx(4.0)


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
