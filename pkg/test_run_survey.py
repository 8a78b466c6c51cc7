"""
Tests für die Kommandozeile: Subcommands, Artefakte und Exit Codes
"""

import json

import pytest

import connection_tester
import run_survey
from config_manager import CREDENTIAL_ENV, PROVIDER_NAMES, SURVEY_CONFIG_FILE
from conftest import MOCK_CORPUS, TOPIC, DESCRIPTION
from document import MARKDOWN_HEADER
from evaluation import DEFAULT_K_LIST
from prompt_templates import PROMPT_TEMPLATES_FILE


@pytest.fixture
def clean_env(monkeypatch):
    for var in CREDENTIAL_ENV.values():
        monkeypatch.setenv(var, 'placeholder')
        monkeypatch.delenv(var)


@pytest.fixture
def fast_config(tmp_path):
    """Mock-Lauf ohne Wartezeiten bei Wiederholungen"""
    path = tmp_path / 'fast_config.json'
    path.write_text(json.dumps({
        'fixture_corpus': str(MOCK_CORPUS),
        'target_length': 1400,
        'n_candidates': 2,
        'providers': {name: {'retry_backoff': 0.0} for name in PROVIDER_NAMES},
    }), encoding='utf-8')
    return path


def _run_args(out, config):
    return ['--topic', TOPIC, '--description', DESCRIPTION, '--mock', '--out', str(out), '--config', str(config)]


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ========== GENERATE / PLAN ==========

def test_generate_writes_all_artifacts(tmp_path, fast_config):
    out = tmp_path / 'run'
    assert run_survey.main(['generate', *_run_args(out, fast_config)]) == 0

    for name in ('survey.md', 'survey.tex', 'references.bib', 'metrics.json', 'run_config.json', 'outline.json',
                 'plan.json', 'plan_history.json', 'papers.csv'):
        assert (out / name).is_file(), name
    assert (out / 'logs' / 'run_log.jsonl').is_file()
    assert (out / 'survey.md').read_text(encoding='utf-8').startswith(MARKDOWN_HEADER)

    metrics = json.loads((out / 'metrics.json').read_text(encoding='utf-8'))
    assert metrics['NR'] >= 1
    assert sorted(metrics['RR']) == sorted(f"RR@{k}" for k in DEFAULT_K_LIST)
    assert metrics['judge']['CQS'] == pytest.approx(4.0)

    run_config = json.loads((out / 'run_config.json').read_text(encoding='utf-8'))
    assert run_config['topic'] == TOPIC
    assert run_config['mock'] is True
    assert run_config['evaluation']['reference_year'] is not None
    assert metrics['reference_year'] == run_config['evaluation']['reference_year']


def test_dry_run_plans_without_writing(tmp_path, fast_config, monkeypatch):
    created = []
    real_create = run_survey.create_providers

    def capture(config):
        created.append(real_create(config))
        return created[-1]

    monkeypatch.setattr(run_survey, 'create_providers', capture)
    out = tmp_path / 'dry'
    assert run_survey.main(['generate', '--dry-run', *_run_args(out, fast_config)]) == 0
    assert (out / 'plan.json').is_file()
    assert (out / 'outline.json').is_file()
    assert not (out / 'survey.md').exists()
    assert not (out / 'subsections').exists()
    assert created[0].llm.calls_for('subsection-write') == []


def test_missing_topic_is_config_error(tmp_path, fast_config, capsys):
    assert run_survey.main(['generate', '--mock', '--out', str(tmp_path / 'x'), '--config', str(fast_config)]) == 2
    error = _error(capsys)
    assert error['error'] == 'ConfigError'
    assert error['exit_code'] == 2


def test_retrieval_flags_override_config(tmp_path, fast_config):
    args = run_survey.build_parser().parse_args([
        'plan', *_run_args(tmp_path / 'p', fast_config), '--similarity-threshold', '0.45',
        '--relevance-threshold', '80', '--final-cap', '12', '--fallback-top-n', '3', '--expansion-top-m', '4',
    ])
    retrieval = run_survey.load_run_config(args).retrieval
    assert (retrieval.similarity_threshold, retrieval.relevance_threshold) == (0.45, 80)
    assert (retrieval.per_query_cap, retrieval.fallback_top_n, retrieval.expansion_top_m) == (12, 3, 4)
    assert retrieval.search_limit == 20

    args = run_survey.build_parser().parse_args(['plan', *_run_args(tmp_path / 'p', fast_config),
                                                 '--per-query-cap', '7'])
    retrieval = run_survey.load_run_config(args).retrieval
    assert (retrieval.per_query_cap, retrieval.similarity_threshold) == (7, 0.3)


def test_invalid_retrieval_flag_is_config_error(tmp_path, fast_config, capsys):
    assert run_survey.main(['plan', *_run_args(tmp_path / 'p', fast_config), '--relevance-threshold', '150']) == 2
    assert _error(capsys)['error'] == 'ConfigError'
    assert not (tmp_path / 'p').exists()


def test_live_mode_without_credentials(tmp_path, clean_env, capsys):
    assert run_survey.main(['generate', '--topic', TOPIC, '--out', str(tmp_path / 'live')]) == 2
    assert 'SURVEY_LLM_API_KEY' in _error(capsys)['message']
    assert not (tmp_path / 'live').exists()


def test_invalid_k_list_is_rejected():
    with pytest.raises(SystemExit):
        run_survey.main(['evaluate', 'doc.md', '--k-list', '1,zero'])
    with pytest.raises(SystemExit):
        run_survey.main(['evaluate', 'doc.md', '--k-list', '0'])


# ========== EVALUATE ==========

def test_evaluate_rejects_non_survey_file(tmp_path, capsys):
    path = tmp_path / 'outline.json'
    path.write_text('{"sections": []}', encoding='utf-8')
    assert run_survey.main(['evaluate', str(path)]) == 4
    error = _error(capsys)
    assert error['error'] == 'DocumentParseError'
    assert error['stage'] == 'evaluate'


def test_evaluate_writes_report(tmp_path):
    document = tmp_path / 'survey.md'
    document.write_text(f"{MARKDOWN_HEADER}\n# Survey\n\nText [@a] and [@b; @c].\n", encoding='utf-8')
    (tmp_path / 'references.bib').write_text(
        '@article{a, title = {A}, year = {2024}}\n@article{b, title = {B}, year = {2020}}\n'
        '@article{c, title = {C}, year = {2010}}\n', encoding='utf-8')
    output = tmp_path / 'report.json'
    csv_path = tmp_path / 'report.csv'
    assert run_survey.main(['evaluate', str(document), '--k-list', '1,2', '--reference-year', '2024',
                            '--output', str(output), '--csv', str(csv_path)]) == 0
    report = json.loads(output.read_text(encoding='utf-8'))
    assert report['NR'] == 3
    assert report['RR'] == {'RR@1': pytest.approx(1 / 3), 'RR@2': pytest.approx(1 / 3)}
    assert report['document'] == str(document)
    assert csv_path.is_file()


def test_evaluate_with_mock_judge(tmp_path):
    document = tmp_path / 'survey.md'
    document.write_text(f"{MARKDOWN_HEADER}\nText [@a].\n", encoding='utf-8')
    output = tmp_path / 'report.json'
    assert run_survey.main(['evaluate', str(document), '--judge', '--mock', '--output', str(output)]) == 0
    assert json.loads(output.read_text(encoding='utf-8'))['judge']['CQS'] == pytest.approx(4.0)


# ========== INIT / CHECK ==========

def test_init_creates_config_and_env(tmp_path):
    target = tmp_path / 'workspace'
    assert run_survey.main(['init', str(target)]) == 0
    assert (target / SURVEY_CONFIG_FILE).is_file()
    assert (target / PROMPT_TEMPLATES_FILE).is_file()
    env = (target / '.env').read_text(encoding='utf-8')
    assert 'SURVEY_LLM_API_KEY=' in env
    (target / '.env').write_text('SURVEY_LLM_API_KEY=keep\n', encoding='utf-8')
    assert run_survey.main(['init', str(target)]) == 0
    assert (target / '.env').read_text(encoding='utf-8') == 'SURVEY_LLM_API_KEY=keep\n'


def test_check_reports_unreachable_backend(clean_env, monkeypatch, capsys):
    monkeypatch.setenv('SURVEY_LLM_API_KEY', 'key')
    monkeypatch.setattr(connection_tester, 'check_backends', lambda config: [
        ('LLM', True, 'ok'), ('Embedding', True, 'ok'), ('Semantic Scholar', False, 'timeout'),
        ('Rerank', True, 'Kein Endpunkt'),
    ])
    assert run_survey.main(['check']) == 3
    assert _error(capsys)['error'] == 'ProviderError'


def test_check_all_reachable(clean_env, monkeypatch):
    monkeypatch.setenv('SURVEY_LLM_API_KEY', 'key')
    monkeypatch.setattr(connection_tester, 'check_backends',
                        lambda config: [(name, True, 'ok') for name in ('LLM', 'Embedding')])
    assert run_survey.main(['check']) == 0


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
