"""
Tests für die Ablaufsteuerung: Stufen, Gedächtnis, Checkpoints, globale Verfeinerung und Gesamtlauf
"""

import json
from collections import OrderedDict

import pytest

import controller
from controller import (
    StageSet, StructureMemory, RunState, next_stage, update_memory, save_checkpoint, latest_checkpoint,
    load_checkpoint, final_refine, plan_survey, run_pipeline,
)
from corpus import TAG_SURVEY, PaperRecord, PaperStore, load_csv
from mock_providers import create_mock_providers
from planning import load_outline, load_plan, validate_plan
from survey_errors import PipelineError, PreconditionError, UnknownPaperId


@pytest.fixture
def small_config(run_config):
    run_config.n_candidates = 2
    run_config.parallelism = 2
    run_config.target_length = 1400
    return run_config


@pytest.fixture
def planned_state(fixture_path):
    return RunState(load_outline(fixture_path('outline_example.json')), load_plan(fixture_path('plan_example.json')))


# ========== ZUSTAND / GEDÄCHTNIS ==========

def test_next_stage_follows_plan(planned_state):
    assert next_stage(planned_state) == StageSet(0, ['overview-of-chinese-malay-machine-translation'])
    planned_state.completed = planned_state.plan.ids()[:3]
    assert next_stage(planned_state) == StageSet(3, ['utilization-of-adapter-modules',
                                                     'data-augmentation-strategies'])
    planned_state.completed = planned_state.plan.ids()
    assert next_stage(planned_state) is None
    with pytest.raises(PreconditionError):
        StageSet(1, [])


def test_memory_deduplicates_terms():
    memory = StructureMemory()
    assert memory.add_terms([{'term': 'LoRA', 'definition': 'd'}, {'term': ' lora '}, {'term': ''}], 'a') == 1
    assert memory.add_terms([{'term': 'Adapter  Modules'}], 'b') == 1
    assert [e.term for e in memory.terminology] == ['LoRA', 'Adapter Modules']
    snapshot = memory.snapshot()
    memory.add_terms([{'term': 'Prefix Tuning'}], 'c')
    assert len(snapshot.terminology) == 2


def test_update_memory(providers):
    memory = StructureMemory()
    update_memory(memory, 'lora', 'LoRA injects low-rank matrices into each Transformer layer while the '
                                  'pretrained weights stay frozen and QLoRA quantizes them.', providers.llm)
    assert 'lora' in memory.drafts
    assert memory.has_term('LoRA')
    with pytest.raises(PreconditionError):
        update_memory(memory, 'empty', '   ', providers.llm)


def test_update_memory_keeps_draft_on_provider_failure(providers, fresh_logger):
    providers.llm.script('terminology-extract', UnknownPaperId('gone'))
    memory = update_memory(StructureMemory(), 'lora', 'Some draft text.', providers.llm)
    assert memory.drafts == {'lora': 'Some draft text.'}
    assert memory.terminology == []
    assert fresh_logger.warnings


# ========== CHECKPOINTS ==========

def test_checkpoint_round_trip(planned_state, out_dir):
    store = PaperStore()
    store.upsert([PaperRecord('hu2022lora', 'p02', 'LoRA', full_text='Body.')], TAG_SURVEY)
    planned_state.completed = ['overview-of-chinese-malay-machine-translation']
    planned_state.memory.drafts['overview-of-chinese-malay-machine-translation'] = 'Draft.'
    planned_state.memory.add_terms([{'term': 'Back-translation'}], 'x')
    planned_state.current_stage = 0

    assert latest_checkpoint(out_dir) is None
    save_checkpoint(planned_state, store, out_dir, 'planned')
    save_checkpoint(planned_state, store, out_dir, 'stage_01')
    directory = latest_checkpoint(out_dir)
    assert directory.name == 'stage_01'

    state, loaded_store = load_checkpoint(directory)
    assert state.plan == planned_state.plan
    assert state.outline.ids() == planned_state.outline.ids()
    assert state.completed == planned_state.completed
    assert state.memory.to_dict() == planned_state.memory.to_dict()
    assert loaded_store == store


# ========== GLOBALE VERFEINERUNG ==========

def _store(*bibkeys):
    store = PaperStore()
    store.upsert([PaperRecord(key, f"id-{key}", f"Title of {key}") for key in bibkeys], TAG_SURVEY)
    return store


def _refinement(text, remapped=()):
    return {'text': text, 'flagged_claims': [], 'remapped': [{'from': a, 'to': b} for a, b in remapped]}


def test_final_refine_only_touches_flagged(providers, fresh_logger):
    texts = OrderedDict([('a', 'Uses lora \\cite{k1}.'), ('b', 'Uses LoRA \\cite{k2}.'), ('c', 'Other \\cite{k3}.')])
    memory = StructureMemory()
    memory.add_terms([{'term': 'LoRA'}], 'b')
    providers.llm.script('diagnosis', {'flagged': [
        {'subsection_id': 'a', 'issue': 'inconsistent spelling of LoRA'},
        {'subsection_id': 'zzz', 'issue': 'unknown'},
        {'subsection_id': 'c', 'issue': 'tone'},
    ]})
    providers.llm.script('refinement', _refinement('Uses LoRA \\cite{k1}.'), _refinement('Other \\cite{k9}.'))
    refined, report = final_refine(texts, {}, memory, providers.llm, _store('k1', 'k2', 'k3', 'k9'))
    assert refined == OrderedDict([('a', 'Uses LoRA \\cite{k1}.'), ('b', 'Uses LoRA \\cite{k2}.'),
                                   ('c', 'Other \\cite{k3}.')])
    assert [(r['subsection_id'], r['applied']) for r in report] == [('a', True), ('c', False)]
    assert len(fresh_logger.warnings) == 2


def test_final_refine_applies_remap_to_known_key(providers):
    texts = OrderedDict([('a', 'Claim \\cite{old2020key}.')])
    providers.llm.script('diagnosis', {'flagged': [{'subsection_id': 'a', 'issue': 'duplicate source'}]})
    providers.llm.script('refinement', _refinement('Claim \\cite{new2020key}.', [('old2020key', 'new2020key')]))
    refined, report = final_refine(texts, {}, StructureMemory(), providers.llm, _store('old2020key', 'new2020key'))
    assert refined['a'] == 'Claim \\cite{new2020key}.'
    assert report[0]['applied'] is True
    assert report[0]['remapped'] == [{'from': 'old2020key', 'to': 'new2020key'}]


@pytest.mark.parametrize('reply', [
    _refinement('Claim \\cite{fabricated9999}.', [('k1', 'fabricated9999')]),
    _refinement('Claim \\cite{k2}.', [('k7', 'k2'), ('k1', 'k2')]),
    _refinement('Claim \\cite{k1, ghost2020key}.'),
    _refinement('Claim without citation.'),
])
def test_final_refine_rejects_citation_violations(providers, fresh_logger, reply):
    texts = OrderedDict([('a', 'Claim \\cite{k1}.')])
    providers.llm.script('diagnosis', {'flagged': [{'subsection_id': 'a', 'issue': 'duplicate source'}]})
    providers.llm.script('refinement', reply)
    refined, report = final_refine(texts, {}, StructureMemory(), providers.llm, _store('k1', 'k2', 'k7'))
    assert refined == texts
    assert report[0]['applied'] is False
    assert len(fresh_logger.warnings) == 1


def test_final_refine_without_diagnosis(providers):
    texts = OrderedDict([('a', 'Text \\cite{k1}.')])
    providers.llm.script('diagnosis', UnknownPaperId('gone'))
    assert final_refine(texts, {}, StructureMemory(), providers.llm, _store('k1')) == (texts, [])


# ========== PLANUNG ==========

def test_plan_survey(small_config, providers, topic_spec, out_dir):
    state, store = plan_survey(topic_spec, small_config, providers, out_dir)
    assert [len(s.subsections) for s in state.outline.sections] == [2, 3, 2]
    assert state.plan.ids() == state.outline.ids()
    validate_plan(state.plan)
    assert len(store) > 0
    assert (out_dir / 'checkpoints' / 'planned' / 'state.json').is_file()
    assert providers.llm.calls_for('subsection-write') == []


# ========== GESAMTLAUF ==========

def test_run_pipeline_end_to_end(small_config, providers, topic_spec, out_dir):
    document = run_pipeline(topic_spec, small_config, providers, out_dir)

    outline = load_outline(out_dir / 'outline.json')
    plan = validate_plan(load_plan(out_dir / 'plan.json'), strict=False)
    store = load_csv(out_dir / 'papers.csv')
    ids = [sub.subsection_id for sub in document.subsections()]
    assert ids == outline.ids() == plan.ids()
    assert all(sub.text.strip() for sub in document.subsections())
    assert document.cited_bibkeys()
    assert set(document.cited_bibkeys()) <= set(store.keys())

    for sid in ids:
        assert (out_dir / 'subsections' / f"{sid}.json").is_file()
    flagged = {e.subsection_id for e in plan.entries if e.table_flag}
    with_table = {sub.subsection_id for sub in document.subsections() if sub.table is not None}
    assert with_table
    assert with_table <= flagged
    assert {p.stem for p in (out_dir / 'tables').glob('*.json')} == with_table
    for sub in document.subsections():
        if sub.table is not None:
            sub.table.validate(store)

    history = json.loads((out_dir / 'plan_history.json').read_text(encoding='utf-8'))['history']
    assert history[0]['after_stage'] is None
    state, _ = load_checkpoint(latest_checkpoint(out_dir))
    assert sorted(state.completed) == sorted(ids)
    assert state.unwritten() == []


def test_run_pipeline_is_deterministic(small_config, topic_spec, tmp_path):
    outputs = []
    for name in ('first', 'second'):
        out = tmp_path / name
        document = run_pipeline(topic_spec, small_config, create_mock_providers(small_config), out)
        outputs.append((document.render_markdown(), document.render_latex(), document.bibliography(),
                        (out / 'plan.json').read_text(encoding='utf-8'),
                        (out / 'outline.json').read_text(encoding='utf-8')))
    assert outputs[0] == outputs[1]


def test_resume_after_crash_skips_written_subsections(small_config, topic_spec, out_dir, monkeypatch):
    real_run_stage = controller.run_stage
    started = []

    def crash_on_second_stage(state, store, stage_set, *args):
        if started:
            raise PipelineError("simulierter Abbruch", stage='writing')
        started.append(list(stage_set.subsection_ids))
        return real_run_stage(state, store, stage_set, *args)

    monkeypatch.setattr(controller, 'run_stage', crash_on_second_stage)
    with pytest.raises(PipelineError):
        run_pipeline(topic_spec, small_config, create_mock_providers(small_config), out_dir)

    checkpoint = latest_checkpoint(out_dir)
    assert checkpoint.name == 'stage_01'
    crashed_state, _ = load_checkpoint(checkpoint)
    assert crashed_state.completed == started[0]

    resumed_ids = []

    def recording(state, store, stage_set, *args):
        resumed_ids.extend(stage_set.subsection_ids)
        return real_run_stage(state, store, stage_set, *args)

    monkeypatch.setattr(controller, 'run_stage', recording)
    document = run_pipeline(topic_spec, small_config, create_mock_providers(small_config), out_dir, resume=True)
    assert not set(resumed_ids) & set(started[0])
    assert sorted(resumed_ids + started[0]) == sorted(sub.subsection_id for sub in document.subsections())


def test_ablation_switches(small_config, providers, topic_spec, out_dir):
    small_config.enable_citation_trace = False
    small_config.enable_plan_update = False
    small_config.enable_final_refine = False
    document = run_pipeline(topic_spec, small_config, providers, out_dir)
    assert document.subsections()
    assert providers.llm.calls_for('traceworthiness') == []
    assert providers.llm.calls_for('revision') == []
    assert providers.llm.calls_for('diagnosis') == []
    assert document.traced_bibkeys == set()
    history = json.loads((out_dir / 'plan_history.json').read_text(encoding='utf-8'))['history']
    assert len(history) == 1


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
