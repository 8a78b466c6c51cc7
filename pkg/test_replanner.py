"""
Tests für Strukturrevision und Neuplanung zwischen den Stufen
"""

import pytest

from controller import StructureMemory
from planning import load_outline, build_plan, validate_plan
from replanner import RevisionAction, propose_revisions, apply_revisions, replan
from survey_errors import PreconditionError, UnknownPaperId


OVERVIEW = 'overview-of-chinese-malay-machine-translation'
CHALLENGES = 'challenges-in-data-availability-and-quality'
ADAPTIVE = 'adaptive-fine-tuning-techniques'
ADAPTERS = 'utilization-of-adapter-modules'
AUGMENTATION = 'data-augmentation-strategies'
METHODS_SECTION = 'Fine-Tuning Methodologies for Enhanced Translation'
WRITTEN = [OVERVIEW, CHALLENGES]


@pytest.fixture
def outline(fixture_path):
    return load_outline(fixture_path('outline_example.json'))


@pytest.fixture
def old_plan(outline, providers):
    plan = build_plan(outline, providers.llm)
    assert plan.stages() == {OVERVIEW: 0, CHALLENGES: 0, ADAPTIVE: 1, ADAPTERS: 1, AUGMENTATION: 1}
    return plan


@pytest.fixture
def memory():
    memory = StructureMemory()
    memory.drafts[OVERVIEW] = 'Chinese-Malay translation relies on pretrained multilingual models.'
    memory.drafts[CHALLENGES] = 'Parallel data for the pair is scarce and noisy.'
    return memory


def _unwritten(outline):
    return [sid for sid in outline.ids() if sid not in WRITTEN]


# ========== VORSCHLÄGE ==========

def test_propose_revisions_filters_invalid_actions(outline, memory, providers, fresh_logger):
    providers.llm.script('revision', {'actions': [
        {'kind': 'merge', 'targets': [ADAPTERS, AUGMENTATION], 'title': 'Adapters and Augmentation'},
        {'kind': 'merge', 'targets': [ADAPTERS, ADAPTERS]},
        {'kind': 'rename', 'targets': [OVERVIEW], 'title': 'Background of the Language Pair'},
        {'kind': 'delete', 'targets': ['no-such-subsection']},
        {'kind': 'add', 'targets': [ADAPTIVE], 'title': 'X', 'description': 'Y'},
        {'kind': 'add', 'title': 'Evaluation Benchmarks', 'description': ''},
        {'kind': 'reorder', 'targets': [AUGMENTATION]},
        {'kind': 'rename', 'targets': [ADAPTIVE, ADAPTERS], 'title': 'Two Targets'},
        {'kind': 'rename', 'targets': [ADAPTIVE]},
        {'kind': 'add', 'title': 'Evaluation Benchmarks', 'description': 'Test sets and metrics.',
         'section_title': METHODS_SECTION},
        {'kind': 'reorder', 'targets': [AUGMENTATION], 'position': 0},
    ]})
    actions = propose_revisions(outline, memory, _unwritten(outline), providers.llm)
    assert [a.kind for a in actions] == ['merge', 'add', 'reorder']
    assert actions[0].targets == [ADAPTERS, AUGMENTATION]
    assert len(fresh_logger.warnings) == 8


def test_propose_revisions_shows_written_state(outline, memory, providers):
    propose_revisions(outline, memory, _unwritten(outline), providers.llm)
    assert len(providers.llm.calls_for('revision')) == 1


def test_propose_revisions_default_mock_proposes_nothing(outline, memory, providers):
    assert propose_revisions(outline, memory, _unwritten(outline), providers.llm) == []


def test_propose_revisions_needs_unwritten(outline, memory, providers):
    with pytest.raises(PreconditionError):
        propose_revisions(outline, memory, [], providers.llm)


def test_propose_revisions_survives_provider_failure(outline, memory, providers, fresh_logger):
    providers.llm.script('revision', UnknownPaperId('backend error'))
    assert propose_revisions(outline, memory, _unwritten(outline), providers.llm) == []
    assert fresh_logger.warnings


# ========== ANWENDEN + NEUPLANEN ==========

@pytest.mark.parametrize('action, expected_ids', [
    (RevisionAction('merge', [ADAPTERS, AUGMENTATION], title='Adapters and Augmentation'),
     [OVERVIEW, CHALLENGES, ADAPTIVE, ADAPTERS]),
    (RevisionAction('delete', [AUGMENTATION]),
     [OVERVIEW, CHALLENGES, ADAPTIVE, ADAPTERS]),
    (RevisionAction('rename', [ADAPTIVE], title='Task-Adaptive Fine-Tuning'),
     [OVERVIEW, CHALLENGES, ADAPTIVE, ADAPTERS, AUGMENTATION]),
    (RevisionAction('add', title='Evaluation Benchmarks', description='Test sets and metrics.',
                    position=0, section_title=METHODS_SECTION),
     [OVERVIEW, CHALLENGES, 'evaluation-benchmarks', ADAPTIVE, ADAPTERS, AUGMENTATION]),
    (RevisionAction('reorder', [AUGMENTATION], position=0),
     [OVERVIEW, CHALLENGES, AUGMENTATION, ADAPTIVE, ADAPTERS]),
])
def test_each_action_kind_then_replan(outline, old_plan, providers, action, expected_ids):
    revised = apply_revisions(outline, [action], taken_ids=WRITTEN)
    assert revised.ids() == expected_ids
    # Original bleibt unverändert
    assert outline.ids() == [OVERVIEW, CHALLENGES, ADAPTIVE, ADAPTERS, AUGMENTATION]

    plan = validate_plan(replan(revised, WRITTEN, old_plan, providers.llm, current_stage=0), strict=False)
    assert plan.ids() == expected_ids
    for sid in WRITTEN:
        assert plan.entry(sid) == old_plan.entry(sid)
    for sid in expected_ids[2:]:
        assert plan.entry(sid).stage >= 1


def test_merge_combines_descriptions(outline):
    revised = apply_revisions(outline, [RevisionAction('merge', [ADAPTERS, AUGMENTATION])])
    merged = revised.get(ADAPTERS)
    assert merged.title == 'Utilization of Adapter Modules'
    assert merged.description.startswith('Adapter layers inserted')
    assert merged.description.endswith('complement fine-tuning.')


def test_rename_updates_title_only(outline):
    revised = apply_revisions(outline, [RevisionAction('rename', [ADAPTIVE], title='  Task-Adaptive   Fine-Tuning ')])
    assert revised.get(ADAPTIVE).title == 'Task-Adaptive Fine-Tuning'
    assert revised.get(ADAPTIVE).description == outline.get(ADAPTIVE).description


def test_conflicting_actions_are_dropped(outline, fresh_logger):
    actions = [
        RevisionAction('merge', [ADAPTERS, AUGMENTATION]),
        RevisionAction('delete', [AUGMENTATION]),
        RevisionAction('rename', [ADAPTIVE], title='Challenges in Data Availability and Quality'),
        RevisionAction('add', title='Benchmarks', description='d', section_title='No Such Section'),
    ]
    revised = apply_revisions(outline, actions, taken_ids=WRITTEN)
    assert revised.ids() == [OVERVIEW, CHALLENGES, ADAPTIVE, ADAPTERS]
    assert revised.get(ADAPTIVE).title == 'Adaptive Fine-Tuning Techniques'
    assert len(fresh_logger.warnings) == 3


def test_add_never_reuses_removed_ids(outline):
    actions = [RevisionAction('delete', [AUGMENTATION]),
               RevisionAction('add', title='Data Augmentation Strategies', description='Back-translation again.')]
    revised = apply_revisions(outline, actions, taken_ids=WRITTEN)
    assert revised.ids()[-1] == 'data-augmentation-strategies-2'


def test_empty_sections_are_removed(outline):
    revised = apply_revisions(outline, [RevisionAction('delete', [ADAPTIVE, ADAPTERS, AUGMENTATION])])
    assert [s.title for s in revised.sections] == ['Background']


def test_replan_drops_edges_into_written_subsections(outline, old_plan, providers):
    providers.llm.script('dep-graph', {'dependencies': [
        {'subsection_title': 'Overview of Chinese-Malay Machine Translation',
         'depends_on': ['Adaptive Fine-Tuning Techniques']},
        {'subsection_title': 'Utilization of Adapter Modules', 'depends_on': ['Adaptive Fine-Tuning Techniques']},
    ]})
    plan = replan(outline.copy(), WRITTEN, old_plan, providers.llm, current_stage=0)
    assert plan.entry(OVERVIEW).depends_on == []
    assert plan.entry(OVERVIEW).stage == 0
    assert plan.stages() == {OVERVIEW: 0, CHALLENGES: 0, ADAPTIVE: 1, ADAPTERS: 2, AUGMENTATION: 1}


def test_replan_lifts_unwritten_above_current_stage(outline, old_plan, providers):
    plan = replan(outline.copy(), WRITTEN, old_plan, providers.llm, current_stage=3)
    assert plan.stage_sets()[0] == WRITTEN
    assert min(plan.entry(sid).stage for sid in _unwritten(outline)) == 4
    validate_plan(plan, strict=False, floor=None)


def test_action_to_dict_omits_empty_fields():
    assert RevisionAction('delete', [ADAPTIVE]).to_dict() == {'kind': 'delete', 'targets': [ADAPTIVE]}


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
