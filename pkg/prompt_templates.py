"""
Prompt-Vorlagen und Ausgabeschemata der Pipeline
Stellt sicher dass prompt_templates_config.json beim Start existiert
"""

import json
import re
from pathlib import Path
from string import Template

from run_logger import print_detail


PROMPT_TEMPLATES_FILE = 'prompt_templates_config.json'

_JSON_ONLY = "Answer with a single JSON object and nothing else."

# Standard-Vorlagen - zentrale Definition (Platzhalter im ${slot}-Format)
DEFAULT_PROMPT_TEMPLATES = {
    'keyword-gen': (
        "You are preparing a literature search for an academic survey.\n"
        "Topic: ${topic}\nDescription: ${description}\n"
        "Generate between 3 and 10 short search keywords or key phrases that together cover the topic. "
        "Return {\"keywords\": [\"...\"]}. ${feedback}\n" + _JSON_ONLY
    ),
    'query-refine': (
        "Rewrite the survey topic and its description into one precise search query "
        "that captures the overall scope.\nTopic: ${topic}\nDescription: ${description}\n"
        "Return {\"query\": \"...\"}. ${feedback}\n" + _JSON_ONLY
    ),
    'relevance-score': (
        "Rate how relevant each paper is for a survey on the topic below on a scale from 0 to 100.\n"
        "Topic: ${topic}\nDescription: ${description}\nPapers (JSON): ${papers}\n"
        "Return {\"scores\": [{\"id\": \"<paper id>\", \"score\": <0-100>}]} with one entry per paper. "
        "${feedback}\n" + _JSON_ONLY
    ),
    'review-outline': (
        "Extract the section structure of the following review article as an ordered list of headings.\n"
        "Title: ${title}\nText: ${text}\n"
        "Return {\"outline\": [\"heading\", ...]}. ${feedback}\n" + _JSON_ONLY
    ),
    'outline-gen': (
        "Draft a two-level outline for an academic survey.\nTopic: ${topic}\nDescription: ${description}\n"
        "Structural patterns of existing reviews and abstracts of relevant papers:\n${context}\n"
        "Every section has a section_title, a section_description and a list of subsections; every "
        "subsection has a unique subsection_title and a one-sentence subsection_description.\n"
        "Return {\"sections\": [{\"section_title\": \"...\", \"section_description\": \"...\", "
        "\"subsections\": [{\"subsection_title\": \"...\", \"subsection_description\": \"...\"}]}]}. "
        "${feedback}\n" + _JSON_ONLY
    ),
    'outline-refine': (
        "Refine the survey outline below: merge overlapping subsections, remove redundancy, keep titles "
        "unique and give every subsection a description.\nTopic: ${topic}\nOutline (JSON): ${outline}\n"
        "Return the refined outline in the same JSON shape {\"sections\": [...]}. ${feedback}\n" + _JSON_ONLY
    ),
    'raw-plan': (
        "For every subsection of the outline decide whether additional literature retrieval is needed "
        "and whether a comparison table would help the reader.\nOutline (JSON): ${outline}\n"
        "Return {\"entries\": [{\"subsection_title\": \"...\", \"trigger_additional_search\": true, "
        "\"generate_table\": false}]} with one entry per subsection. ${feedback}\n" + _JSON_ONLY
    ),
    'dep-graph': (
        "For every subsection of the outline list the subsections whose content must be written first "
        "because it is a prerequisite.\nOutline (JSON): ${outline}\n"
        "Return {\"dependencies\": [{\"subsection_title\": \"...\", \"depends_on\": [\"...\"]}]}. "
        "${feedback}\n" + _JSON_ONLY
    ),
    'revision': (
        "Some subsections of the survey are already written. Analyse redundancy, missing concepts and "
        "ordering problems of the unwritten part and propose structural revisions.\n"
        "Outline (JSON, written subsections marked): ${outline}\n"
        "Memory of written content (JSON): ${memory}\nUnwritten subsection ids: ${unwritten}\n"
        "Allowed kinds: merge, delete, rename, reorder, add. Only unwritten subsections may be targeted.\n"
        "Return {\"actions\": [{\"kind\": \"rename\", \"targets\": [\"<id>\"], \"title\": \"...\", "
        "\"description\": \"...\", \"position\": 0, \"section_title\": \"...\"}]}. ${feedback}\n" + _JSON_ONLY
    ),
    'skeleton': (
        "Plan the subsection \"${title}\" (${description}) of a survey.\n"
        "Terminology already established in earlier subsections (JSON): ${memory_terms}\n"
        "List 3 to 10 ordered key points and the established terms this subsection must use consistently.\n"
        "Return {\"points\": [\"...\"], \"terminology\": [\"...\"]}. ${feedback}\n" + _JSON_ONLY
    ),
    'subsection-write': (
        "Write the survey subsection \"${title}\" (${description}) following the skeleton.\n"
        "Skeleton (JSON): ${skeleton}\nRetrieved passages (JSON, each with a bibkey): ${context}\n"
        "Traced original sources (JSON): ${traced}\n"
        "Cite only the given bibkeys using \\cite{bibkey}. Aim for about ${word_budget} words. "
        "This is candidate ${candidate_index}.\n"
        "Return {\"text\": \"...\"}. ${feedback}\n" + _JSON_ONLY
    ),
    'draft-select': (
        "Select the best draft for the subsection \"${title}\" based on alignment with the skeleton, "
        "contextual relevance and overall writing quality.\nSkeleton (JSON): ${skeleton}\n"
        "Candidates (JSON): ${candidates}\n"
        "Return {\"best_index\": <index>, \"justification\": \"...\"}. ${feedback}\n" + _JSON_ONLY
    ),
    'refinement': (
        "Refinement pass \"${pass_name}\" for the survey subsection \"${title}\".\n"
        "Instructions: ${instructions}\nSkeleton (JSON): ${skeleton}\nAvailable sources (JSON): ${context}\n"
        "Text:\n${text}\n"
        "Keep every \\cite{...} marker unless you list it in remapped. Return {\"text\": \"...\", "
        "\"flagged_claims\": [\"sentence\"], \"remapped\": [{\"from\": \"key\", \"to\": \"key\"}]}. "
        "${feedback}\n" + _JSON_ONLY
    ),
    'traceworthiness': (
        "The passage below was retrieved for the subsection \"${title}\" (${description}).\n"
        "Passage: ${passage}\nCitation markers (JSON): ${markers}\n"
        "For every marker decide whether it refers to the original source of a key concept, method or "
        "finding that the subsection relies on.\n"
        "Return {\"assessments\": [{\"marker\": \"...\", \"traceworthy\": true, \"explanation\": \"...\"}]}. "
        "${feedback}\n" + _JSON_ONLY
    ),
    'terminology-extract': (
        "Extract between 3 and 15 key domain terms from the subsection \"${title}\" with a short "
        "definition taken from the text.\nText:\n${text}\n"
        "Return {\"terms\": [{\"term\": \"...\", \"definition\": \"...\"}]}. ${feedback}\n" + _JSON_ONLY
    ),
    'diagnosis': (
        "Read the complete survey draft and flag subsections with logical contradictions, redundancy or "
        "terminological and stylistic inconsistencies.\nEstablished terminology (JSON): ${terminology}\n"
        "Subsections (JSON): ${document}\n"
        "Return {\"flagged\": [{\"subsection_id\": \"...\", \"issue\": \"...\"}]}. ${feedback}\n" + _JSON_ONLY
    ),
    'judge': (
        "Evaluate the survey below on coverage, relevance, structure, synthesis and consistency, each "
        "on a scale from 1 to 5. Explain every score before giving it.\nSurvey:\n${document}\n"
        "Return {\"coverage\": {\"explanation\": \"...\", \"score\": 4}, \"relevance\": {...}, "
        "\"structure\": {...}, \"synthesis\": {...}, \"consistency\": {...}}. ${feedback}\n" + _JSON_ONLY
    ),
    'table-categories': (
        "Infer the core aspect along which the papers of this subsection differ and propose 4 to 6 "
        "concise method categories.\nSubsection description: ${description}\nSubsection text:\n${text}\n"
        "Papers (JSON): ${papers}\nPreviously proposed categories: ${previous_categories}\n"
        "Return {\"core_aspect\": \"...\", \"categories\": [\"...\"]}. ${feedback}\n" + _JSON_ONLY
    ),
    'table-classify': (
        "Assign the paper to one or more of the categories, or to \"Others\".\n"
        "Categories (JSON): ${categories}\nPaper: ${paper}\nEvidence passages (JSON): ${evidence}\n"
        "Return {\"categories\": [\"...\"]}. ${feedback}\n" + _JSON_ONLY
    ),
    'table-aspects': (
        "Select 3 to 5 aspects that allow a side-by-side comparison of the papers of this subsection.\n"
        "Subsection description: ${description}\nSubsection text:\n${text}\nPapers (JSON): ${papers}\n"
        "Return {\"aspects\": [\"...\"]}. ${feedback}\n" + _JSON_ONLY
    ),
    'table-cell': (
        "Summarize what the paper reports about the aspect \"${aspect}\" in a short, informative value. "
        "Use only the evidence; answer \"not reported\" if the evidence is silent.\n"
        "Paper: ${paper}\nEvidence passages (JSON): ${evidence}\n"
        "Return {\"value\": \"...\"}. ${feedback}\n" + _JSON_ONLY
    ),
}


def _string_list(min_items=0, max_items=None, min_length=0):
    schema = {'type': 'array', 'items': {'type': 'string', 'minLength': min_length}, 'minItems': min_items}
    if max_items is not None:
        schema['maxItems'] = max_items
    return schema


def _object(properties, required=None):
    return {'type': 'object', 'properties': properties, 'required': required or list(properties)}


_OUTLINE_SCHEMA = _object({
    'sections': {
        'type': 'array',
        'minItems': 1,
        'items': _object({
            'section_title': {'type': 'string', 'minLength': 1},
            'section_description': {'type': 'string'},
            'subsections': {
                'type': 'array',
                'minItems': 1,
                'items': _object({
                    'subsection_title': {'type': 'string', 'minLength': 1},
                    'subsection_description': {'type': 'string', 'minLength': 1},
                }),
            },
        }, required=['section_title', 'subsections']),
    },
})

_JUDGE_DIMENSION = _object({
    'score': {'type': 'number'},
    'explanation': {'type': 'string'},
}, required=['score'])

# Ausgabeschemata pro schema-tag (JSON Schema, geprüft mit jsonschema)
OUTPUT_SCHEMAS = {
    'keywords': _object({'keywords': _string_list()}),
    'refined_query': _object({'query': {'type': 'string', 'minLength': 1}}),
    'relevance_scores': _object({
        'scores': {'type': 'array', 'items': _object({'id': {'type': 'string'}, 'score': {'type': 'number'}})},
    }),
    'review_outline': _object({'outline': _string_list()}),
    'outline': _OUTLINE_SCHEMA,
    'raw_plan': _object({
        'entries': {'type': 'array', 'items': _object({
            'subsection_title': {'type': 'string'},
            'trigger_additional_search': {'type': 'boolean'},
            'generate_table': {'type': 'boolean'},
        })},
    }),
    'dependencies': _object({
        'dependencies': {'type': 'array', 'items': _object({
            'subsection_title': {'type': 'string'},
            'depends_on': _string_list(),
        })},
    }),
    'revisions': _object({
        'actions': {'type': 'array', 'items': _object({
            'kind': {'enum': ['merge', 'delete', 'rename', 'reorder', 'add']},
            'targets': _string_list(),
            'title': {'type': 'string'},
            'description': {'type': 'string'},
            'position': {'type': 'integer', 'minimum': 0},
            'section_title': {'type': 'string'},
        }, required=['kind'])},
    }),
    'skeleton': _object({
        'points': _string_list(min_items=3, min_length=1),
        'terminology': _string_list(),
    }, required=['points']),
    'draft': _object({'text': {'type': 'string', 'minLength': 1}}),
    'selection': _object({
        'best_index': {'type': 'integer', 'minimum': 0},
        'justification': {'type': 'string'},
    }),
    'refinement': _object({
        'text': {'type': 'string', 'minLength': 1},
        'flagged_claims': _string_list(),
        'remapped': {'type': 'array', 'items': _object({'from': {'type': 'string'}, 'to': {'type': 'string'}})},
    }, required=['text']),
    'trace_assessments': _object({
        'assessments': {'type': 'array', 'items': _object({
            'marker': {'type': 'string'},
            'traceworthy': {'type': 'boolean'},
            'explanation': {'type': 'string'},
        }, required=['marker', 'traceworthy'])},
    }),
    'terminology': _object({
        'terms': {'type': 'array', 'minItems': 3, 'items': _object({
            'term': {'type': 'string', 'minLength': 1},
            'definition': {'type': 'string'},
        }, required=['term'])},
    }),
    'diagnosis': _object({
        'flagged': {'type': 'array', 'items': _object({
            'subsection_id': {'type': 'string'},
            'issue': {'type': 'string'},
        }, required=['subsection_id'])},
    }),
    'judge_scores': _object({
        dimension: _JUDGE_DIMENSION
        for dimension in ('coverage', 'relevance', 'structure', 'synthesis', 'consistency')
    }),
    'table_categories': _object({
        'core_aspect': {'type': 'string'},
        'categories': _string_list(min_items=1, min_length=1),
    }, required=['categories']),
    'table_classification': _object({'categories': _string_list()}),
    'table_aspects': _object({'aspects': _string_list(min_items=3, max_items=5, min_length=1)}),
    'table_cell': _object({'value': {'type': 'string'}}),
}


def template_slots(text):
    """Hole die Platzhalternamen einer Vorlage"""
    return set(re.findall(r'\$\{(\w+)\}', text))


def load_prompt_templates_with_fallback(config_file=None):
    """Lade Vorlagen aus JSON oder gib Fallback zurück"""
    templates = dict(DEFAULT_PROMPT_TEMPLATES)
    config_file = Path(config_file or PROMPT_TEMPLATES_FILE)

    if config_file.exists():
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                overrides = json.load(f).get('prompt_templates', {})
        except Exception as e:
            print_detail(f"Warnung: Konnte {config_file} nicht laden: {e}", level='WARNING')
            return templates

        for template_id, text in overrides.items():
            if template_id not in DEFAULT_PROMPT_TEMPLATES:
                print_detail(f"Unbekannte Vorlage ignoriert: {template_id}", level='WARNING')
                continue
            # Platzhalter müssen identisch bleiben, sonst passt der Aufrufer nicht mehr
            if template_slots(text) != template_slots(DEFAULT_PROMPT_TEMPLATES[template_id]):
                print_detail(f"Vorlage {template_id} ignoriert: Platzhalter weichen ab", level='WARNING')
                continue
            templates[template_id] = text

    return templates


def ensure_prompt_templates_config(work_path=None):
    """Stelle sicher dass prompt_templates_config.json existiert"""
    config_file = Path(work_path or '.') / PROMPT_TEMPLATES_FILE

    if config_file.exists():
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                json.load(f)
            return config_file
        except Exception as e:
            print(f"✗ Fehler in {PROMPT_TEMPLATES_FILE}: {e}")

    config = {'prompt_templates': DEFAULT_PROMPT_TEMPLATES}
    with open(config_file, 'w', encoding='utf-8') as f:
        json.dump(config, f, indent=2, ensure_ascii=False)
    print(f"✓ {PROMPT_TEMPLATES_FILE} erstellt mit {len(DEFAULT_PROMPT_TEMPLATES)} Standard-Vorlagen")
    return config_file


def render_template(text, slots):
    return Template(text).substitute(slots)
