"""
Master Script: Survey-Erzeugung von der Literatursuche bis zum fertigen Dokument
Subcommands: generate, plan, evaluate, init, check
"""

import argparse
import json
import sys
import traceback
from datetime import date, datetime
from pathlib import Path

from config_manager import (
    ENV_TEMPLATE, build_run_config, validate_run_config, ensure_survey_config, save_env,
)
from controller import plan_survey, run_pipeline, write_state_artifacts
from document import BIB_FILENAME
from evaluation import DEFAULT_K_LIST, evaluate_document, judge_quality, render_metrics_table, export_metrics_csv
from prompt_templates import ensure_prompt_templates_config
from providers import create_providers
from retrieval import TopicSpec
from run_logger import print_summary, print_detail, log_event, start_run_logging, get_logger
from survey_errors import SurveyError, ProviderError


def print_banner(title):
    print_summary("")
    print_summary("=" * 70)
    print_summary(f"         {title}")
    print_summary("=" * 70)
    print_summary("")


def print_step(number, total, description):
    print_summary("")
    print_summary("=" * 70)
    print_summary(f"SCHRITT {number}/{total}: {description}")
    print_summary("=" * 70)
    print_summary("")


RETRIEVAL_FLAGS = ('similarity_threshold', 'relevance_threshold', 'per_query_cap', 'fallback_top_n', 'expansion_top_m')


def parse_k_list(value):
    try:
        k_list = [int(k) for k in value.split(',') if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"k-Liste erwartet Ganzzahlen, nicht '{value}'")
    if not k_list or any(k < 1 for k in k_list):
        raise argparse.ArgumentTypeError(f"k-Liste ungültig: '{value}'")
    return k_list


def _write_json(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write('\n')


def load_run_config(args, require_topic=True):
    """Standardwerte -> --config -> Flags; validiert vor jedem Provider-Aufruf"""
    overrides = {
        'topic': getattr(args, 'topic', None),
        'description': getattr(args, 'description', None),
        'out_dir': getattr(args, 'out', None),
        'seed': getattr(args, 'seed', None),
        'mock': getattr(args, 'mock', None),
        'n_candidates': getattr(args, 'n_candidates', None),
        'parallelism': getattr(args, 'parallelism', None),
        'k_list': getattr(args, 'k_list', None),
        'reference_year': getattr(args, 'reference_year', None),
        'enable_citation_trace': getattr(args, 'enable_citation_trace', None),
        'enable_plan_update': getattr(args, 'enable_plan_update', None),
        'enable_final_refine': getattr(args, 'enable_final_refine', None),
        'retrieval': {name: getattr(args, name, None) for name in RETRIEVAL_FLAGS},
    }
    config = build_run_config(overrides, getattr(args, 'config', None))
    if config.reference_year is None:
        # Bezugsjahr einmal festlegen, gilt für run_config.json und metrics.json
        config.reference_year = date.today().year
    return validate_run_config(config, require_topic=require_topic)


def _start_logged_run(config):
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start_run_logging(out_dir)
    log_event('config', config=config.to_dict())
    print_summary(f"Ausgabeverzeichnis: {out_dir}")
    print_summary(f"Modus: {'Mock (seed=' + str(config.seed) + ')' if config.mock else 'Live'}")
    _write_json(out_dir / 'run_config.json', config.to_dict())
    return out_dir


# ========== ARTEFAKTE ==========

def write_artifacts(out_dir, document, config, providers=None):
    """Dokument in beiden Formaten, Bibliographie und Metriken"""
    out_dir = Path(out_dir)
    markdown = document.render_markdown()
    (out_dir / 'survey.md').write_text(markdown, encoding='utf-8')
    (out_dir / 'survey.tex').write_text(document.render_latex(), encoding='utf-8')
    (out_dir / f"{BIB_FILENAME}.bib").write_text(document.bibliography(), encoding='utf-8')

    metrics = evaluate_document(out_dir / 'survey.md', config.k_list, config.reference_year)
    if config.judge and providers is not None:
        try:
            metrics.judge = judge_quality(markdown, providers.llm)
        except ProviderError as e:
            print_detail(f"Qualitätsbewertung übersprungen: {e}", level='WARNING')
    _write_json(out_dir / 'metrics.json', metrics.to_dict())
    return metrics


def _print_metrics(metrics):
    rr = ', '.join(f"RR@{k}={'n/a' if v is None else f'{v:.3f}'}" for k, v in metrics.rr.items())
    print_summary(f"NR={metrics.nr}  CD={metrics.cd:.2f}  {rr}")
    if metrics.judge is not None:
        print_summary(f"CQS={metrics.judge.cqs:.2f}")


# ========== SUBCOMMANDS ==========

def cmd_generate(args):
    if args.dry_run:
        return cmd_plan(args)

    start_time = datetime.now()
    print_banner("SURVEY-ERZEUGUNG")

    print_step(1, 3, "Konfiguration prüfen")
    config = load_run_config(args)
    out_dir = _start_logged_run(config)
    providers = create_providers(config)
    print_summary(f"✓ Thema: {config.topic}")

    print_step(2, 3, "Literatursuche, Planung und Schreiben")
    spec = TopicSpec(config.topic, config.description)
    document = run_pipeline(spec, config, providers, out_dir, resume=args.resume)

    print_step(3, 3, "Dokument schreiben und bewerten")
    metrics = write_artifacts(out_dir, document, config, providers)

    duration = (datetime.now() - start_time).total_seconds()
    print_banner("GESAMTZUSAMMENFASSUNG")
    print_summary(f"Unterabschnitte: {len(document.subsections())}")
    print_summary(f"Quellen: {len(document.cited_bibkeys())}")
    _print_metrics(metrics)
    warning_count = get_logger().warning_count
    if warning_count:
        print_summary(f"⚠ {warning_count} Warnung(en), Details in logs/survey_debug.log")
    print_summary("")
    print_summary(f"Gesamtdauer: {duration:.2f} Sekunden")
    return 0


def cmd_plan(args):
    """Nur Retrieval und Planung; schreibt outline.json und plan.json"""
    print_banner("SURVEY-PLANUNG")
    config = load_run_config(args)
    out_dir = _start_logged_run(config)
    providers = create_providers(config)

    state, store = plan_survey(TopicSpec(config.topic, config.description), config, providers, out_dir)
    write_state_artifacts(state, store, out_dir)
    print_summary(f"✓ {len(state.plan.ids())} Unterabschnitte in {state.plan.max_stage() + 1} Stufe(n)")
    print_summary(json.dumps(state.plan.to_dict(), indent=2, ensure_ascii=False))
    return 0


def cmd_evaluate(args):
    k_list = args.k_list or list(DEFAULT_K_LIST)
    llm = None
    if args.judge:
        config = load_run_config(args, require_topic=False)
        llm = create_providers(config).llm

    rows = []
    reports = []
    for document in args.documents:
        report = evaluate_document(document, k_list, args.reference_year, args.bib)
        if llm is not None:
            report.judge = judge_quality(Path(document).read_text(encoding='utf-8'), llm)
        rows.append((str(document), report))
        reports.append({'document': str(document), **report.to_dict()})

    print_summary(render_metrics_table(rows, k_list))
    data = reports[0] if len(reports) == 1 else {'schema_version': 1, 'documents': reports}
    if args.output:
        _write_json(args.output, data)
        print_summary(f"✓ Bericht: {args.output}")
    else:
        print_summary(json.dumps(data, indent=2, ensure_ascii=False))
    if args.csv:
        export_metrics_csv(rows, args.csv)
        print_summary(f"✓ CSV: {args.csv}")
    return 0


def cmd_init(args):
    work_path = Path(args.path)
    work_path.mkdir(parents=True, exist_ok=True)
    ensure_survey_config(work_path)
    ensure_prompt_templates_config(work_path)
    if (work_path / '.env').exists():
        print_summary("✓ .env existiert bereits, unverändert")
    elif save_env(work_path, ENV_TEMPLATE, print_summary):
        print_summary("Bitte API-Keys in .env eintragen.")
    return 0


def cmd_check(args):
    from connection_tester import check_backends

    config = build_run_config({}, args.config)
    config.mock = False
    validate_run_config(config, require_topic=False)

    failed = 0
    for name, ok, message in check_backends(config):
        print_summary(f"{'✓' if ok else '✗'} {name}: {message}")
        failed += 0 if ok else 1
    if failed:
        raise ProviderError(f"{failed} Backend(s) nicht erreichbar", stage='check')
    return 0


# ========== EINSTIEG ==========

def _add_run_flags(parser):
    parser.add_argument('--topic', help='Thema des Surveys')
    parser.add_argument('--description', help='Kurze Beschreibung des Themas')
    parser.add_argument('--out', help='Ausgabeverzeichnis')
    parser.add_argument('--seed', type=int, help='Seed für die Mock-Provider')
    parser.add_argument('--mock', action='store_true', default=None, help='Deterministische Mock-Provider')
    parser.add_argument('--config', help='JSON-Konfiguration (z.B. run_config.json eines früheren Laufs)')
    parser.add_argument('--n-candidates', type=int, help='Anzahl Entwürfe pro Unterabschnitt')
    parser.add_argument('--parallelism', type=int, help='Parallele Unterabschnitte pro Stufe')
    parser.add_argument('--k-list', type=parse_k_list, help='Fenster für RR@k, z.B. 1,3,5,7,10')
    parser.add_argument('--reference-year', type=int, help='Bezugsjahr für RR@k')
    parser.add_argument('--similarity-threshold', type=float, help='Kosinus-Schwelle des semantischen Filters')
    parser.add_argument('--relevance-threshold', type=int, help='Mindestscore 0-100 der Relevanzbewertung')
    parser.add_argument('--per-query-cap', '--final-cap', dest='per_query_cap', type=int,
                        help='Höchstens so viele Papers pro Anfrage')
    parser.add_argument('--fallback-top-n', type=int, help='Beste N, wenn kein Paper die Schwelle erreicht')
    parser.add_argument('--expansion-top-m', type=int, help='Top-M Papers für die Zitationserweiterung')
    parser.add_argument('--no-citation-trace', dest='enable_citation_trace', action='store_const', const=False,
                        default=None)
    parser.add_argument('--no-plan-update', dest='enable_plan_update', action='store_const', const=False,
                        default=None)
    parser.add_argument('--no-final-refine', dest='enable_final_refine', action='store_const', const=False,
                        default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog='run_survey', description='Survey-Erzeugung mit Zitationsverfolgung')
    sub = parser.add_subparsers(dest='command', required=True)

    generate = sub.add_parser('generate', help='Kompletter Lauf bis zum Dokument')
    _add_run_flags(generate)
    generate.add_argument('--resume', action='store_true', help='Ab dem letzten Checkpoint fortsetzen')
    generate.add_argument('--dry-run', action='store_true', help='Nur planen, nicht schreiben')
    generate.set_defaults(func=cmd_generate)

    plan = sub.add_parser('plan', help='Nur Literatursuche und Planung')
    _add_run_flags(plan)
    plan.add_argument('--dry-run', action='store_true', help='Ohne Wirkung, plan schreibt nie')
    plan.set_defaults(func=cmd_plan)

    evaluate = sub.add_parser('evaluate', help='Metriken für fertige Dokumente')
    evaluate.add_argument('documents', nargs='+', help='Markdown- oder LaTeX-Dokument(e)')
    evaluate.add_argument('--bib', help='BibTeX-Datei (Standard: references.bib neben dem Dokument)')
    evaluate.add_argument('--k-list', type=parse_k_list)
    evaluate.add_argument('--reference-year', type=int)
    evaluate.add_argument('--output', help='Bericht als JSON-Datei')
    evaluate.add_argument('--csv', help='Body-Länge, NR und CD als CSV')
    evaluate.add_argument('--judge', action='store_true', help='Zusätzlich LLM-Qualitätsbewertung')
    evaluate.add_argument('--mock', action='store_true', default=None)
    evaluate.add_argument('--seed', type=int)
    evaluate.add_argument('--config')
    evaluate.set_defaults(func=cmd_evaluate)

    init = sub.add_parser('init', help='survey_config.json, prompt_templates_config.json und .env-Vorlage anlegen')
    init.add_argument('path', nargs='?', default='.')
    init.set_defaults(func=cmd_init)

    check = sub.add_parser('check', help='Verbindungstest der Live-Backends')
    check.add_argument('--config')
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    """Exit Codes: 0 Erfolg, 2 Konfiguration, 3 Provider, 4 Pipeline"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SurveyError as e:
        log_event('error', **e.to_dict())
        sys.stderr.write(json.dumps(e.to_dict(), ensure_ascii=False) + '\n')
        return e.exit_code
    except KeyboardInterrupt:
        sys.stderr.write(json.dumps({'error': 'Interrupted', 'message': 'Abbruch durch Benutzer',
                                     'exit_code': 4, 'stage': None}) + '\n')
        return 4
    except Exception as e:
        traceback.print_exc()
        sys.stderr.write(json.dumps({'error': type(e).__name__, 'message': str(e),
                                     'exit_code': 4, 'stage': None}, ensure_ascii=False) + '\n')
        return 4


if __name__ == "__main__":
    sys.exit(main())
