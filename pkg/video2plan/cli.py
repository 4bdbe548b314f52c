# License: BSD 2 clause
"""Command line interface.

Exit codes: 0 on success, 1 when inputs cannot be read or are invalid, 2
when a stage fails on valid inputs.
"""
import argparse
import json
import logging
import os
import sys

from video2plan.associate import (
    AssociationConfig,
    associate_stream,
    load_associations,
    save_associations,
)
from video2plan.evalkit import evaluate, save_report, timeline_export
from video2plan.fixtures import SCENARIOS, generate_fixture, write_fixture
from video2plan.grammar import (
    is_grasp_only,
    load_trees,
    parse_segments,
    save_trees,
    write_dot,
)
from video2plan.ingest import default_lexicon, load_lexicon, load_stream
from video2plan.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    reading,
    run_pipeline,
    stage_errors,
    version_info,
)
from video2plan.plan import (
    PrimitiveLibrary,
    build_graph,
    export_plan,
    load_plan,
    merge_segments,
)
from video2plan.recognize import (
    INDIVIDUAL_ACTIONS,
    RecognitionConfig,
    build_bigram_table,
    load_recognized,
    load_table,
    mini_table,
    read_actions,
    recognize_segments,
    save_recognized,
    save_table,
)
from video2plan.segment import (
    SegmentationConfig,
    combine_person_segments,
    load_segments,
    save_segments,
    segment_by_person,
    segment_stream,
    timeline_frame,
)
from video2plan.simulate import DurationModel, check_trace, run, save_trace

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "VIDEO2PLAN_LOG_LEVEL"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _lexicon(path):
    return load_lexicon(path) if path else default_lexicon()


def _library(path):
    return PrimitiveLibrary.from_file(path) if path else PrimitiveLibrary.default()


def _segmentation_config(args):
    values = {
        "lambda_reg": args.lambda_reg,
        "max_breakpoints": args.max_breakpoints,
        "min_gain": args.min_gain,
        "min_segment_s": args.min_segment_s,
    }
    return {key: value for key, value in values.items() if value is not None}


def _association_config(args):
    values = {
        "margin": args.margin,
        "tau": args.tau,
        "persistence": args.persistence,
        "ingredient_cap": args.ingredient_cap,
    }
    return {key: value for key, value in values.items() if value is not None}


def cmd_validate(args):
    with reading("validate"):
        stream = load_stream(args.stream, lexicon_path=args.lexicon)
    print(
        f"{args.stream}: {len(stream)} frames at {stream.fps:g} fps, "
        f"hands {', '.join(stream.hand_keys()) or '-'}"
    )


def cmd_segment(args):
    with reading("segment"):
        stream = load_stream(args.stream, lexicon_path=args.lexicon)
    with stage_errors("segment"):
        cfg = SegmentationConfig(**_segmentation_config(args))
        if args.per_person:
            per_person = segment_by_person(stream, cfg)
            stem, ext = os.path.splitext(args.out)
            for person, person_segments in per_person.items():
                save_segments(person_segments, f"{stem}_{person}{ext}")
            segments = combine_person_segments(per_person, stream.length)
        else:
            segments = segment_stream(stream, cfg)
        save_segments(segments, args.out)
        if args.timeline:
            timeline_frame(stream, segments).to_csv(args.timeline, index=False)
    logger.info("%d segments written to %s", len(segments), args.out)


def cmd_associate(args):
    with reading("associate"):
        stream = load_stream(args.stream, lexicon_path=args.lexicon)
        segments = load_segments(args.segments)
        cfg = AssociationConfig(**_association_config(args))
    with stage_errors("associate"):
        save_associations(associate_stream(stream, segments, cfg), args.out)


def cmd_corpus_build(args):
    with reading("corpus-build"):
        lexicon = _lexicon(args.lexicon)
        actions = read_actions(args.actions) if args.actions else INDIVIDUAL_ACTIONS
    with stage_errors("corpus-build"):
        table = build_bigram_table(
            args.general,
            args.recipe,
            actions=actions,
            objects=sorted(lexicon),
            epsilon=args.epsilon,
        )
        save_table(table, args.out)


def cmd_recognize(args):
    with reading("recognize"):
        records = load_associations(args.associations)
        table = load_table(args.table) if args.table else mini_table()
        lexicon = _lexicon(args.lexicon)
    with stage_errors("recognize"):
        segments = recognize_segments(
            records, table, lexicon, RecognitionConfig(), args.fps
        )
        save_recognized(segments, args.out)


def cmd_parse(args):
    with reading("parse"):
        segments = load_recognized(args.recognized)
    with stage_errors("parse"):
        entries = parse_segments(segments)
        save_trees(entries, args.out)
        if args.dot:
            os.makedirs(args.dot, exist_ok=True)
            for i, entry in enumerate(entries):
                write_dot(
                    entry.tree,
                    os.path.join(args.dot, f"{i:04d}_{entry.hand}.dot"),
                )


def cmd_plan(args):
    with reading("plan"):
        entries = load_trees(args.trees)
        lexicon = _lexicon(args.lexicon)
        library = _library(args.library)
    with stage_errors("plan"):
        merged = merge_segments(entries, lexicon)
        if args.merged:
            save_trees(merged, args.merged)
        graph = build_graph(merged, library)
        export_plan(graph, args.out, format=args.format)
        if args.dot:
            export_plan(graph, args.dot, format="dot")


def cmd_simulate(args):
    with reading("simulate"):
        graph = load_plan(args.plan)
        durations = DurationModel()
        if args.durations:
            durations = DurationModel.from_file(args.durations)
    with stage_errors("simulate"):
        trace = run(graph, durations)
        violations = check_trace(trace, graph)
        if violations:
            raise RuntimeError("trace violates the plan: " + "; ".join(violations))
        save_trace(trace, args.out)
    print(f"makespan {trace.makespan:g} s")


def cmd_eval(args):
    with reading("eval"):
        pred = [e for e in load_trees(args.pred) if not is_grasp_only(e.tree)]
        truth = load_trees(args.truth)
    with stage_errors("eval"):
        report = evaluate(pred, truth)
        save_report(report, args.report)
        if args.timeline:
            timeline_export(pred, truth).to_csv(args.timeline, index=False)
    print(
        f"precision {report['precision']:.2f} recall {report['recall']:.2f} "
        f"({report['correct']} of {report['detected']} detected, "
        f"{report['truth']} annotated)"
    )


def cmd_run(args):
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_overrides(
        stream=args.stream,
        lexicon=args.lexicon,
        table=args.table,
        truth=args.truth,
        library=args.library,
        durations=args.durations,
        output_dir=args.output_dir,
        stages=tuple(args.stages.split(",")) if args.stages else None,
        plan_format=args.format,
        per_person=args.per_person,
        segmentation=_segmentation_config(args) or None,
    )
    manifest = run_pipeline(cfg)
    print(json.dumps(manifest["metrics"], sort_keys=True))


def cmd_fixture(args):
    names = sorted(SCENARIOS) if args.name == "all" else [args.name]
    for name in names:
        fixture = generate_fixture(name, noise=args.noise, random_state=args.seed)
        directory = args.out if len(names) == 1 else os.path.join(args.out, name)
        write_fixture(fixture, directory)
        logger.info("fixture %s written to %s", name, directory)


def cmd_version(args):
    print(json.dumps(version_info(), sort_keys=True))


def _add_segmentation_options(parser):
    parser.add_argument("--lambda", "--lambda-reg", dest="lambda_reg", type=float)
    parser.add_argument(
        "--max-k", "--max-breakpoints", dest="max_breakpoints", type=int
    )
    parser.add_argument("--min-gain", type=float)
    parser.add_argument("--min-segment-s", type=float)
    parser.add_argument(
        "--per-person",
        action="store_true",
        default=None,
        help="segment each person's hands on their own",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="video2plan",
        description="Turn cooking-video detections into action trees and plans.",
    )
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=LOG_LEVELS,
        help=f"logging level (default WARNING, or ${LOG_LEVEL_ENV})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a detection stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("segment", help="segment hand trajectories")
    p.add_argument("--stream", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    p.add_argument("--timeline", help="also write a hand,frame,segment_id CSV")
    _add_segmentation_options(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("associate", help="hand-object and object-object links")
    p.add_argument("--stream", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--persistence", type=int)
    p.add_argument("--ingredient-cap", type=float)
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("corpus-build", help="bigram table from text corpora")
    p.add_argument("--general", required=True)
    p.add_argument("--recipe", required=True)
    p.add_argument("--actions", help="action words, one per line")
    p.add_argument("--lexicon")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus_build)

    p = sub.add_parser("recognize", help="actions and collaborations per segment")
    p.add_argument("--associations", required=True)
    p.add_argument("--table")
    p.add_argument("--lexicon")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("parse", help="action trees of recognized segments")
    p.add_argument("--recognized", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--dot",
        "--dot-dir",
        dest="dot",
        help="also render every tree into this directory",
    )
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("plan", help="merge trees and build the action graph")
    p.add_argument("--trees", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--library")
    p.add_argument("--merged", help="also write the merged timeline")
    p.add_argument("--format", choices=("plan-doc", "dot"), default="plan-doc")
    p.add_argument("--out", required=True)
    p.add_argument("--dot", help="also write the graph description to this path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="execute a plan in logical time")
    p.add_argument("--plan", required=True)
    p.add_argument("--durations")
    p.add_argument("--trace", "--out", dest="out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score predicted trees against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--timeline", help="also write an agent,frame,predicted,truth CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run the whole pipeline")
    p.add_argument("--config")
    p.add_argument("--stream")
    p.add_argument("--lexicon")
    p.add_argument("--table")
    p.add_argument("--truth")
    p.add_argument("--library")
    p.add_argument("--durations")
    p.add_argument("--output-dir")
    p.add_argument("--stages", help="comma separated stages to run")
    p.add_argument("--format", choices=("plan-doc", "dot"))
    _add_segmentation_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fixture", help="write a synthetic scene")
    p.add_argument("--name", required=True, choices=sorted(SCENARIOS) + ["all"])
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=189212)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("version", help="tool and config schema versions")
    p.set_defaults(func=cmd_version)
    return parser


def configure_logging(level=None):
    """Root logging from ``level``, else $VIDEO2PLAN_LOG_LEVEL, else WARNING."""
    level = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    if level not in LOG_LEVELS:
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    logging.captureWarnings(True)
    return level


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.func(args)
    except StageError as err:
        logger.error("%s", err)
        return err.exit_code
    except (ConfigError, ValueError, OSError) as err:
        logger.error("%s", err)
        return 1
    except Exception as err:
        logger.error("%s", err)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
