# License: BSD 2 clause
"""Stage-by-stage orchestration from a detection stream to an evaluated plan.

Every stage reads its inputs from files and writes its outputs to the
output directory, so any stage can be re-run on its own from the persisted
outputs of its predecessors.
"""
import dataclasses
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Tuple

from video2plan import __version__
from video2plan.associate import (
    AssociationConfig,
    associate_stream,
    load_associations,
    save_associations,
)
from video2plan.evalkit import evaluate, save_report, timeline_export
from video2plan.grammar import is_grasp_only, load_trees, parse_segments, save_trees
from video2plan.ingest import default_lexicon, load_lexicon, load_stream
from video2plan.plan import (
    PrimitiveLibrary,
    build_graph,
    export_plan,
    load_plan,
    merge_segments,
)
from video2plan.recognize import (
    RecognitionConfig,
    load_recognized,
    load_table,
    mini_table,
    recognize_segments,
    save_recognized,
)
from video2plan.segment import (
    SegmentationConfig,
    load_segments,
    save_segments,
    combine_person_segments,
    segment_by_person,
    segment_stream,
    timeline_frame,
)
from video2plan.simulate import DurationModel, check_trace, run, save_trace
from video2plan.utils import read_json, sha256_file, write_json

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = "1"
STAGES = ("segment", "associate", "recognize", "parse", "plan", "simulate", "eval")
PLAN_FORMATS = ("plan-doc", "dot")

SEGMENTS_FILE = "segments.txt"
SEGMENT_TIMELINE_FILE = "segment_timeline.csv"
PERSON_SEGMENTS_FILE = "segments_{person}.txt"
ASSOCIATIONS_FILE = "associations.jsonl"
RECOGNIZED_FILE = "recognized.jsonl"
TREES_FILE = "trees.jsonl"
MERGED_FILE = "merged_trees.jsonl"
PLAN_FILE = "plan.json"
PLAN_DOT_FILE = "plan.dot"
TRACE_FILE = "trace.csv"
REPORT_FILE = "report.json"
EVAL_TIMELINE_FILE = "eval_timeline.csv"
MANIFEST_FILE = "manifest.json"


class ConfigError(ValueError):
    pass


class StageError(Exception):
    """A stage that failed; ``stage`` names it and ``cause`` is the error."""

    exit_code = 2

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super(StageError, self).__init__(f"stage '{stage}' failed: {cause}")


class StageInputError(StageError):
    """A stage whose inputs could not be read."""

    exit_code = 1


@contextmanager
def stage_errors(stage):
    try:
        yield
    except StageError:
        raise
    except Exception as err:
        raise StageError(stage, err) from err


@contextmanager
def reading(stage):
    try:
        yield
    except (OSError, ValueError) as err:
        raise StageInputError(stage, err) from err


def version_info():
    return {"tool": __version__, "config_schema": CONFIG_SCHEMA_VERSION}


_PATH_FIELDS = (
    "stream",
    "lexicon",
    "table",
    "library",
    "durations",
    "truth",
    "output_dir",
)
_NESTED = {
    "segmentation": SegmentationConfig,
    "association": AssociationConfig,
    "recognition": RecognitionConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    """Inputs, stage toggles and module parameters of one pipeline run.

    ``table`` None means the bigram table shipped with the package, and
    ``lexicon`` None the shipped cooking lexicon. ``stages`` None enables
    every stage, evaluation only when ``truth`` is set. ``per_person``
    segments each person's hands on their own and cuts the shared timeline
    at every person's boundaries.
    """

    stream: Optional[str] = None
    lexicon: Optional[str] = None
    table: Optional[str] = None
    library: Optional[str] = None
    durations: Optional[str] = None
    truth: Optional[str] = None
    output_dir: str = "out"
    stages: Optional[Tuple[str, ...]] = None
    plan_format: str = "plan-doc"
    per_person: bool = False
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    recognition: RecognitionConfig = field(default_factory=RecognitionConfig)

    def __post_init__(self):
        if self.stages is not None:
            unknown = [stage for stage in self.stages if stage not in STAGES]
            if unknown:
                raise ConfigError(
                    f"unknown stages {unknown}; known: " + ", ".join(STAGES)
                )
            object.__setattr__(self, "stages", tuple(self.stages))
        if self.plan_format not in PLAN_FORMATS:
            raise ConfigError(f"unknown plan format '{self.plan_format}'")

    @classmethod
    def from_dict(cls, document, base_dir="."):
        """Config from a parsed document; relative paths join ``base_dir``."""
        if not isinstance(document, dict):
            raise ConfigError("a pipeline config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(document) - known - {"schema"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        schema = str(document.get("schema", CONFIG_SCHEMA_VERSION))
        if schema != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema '{schema}'")

        values = {}
        for key, value in document.items():
            if key == "schema":
                continue
            if key in _PATH_FIELDS and value is not None:
                value = os.path.normpath(os.path.join(base_dir, value))
            elif key in _NESTED:
                try:
                    value = _NESTED[key](**value)
                except (TypeError, ValueError) as err:
                    raise ConfigError(f"invalid '{key}' section: {err}")
            values[key] = value
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        try:
            document = read_json(path)
        except ValueError as err:
            raise ConfigError(f"malformed config {path}: {err}")
        return cls.from_dict(document, os.path.dirname(os.path.abspath(path)))

    def with_overrides(self, **overrides):
        """Copy with every override that is not None applied."""
        values = {key: value for key, value in overrides.items() if value is not None}
        for key in _NESTED:
            if isinstance(values.get(key), dict):
                values[key] = dataclasses.replace(getattr(self, key), **values[key])
        return dataclasses.replace(self, **values)

    def enabled_stages(self):
        if self.stages is not None:
            return self.stages
        return tuple(s for s in STAGES if s != "eval" or self.truth is not None)

    def to_dict(self):
        document = {"schema": CONFIG_SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in _NESTED:
                value = dataclasses.asdict(value)
            elif f.name == "stages" and value is not None:
                value = list(value)
            document[f.name] = value
        return document

    def check(self):
        """Raise ConfigError for anything that would fail before a stage runs."""
        stages = set(self.enabled_stages())
        if stages & {"segment", "associate", "recognize"} and self.stream is None:
            raise ConfigError("stages segment, associate and recognize need a stream")
        if "eval" in stages and self.truth is None:
            raise ConfigError("the eval stage needs a ground truth file")
        for name in ("stream", "lexicon", "table", "library", "durations", "truth"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"{name} file not found: {path}")


def _load_lexicon(cfg):
    return load_lexicon(cfg.lexicon) if cfg.lexicon else default_lexicon()


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def segment_stage(cfg):
    with reading("segment"):
        stream = load_stream(cfg.stream, lexicon_path=cfg.lexicon)
    files = []
    with stage_errors("segment"):
        if cfg.per_person:
            per_person = segment_by_person(stream, cfg.segmentation)
            for person, person_segments in per_person.items():
                name = PERSON_SEGMENTS_FILE.format(person=person)
                save_segments(person_segments, _out(cfg, name))
                files.append(name)
            segments = combine_person_segments(per_person, stream.length)
        else:
            segments = segment_stream(stream, cfg.segmentation)
        save_segments(segments, _out(cfg, SEGMENTS_FILE))
        timeline_frame(stream, segments).to_csv(
            _out(cfg, SEGMENT_TIMELINE_FILE), index=False
        )
    files = [SEGMENTS_FILE, SEGMENT_TIMELINE_FILE] + files
    return files, {"segments": len(segments)}


def associate_stage(cfg):
    with reading("associate"):
        stream = load_stream(cfg.stream, lexicon_path=cfg.lexicon)
        segments = load_segments(_out(cfg, SEGMENTS_FILE))
    with stage_errors("associate"):
        records = associate_stream(stream, segments, cfg.association)
        save_associations(records, _out(cfg, ASSOCIATIONS_FILE))
    return [ASSOCIATIONS_FILE], {}


def recognize_stage(cfg):
    with reading("recognize"):
        stream = load_stream(cfg.stream, lexicon_path=cfg.lexicon)
        records = load_associations(_out(cfg, ASSOCIATIONS_FILE))
        table = load_table(cfg.table) if cfg.table else mini_table()
    with stage_errors("recognize"):
        segments = recognize_segments(
            records, table, stream.lexicon, cfg.recognition, stream.fps
        )
        save_recognized(segments, _out(cfg, RECOGNIZED_FILE))
    return [RECOGNIZED_FILE], {}


def parse_stage(cfg):
    with reading("parse"):
        segments = load_recognized(_out(cfg, RECOGNIZED_FILE))
    with stage_errors("parse"):
        entries = parse_segments(segments)
        save_trees(entries, _out(cfg, TREES_FILE))
    return [TREES_FILE], {"trees": len(entries)}


def plan_stage(cfg):
    with reading("plan"):
        entries = load_trees(_out(cfg, TREES_FILE))
        lexicon = _load_lexicon(cfg)
        library = (
            PrimitiveLibrary.from_file(cfg.library)
            if cfg.library
            else PrimitiveLibrary.default()
        )
    with stage_errors("plan"):
        merged = merge_segments(entries, lexicon)
        graph = build_graph(merged, library)
        save_trees(merged, _out(cfg, MERGED_FILE))
        export_plan(graph, _out(cfg, PLAN_FILE))
        files = [MERGED_FILE, PLAN_FILE]
        if cfg.plan_format == "dot":
            export_plan(graph, _out(cfg, PLAN_DOT_FILE), format="dot")
            files.append(PLAN_DOT_FILE)
    actions = [entry for entry in merged if not is_grasp_only(entry.tree)]
    return files, {
        "merged_trees": len(merged),
        "actions": len(actions),
        "primitives": len(graph),
    }


def simulate_stage(cfg):
    with reading("simulate"):
        graph = load_plan(_out(cfg, PLAN_FILE))
        durations = (
            DurationModel.from_file(cfg.durations) if cfg.durations else DurationModel()
        )
    with stage_errors("simulate"):
        trace = run(graph, durations)
        violations = check_trace(trace, graph)
        if violations:
            raise RuntimeError("trace violates the plan: " + "; ".join(violations))
        save_trace(trace, _out(cfg, TRACE_FILE))
    return [TRACE_FILE], {"makespan": trace.makespan}


def eval_stage(cfg):
    with reading("eval"):
        merged = load_trees(_out(cfg, MERGED_FILE))
        truth = load_trees(cfg.truth)
    with stage_errors("eval"):
        pred = [entry for entry in merged if not is_grasp_only(entry.tree)]
        report = evaluate(pred, truth)
        save_report(report, _out(cfg, REPORT_FILE))
        timeline_export(pred, truth).to_csv(_out(cfg, EVAL_TIMELINE_FILE), index=False)
    return [REPORT_FILE, EVAL_TIMELINE_FILE], {
        "precision": report["precision"],
        "recall": report["recall"],
    }


STAGE_FUNCTIONS = {
    "segment": segment_stage,
    "associate": associate_stage,
    "recognize": recognize_stage,
    "parse": parse_stage,
    "plan": plan_stage,
    "simulate": simulate_stage,
    "eval": eval_stage,
}


def run_pipeline(cfg):
    """Run the enabled stages in order and write ``manifest.json``.

    Parameters
    ----------
    cfg: PipelineConfig

    Returns
    -------
    manifest: dict
        Version info, the config, per-stage output files with their SHA-256
        digests (paths relative to the output directory) and summary
        metrics.

    Raises
    ------
    ConfigError
        Before any stage runs, for a missing input or an inconsistent config.

    StageError
        For the first stage that fails.
    """
    cfg.check()
    os.makedirs(cfg.output_dir, exist_ok=True)
    manifest = {
        "version": version_info(),
        "config": cfg.to_dict(),
        "stages": {},
        "metrics": {},
    }
    for stage in cfg.enabled_stages():
        logger.info("running stage %s", stage)
        files, metrics = STAGE_FUNCTIONS[stage](cfg)
        manifest["stages"][stage] = {
            name: sha256_file(_out(cfg, name)) for name in files
        }
        manifest["metrics"].update(metrics)
        logger.info("stage %s wrote %s", stage, ", ".join(files))
    write_json(manifest, _out(cfg, MANIFEST_FILE))
    return manifest
