import json
import logging
import os

import pytest

from video2plan import __version__
from video2plan.cli import LOG_LEVEL_ENV, build_parser, configure_logging, main
from video2plan.pipeline import CONFIG_SCHEMA_VERSION
from video2plan.recognize import load_table
from video2plan.segment import load_segments
from video2plan.simulate import load_trace
from video2plan.utils import read_json


@pytest.fixture
def fixture_dir(tmp_path):
    directory = tmp_path / "scene"
    assert main(["fixture", "--name", "handover_lemon", "--out", str(directory)]) == 0
    return directory


def test_version(capsys):
    assert main(["version"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info == {"tool": __version__, "config_schema": CONFIG_SCHEMA_VERSION}


def test_fixture_command(fixture_dir):
    files = set(os.listdir(str(fixture_dir)))
    assert {"stream.jsonl", "truth.jsonl", "config.json", "manifest.json"} <= files


def test_run_command(fixture_dir, capsys):
    assert main(["run", "--config", str(fixture_dir / "config.json")]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["precision"] == 1.0
    assert os.path.exists(str(fixture_dir / "out" / "manifest.json"))


def test_stage_commands(fixture_dir, tmp_path, capsys):
    stream = str(fixture_dir / "stream.jsonl")
    out = tmp_path / "steps"
    out.mkdir()

    def step(*argv):
        assert main(list(argv)) == 0

    step("validate", "--stream", stream)
    assert "360 frames at 30 fps" in capsys.readouterr().out
    step(
        "segment",
        "--stream",
        stream,
        "--lambda",
        "1.0",
        "--max-k",
        "20",
        "--out",
        str(out / "segments.txt"),
    )
    step(
        "associate",
        "--stream",
        stream,
        "--segments",
        str(out / "segments.txt"),
        "--out",
        str(out / "assoc.jsonl"),
    )
    step(
        "recognize",
        "--associations",
        str(out / "assoc.jsonl"),
        "--table",
        str(fixture_dir / "table.json"),
        "--out",
        str(out / "recognized.jsonl"),
    )
    step(
        "parse",
        "--recognized",
        str(out / "recognized.jsonl"),
        "--out",
        str(out / "trees.jsonl"),
        "--dot",
        str(out / "dot"),
    )
    assert os.listdir(str(out / "dot"))
    step(
        "plan",
        "--trees",
        str(out / "trees.jsonl"),
        "--merged",
        str(out / "merged.jsonl"),
        "--out",
        str(out / "plan.json"),
        "--dot",
        str(out / "plan.dot"),
    )
    assert os.path.getsize(str(out / "plan.json")) > 0
    with open(str(out / "plan.dot")) as handle:
        assert "digraph" in handle.read()
    step(
        "simulate", "--plan", str(out / "plan.json"), "--trace", str(out / "trace.csv")
    )
    assert capsys.readouterr().out.startswith("makespan")
    assert len(load_trace(str(out / "trace.csv"))) > 0
    step(
        "eval",
        "--pred",
        str(out / "merged.jsonl"),
        "--truth",
        str(fixture_dir / "truth.jsonl"),
        "--report",
        str(out / "report.json"),
    )
    assert "precision 1.00 recall 1.00" in capsys.readouterr().out


def test_corpus_build(tmp_path):
    general = tmp_path / "general.txt"
    general.write_text("Cut the onion with a knife. Stir the pot!\n")
    recipe = tmp_path / "recipe.txt"
    recipe.write_text("Cut the onion.\n")
    out = tmp_path / "table.json"
    assert (
        main(
            [
                "corpus-build",
                "--general",
                str(general),
                "--recipe",
                str(recipe),
                "--out",
                str(out),
            ]
        )
        == 0
    )
    assert out.exists()


def test_corpus_build_with_action_list(tmp_path):
    general = tmp_path / "general.txt"
    general.write_text("Cut the onion with a knife. Stir the pot!\n")
    recipe = tmp_path / "recipe.txt"
    recipe.write_text("Cut the onion.\n")
    actions = tmp_path / "actions.txt"
    actions.write_text("# two actions\ncut\n\nstir\n")
    out = tmp_path / "table.json"
    argv = ["corpus-build", "--general", str(general), "--recipe", str(recipe)]
    assert main(argv + ["--actions", str(actions), "--out", str(out)]) == 0
    assert sorted(load_table(str(out)).actions) == ["cut", "stir"]

    actions.write_text("cut\njuggle\n")
    assert main(argv + ["--actions", str(actions), "--out", str(out)]) == 1


def test_segment_per_person(fixture_dir, tmp_path):
    out = tmp_path / "segments.txt"
    argv = ["segment", "--stream", str(fixture_dir / "stream.jsonl"), "--out", str(out)]
    assert main(argv + ["--per-person"]) == 0
    combined = load_segments(str(out))
    for person in ("P1", "P2"):
        own = load_segments(str(tmp_path / f"segments_{person}.txt"))
        assert own[-1].end_frame == combined[-1].end_frame
    config = str(fixture_dir / "config.json")
    assert main(["run", "--config", config, "--per-person"]) == 0
    manifest = read_json(str(fixture_dir / "out" / "manifest.json"))
    assert manifest["config"]["per_person"] is True


SEGMENT_ARGS = ["segment", "--stream", "s", "--out", "o"]
PARSE_ARGS = ["parse", "--recognized", "r", "--out", "o"]


@pytest.mark.parametrize(
    "argv,dest,value",
    [
        (SEGMENT_ARGS + ["--lambda", "0.5"], "lambda_reg", 0.5),
        (SEGMENT_ARGS + ["--lambda-reg", "0.5"], "lambda_reg", 0.5),
        (SEGMENT_ARGS + ["--max-k", "4"], "max_breakpoints", 4),
        (SEGMENT_ARGS, "per_person", None),
        (["run", "--max-breakpoints", "4"], "max_breakpoints", 4),
        (PARSE_ARGS + ["--dot", "d"], "dot", "d"),
        (PARSE_ARGS + ["--dot-dir", "d"], "dot", "d"),
        (["plan", "--trees", "t", "--out", "o", "--dot", "p.dot"], "dot", "p.dot"),
        (
            ["corpus-build", "--general", "g", "--recipe", "r", "--out", "o"],
            "actions",
            None,
        ),
    ],
)
def test_option_spellings(argv, dest, value):
    assert getattr(build_parser().parse_args(argv), dest) == value


def test_exit_codes(tmp_path, fixture_dir):
    assert main(["validate", "--stream", str(tmp_path / "missing.jsonl")]) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["validate", "--stream", str(bad)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    assert main(["run", "--stream", str(bad), "--output-dir", str(tmp_path / "o")]) == 1

    cyclic = tmp_path / "cyclic.json"
    cyclic.write_text(
        json.dumps(
            {
                "nodes": [
                    {"id": 0, "agent": "P1", "kind": "grasp", "params": {}},
                    {"id": 1, "agent": "P1", "kind": "place", "params": {}},
                ],
                "edges": [[0, 1], [1, 0]],
                "sync_edges": [],
                "lanes": {"P1": [0, 1]},
            }
        )
    )
    trace = str(tmp_path / "t.csv")
    assert main(["simulate", "--plan", str(cyclic), "--trace", trace]) == 1
    with pytest.raises(SystemExit):
        main(["fixture", "--name", "juggling", "--out", str(tmp_path)])


def test_log_level(monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV, "debug")
    assert configure_logging() == "DEBUG"
    assert logging.getLogger().level == logging.DEBUG
    assert configure_logging("error") == "ERROR"
    monkeypatch.setenv(LOG_LEVEL_ENV, "loud")
    assert configure_logging() == "WARNING"
    args = build_parser().parse_args(["--log-level", "info", "version"])
    assert args.log_level == "INFO"
