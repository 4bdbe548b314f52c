# License: BSD 2 clause
"""Scripted synthetic kitchen scenes.

A scene is a dict of objects and timed events moving hands and objects on
a 1280x720 canvas. Rendering it gives a detection stream, the ground truth
trees a human annotator would write, the trees the pipeline is expected to
return and the action graph built from those.

Event operations (``t`` and ``duration`` in seconds):

* ``reach``: move ``hand`` until it overlaps ``object`` on ``side``.
* ``grasp`` / ``release``: attach ``object`` (and ``carry``) to ``hand``, or
  let go of everything it holds.
* ``engage``: move ``hand`` so that the object it holds overlaps ``target``
  from ``side`` while the hand itself stays clear of it.
* ``move`` / ``home``: move ``hand`` to ``to`` or to its rest position.
* ``put``: drop ``object`` into the middle of ``container``.
* ``act``: a ground truth annotation; ``failure`` and ``observed`` record a
  known recognition failure and the sentence actually recognized.
"""
import os
from collections import namedtuple

import numpy as np
from sklearn.utils import check_random_state

from video2plan.grammar import (
    COLLABORATIONS,
    HAND_PATTERN,
    GrammarParseError,
    TreeEntry,
    VisualSentence,
    parse,
    save_trees,
)
from video2plan.ingest import (
    BoundingBox,
    DetectionStream,
    FrameDetections,
    HandDetection,
    ObjectDetection,
    default_lexicon,
    person_of,
    save_lexicon,
    save_stream,
    side_of,
)
from video2plan.plan import PrimitiveLibrary, plan_from_trees, plan_to_dict
from video2plan.recognize import ActionLabel, mini_table, save_table
from video2plan.utils import sha256_file, write_json

FIXTURE_FPS = 30.0
FIXTURE_WIDTH = 1280
FIXTURE_HEIGHT = 720
HAND_SIZE = 50.0
CONTACT_DEPTH = 20.0
HAND_CONFIDENCE = 0.9
HOMES = {
    "LH_P1": (150.0, 600.0),
    "RH_P1": (300.0, 650.0),
    "LH_P2": (980.0, 650.0),
    "RH_P2": (1130.0, 600.0),
}

FIXTURE_FILES = (
    "stream.jsonl",
    "lexicon.json",
    "table.json",
    "truth.jsonl",
    "expected_trees.jsonl",
    "expected_plan.json",
    "config.json",
)


class FixtureError(ValueError):
    pass


Fixture = namedtuple("Fixture", ["name", "stream", "truth", "expected", "plan"])


def _reach(t, hand, object_id, side, duration=1.5):
    return {
        "t": t,
        "op": "reach",
        "hand": hand,
        "object": object_id,
        "side": side,
        "duration": duration,
    }


def _grasp(t, hand, object_id, carry=()):
    event = {"t": t, "op": "grasp", "hand": hand, "object": object_id}
    if carry:
        event["carry"] = list(carry)
    return event


def _engage(t, hand, target, side, duration=1.5, shift=None):
    event = {
        "t": t,
        "op": "engage",
        "hand": hand,
        "target": target,
        "side": side,
        "duration": duration,
    }
    if shift is not None:
        event["shift"] = list(shift)
    return event


def _move(t, hand, to, duration):
    return {"t": t, "op": "move", "hand": hand, "to": list(to), "duration": duration}


def _put(t, object_id, container):
    return {"t": t, "op": "put", "object": object_id, "container": container}


def _release(t, hand):
    return {"t": t, "op": "release", "hand": hand}


def _home(t, hand, duration=1.5):
    return {"t": t, "op": "home", "hand": hand, "duration": duration}


def _act(
    hand,
    start,
    end,
    words,
    grasped,
    failure=None,
    observed=None,
    observed_grasped=None,
):
    event = {
        "op": "act",
        "hand": hand,
        "start": start,
        "end": end,
        "sentence": words,
        "grasped": grasped,
    }
    if failure is not None:
        event["failure"] = failure
        event["observed"] = observed
    if observed_grasped is not None:
        event["observed_grasped"] = observed_grasped
    return event


SCENARIOS = {
    "handover_lemon": {
        "duration_s": 12.0,
        "persons": ["P1", "P2"],
        "objects": [{"id": "lemon1", "label": "lemon", "box": [300, 350, 40, 40]}],
        "events": [
            _reach(1.0, "LH_P1", "lemon1", "center"),
            _grasp(2.5, "LH_P1", "lemon1"),
            _move(3.0, "LH_P1", [600, 370], 2.0),
            _move(4.5, "RH_P2", [650, 370], 1.0),
            _release(6.0, "LH_P1"),
            _grasp(6.0, "RH_P2", "lemon1"),
            _home(6.5, "LH_P1"),
            _move(7.0, "RH_P2", [1000, 370], 2.0),
            _act(
                "LH_P1",
                5.0,
                7.0,
                ["LH_P1", "lemon", "handover", "RH_P2", "lemon"],
                "lemon1",
            ),
        ],
    },
    "hold_board_cut": {
        "duration_s": 14.0,
        "persons": ["P1", "P2"],
        "objects": [
            {"id": "board1", "label": "board", "box": [440, 300, 240, 140]},
            {"id": "meat1", "label": "meat", "box": [530, 345, 70, 50]},
            {"id": "knife1", "label": "knife", "box": [760, 470, 100, 14]},
        ],
        "events": [
            _reach(1.0, "LH_P1", "board1", "left"),
            _grasp(2.5, "LH_P1", "board1"),
            _reach(2.0, "RH_P2", "knife1", "right"),
            _grasp(3.5, "RH_P2", "knife1"),
            _engage(4.0, "RH_P2", "board1", "right"),
            _move(9.0, "RH_P2", [865, 477], 1.5),
            _release(10.0, "LH_P1"),
            _home(10.5, "LH_P1"),
            _release(10.5, "RH_P2"),
            _home(11.0, "RH_P2"),
            _act(
                "RH_P2",
                5.5,
                9.0,
                ["RH_P2", "knife", "cut", "LH_P1", "board"],
                "knife1",
            ),
        ],
    },
    "transfer_chicken": {
        "duration_s": 12.0,
        "persons": ["P1"],
        "objects": [
            {"id": "board1", "label": "board", "box": [400, 320, 200, 120]},
            {"id": "chicken1", "label": "chicken", "box": [470, 355, 60, 50]},
            {"id": "pot1", "label": "pot", "box": [640, 300, 160, 160]},
        ],
        "events": [
            _reach(1.0, "RH_P1", "board1", "left"),
            _grasp(2.5, "RH_P1", "board1", carry=["chicken1"]),
            _move(3.0, "RH_P1", [431, 380], 1.0),
            _put(5.0, "chicken1", "pot1"),
            _move(7.0, "RH_P1", [395, 380], 1.0),
            _release(8.5, "RH_P1"),
            _home(9.0, "RH_P1"),
            _act(
                "RH_P1",
                4.0,
                7.0,
                ["RH_P1", "board", "transfer", "chicken", "board", "pot"],
                "board1",
            ),
        ],
    },
    "stir_while_adding_flour": {
        "duration_s": 18.0,
        "persons": ["P1", "P2"],
        "objects": [
            {"id": "pot1", "label": "pot", "box": [560, 330, 160, 130]},
            {"id": "spoon1", "label": "spoon", "box": [420, 430, 14, 90]},
            {"id": "bowl1", "label": "bowl", "box": [860, 340, 120, 100]},
            {"id": "flour1", "label": "flour", "box": [890, 365, 60, 50]},
        ],
        "events": [
            _reach(1.0, "RH_P1", "spoon1", "top"),
            _grasp(2.5, "RH_P1", "spoon1"),
            _engage(3.0, "RH_P1", "pot1", "top"),
            _reach(6.0, "LH_P2", "bowl1", "bottom"),
            _grasp(7.5, "LH_P2", "bowl1", carry=["flour1"]),
            _move(8.0, "LH_P2", [784, 445], 1.5),
            _put(10.5, "flour1", "pot1"),
            _move(11.5, "LH_P2", [920, 445], 1.5),
            _release(13.0, "LH_P2"),
            _home(13.5, "LH_P2"),
            _move(14.0, "RH_P1", [427, 425], 1.5),
            _release(15.5, "RH_P1"),
            _home(16.0, "RH_P1"),
            _act(
                "RH_P1",
                4.5,
                14.0,
                ["RH_P1", "spoon", "stir", "flour", "pot"],
                "spoon1",
            ),
            _act(
                "LH_P2",
                9.5,
                11.5,
                ["LH_P2", "bowl", "transfer", "flour", "bowl", "pot"],
                "bowl1",
            ),
        ],
    },
    "roll_dough": {
        "duration_s": 12.0,
        "persons": ["P1"],
        "objects": [
            {"id": "board1", "label": "board", "box": [480, 320, 240, 140]},
            {"id": "dough1", "label": "dough", "box": [560, 365, 80, 50]},
            {"id": "rolling_pin1", "label": "rolling_pin", "box": [260, 500, 120, 24]},
        ],
        "events": [
            _reach(1.0, "RH_P1", "rolling_pin1", "left"),
            _grasp(2.5, "RH_P1", "rolling_pin1"),
            _engage(3.0, "RH_P1", "board1", "left"),
            _move(8.0, "RH_P1", [255, 512], 1.5),
            _release(9.5, "RH_P1"),
            _home(10.0, "RH_P1"),
            _act(
                "RH_P1",
                4.5,
                8.0,
                ["RH_P1", "rolling_pin", "roll", "dough", "board"],
                "rolling_pin1",
            ),
        ],
    },
    "heat_pan": {
        "duration_s": 13.0,
        "persons": ["P1"],
        "objects": [
            {"id": "stove1", "label": "stove", "box": [500, 300, 260, 180]},
            {"id": "pan1", "label": "pan", "box": [300, 360, 120, 80]},
            {"id": "food1", "label": "food", "box": [330, 380, 60, 40]},
        ],
        "events": [
            _reach(1.0, "RH_P1", "pan1", "left"),
            _grasp(2.5, "RH_P1", "pan1", carry=["food1"]),
            _engage(3.0, "RH_P1", "stove1", "left"),
            _move(9.0, "RH_P1", [295, 400], 1.5),
            _release(10.5, "RH_P1"),
            _home(11.0, "RH_P1"),
            _act("RH_P1", 4.5, 9.0, ["RH_P1", "pan", "heat", "stove"], "pan1"),
        ],
    },
    "cut_patty_with_cup": {
        "duration_s": 11.0,
        "persons": ["P1"],
        "objects": [
            {"id": "patty1", "label": "patty", "box": [560, 360, 80, 60]},
            {"id": "cup1", "label": "cup", "box": [330, 470, 40, 50]},
        ],
        "events": [
            _reach(1.0, "RH_P1", "cup1", "top"),
            _grasp(2.5, "RH_P1", "cup1"),
            _engage(3.0, "RH_P1", "patty1", "top"),
            _move(7.5, "RH_P1", [350, 465], 1.5),
            _release(9.0, "RH_P1"),
            _home(9.5, "RH_P1", 1.0),
            _act(
                "RH_P1",
                4.5,
                7.5,
                ["RH_P1", "cup", "cut", "patty"],
                "cup1",
                failure="A",
                observed=["RH_P1", "cup", "pour", "patty"],
            ),
        ],
    },
    "unannotated_onion": {
        "duration_s": 13.0,
        "persons": ["P2"],
        "objects": [{"id": "knife1", "label": "knife", "box": [760, 470, 100, 14]}],
        "events": [
            _reach(2.0, "RH_P2", "knife1", "right"),
            _grasp(3.5, "RH_P2", "knife1"),
            _move(4.0, "RH_P2", [765, 370], 1.5),
            _move(9.0, "RH_P2", [865, 477], 1.5),
            _release(10.5, "RH_P2"),
            _home(11.0, "RH_P2"),
            _act(
                "RH_P2",
                5.5,
                9.0,
                ["RH_P2", "knife", "cut", "onion"],
                "knife1",
                failure="OO",
            ),
        ],
    },
    "oil_into_wrong_container": {
        "duration_s": 11.0,
        "persons": ["P1"],
        "objects": [
            {"id": "pan1", "label": "pan", "box": [560, 360, 120, 80]},
            {"id": "pot1", "label": "pot", "box": [680, 340, 140, 120]},
            {"id": "oil1", "label": "oil", "box": [420, 440, 30, 70]},
        ],
        "events": [
            _reach(1.0, "RH_P1", "oil1", "top"),
            _grasp(2.5, "RH_P1", "oil1"),
            _engage(3.0, "RH_P1", "pan1", "top", shift=[55, 0]),
            _move(7.5, "RH_P1", [435, 435], 1.5),
            _release(9.0, "RH_P1"),
            _home(9.5, "RH_P1", 1.0),
            _act(
                "RH_P1",
                4.5,
                7.5,
                ["RH_P1", "oil", "pour", "pot"],
                "oil1",
                failure="OO",
                observed=["RH_P1", "oil", "pour", "pan"],
            ),
        ],
    },
    "spurious_oil_grasp": {
        "duration_s": 11.0,
        "persons": ["P1"],
        "objects": [
            {"id": "stove1", "label": "stove", "box": [600, 320, 260, 180]},
            {"id": "pot1", "label": "pot", "box": [640, 340, 140, 120]},
            {"id": "oil1", "label": "oil", "box": [615, 300, 30, 70]},
        ],
        "events": [
            _move(1.0, "RH_P1", [560, 330], 2.0),
            _home(8.0, "RH_P1", 2.0),
            _act(
                "RH_P1",
                3.0,
                8.0,
                ["RH_P1", "pot", "heat", "stove"],
                "pot1",
                failure="HO",
                observed=["RH_P1", "oil", "pour", "pot"],
                observed_grasped="oil1",
            ),
        ],
    },
    "idle": {"duration_s": 4.0, "persons": ["P1", "P2"], "objects": [], "events": []},
}


SUCCESS_SCENARIOS = (
    "handover_lemon",
    "hold_board_cut",
    "transfer_chicken",
    "stir_while_adding_flour",
    "roll_dough",
    "heat_pan",
)
FAILURE_SCENARIOS = (
    "cut_patty_with_cup",
    "unannotated_onion",
    "oil_into_wrong_container",
    "spurious_oil_grasp",
)


def _center(box):
    return box[0] + 0.5 * box[2], box[1] + 0.5 * box[3]


def _reach_point(box, side):
    cx, cy = _center(box)
    half = 0.5 * HAND_SIZE
    if side == "left":
        return box[0] + CONTACT_DEPTH - half, cy
    if side == "right":
        return box[0] + box[2] - CONTACT_DEPTH + half, cy
    if side == "top":
        return cx, box[1] + CONTACT_DEPTH - half
    if side == "bottom":
        return cx, box[1] + box[3] - CONTACT_DEPTH + half
    if side == "center":
        return cx, cy
    raise FixtureError(f"unknown side '{side}'")


def _engage_corner(held, target, side):
    """Top-left corner putting ``held`` CONTACT_DEPTH into ``target``."""
    cx, cy = _center(target)
    w, h = held[2], held[3]
    if side == "left":
        return target[0] + CONTACT_DEPTH - w, cy - 0.5 * h
    if side == "right":
        return target[0] + target[2] - CONTACT_DEPTH, cy - 0.5 * h
    if side == "top":
        return cx - 0.5 * w, target[1] + CONTACT_DEPTH - h
    if side == "bottom":
        return cx - 0.5 * w, target[1] + target[3] - CONTACT_DEPTH
    raise FixtureError(f"unknown side '{side}'")


def _sentence(words):
    if len(words) < 3:
        raise FixtureError(f"an annotation needs an action, got {words}")
    terminals = []
    for i, word in enumerate(words):
        if i == 2:
            if word in COLLABORATIONS:
                terminals.append(("C", word))
            elif word in {label.value for label in ActionLabel}:
                terminals.append(("A", word))
            else:
                raise FixtureError(f"unsupported action '{word}'")
        elif HAND_PATTERN.match(word):
            terminals.append(("H", word))
        else:
            terminals.append(("O", word))
    try:
        return parse(VisualSentence(terminals, hand=words[0]))
    except (GrammarParseError, ValueError) as err:
        raise FixtureError(f"annotation {words} does not parse: {err}")


class _Scene(object):
    def __init__(self, script, lexicon):
        self.persons = list(script.get("persons", []))
        self.hands = {}
        for person in self.persons:
            for side in ("L", "R"):
                key = f"{side}H_{person}"
                if key not in HOMES:
                    raise FixtureError(f"no rest position for hand {key}")
                self.hands[key] = np.array(HOMES[key], dtype=np.float64)
        self.labels = {}
        self.boxes = {}
        for obj in script.get("objects", []):
            if obj["label"] not in lexicon:
                raise FixtureError(f"label '{obj['label']}' is not in the lexicon")
            self.labels[obj["id"]] = obj["label"]
            self.boxes[obj["id"]] = np.array(obj["box"], dtype=np.float64)
        self.attached = {}
        self.motions = {}

    def hand(self, key):
        if key not in self.hands:
            raise FixtureError(f"unknown hand '{key}'")
        return key

    def box(self, object_id):
        if object_id not in self.boxes:
            raise FixtureError(f"unknown object '{object_id}'")
        return self.boxes[object_id]

    def start_motion(self, key, destination, frame, duration, fps):
        frames = max(1, int(round(duration * fps)))
        origin = self.hands[key].copy()
        self.motions[key] = (origin, np.array(destination), frame, frames)

    def held(self, key):
        primary = [
            oid
            for oid, (hand, _, first) in self.attached.items()
            if hand == key and first
        ]
        if not primary:
            raise FixtureError(f"hand {key} engages without holding anything")
        return primary[0]

    def apply(self, event, frame, fps):
        op = event["op"]
        if op == "act":
            return
        if op == "reach":
            key = self.hand(event["hand"])
            point = _reach_point(self.box(event["object"]), event.get("side", "center"))
            self.start_motion(key, point, frame, event["duration"], fps)
        elif op == "move":
            key = self.hand(event["hand"])
            self.start_motion(key, event["to"], frame, event["duration"], fps)
        elif op == "home":
            key = self.hand(event["hand"])
            self.start_motion(key, HOMES[key], frame, event["duration"], fps)
        elif op == "engage":
            key = self.hand(event["hand"])
            held = self.held(key)
            target = self.box(event["target"])
            corner = np.array(_engage_corner(self.boxes[held], target, event["side"]))
            corner += np.array(event.get("shift", (0.0, 0.0)), dtype=np.float64)
            offset = self.attached[held][1]
            self.start_motion(key, corner - offset, frame, event["duration"], fps)
        elif op == "grasp":
            key = self.hand(event["hand"])
            carried = [event["object"]] + list(event.get("carry", []))
            for i, object_id in enumerate(carried):
                offset = self.box(object_id)[:2] - self.hands[key]
                self.attached[object_id] = (key, offset, i == 0)
        elif op == "release":
            key = self.hand(event["hand"])
            self.attached = {
                oid: value for oid, value in self.attached.items() if value[0] != key
            }
        elif op == "put":
            box = self.box(event["object"])
            cx, cy = _center(self.box(event["container"]))
            box[:2] = (cx - 0.5 * box[2], cy - 0.5 * box[3])
            self.attached.pop(event["object"], None)
        else:
            raise FixtureError(f"unknown event operation '{op}'")

    def advance(self, frame):
        for key, (origin, destination, start, frames) in list(self.motions.items()):
            alpha = min(1.0, max(0.0, (frame - start) / frames))
            self.hands[key] = origin + alpha * (destination - origin)
            if alpha >= 1.0:
                del self.motions[key]
        for object_id, (key, offset, _) in self.attached.items():
            self.boxes[object_id][:2] = self.hands[key] + offset


def _render(scene, script, lexicon, fps, noise, random_state):
    events = sorted(
        (e for e in script.get("events", []) if e["op"] != "act"),
        key=lambda e: e["t"],
    )
    n_frames = int(round(script["duration_s"] * fps))
    half = 0.5 * HAND_SIZE
    frames = []
    cursor = 0
    for frame in range(n_frames):
        while cursor < len(events) and int(round(events[cursor]["t"] * fps)) <= frame:
            scene.apply(events[cursor], frame, fps)
            cursor += 1
        scene.advance(frame)
        hands = []
        for key in sorted(scene.hands):
            cx, cy = scene.hands[key] + noise * random_state.standard_normal(2)
            hands.append(
                HandDetection(
                    person_of(key),
                    side_of(key),
                    BoundingBox(
                        round(cx - half, 3), round(cy - half, 3), HAND_SIZE, HAND_SIZE
                    ),
                    HAND_CONFIDENCE,
                )
            )
        objects = [
            ObjectDetection(
                object_id, scene.labels[object_id], BoundingBox(*scene.boxes[object_id])
            )
            for object_id in sorted(scene.boxes)
        ]
        frames.append(FrameDetections(frame, frame / fps, tuple(hands), tuple(objects)))
    return DetectionStream(
        fps, frames, lexicon, width=FIXTURE_WIDTH, height=FIXTURE_HEIGHT
    )


def generate_fixture(name, script=None, noise=1.0, random_state=189212, library=None):
    """Render a scene and derive its annotations, expected trees and plan.

    Parameters
    ----------
    name: str
        Scene name; looked up in :data:`SCENARIOS` when ``script`` is None.

    script: dict (optional)

    noise: float (optional, default 1.0)
        Standard deviation in pixels of the hand center jitter.

    random_state: int, RandomState or None (optional, default 189212)

    library: PrimitiveLibrary (optional)

    Returns
    -------
    fixture: Fixture
    """
    if script is None:
        if name not in SCENARIOS:
            raise FixtureError(
                f"unknown scenario '{name}'; known: " + ", ".join(sorted(SCENARIOS))
            )
        script = SCENARIOS[name]
    lexicon = default_lexicon()
    random_state = check_random_state(random_state)
    scene = _Scene(script, lexicon)
    stream = _render(scene, script, lexicon, FIXTURE_FPS, noise, random_state)

    truth, expected = [], []
    for event in script.get("events", []):
        if event["op"] != "act":
            continue
        hand = scene.hand(event["hand"])
        start = int(round(event["start"] * FIXTURE_FPS))
        end = int(round(event["end"] * FIXTURE_FPS))
        if not 0 <= start < end <= stream.length:
            raise FixtureError(f"annotation span [{start}, {end}) outside the scene")
        entry = TreeEntry(
            None, start, end, hand, person_of(hand), _sentence(event["sentence"]),
            event["grasped"], event.get("failure"),
        )
        truth.append(entry)
        if entry.failure is None:
            expected.append(entry)
        elif event.get("observed"):
            expected.append(
                entry._replace(
                    tree=_sentence(event["observed"]),
                    grasped_id=event.get("observed_grasped", entry.grasped_id),
                    failure=None,
                )
            )

    library = library or PrimitiveLibrary.default()
    plan = plan_from_trees(expected, library, lexicon)
    return Fixture(name, stream, truth, expected, plan)


def write_fixture(fixture, directory):
    """Write a fixture's files and a manifest with their digests.

    The written ``config.json`` runs the whole pipeline on the fixture,
    writing into ``out/`` next to it.
    """
    os.makedirs(directory, exist_ok=True)

    def path(name):
        return os.path.join(directory, name)

    save_stream(fixture.stream, path("stream.jsonl"))
    save_lexicon(fixture.stream.lexicon, path("lexicon.json"))
    save_table(mini_table(), path("table.json"))
    save_trees(fixture.truth, path("truth.jsonl"))
    save_trees(fixture.expected, path("expected_trees.jsonl"))
    write_json(plan_to_dict(fixture.plan), path("expected_plan.json"))
    write_json(
        {
            "stream": "stream.jsonl",
            "lexicon": "lexicon.json",
            "table": "table.json",
            "truth": "truth.jsonl",
            "output_dir": "out",
        },
        path("config.json"),
    )
    write_json(
        {
            "fixture": fixture.name,
            "files": {name: sha256_file(path(name)) for name in FIXTURE_FILES},
        },
        path("manifest.json"),
    )
    return directory
