# License: BSD 2 clause
"""Detection stream data model, object lexicon and file ingestion.

A detection stream file holds one JSON document per line. An optional
header line ``{"fps": 30.0, "width": 1280, "height": 720}`` may precede the
frame records; every other line is a frame record::

    {"frame": 0, "time_s": 0.0,
     "hands": [{"person": "P1", "side": "Left", "box": [x, y, w, h],
                "confidence": 0.9}],
     "objects": [{"id": "knife1", "label": "knife", "box": [x, y, w, h]}]}

The lexicon is a sidecar JSON object mapping every label to one of
``"tool"``, ``"container"`` or ``"ingredient"``.
"""
import json
import math
import os
import re
from collections import namedtuple
from enum import Enum

from video2plan.utils import iter_jsonl, read_json, write_json

DEFAULT_FPS = 30.0
SIDES = ("Left", "Right")
TOKEN_PATTERN = re.compile(r"^[A-Za-z0-9_\-]+$")

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
DEFAULT_LEXICON_PATH = os.path.join(DATA_DIR, "lexicon.json")


class ObjectClass(Enum):
    TOOL = "tool"
    CONTAINER = "container"
    INGREDIENT = "ingredient"


class StreamFormatError(ValueError):
    """A stream or lexicon file that does not conform to the format.

    The offending line number, when known, is kept in ``line`` and appended
    to the message.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)
        self.line = line


class BoundingBox(namedtuple("BoundingBox", ["x", "y", "w", "h"])):
    """Axis aligned box in pixels; ``(x, y)`` is the top-left corner."""

    __slots__ = ()

    def __new__(cls, x, y, w, h):
        w = float(w)
        h = float(h)
        if not (w >= 0.0 and h >= 0.0):
            raise ValueError(f"box size must be non-negative, got w={w}, h={h}")
        return super().__new__(cls, float(x), float(y), w, h)

    @property
    def area(self):
        return self.w * self.h

    @property
    def center(self):
        return (self.x + 0.5 * self.w, self.y + 0.5 * self.h)

    def to_list(self):
        return [self.x, self.y, self.w, self.h]


class HandDetection(
    namedtuple("HandDetection", ["person", "side", "box", "confidence"])
):
    __slots__ = ()

    @property
    def key(self):
        return hand_key(self.person, self.side)


ObjectDetection = namedtuple("ObjectDetection", ["id", "label", "box"])


class FrameDetections(
    namedtuple("FrameDetections", ["frame_index", "time_s", "hands", "objects"])
):
    __slots__ = ()

    def hand(self, key):
        for hand in self.hands:
            if hand.key == key:
                return hand
        return None

    def object(self, object_id):
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None


def hand_key(person, side):
    """Grammar word for a hand, e.g. ``hand_key("P1", "Left") == "LH_P1"``."""
    return f"{side[0]}H_{person}"


def person_of(key):
    return key.split("_", 1)[1]


def side_of(key):
    return "Left" if key.startswith("L") else "Right"


class DetectionStream(object):
    """An ordered, validated sequence of frame detections.

    Parameters
    ----------
    fps: float
        Frame rate of the source video, strictly positive.

    frames: sequence of FrameDetections
        Frames in increasing ``frame_index`` order.

    lexicon: dict
        Mapping label -> :class:`ObjectClass`.

    width, height: float (optional, default None)
        Image bounds, when known.
    """

    def __init__(self, fps, frames, lexicon, width=None, height=None):
        fps = float(fps)
        if not (math.isfinite(fps) and fps > 0.0):
            raise ValueError(f"fps must be positive, got {fps}")
        self.fps = fps
        self.frames = tuple(frames)
        self.lexicon = dict(lexicon)
        self.width = width
        self.height = height

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __eq__(self, other):
        if not isinstance(other, DetectionStream):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.frames == other.frames
            and self.lexicon == other.lexicon
            and self.bounds == other.bounds
        )

    def __repr__(self):
        return f"DetectionStream(fps={self.fps}, frames={len(self.frames)})"

    @property
    def bounds(self):
        if self.width is None or self.height is None:
            return None
        return (float(self.width), float(self.height))

    @property
    def length(self):
        """Number of frame indices spanned, ``last frame_index + 1``."""
        if not self.frames:
            return 0
        return self.frames[-1].frame_index + 1

    def hand_keys(self):
        return sorted({hand.key for frame in self.frames for hand in frame.hands})

    def persons(self):
        return sorted({hand.person for frame in self.frames for hand in frame.hands})

    def class_of(self, label):
        return self.lexicon[label]

    def frames_between(self, start, end):
        """Frames with ``start <= frame_index < end``."""
        return [f for f in self.frames if start <= f.frame_index < end]


def hand_box(hand, margin=0.0, bounds=None):
    """Hand box expanded by ``margin * max(w, h)`` on every side.

    Parameters
    ----------
    hand: HandDetection or BoundingBox
        The hand (or its box).

    margin: float (optional, default 0.0)
        Fraction of the longer box side added on each side.

    bounds: (width, height) or None
        Image bounds; the expanded box is clamped to them when given.

    Returns
    -------
    box: BoundingBox
    """
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    box = hand.box if isinstance(hand, HandDetection) else BoundingBox(*hand)
    pad = margin * max(box.w, box.h)
    x0 = box.x - pad
    y0 = box.y - pad
    x1 = box.x + box.w + pad
    y1 = box.y + box.h + pad
    if bounds is not None:
        width, height = bounds
        x0 = min(max(x0, 0.0), width)
        y0 = min(max(y0, 0.0), height)
        x1 = min(max(x1, x0), width)
        y1 = min(max(y1, y0), height)
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def load_lexicon(path):
    """Read a label -> class lexicon file."""
    try:
        document = read_json(path)
    except json.JSONDecodeError as err:
        raise StreamFormatError(f"malformed lexicon: {err.msg}", err.lineno)
    return parse_lexicon(document)


def parse_lexicon(document):
    if not isinstance(document, dict):
        raise StreamFormatError("lexicon must map labels to classes")
    lexicon = {}
    for label, name in document.items():
        if not TOKEN_PATTERN.match(label):
            raise StreamFormatError(f"lexicon label '{label}' is not a single token")
        try:
            lexicon[label] = ObjectClass(name)
        except ValueError:
            raise StreamFormatError(
                f"lexicon label '{label}' has unknown class '{name}'"
            )
    return lexicon


def save_lexicon(lexicon, path):
    write_json({label: cls.value for label, cls in lexicon.items()}, path)


def default_lexicon():
    return load_lexicon(DEFAULT_LEXICON_PATH)


def _number(value, what, line):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise StreamFormatError(f"{what} must be a number", line)
    value = float(value)
    if not math.isfinite(value):
        raise StreamFormatError(f"{what} must be finite", line)
    return value


def _parse_box(value, what, line):
    if not isinstance(value, list) or len(value) != 4:
        raise StreamFormatError(f"{what} box must be [x, y, w, h]", line)
    x, y, w, h = (_number(v, f"{what} box", line) for v in value)
    if w < 0 or h < 0:
        raise StreamFormatError(f"{what} box has negative size", line)
    return BoundingBox(x, y, w, h)


def _parse_hand(record, line):
    if not isinstance(record, dict):
        raise StreamFormatError("hand must be an object", line)
    person = record.get("person")
    if not isinstance(person, str) or not TOKEN_PATTERN.match(person):
        raise StreamFormatError("hand person must be a single token", line)
    side = record.get("side")
    if side not in SIDES:
        raise StreamFormatError(f"hand side must be one of {SIDES}", line)
    box = _parse_box(record.get("box"), "hand", line)
    confidence = _number(record.get("confidence", 1.0), "confidence", line)
    if not 0.0 <= confidence <= 1.0:
        raise StreamFormatError("confidence must lie in [0, 1]", line)
    return HandDetection(person, side, box, confidence)


def _parse_object(record, lexicon, frame_index, line):
    if not isinstance(record, dict):
        raise StreamFormatError("object must be an object", line)
    object_id = record.get("id")
    if not isinstance(object_id, str) or not object_id:
        raise StreamFormatError("object id must be a non-empty string", line)
    label = record.get("label")
    if not isinstance(label, str):
        raise StreamFormatError("object label must be a string", line)
    if label not in lexicon:
        raise StreamFormatError(
            f"unknown label '{label}' in frame {frame_index}", line
        )
    return ObjectDetection(object_id, label, _parse_box(record.get("box"), label, line))


def parse_frame(record, lexicon, line=None):
    """Validate one frame record and build its :class:`FrameDetections`."""
    if not isinstance(record, dict):
        raise StreamFormatError("malformed record", line)
    for key in ("frame", "time_s", "hands", "objects"):
        if key not in record:
            raise StreamFormatError(f"malformed record: missing '{key}'", line)
    frame_index = record["frame"]
    if isinstance(frame_index, bool) or not isinstance(frame_index, int):
        raise StreamFormatError("frame must be an integer", line)
    if frame_index < 0:
        raise StreamFormatError("frame must be non-negative", line)
    time_s = _number(record["time_s"], "time_s", line)
    if time_s < 0:
        raise StreamFormatError("time_s must be non-negative", line)
    if not isinstance(record["hands"], list) or not isinstance(
        record["objects"], list
    ):
        raise StreamFormatError("hands and objects must be arrays", line)

    hands = tuple(_parse_hand(hand, line) for hand in record["hands"])
    keys = [hand.key for hand in hands]
    if len(set(keys)) != len(keys):
        raise StreamFormatError(f"duplicate hand in frame {frame_index}", line)
    objects = tuple(
        _parse_object(obj, lexicon, frame_index, line) for obj in record["objects"]
    )
    ids = [obj.id for obj in objects]
    if len(set(ids)) != len(ids):
        raise StreamFormatError(f"duplicate object id in frame {frame_index}", line)
    return FrameDetections(frame_index, time_s, hands, objects)


def load_stream(path, lexicon_path=None, lexicon=None):
    """Load and validate a detection stream.

    Parameters
    ----------
    path: str
        The stream file.

    lexicon_path: str (optional)
        The lexicon sidecar file. Without it or ``lexicon`` the shipped
        cooking lexicon is used.

    lexicon: dict (optional)
        An already loaded lexicon.

    Returns
    -------
    stream: DetectionStream
        The validated stream. Nothing is returned on error: the first
        problem raises :class:`StreamFormatError` with its line number.
    """
    if lexicon is None:
        lexicon = load_lexicon(lexicon_path) if lexicon_path else default_lexicon()

    fps = DEFAULT_FPS
    width = height = None
    frames = []
    first_time = first_frame = None
    for line_number, text in iter_jsonl(path):
        try:
            record = json.loads(text)
        except json.JSONDecodeError as err:
            raise StreamFormatError(f"malformed record ({err.msg})", line_number)

        if isinstance(record, dict) and "frame" not in record and "fps" in record:
            if frames:
                raise StreamFormatError("header after frame records", line_number)
            fps = _number(record["fps"], "fps", line_number)
            if fps <= 0:
                raise StreamFormatError("fps must be positive", line_number)
            width = record.get("width")
            height = record.get("height")
            continue

        frame = parse_frame(record, lexicon, line_number)
        if frames:
            previous = frames[-1]
            if frame.frame_index <= previous.frame_index:
                raise StreamFormatError("non-monotone frame index", line_number)
            if frame.time_s < previous.time_s:
                raise StreamFormatError("decreasing time_s", line_number)
        else:
            first_time = frame.time_s
            first_frame = frame.frame_index
        expected = (frame.frame_index - first_frame) / fps
        if abs((frame.time_s - first_time) - expected) > 1.0 / fps + 1e-9:
            raise StreamFormatError(
                f"time_s inconsistent with fps {fps:g} in frame {frame.frame_index}",
                line_number,
            )
        frames.append(frame)

    return DetectionStream(fps, frames, lexicon, width=width, height=height)


def frame_record(frame):
    return {
        "frame": frame.frame_index,
        "time_s": frame.time_s,
        "hands": [
            {
                "person": hand.person,
                "side": hand.side,
                "box": hand.box.to_list(),
                "confidence": hand.confidence,
            }
            for hand in frame.hands
        ],
        "objects": [
            {"id": obj.id, "label": obj.label, "box": obj.box.to_list()}
            for obj in frame.objects
        ],
    }


def save_stream(stream, path):
    """Write ``stream`` as a header line followed by one line per frame."""
    header = {"fps": stream.fps}
    if stream.bounds is not None:
        header["width"] = stream.width
        header["height"] = stream.height
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(json.dumps(header))
        handle.write("\n")
        for frame in stream.frames:
            handle.write(json.dumps(frame_record(frame)))
            handle.write("\n")
