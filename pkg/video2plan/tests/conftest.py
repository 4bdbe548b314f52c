import pytest
import numpy as np

from video2plan.ingest import (
    BoundingBox,
    DetectionStream,
    FrameDetections,
    HandDetection,
    ObjectDetection,
    default_lexicon,
)
from video2plan.plan import PrimitiveLibrary
from video2plan.recognize import mini_table


# Making Random Seed as a fixture in case it would be
# needed in tests for random states
@pytest.fixture
def seed():
    return 189212  # 0b101110001100011100


np.random.seed(189212)


@pytest.fixture
def lexicon():
    return default_lexicon()


@pytest.fixture
def table():
    return mini_table()


@pytest.fixture
def library():
    return PrimitiveLibrary.default()


def _make_frame(index, hands=(), objects=(), fps=30.0):
    """Frame from ``(person, side, [x, y, w, h])`` and ``(id, label, box)`` tuples."""
    return FrameDetections(
        index,
        index / fps,
        tuple(HandDetection(p, s, BoundingBox(*box), 0.9) for p, s, box in hands),
        tuple(
            ObjectDetection(i, label, BoundingBox(*box)) for i, label, box in objects
        ),
    )


@pytest.fixture
def knife_stream(lexicon):
    """Right hand of P1 holds a knife on an onion for 40 frames."""
    frames = [
        _make_frame(
            i,
            hands=[
                ("P1", "Right", [100, 100, 50, 50]),
                ("P1", "Left", [600, 600, 50, 50]),
            ],
            objects=[
                ("knife1", "knife", [130, 120, 100, 14]),
                ("onion1", "onion", [210, 100, 40, 40]),
            ],
        )
        for i in range(40)
    ]
    return DetectionStream(30.0, frames, lexicon, width=1280, height=720)


@pytest.fixture
def make_frame():
    return _make_frame
