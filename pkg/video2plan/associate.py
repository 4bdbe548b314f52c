# License: BSD 2 clause
"""Hand-object and object-object association per segment."""
import itertools
import json
import math
from collections import defaultdict, namedtuple
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import joblib
import numpy as np

from video2plan.distances import (
    as_box_array,
    box_jaccard,
    diagonal,
    pairwise_center_distance,
    pairwise_intersection,
    pairwise_jaccard,
)
from video2plan.ingest import ObjectClass, hand_box
from video2plan.utils import iter_jsonl, write_jsonl


@dataclass(frozen=True)
class AssociationConfig:
    """Parameters of association.

    Parameters
    ----------
    margin: float
        Hand box expansion, as a fraction of the longer hand box side.

    ingredient_cap: float
        Nearest-ingredient distance cap in multiples of the hand box diagonal.

    persistence: int or None
        Minimum run of consecutive frames for a link to count; ``None`` means
        ``ceil(fps / 2)``.

    tau: float
        Jaccard threshold for container contents (strict).
    """

    margin: float = 0.0
    ingredient_cap: float = 1.5
    persistence: Optional[int] = None
    tau: float = 0.05
    n_jobs: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.margin) and self.margin >= 0):
            raise ValueError("margin must be finite and non-negative")
        if not (math.isfinite(self.ingredient_cap) and self.ingredient_cap >= 0):
            raise ValueError("ingredient_cap must be finite and non-negative")
        if self.persistence is not None and self.persistence < 1:
            raise ValueError("persistence must be at least 1 frame")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")

    def min_run(self, fps):
        if self.persistence is None:
            return int(math.ceil(fps / 2.0))
        return int(self.persistence)


class LinkKind(Enum):
    TOOL_ON_TARGET = "tool_on_target"
    CONTAINER_HOLDS = "container_holds"


HandObjectLink = namedtuple("HandObjectLink", ["hand", "object_id", "support"])
ObjectObjectLink = namedtuple("ObjectObjectLink", ["source", "target", "kind"])


class AssociationRecord(
    namedtuple(
        "AssociationRecord",
        [
            "segment_id",
            "start_frame",
            "end_frame",
            "hand_links",
            "object_links",
            "labels",
        ],
    )
):
    """Links that survived the persistence filter within one segment.

    ``labels`` maps every object id mentioned by a link to its label.
    """

    __slots__ = ()

    def grasped(self, hand):
        for link in self.hand_links:
            if link.hand == hand:
                return link.object_id
        return None

    def target_of(self, source):
        for link in self.object_links:
            if link.kind is LinkKind.TOOL_ON_TARGET and link.source == source:
                return link.target
        return None

    def contents(self, container):
        return sorted(
            link.target
            for link in self.object_links
            if link.kind is LinkKind.CONTAINER_HOLDS and link.source == container
        )

    def container_of(self, ingredient):
        for link in self.object_links:
            if link.kind is LinkKind.CONTAINER_HOLDS and link.target == ingredient:
                return link.source
        return None


def jaccard(a, b):
    """Jaccard index of two boxes; 0 when their union has zero area."""
    return box_jaccard(a, b)


def _sorted_objects(frame):
    return sorted(frame.objects, key=lambda obj: obj.id)


def associate_hand(frame, hand, lexicon, margin=0.0, cap=1.5, bounds=None):
    """Object grasped by ``hand`` in ``frame``, or None.

    The tool or container with the largest intersection with the hand box
    wins. Without any such overlap the nearest ingredient by center
    distance is taken, provided it lies within ``cap`` hand box diagonals.
    Ties go to the smaller object id.
    """
    objects = _sorted_objects(frame)
    if not objects:
        return None
    box = as_box_array([hand_box(hand, margin, bounds)])
    boxes = as_box_array([obj.box for obj in objects])
    overlap = pairwise_intersection(box, boxes)[0]
    distance = pairwise_center_distance(box, boxes)[0]

    best_index, best_overlap = -1, 0.0
    for i, obj in enumerate(objects):
        if lexicon[obj.label] is ObjectClass.INGREDIENT:
            continue
        if overlap[i] > best_overlap:
            best_index, best_overlap = i, overlap[i]
    if best_index >= 0:
        return objects[best_index].id

    limit = cap * diagonal(box[0])
    best_index, best_distance = -1, np.inf
    for i, obj in enumerate(objects):
        if lexicon[obj.label] is not ObjectClass.INGREDIENT:
            continue
        if distance[i] <= limit and distance[i] < best_distance:
            best_index, best_distance = i, distance[i]
    if best_index >= 0:
        return objects[best_index].id
    return None


def _best_containers(frame, lexicon, tau):
    containers = [
        obj
        for obj in _sorted_objects(frame)
        if lexicon[obj.label] is ObjectClass.CONTAINER
    ]
    ingredients = [
        obj
        for obj in _sorted_objects(frame)
        if lexicon[obj.label] is ObjectClass.INGREDIENT
    ]
    if not containers or not ingredients:
        return {}
    scores = pairwise_jaccard(
        as_box_array([obj.box for obj in ingredients]),
        as_box_array([obj.box for obj in containers]),
    )
    result = {}
    for i, ingredient in enumerate(ingredients):
        best = None
        for j, container in enumerate(containers):
            if scores[i, j] > tau:
                key = (-scores[i, j], container.box.area, container.id)
                if best is None or key < best:
                    best = key
        if best is not None:
            result[ingredient.id] = best[2]
    return result


def container_contents(frame, lexicon, tau=0.05):
    """ContainerHolds links of one frame.

    Each ingredient goes to the container with the largest Jaccard index
    above ``tau``; ties go to the smaller container.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    best = _best_containers(frame, lexicon, tau)
    return [
        ObjectObjectLink(container, ingredient, LinkKind.CONTAINER_HOLDS)
        for ingredient, container in sorted(best.items())
    ]


def associate_objects(frame, grasped, lexicon, tau=0.05):
    """What the grasped object acts on in ``frame``.

    The nearest overlapping container wins, otherwise the nearest
    overlapping ingredient. Ingredients held by a grasped container are its
    contents and never its target.
    """
    source = frame.object(grasped)
    if source is None:
        return None
    others = [obj for obj in _sorted_objects(frame) if obj.id != grasped]
    if not others:
        return None

    held = set()
    if lexicon[source.label] is ObjectClass.CONTAINER:
        held = {
            ingredient
            for ingredient, container in _best_containers(frame, lexicon, tau).items()
            if container == grasped
        }

    box = as_box_array([source.box])
    boxes = as_box_array([obj.box for obj in others])
    overlap = pairwise_intersection(box, boxes)[0]
    distance = pairwise_center_distance(box, boxes)[0]
    for wanted in (ObjectClass.CONTAINER, ObjectClass.INGREDIENT):
        best_index, best_distance = -1, np.inf
        for i, obj in enumerate(others):
            if lexicon[obj.label] is not wanted or obj.id in held:
                continue
            if overlap[i] > 0.0 and distance[i] < best_distance:
                best_index, best_distance = i, distance[i]
        if best_index >= 0:
            return ObjectObjectLink(
                grasped, others[best_index].id, LinkKind.TOOL_ON_TARGET
            )
    return None


def persistent_support(observations, min_run):
    """Frames supporting each value, counting only long enough runs.

    Parameters
    ----------
    observations: list of (frame_index, value)
        Consecutive observations; ``None`` values break runs.

    min_run: int
        Minimum number of consecutive observations of the same value.

    Returns
    -------
    support: dict
        value -> set of frame indices from runs of at least ``min_run``.
    """
    support = defaultdict(set)
    for value, run in itertools.groupby(observations, key=lambda item: item[1]):
        run = list(run)
        if value is not None and len(run) >= min_run:
            support[value].update(frame for frame, _ in run)
    return dict(support)


def dominant(support):
    """Value with the largest support; ties go to the smallest value."""
    if not support:
        return None
    return max(sorted(support), key=lambda value: len(support[value]))


def summarize_segment(stream, segment, cfg=None, segment_id=0):
    """Association record of one segment.

    Per-frame links are computed, runs shorter than the persistence
    threshold discarded and the dominant link per hand kept. Object links
    are then computed for the dominant grasped objects only.
    """
    cfg = cfg or AssociationConfig()
    lexicon = stream.lexicon
    min_run = cfg.min_run(stream.fps)
    frames = stream.frames_between(segment.start_frame, segment.end_frame)

    keys = sorted({hand.key for frame in frames for hand in frame.hands})
    hand_links = []
    for key in keys:
        observations = []
        for frame in frames:
            hand = frame.hand(key)
            grasped = None
            if hand is not None:
                grasped = associate_hand(
                    frame,
                    hand,
                    lexicon,
                    margin=cfg.margin,
                    cap=cfg.ingredient_cap,
                    bounds=stream.bounds,
                )
            observations.append((frame.frame_index, grasped))
        support = persistent_support(observations, min_run)
        if support:
            object_id = dominant(support)
            hand_links.append(
                HandObjectLink(key, object_id, frozenset(support[object_id]))
            )

    grasped_ids = sorted({link.object_id for link in hand_links})
    tool_links = []
    for object_id in grasped_ids:
        observations = []
        for frame in frames:
            link = associate_objects(frame, object_id, lexicon, cfg.tau)
            observations.append((frame.frame_index, link.target if link else None))
        target = dominant(persistent_support(observations, min_run))
        if target is not None:
            tool_links.append(
                ObjectObjectLink(object_id, target, LinkKind.TOOL_ON_TARGET)
            )

    ingredients = sorted(
        {
            obj.id
            for frame in frames
            for obj in frame.objects
            if lexicon[obj.label] is ObjectClass.INGREDIENT
        }
    )
    holds = [_best_containers(frame, lexicon, cfg.tau) for frame in frames]
    content_links = []
    for ingredient in ingredients:
        if ingredient in grasped_ids:
            continue
        observations = [
            (frame.frame_index, held.get(ingredient))
            for frame, held in zip(frames, holds)
        ]
        container = dominant(persistent_support(observations, min_run))
        if container is not None:
            content_links.append(
                ObjectObjectLink(container, ingredient, LinkKind.CONTAINER_HOLDS)
            )

    object_links = tuple(tool_links + content_links)
    mentioned = set(grasped_ids)
    for link in object_links:
        mentioned.update((link.source, link.target))
    labels = {}
    for frame in frames:
        for obj in frame.objects:
            if obj.id in mentioned:
                labels.setdefault(obj.id, obj.label)
    return AssociationRecord(
        segment_id,
        segment.start_frame,
        segment.end_frame,
        tuple(hand_links),
        object_links,
        dict(sorted(labels.items())),
    )


def associate_stream(stream, segments, cfg=None):
    """Association records for every segment, in segment order."""
    cfg = cfg or AssociationConfig()
    return joblib.Parallel(n_jobs=cfg.n_jobs, prefer="threads")(
        joblib.delayed(summarize_segment)(stream, segment, cfg, i)
        for i, segment in enumerate(segments)
    )


def record_to_dict(record):
    return {
        "segment": record.segment_id,
        "start": record.start_frame,
        "end": record.end_frame,
        "hands": [
            {
                "hand": link.hand,
                "object": link.object_id,
                "support": sorted(link.support),
            }
            for link in record.hand_links
        ],
        "objects": [
            {"source": link.source, "target": link.target, "kind": link.kind.value}
            for link in record.object_links
        ],
        "labels": record.labels,
    }


def record_from_dict(document):
    return AssociationRecord(
        int(document["segment"]),
        int(document["start"]),
        int(document["end"]),
        tuple(
            HandObjectLink(item["hand"], item["object"], frozenset(item["support"]))
            for item in document["hands"]
        ),
        tuple(
            ObjectObjectLink(item["source"], item["target"], LinkKind(item["kind"]))
            for item in document["objects"]
        ),
        dict(document["labels"]),
    )


def save_associations(records, path):
    write_jsonl([record_to_dict(record) for record in records], path)


def load_associations(path):
    records = []
    for line_number, text in iter_jsonl(path):
        try:
            records.append(record_from_dict(json.loads(text)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise ValueError(
                f"malformed association record at line {line_number}: {err}"
            )
    return records
