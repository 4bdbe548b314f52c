# License: BSD 2 clause
r"""Action recognition from associations.

Individual actions are chosen by naive Bayes over object words,

.. math::
    \hat{A} = \arg\max_A \log P(A) + \sum_k w_{c(O_k)} \log P(O_k | A),

with P(O|A) read from a bigram table built from a general text corpus (tools
and containers, and the prior) and a recipe corpus (ingredients). Transfers
are container changes of an ingredient over time; handover and holding
come from the grasp history of each object across persons.
"""
import json
import math
import os
import re
from collections import defaultdict, namedtuple
from dataclasses import dataclass
from enum import Enum
from warnings import warn

from nltk.stem import PorterStemmer
from scipy.special import logsumexp

from video2plan.associate import LinkKind
from video2plan.ingest import DATA_DIR, ObjectClass, person_of
from video2plan.utils import iter_jsonl, read_json, write_json, write_jsonl

MINI_TABLE_PATH = os.path.join(DATA_DIR, "mini_bigrams.json")


class ActionLabel(Enum):
    CUT = "cut"
    SPREAD = "spread"
    GRIP = "grip"
    STIR = "stir"
    SPRINKLE = "sprinkle"
    SQUEEZE = "squeeze"
    HEAT = "heat"
    WRAP = "wrap"
    ROLL = "roll"
    POUR = "pour"
    COAT = "coat"
    TRANSFER = "transfer"
    HANDOVER = "handover"
    HOLDING = "holding"

    @property
    def is_individual(self):
        return self.value in INDIVIDUAL_ACTIONS

    @property
    def is_collaborative(self):
        return self in (ActionLabel.HANDOVER, ActionLabel.HOLDING)


INDIVIDUAL_ACTIONS = (
    "coat",
    "cut",
    "grip",
    "heat",
    "pour",
    "roll",
    "sprinkle",
    "spread",
    "squeeze",
    "stir",
    "wrap",
)


class CorpusError(ValueError):
    pass


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class RecognitionConfig:
    """Parameters of action recognition.

    The class weights multiply ``log P(O|A)`` for words of that class.
    ``handover_gap_s`` is the largest gap between the giver's and the
    receiver's grasps still read as a handover.
    """

    tool_weight: float = 1.0
    container_weight: float = 1.0
    ingredient_weight: float = 1.0
    deduplicate: bool = True
    handover_gap_s: float = 1.0

    def __post_init__(self):
        for name in ("tool_weight", "container_weight", "ingredient_weight"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative")
        if not (math.isfinite(self.handover_gap_s) and self.handover_gap_s >= 0):
            raise ValueError("handover_gap_s must be finite and non-negative")

    def weight(self, object_class):
        if object_class is ObjectClass.INGREDIENT:
            return self.ingredient_weight
        if object_class is ObjectClass.CONTAINER:
            return self.container_weight
        return self.tool_weight


def _check_subtable(name, subtable, actions):
    if sorted(subtable) != sorted(actions):
        raise TableError(f"{name} table must cover the actions {sorted(actions)}")
    total = 0.0
    for action, entry in subtable.items():
        prior = entry["prior"]
        if not 0.0 < prior <= 1.0:
            raise TableError(f"{name} prior of '{action}' outside (0, 1]")
        total += prior
        values = [entry["unseen"]] + list(entry["objects"].values())
        if not all(0.0 < value <= 1.0 for value in values):
            raise TableError(f"{name} probabilities of '{action}' outside (0, 1]")
    if abs(total - 1.0) > 1e-9:
        raise TableError(f"{name} priors sum to {total}, not 1")


class BigramTable(object):
    """Conditional object probabilities per action, with action priors.

    Parameters
    ----------
    general: dict
        action -> ``{"prior": P(A), "unseen": floor, "objects": {word: P(O|A)}}``
        from the general corpus. Used for tools, containers and the prior.

    recipe: dict
        Same layout, from the recipe corpus. Used for ingredients.

    epsilon: float (optional, default 1e-6)
        Smoothing constant the table was built with.
    """

    def __init__(self, general, recipe, epsilon=1e-6):
        actions = sorted(general)
        for action in actions:
            if action not in INDIVIDUAL_ACTIONS:
                raise TableError(f"'{action}' is not an individual action")
        _check_subtable("general", general, actions)
        _check_subtable("recipe", recipe, actions)
        self.general = general
        self.recipe = recipe
        self.epsilon = float(epsilon)

    @property
    def actions(self):
        return sorted(self.general)

    def prior(self, action):
        return self.general[action]["prior"]

    def probability(self, action, word, subtable="general"):
        entry = (self.recipe if subtable == "recipe" else self.general)[action]
        return entry["objects"].get(word, entry["unseen"])

    def to_dict(self):
        return {"epsilon": self.epsilon, "general": self.general, "recipe": self.recipe}

    @classmethod
    def from_dict(cls, document):
        try:
            return cls(document["general"], document["recipe"], document["epsilon"])
        except (KeyError, TypeError) as err:
            raise TableError(f"malformed bigram table: {err}")


def save_table(table, path):
    write_json(table.to_dict(), path)


def load_table(path):
    try:
        return BigramTable.from_dict(read_json(path))
    except json.JSONDecodeError as err:
        raise TableError(f"malformed bigram table: {err.msg}")


def mini_table():
    """The small table shipped with the package."""
    return load_table(MINI_TABLE_PATH)


def read_sentences(path):
    """Sentences of a plain text corpus, split at line ends and . ! ? ;"""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    sentences = [s.strip() for s in re.split(r"[.!?;\n]+", text) if s.strip()]
    if not sentences:
        raise CorpusError(f"empty corpus: {path}")
    return sentences


def read_actions(path):
    """Action words of a list file: one per line, ``#`` starts a comment."""
    actions = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            word = line.split("#", 1)[0].strip().lower()
            if not word:
                continue
            if word not in INDIVIDUAL_ACTIONS:
                raise CorpusError(
                    f"unknown action '{word}' at line {line_number} of {path}"
                )
            actions.append(word)
    if not actions:
        raise CorpusError(f"no actions listed in {path}")
    return actions


class _Matcher(object):
    """Stemmed word sets of sentences, with multi-word labels joined."""

    def __init__(self, vocabulary):
        self.stemmer = PorterStemmer()
        self.phrases = [
            (re.compile(r"\b" + word.replace("_", r"\s+") + r"\b"), word)
            for word in vocabulary
            if "_" in word
        ]

    def stem(self, word):
        return self.stemmer.stem(word.lower())

    def words(self, sentence):
        sentence = sentence.lower()
        for pattern, word in self.phrases:
            sentence = pattern.sub(word, sentence)
        return {self.stem(token) for token in re.findall(r"[a-z0-9_]+", sentence)}


def _count_subtable(sentences, actions, objects, epsilon, matcher, source):
    action_stems = {action: matcher.stem(action) for action in actions}
    object_stems = {word: matcher.stem(word) for word in objects}
    count_a = dict.fromkeys(actions, 0)
    count_oa = {action: dict.fromkeys(objects, 0) for action in actions}
    for sentence in sentences:
        words = matcher.words(sentence)
        present = [word for word, stem in object_stems.items() if stem in words]
        for action, stem in action_stems.items():
            if stem in words:
                count_a[action] += 1
                for word in present:
                    count_oa[action][word] += 1

    total = sum(count_a.values())
    subtable = {}
    for action in actions:
        if count_a[action] == 0:
            warn(f"Action '{action}' does not occur in {source}; its prior is smoothed")
        denominator = count_a[action] + epsilon * len(objects)
        subtable[action] = {
            "prior": (count_a[action] + epsilon) / (total + epsilon * len(actions)),
            "unseen": epsilon / denominator,
            "objects": {
                word: (count_oa[action][word] + epsilon) / denominator
                for word in sorted(objects)
            },
        }
    return subtable


def build_bigram_table(
    general_path, recipe_path, actions=INDIVIDUAL_ACTIONS, objects=(), epsilon=1e-6
):
    """Estimate a bigram table from two text corpora.

    Parameters
    ----------
    general_path: str
        General purpose corpus; fills the general table and the priors.

    recipe_path: str
        Recipe corpus; fills the recipe (ingredient) table.

    actions: sequence of str (optional)
        Individual action words.

    objects: iterable of str
        Object words, typically the lexicon labels.

    epsilon: float (optional, default 1e-6)
        Additive smoothing.

    Returns
    -------
    table: BigramTable
        ``P(O|A) = (n(O, A) + eps) / (n(A) + eps |objects|)`` and
        ``P(A) = (n(A) + eps) / (sum n + eps |actions|)`` over sentence counts.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    objects = sorted(set(objects))
    if not objects:
        raise ValueError("at least one object word is required")
    actions = sorted(set(actions))
    matcher = _Matcher(objects)
    general = _count_subtable(
        read_sentences(general_path), actions, objects, epsilon, matcher, general_path
    )
    recipe = _count_subtable(
        read_sentences(recipe_path), actions, objects, epsilon, matcher, recipe_path
    )
    return BigramTable(general, recipe, epsilon)


def action_scores(objects, table, lexicon, cfg=None):
    """Log-score of every individual action in the table for ``objects``."""
    cfg = cfg or RecognitionConfig()
    words = sorted(set(objects)) if cfg.deduplicate else sorted(objects)
    scores = {}
    for action in table.actions:
        score = math.log(table.prior(action))
        for word in words:
            object_class = lexicon.get(word, ObjectClass.TOOL)
            subtable = "recipe" if object_class is ObjectClass.INGREDIENT else "general"
            score += cfg.weight(object_class) * math.log(
                table.probability(action, word, subtable)
            )
        scores[action] = score
    return scores


def recognize_individual(objects, table, lexicon, cfg=None):
    """Most likely individual action for a set of object words.

    Parameters
    ----------
    objects: iterable of str
        Labels of the grasped object, its target and contained ingredients.

    table: BigramTable

    lexicon: dict
        label -> ObjectClass, selecting the sub-table of each word.

    cfg: RecognitionConfig (optional)

    Returns
    -------
    (label, score): (ActionLabel, float)
        The argmax and its log-score. Ties go to the lexicographically first
        action.
    """
    objects = list(objects)
    if not objects:
        raise ValueError("at least one object is required")
    scores = action_scores(objects, table, lexicon, cfg)
    best = None
    for action in sorted(scores):
        if best is None or scores[action] > scores[best]:
            best = action
    return ActionLabel(best), scores[best]


def action_posterior(objects, table, lexicon, cfg=None):
    """Normalized posterior over the table's individual actions."""
    scores = action_scores(list(objects), table, lexicon, cfg)
    actions = sorted(scores)
    norm = logsumexp([scores[action] for action in actions])
    return {action: math.exp(scores[action] - norm) for action in actions}


TransferEvent = namedtuple(
    "TransferEvent", ["ingredient", "source", "destination", "segment_id"]
)


def detect_transfer(history):
    """Transfers from container changes.

    Parameters
    ----------
    history: dict
        ingredient id -> ordered list of ``(segment_id, container_id)``.
        Segments where the ingredient was unobserved are simply absent.

    Returns
    -------
    events: list of TransferEvent
        One per change, placed at the first segment of the new container.
    """
    events = []
    for ingredient in sorted(history):
        previous = None
        for segment_id, container in history[ingredient]:
            if container is None:
                continue
            if previous is not None and container != previous:
                events.append(
                    TransferEvent(ingredient, previous, container, segment_id)
                )
            previous = container
    return sorted(events, key=lambda event: (event.segment_id, event.ingredient))


GraspInterval = namedtuple("GraspInterval", ["start", "end", "hands"])

CollaborativeEvent = namedtuple(
    "CollaborativeEvent",
    [
        "label",
        "object_id",
        "first_hand",
        "second_hand",
        "frame",
        "segment_id",
        "tool_id",
    ],
)
CollaborativeEvent.__doc__ = """A handover or holding between two persons.

For a handover ``first_hand`` gives and ``second_hand`` receives. For
holding by two grasps of the same object ``first_hand`` grasped first. When
``tool_id`` is set the event is an action supported by a holder:
``first_hand`` acts with ``tool_id`` on ``object_id``, which
``second_hand`` holds.
"""


def grasp_history(records, gap_frames=0):
    """Grasp intervals per object over all segments.

    Intervals of the same hand on the same object are joined when they are
    at most ``gap_frames`` apart.
    """
    per_hand = defaultdict(list)
    for record in records:
        for link in record.hand_links:
            support = sorted(link.support)
            per_hand[(link.object_id, link.hand)].append((support[0], support[-1] + 1))

    history = defaultdict(list)
    for (object_id, hand), intervals in sorted(per_hand.items()):
        intervals.sort()
        start, end = intervals[0]
        for next_start, next_end in intervals[1:]:
            if next_start <= end + gap_frames:
                end = max(end, next_end)
            else:
                history[object_id].append(GraspInterval(start, end, frozenset([hand])))
                start, end = next_start, next_end
        history[object_id].append(GraspInterval(start, end, frozenset([hand])))
    return {
        object_id: sorted(intervals, key=lambda i: (i.start, i.end, sorted(i.hands)))
        for object_id, intervals in history.items()
    }


def _supported_actions(records):
    events = []
    for record in records:
        for actor in record.hand_links:
            target = record.target_of(actor.object_id)
            if target is None:
                continue
            held = {target, record.container_of(target)} - {None}
            for holder in record.hand_links:
                if person_of(holder.hand) == person_of(actor.hand):
                    continue
                if holder.object_id in held:
                    events.append(
                        CollaborativeEvent(
                            ActionLabel.HOLDING,
                            holder.object_id,
                            actor.hand,
                            holder.hand,
                            record.start_frame,
                            record.segment_id,
                            actor.object_id,
                        )
                    )
    return events


def detect_collaboration(history, gap_frames=30, records=()):
    """Handover and holding events.

    Two grasps of the same object by different persons are a handover when
    the later grasp starts within ``gap_frames`` of the earlier one's end,
    either after it or overlapping it, and outlasts it. Any other
    overlapping pair is a holding. Every pair of grasp intervals yields at
    most one event, so repeated passes of an object give one event each.

    Parameters
    ----------
    history: dict
        object id -> list of GraspInterval.

    gap_frames: int (optional, default 30)
        Largest gap, or overlap, between the giver's release and the
        receiver's grasp.

    records: sequence of AssociationRecord (optional)
        When given, also detect actions on an object held by another person.

    Returns
    -------
    events: list of CollaborativeEvent
        ``segment_id`` is None for events found from the history alone.
    """
    result = []
    for object_id in sorted(history):
        intervals = sorted(
            history[object_id], key=lambda i: (i.start, i.end, sorted(i.hands))
        )
        for i, first in enumerate(intervals):
            for second in intervals[i + 1 :]:
                overlap = min(first.end, second.end) - max(first.start, second.start)
                changes = (
                    first.start < second.start
                    and first.end < second.end
                    and abs(second.start - first.end) <= gap_frames
                )
                if changes:
                    label, frame = ActionLabel.HANDOVER, second.start
                elif overlap > 0:
                    label, frame = ActionLabel.HOLDING, second.start
                else:
                    continue
                pairs = [
                    (a, b)
                    for a in sorted(first.hands)
                    for b in sorted(second.hands)
                    if person_of(a) != person_of(b)
                ]
                for a, b in pairs:
                    result.append(
                        CollaborativeEvent(label, object_id, a, b, frame, None, None)
                    )
    seen = {(e.object_id, e.first_hand, e.second_hand, e.segment_id) for e in result}
    for event in _supported_actions(records):
        key = (event.object_id, event.first_hand, event.second_hand, event.segment_id)
        if key not in seen:
            seen.add(key)
            result.append(event)
    return sorted(
        result, key=lambda e: (e.frame, e.object_id, e.first_hand, e.second_hand)
    )


HandActivity = namedtuple(
    "HandActivity",
    ["hand", "label", "grasped_id", "grasped", "target_ids", "targets", "score"],
)
HandActivity.__doc__ = """What one hand does in a segment.

``targets`` are the object words following the action in the hand's
sentence: the target, preceded by the ingredients it contains, or
``(ingredient, source, destination)`` for a transfer.
"""


class RecognizedSegment(
    namedtuple(
        "RecognizedSegment",
        ["segment_id", "start_frame", "end_frame", "hands", "events", "labels"],
    )
):
    """Per-hand activities and collaborative events of one segment.

    ``labels`` maps every object id mentioned by the segment to its word.
    """

    __slots__ = ()

    def word(self, object_id):
        return self.labels[object_id]

    def activity(self, hand):
        for activity in self.hands:
            if activity.hand == hand:
                return activity
        return None

    def hand_keys(self):
        keys = {activity.hand for activity in self.hands}
        for event in self.events:
            keys.update((event.first_hand, event.second_hand))
        return sorted(keys)


def _individual_activity(record, link, labels, table, lexicon, cfg):
    grasped = link.object_id
    target = record.target_of(grasped)
    if target is None:
        return HandActivity(link.hand, None, grasped, labels[grasped], (), (), None)

    contents = record.contents(target)
    target_ids = tuple(sorted(contents, key=lambda i: (labels[i], i))) + (target,)
    words = [labels[grasped]] + [labels[i] for i in target_ids]
    for object_id in record.contents(grasped):
        words.append(labels[object_id])
    label, score = recognize_individual(words, table, lexicon, cfg)
    return HandActivity(
        link.hand,
        label,
        grasped,
        labels[grasped],
        target_ids,
        tuple(labels[i] for i in target_ids),
        score,
    )


def _transfer_actor(record, event):
    ranked = []
    for link in record.hand_links:
        grasped = link.object_id
        if grasped == event.source:
            rank = 0
        elif grasped == event.ingredient:
            rank = 1
        elif grasped == event.destination:
            rank = 2
        elif record.target_of(grasped) in (
            event.source,
            event.destination,
            event.ingredient,
        ):
            rank = 3
        else:
            continue
        ranked.append((rank, link.hand))
    return min(ranked)[1] if ranked else None


def recognize_segments(records, table, lexicon, cfg=None, fps=30.0):
    """Recognized segments from association records.

    Parameters
    ----------
    records: list of AssociationRecord
        In segment order.

    table: BigramTable

    lexicon: dict

    cfg: RecognitionConfig (optional)

    fps: float (optional, default 30.0)
        Frame rate, for the handover gap.

    Returns
    -------
    segments: list of RecognizedSegment
    """
    cfg = cfg or RecognitionConfig()
    labels = {}
    for record in records:
        labels.update(record.labels)

    activities = []
    for record in records:
        activities.append(
            {
                link.hand: _individual_activity(
                    record, link, labels, table, lexicon, cfg
                )
                for link in record.hand_links
            }
        )

    containers = defaultdict(list)
    for record in records:
        for link in record.object_links:
            if link.kind is LinkKind.CONTAINER_HOLDS:
                containers[link.target].append((record.segment_id, link.source))
    position = {record.segment_id: i for i, record in enumerate(records)}
    for event in detect_transfer(containers):
        i = position[event.segment_id]
        actor = _transfer_actor(records[i], event)
        if actor is None and i > 0:
            i -= 1
            actor = _transfer_actor(records[i], event)
        if actor is None:
            warn(
                f"No hand performs the transfer of {event.ingredient} "
                f"in segment {event.segment_id}"
            )
            continue
        grasped = records[i].grasped(actor)
        ids = (event.ingredient, event.source, event.destination)
        activities[i][actor] = HandActivity(
            actor,
            ActionLabel.TRANSFER,
            grasped,
            labels[grasped],
            ids,
            tuple(labels[object_id] for object_id in ids),
            None,
        )

    gap_frames = int(round(cfg.handover_gap_s * fps))
    events = defaultdict(list)
    history = grasp_history(records, gap_frames)
    for event in detect_collaboration(history, gap_frames, records):
        if event.segment_id is None:
            segment_id = None
            for record in records:
                if record.start_frame <= event.frame < record.end_frame:
                    segment_id = record.segment_id
            if segment_id is None:
                continue
            event = event._replace(segment_id=segment_id)
        events[position[event.segment_id]].append(event)

    result = []
    for i, record in enumerate(records):
        hands = activities[i]
        for event in events[i]:
            second = hands.get(event.second_hand)
            if second is not None:
                hands[event.second_hand] = second._replace(
                    label=None, target_ids=(), targets=(), score=None
                )
            first = hands.get(event.first_hand)
            if first is not None and event.tool_id is None:
                hands[event.first_hand] = first._replace(
                    label=event.label, target_ids=(), targets=(), score=None
                )
        activities_i = tuple(hands[key] for key in sorted(hands))
        mentioned = set()
        for activity in activities_i:
            mentioned.add(activity.grasped_id)
            mentioned.update(activity.target_ids)
        for event in events[i]:
            mentioned.add(event.object_id)
            if event.tool_id is not None:
                mentioned.add(event.tool_id)
        result.append(
            RecognizedSegment(
                record.segment_id,
                record.start_frame,
                record.end_frame,
                activities_i,
                tuple(events[i]),
                {object_id: labels[object_id] for object_id in sorted(mentioned)},
            )
        )
    return result


def _activity_to_dict(activity):
    return {
        "hand": activity.hand,
        "label": activity.label.value if activity.label else None,
        "grasped_id": activity.grasped_id,
        "grasped": activity.grasped,
        "target_ids": list(activity.target_ids),
        "targets": list(activity.targets),
        "score": activity.score,
    }


def _event_to_dict(event):
    return {
        "label": event.label.value,
        "object_id": event.object_id,
        "first_hand": event.first_hand,
        "second_hand": event.second_hand,
        "frame": event.frame,
        "segment": event.segment_id,
        "tool_id": event.tool_id,
    }


def save_recognized(segments, path):
    """Write recognized segments, one line each."""
    write_jsonl(
        [
            {
                "segment": seg.segment_id,
                "start": seg.start_frame,
                "end": seg.end_frame,
                "hands": [_activity_to_dict(a) for a in seg.hands],
                "events": [_event_to_dict(e) for e in seg.events],
                "labels": seg.labels,
            }
            for seg in segments
        ],
        path,
    )


def load_recognized(path):
    segments = []
    for line_number, text in iter_jsonl(path):
        try:
            document = json.loads(text)
            hands = tuple(
                HandActivity(
                    item["hand"],
                    ActionLabel(item["label"]) if item["label"] else None,
                    item["grasped_id"],
                    item["grasped"],
                    tuple(item["target_ids"]),
                    tuple(item["targets"]),
                    item["score"],
                )
                for item in document["hands"]
            )
            events = tuple(
                CollaborativeEvent(
                    ActionLabel(item["label"]),
                    item["object_id"],
                    item["first_hand"],
                    item["second_hand"],
                    item["frame"],
                    item["segment"],
                    item["tool_id"],
                )
                for item in document["events"]
            )
            segments.append(
                RecognizedSegment(
                    int(document["segment"]),
                    int(document["start"]),
                    int(document["end"]),
                    hands,
                    events,
                    dict(document["labels"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise ValueError(
                f"malformed recognized segment at line {line_number}: {err}"
            )
    return segments
