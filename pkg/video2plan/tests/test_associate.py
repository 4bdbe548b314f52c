import pytest

from video2plan.associate import (
    AssociationConfig,
    LinkKind,
    associate_hand,
    associate_objects,
    associate_stream,
    container_contents,
    dominant,
    jaccard,
    load_associations,
    persistent_support,
    save_associations,
    summarize_segment,
)
from video2plan.ingest import BoundingBox, DetectionStream
from video2plan.segment import Segment

RIGHT_HAND = ("P1", "Right", [100, 100, 50, 50])


def bowl_frame(make_frame, index, with_pot=True):
    objects = [
        ("bowl1", "bowl", [120, 110, 80, 80]),
        ("flour1", "flour", [140, 130, 30, 30]),
    ]
    if with_pot:
        objects.append(("pot1", "pot", [190, 120, 100, 100]))
    return make_frame(index, hands=[RIGHT_HAND], objects=objects)


def test_knife_on_onion(knife_stream):
    record = summarize_segment(knife_stream, Segment(0, 40, frozenset()))
    assert record.grasped("RH_P1") == "knife1"
    assert record.grasped("LH_P1") is None
    assert record.target_of("knife1") == "onion1"
    assert record.object_links[0].kind is LinkKind.TOOL_ON_TARGET
    assert record.labels == {"knife1": "knife", "onion1": "onion"}
    link = record.hand_links[0]
    assert link.support == frozenset(range(40))


def test_tool_beats_nearer_ingredient(make_frame, lexicon):
    frame = make_frame(
        0,
        hands=[RIGHT_HAND],
        objects=[
            ("onion1", "onion", [110, 110, 30, 30]),
            ("knife1", "knife", [145, 100, 80, 10]),
        ],
    )
    assert associate_hand(frame, frame.hands[0], lexicon) == "knife1"


def test_ingredient_fallback_respects_cap(make_frame, lexicon):
    near = make_frame(
        0, hands=[RIGHT_HAND], objects=[("lemon1", "lemon", [160, 100, 30, 30])]
    )
    far = make_frame(
        0, hands=[RIGHT_HAND], objects=[("lemon1", "lemon", [400, 400, 30, 30])]
    )
    assert associate_hand(near, near.hands[0], lexicon) == "lemon1"
    assert associate_hand(far, far.hands[0], lexicon) is None
    assert associate_hand(far, far.hands[0], lexicon, cap=10.0) == "lemon1"


def test_overlap_ties_go_to_smaller_id(make_frame, lexicon):
    frame = make_frame(
        0,
        hands=[RIGHT_HAND],
        objects=[
            ("spoon2", "spoon", [90, 90, 20, 20]),
            ("spoon1", "spoon", [140, 140, 20, 20]),
        ],
    )
    assert associate_hand(frame, frame.hands[0], lexicon) == "spoon1"


def test_container_contents_and_target(make_frame, lexicon):
    frame = bowl_frame(make_frame, 0)
    links = container_contents(frame, lexicon)
    assert [(link.source, link.target) for link in links] == [("bowl1", "flour1")]
    assert associate_hand(frame, frame.hands[0], lexicon) == "bowl1"
    assert associate_objects(frame, "bowl1", lexicon).target == "pot1"

    alone = bowl_frame(make_frame, 0, with_pot=False)
    # the contents of a grasped container are never its target
    assert associate_objects(alone, "bowl1", lexicon) is None
    with pytest.raises(ValueError):
        container_contents(frame, lexicon, tau=1.5)


def test_transfer_record(make_frame, lexicon):
    frames = [bowl_frame(make_frame, i) for i in range(30)]
    stream = DetectionStream(30.0, frames, lexicon)
    record = summarize_segment(stream, Segment(0, 30, frozenset()))
    assert record.grasped("RH_P1") == "bowl1"
    assert record.target_of("bowl1") == "pot1"
    assert record.contents("bowl1") == ["flour1"]
    assert record.container_of("flour1") == "bowl1"


def test_persistence_filter():
    observations = [(i, "a") for i in range(10)] + [(i, "b") for i in range(10, 30)]
    observations += [(30, None)] + [(i, "a") for i in range(31, 40)]
    support = persistent_support(observations, 15)
    assert set(support) == {"b"}
    assert support["b"] == set(range(10, 30))
    support = persistent_support(observations, 9)
    assert len(support["a"]) == 19
    assert dominant(support) == "b"
    assert dominant({"x": {1, 2}, "w": {3, 4}}) == "w"
    assert dominant({}) is None


def test_flicker_is_dropped(make_frame, lexicon):
    frames = []
    for i in range(40):
        objects = [("knife1", "knife", [130, 120, 100, 14])] if i % 2 == 0 else []
        frames.append(make_frame(i, hands=[RIGHT_HAND], objects=objects))
    stream = DetectionStream(30.0, frames, lexicon)
    record = summarize_segment(stream, Segment(0, 40, frozenset()))
    assert record.hand_links == ()
    record = summarize_segment(
        stream, Segment(0, 40, frozenset()), AssociationConfig(persistence=1)
    )
    assert record.grasped("RH_P1") == "knife1"


def test_associate_stream_and_io(tmp_path, knife_stream):
    segments = [Segment(0, 20, frozenset({"RH_P1"})), Segment(20, 40, frozenset())]
    records = associate_stream(knife_stream, segments, AssociationConfig(n_jobs=2))
    assert [r.segment_id for r in records] == [0, 1]
    assert [r.start_frame for r in records] == [0, 20]
    path = str(tmp_path / "associations.jsonl")
    save_associations(records, path)
    assert load_associations(path) == records

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"segment": 0}\n')
    with pytest.raises(ValueError, match="line 1"):
        load_associations(str(bad))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"margin": -1.0},
        {"ingredient_cap": float("inf")},
        {"persistence": 0},
        {"tau": 2.0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AssociationConfig(**kwargs)


def test_min_run_defaults_to_half_a_second():
    assert AssociationConfig().min_run(30.0) == 15
    assert AssociationConfig().min_run(25.0) == 13
    assert AssociationConfig(persistence=4).min_run(30.0) == 4


def test_jaccard_examples():
    box = BoundingBox(0, 0, 2, 2)
    assert jaccard(box, box) == pytest.approx(1.0)
    assert jaccard(box, BoundingBox(5, 5, 2, 2)) == 0.0
    assert jaccard(box, BoundingBox(1, 0, 2, 2)) == pytest.approx(1.0 / 3.0)
    assert jaccard(BoundingBox(0, 0, 0, 0), BoundingBox(0, 0, 0, 0)) == 0.0
