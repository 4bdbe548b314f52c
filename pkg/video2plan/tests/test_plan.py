import json

import pytest
import numpy as np

from video2plan.grammar import TreeEntry, VisualSentence, parse, tree_to_directive
from video2plan.plan import (
    DecompositionError,
    PlanError,
    PrimitiveLibrary,
    decompose,
    export_plan,
    load_plan,
    merge_key,
    merge_segments,
    plan_from_dict,
    plan_from_trees,
    plan_to_dict,
)

KINDS = {
    "LH_P1": "H",
    "RH_P1": "H",
    "LH_P2": "H",
    "RH_P2": "H",
    "cut": "A",
    "stir": "A",
    "pour": "A",
    "spread": "A",
    "transfer": "A",
    "handover": "C",
    "holding": "C",
}


def tree(*words):
    return parse(VisualSentence([(KINDS.get(word, "O"), word) for word in words]))


def entry(start, end, *words, grasped=None, segment=None):
    hand = words[0]
    return TreeEntry(segment, start, end, hand, hand[-2:], tree(*words), grasped)


def test_cut_then_spread_with_same_knife(library, lexicon):
    entries = [
        entry(0, 90, "RH_P1", "knife", "cut", "onion", grasped="knife1"),
        entry(90, 180, "RH_P1", "knife", "spread", "butter", grasped="knife1"),
    ]
    graph = plan_from_trees(entries, library, lexicon)
    kinds = [graph.graph.nodes[n]["kind"] for n in graph.lanes["P1"]]
    assert kinds == ["grasp", "engage", "actuate", "engage", "actuate", "place"]
    assert graph.actuates() == [("P1", "cut"), ("P1", "spread")]
    assert graph.edges("lane") == [(i, i + 1) for i in range(5)]
    assert graph.sync_edges == []


def test_different_knives_keep_place_and_grasp(library, lexicon):
    entries = [
        entry(0, 90, "RH_P1", "knife", "cut", "onion", grasped="knife1"),
        entry(90, 180, "RH_P1", "knife", "spread", "butter", grasped="knife2"),
    ]
    graph = plan_from_trees(entries, library, lexicon)
    assert len(graph.lanes["P1"]) == 8


def test_decompose(library):
    cut = tree("RH_P1", "knife", "cut", "onion")
    (directive,) = tree_to_directive(cut, 4, "knife1")
    primitives = decompose(directive, library)
    assert [p.kind for p in primitives] == ["grasp", "engage", "actuate", "place"]
    grasp, engage, actuate, place = primitives
    assert (grasp.object, engage.target, place.object) == ("knife", "onion", "knife")
    assert actuate.params == {"event": 4, "action": "cut", "motion": "cut"}

    (transfer,) = tree_to_directive(
        tree("RH_P1", "board", "transfer", "chicken", "board", "pot")
    )
    steps = decompose(transfer, library)
    assert [(p.kind, p.target or p.params.get("motion")) for p in steps[1:5]] == [
        ("engage", "board"),
        ("actuate", "scoop"),
        ("engage", "pot"),
        ("actuate", "dump"),
    ]

    (grasp_only,) = tree_to_directive(tree("RH_P1", "knife"))
    with pytest.raises(DecompositionError):
        decompose(grasp_only, library)
    small = PrimitiveLibrary({"cut": library.actions["cut"]})
    (stir,) = tree_to_directive(tree("RH_P1", "spoon", "stir", "pot"))
    with pytest.raises(DecompositionError, match="unknown action 'stir'"):
        decompose(stir, small)
    with pytest.raises(ValueError):
        PrimitiveLibrary({"cut": {"steps": [{"kind": "wave"}]}})


def test_merge_identical_and_different(lexicon):
    cut = [
        entry(0, 30, "RH_P1", "knife", "cut", "onion", segment=0),
        entry(30, 60, "RH_P1", "knife", "cut", "onion", segment=1),
    ]
    (merged,) = merge_segments(cut, lexicon)
    assert (merged.start_frame, merged.end_frame, merged.segment_id) == (0, 60, 0)

    mixed = [cut[0], entry(30, 60, "RH_P1", "knife", "stir", "pot")]
    assert len(merge_segments(mixed, lexicon)) == 2

    gap = [cut[0], entry(40, 60, "RH_P1", "knife", "cut", "onion")]
    assert len(merge_segments(gap, lexicon)) == 2

    other_hand = [cut[0], entry(30, 60, "LH_P1", "knife", "cut", "onion")]
    assert len(merge_segments(other_hand, lexicon)) == 2


def test_merge_keeps_most_ingredients(lexicon):
    entries = [
        entry(0, 30, "RH_P1", "spoon", "stir", "pot"),
        entry(30, 60, "RH_P1", "spoon", "stir", "flour", "pot"),
        entry(60, 90, "RH_P1", "spoon", "stir", "pot"),
    ]
    assert merge_key(entries[0].tree, lexicon) == merge_key(entries[1].tree, lexicon)
    (merged,) = merge_segments(entries, lexicon)
    assert merged.tree == entries[1].tree
    assert (merged.start_frame, merged.end_frame) == (0, 90)


def test_grasp_only_is_absorbed(lexicon):
    entries = [
        entry(0, 30, "RH_P1", "knife"),
        entry(30, 90, "RH_P1", "knife", "cut", "onion"),
        entry(90, 120, "RH_P1", "knife"),
        entry(120, 150, "RH_P1", "spoon"),
    ]
    merged = merge_segments(entries, lexicon)
    assert [(m.start_frame, m.end_frame) for m in merged] == [(0, 120), (120, 150)]
    assert merged[0].tree == entries[1].tree


def test_event_ids_count_actions_only(library, lexicon):
    entries = [
        entry(0, 30, "LH_P2", "bowl"),
        entry(0, 90, "RH_P1", "knife", "cut", "onion", grasped="knife1"),
        entry(90, 180, "RH_P1", "spoon", "stir", "pot", grasped="spoon1"),
    ]
    graph = plan_from_trees(entries, library, lexicon)
    assert graph.agents == ["P1"]
    events = sorted({graph.graph.nodes[n]["params"]["event"] for n in graph.nodes()})
    assert events == [0, 1]


POOL = [
    ("knife",),
    ("spoon",),
    ("bowl",),
    ("knife", "cut", "onion"),
    ("knife", "cut", "tomato", "board"),
    ("spoon", "stir", "pot"),
    ("spoon", "stir", "flour", "pot"),
    ("bowl", "pour", "pot"),
    ("bowl", "pour", "flour", "pot"),
]


def test_merge_is_idempotent(lexicon, seed):
    rng = np.random.RandomState(seed)
    for _ in range(500):
        entries = []
        for hand in ("LH_P1", "RH_P2"):
            start = 0
            for _ in range(rng.randint(1, 9)):
                if rng.uniform() < 0.2:
                    start += 15
                end = start + 30 * rng.randint(1, 4)
                entries.append(entry(start, end, hand, *POOL[rng.randint(len(POOL))]))
                start = end
        merged = merge_segments(entries, lexicon)
        assert merge_segments(merged, lexicon) == merged
        assert len(merged) <= len(entries)
        for hand in ("LH_P1", "RH_P2"):
            spans = [(m.start_frame, m.end_frame) for m in merged if m.hand == hand]
            assert spans == sorted(spans)
            assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))


def test_handover_sync(library, lexicon):
    entries = [
        entry(0, 90, "LH_P1", "lemon", "handover", "RH_P2", "lemon", grasped="lemon1")
    ]
    graph = plan_from_trees(entries, library, lexicon)
    assert graph.agents == ["P1", "P2"]
    giver, receiver = graph.lanes["P1"], graph.lanes["P2"]
    kinds = graph.graph.nodes(data="kind")
    assert [kinds[n] for n in giver] == ["grasp", "engage", "actuate"]
    assert [kinds[n] for n in receiver] == ["engage", "actuate", "place"]
    assert graph.sync_edges == [(giver[1], receiver[1]), (receiver[0], giver[2])]
    assert graph.graph.nodes[giver[1]]["target"] == "RH_P2"


def test_holder_sync(library, lexicon):
    entries = [
        entry(0, 90, "RH_P2", "knife", "cut", "LH_P1", "board", grasped="knife1")
    ]
    graph = plan_from_trees(entries, library, lexicon)
    actor, holder = graph.lanes["P2"], graph.lanes["P1"]
    assert graph.actuates() == [("P1", "hold"), ("P2", "cut")]
    assert graph.graph.nodes[actor[1]]["target"] == "board"
    assert graph.sync_edges == sorted([(holder[1], actor[1]), (actor[2], holder[2])])


def test_plan_document(tmp_path, library, lexicon):
    entries = [
        entry(0, 90, "LH_P1", "lemon", "handover", "RH_P2", "lemon", grasped="lemon1"),
        entry(90, 180, "RH_P2", "knife", "cut", "lemon", grasped="knife1"),
    ]
    graph = plan_from_trees(entries, library, lexicon)
    path = str(tmp_path / "plan.json")
    export_plan(graph, path)
    assert load_plan(path) == graph
    document = plan_to_dict(graph)
    assert set(document) == {"agents", "nodes", "edges", "sync_edges", "lanes"}

    dot = str(tmp_path / "plan.dot")
    export_plan(graph, dot, format="dot")
    with open(dot) as handle:
        assert "release" in handle.read()
    with pytest.raises(ValueError):
        export_plan(graph, dot, format="svg")


def test_invalid_plan_documents(library, lexicon):
    graph = plan_from_trees(
        [entry(0, 90, "RH_P1", "knife", "cut", "onion", grasped="knife1")],
        library,
        lexicon,
    )
    document = plan_to_dict(graph)

    cyclic = json.loads(json.dumps(document))
    cyclic["edges"].append([3, 0])
    with pytest.raises(PlanError, match="cycle"):
        plan_from_dict(cyclic)

    same_agent = json.loads(json.dumps(document))
    same_agent["sync_edges"].append([0, 2])
    with pytest.raises(PlanError, match="cross agents"):
        plan_from_dict(same_agent)

    dangling = json.loads(json.dumps(document))
    dangling["edges"].append([0, 99])
    with pytest.raises(PlanError):
        plan_from_dict(dangling)

    with pytest.raises(PlanError):
        plan_from_dict({"nodes": []})


def test_library_io(tmp_path, library):
    path = str(tmp_path / "library.json")
    library.save(path)
    assert PrimitiveLibrary.from_file(path).actions == library.actions
    assert library.template("handover", "giver")[-1]["motion"] == "release"
    with pytest.raises(DecompositionError):
        library.template("handover", "actor")
