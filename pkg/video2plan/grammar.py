# License: BSD 2 clause
"""Visual sentences and action trees.

The collaborative manipulation grammar, over terminal kinds H (hand),
O (object), A (action) and C (collaboration), is

.. code-block:: text

    HP -> H O | HP AP | HP CP
    AP -> A O | A OP | A HP
    CP -> C HP
    OP -> O O | O OP

Sentences are chart-parsed over their kinds; the leaves of the chosen
derivation are then relabelled with the words.
"""
import json
import re
import sys
from collections import namedtuple

import networkx as nx
from nltk import CFG, Tree
from nltk.parse import EarleyChartParser
from nltk.parse.chart import TreeEdge

from video2plan.ingest import TOKEN_PATTERN, person_of
from video2plan.recognize import ActionLabel
from video2plan.utils import iter_jsonl, write_jsonl


GRAMMAR = CFG.fromstring(
    """
    HP -> H O | HP AP | HP CP
    AP -> A O | A OP | A HP
    CP -> C HP
    OP -> O O | O OP
    H -> 'H'
    O -> 'O'
    A -> 'A'
    C -> 'C'
    """
)

KINDS = ("H", "O", "A", "C")
PRODUCTIONS = {
    "HP": {("H", "O"), ("HP", "AP"), ("HP", "CP")},
    "AP": {("A", "O"), ("A", "OP"), ("A", "HP")},
    "CP": {("C", "HP")},
    "OP": {("O", "O"), ("O", "OP")},
}
HAND_PATTERN = re.compile(r"^[LR]H_[A-Za-z0-9\-]+$")
COLLABORATIONS = (ActionLabel.HANDOVER.value, ActionLabel.HOLDING.value)

_parser = EarleyChartParser(GRAMMAR)


class GrammarParseError(ValueError):
    def __init__(self, message, position=None, terminal=None):
        super(GrammarParseError, self).__init__(message)
        self.position = position
        self.terminal = terminal


def _word_matches(kind, word):
    if not isinstance(word, str):
        return False
    if kind == "H":
        return HAND_PATTERN.match(word) is not None
    if kind == "O":
        return TOKEN_PATTERN.match(word) is not None
    if kind == "C":
        return word in COLLABORATIONS
    if kind == "A":
        return word not in COLLABORATIONS and word in {
            label.value for label in ActionLabel
        }
    return False


class Terminal(namedtuple("Terminal", ["kind", "word"])):
    __slots__ = ()

    def __new__(cls, kind, word):
        if kind not in KINDS:
            raise ValueError(f"unknown terminal kind '{kind}'")
        if not _word_matches(kind, word):
            raise ValueError(f"'{word}' is not a valid {kind} word")
        return super(Terminal, cls).__new__(cls, kind, word)

    def __str__(self):
        return self.word


class VisualSentence(object):
    """Ordered terminals of one hand in one segment.

    Parameters
    ----------
    terminals: sequence of Terminal or (kind, word) pairs

    segment_id: int (optional)

    hand: str (optional)
        Hand key the sentence was built for.
    """

    def __init__(self, terminals, segment_id=None, hand=None):
        self.terminals = tuple(Terminal(*terminal) for terminal in terminals)
        if not self.terminals:
            raise ValueError("a visual sentence needs at least one terminal")
        self.segment_id = segment_id
        self.hand = hand

    def __len__(self):
        return len(self.terminals)

    def __iter__(self):
        return iter(self.terminals)

    def __eq__(self, other):
        if not isinstance(other, VisualSentence):
            return NotImplemented
        return self.terminals == other.terminals

    def __repr__(self):
        return f"VisualSentence({self.words()!r})"

    @property
    def kinds(self):
        return [terminal.kind for terminal in self.terminals]

    def words(self):
        return [terminal.word for terminal in self.terminals]


def _canonical_tree(kinds):
    """Canonical derivation over ``kinds``, or None when there is none.

    A CYK pass keeps, per chart cell and nonterminal, the derivation with
    the smallest bracket string and, for hand phrases, the one with the
    longest left spine with the same tie break. Both orders compose cell
    by cell, so the root entry is the canonical one among all derivations.
    """
    n = len(kinds)
    # (i, j, label) -> (bracket string, tree)
    smallest = {}
    # (i, j) -> (-left spine, bracket string, tree) of hand phrases
    spine = {}
    for i, kind in enumerate(kinds):
        smallest[i, i + 1, kind] = (f"({kind} {kind})", Tree(kind, [kind]))
    for span in range(2, n + 1):
        for i in range(n + 1 - span):
            j = i + span
            for label, bodies in PRODUCTIONS.items():
                for left, right in sorted(bodies):
                    for k in range(i + 1, j):
                        if (i, k, left) not in smallest:
                            continue
                        if (k, j, right) not in smallest:
                            continue
                        r_text, r_tree = smallest[k, j, right]
                        l_text, l_tree = smallest[i, k, left]
                        text = f"({label} {l_text} {r_text})"
                        best = smallest.get((i, j, label))
                        if best is None or text < best[0]:
                            tree = Tree(label, [l_tree, r_tree])
                            smallest[i, j, label] = (text, tree)
                        if label != "HP":
                            continue
                        depth = -1
                        if left == "HP":
                            depth, l_text, l_tree = spine[i, k]
                            depth -= 1
                            text = f"({label} {l_text} {r_text})"
                        best = spine.get((i, j))
                        if best is None or (depth, text) < best[:2]:
                            spine[i, j] = (depth, text, Tree(label, [l_tree, r_tree]))
    best = spine.get((0, n))
    return None if best is None else best[2]


def _relabel(tree, words):
    words = iter(words)

    def fill(node):
        if isinstance(node[0], str):
            return Tree(node.label(), [next(words)])
        return Tree(node.label(), [fill(child) for child in node])

    return fill(tree)


def _first_offending(chart, kinds):
    for j in range(len(kinds)):
        reached = any(
            isinstance(edge, TreeEdge) and edge.length() > 0 and edge.end() == j + 1
            for edge in chart.select(end=j + 1)
        )
        if not reached:
            return j
    return None


def parse(sentence):
    """Canonical action tree of a visual sentence.

    Among all derivations the one attaching action and collaboration
    phrases at the outermost hand phrase (the longest left HP spine) is
    chosen; remaining ties go to the smallest bracketed string, so the
    result is deterministic.

    Parameters
    ----------
    sentence: VisualSentence or sequence of Terminal

    Returns
    -------
    tree: nltk.Tree

    Raises
    ------
    GrammarParseError
        When no derivation exists; names the first terminal at which every
        derivation fails.
    """
    if not isinstance(sentence, VisualSentence):
        sentence = VisualSentence(sentence)
    kinds = sentence.kinds
    words = sentence.words()
    best = _canonical_tree(kinds)
    if best is None:
        chart = _parser.chart_parse(kinds)
        position = _first_offending(chart, kinds)
        if position is None:
            raise GrammarParseError(
                f"incomplete sentence ending at '{words[-1]}'",
                len(words) - 1,
                sentence.terminals[-1],
            )
        terminal = sentence.terminals[position]
        raise GrammarParseError(
            f"no derivation: unexpected {terminal.kind} terminal "
            f"'{terminal.word}' at position {position}",
            position,
            terminal,
        )
    return _relabel(best, words)


def unparse(tree):
    """Left-to-right leaf yield of ``tree`` as a visual sentence."""
    return VisualSentence([(kind, word) for word, kind in tree.pos()])


def is_grasp_only(tree):
    """Whether ``tree`` is a bare hand phrase with no action."""
    return all(kind in ("H", "O") for _, kind in tree.pos())


def validate_tree(tree):
    """Raise GrammarParseError unless every node matches a production."""
    if not isinstance(tree, Tree):
        raise GrammarParseError(f"not a tree: {tree!r}")
    label = tree.label()
    if label in KINDS:
        if len(tree) != 1 or not _word_matches(label, tree[0]):
            raise GrammarParseError(f"malformed terminal {tree_to_string(tree)}")
        return
    children = tuple(
        child.label() if isinstance(child, Tree) else child for child in tree
    )
    if children not in PRODUCTIONS.get(label, ()):
        raise GrammarParseError(
            f"invalid production {label} -> {' '.join(map(str, children))}"
        )
    for child in tree:
        validate_tree(child)


def tree_to_string(tree):
    return tree.pformat(margin=sys.maxsize)


def tree_from_string(text):
    try:
        tree = Tree.fromstring(text)
    except ValueError as err:
        raise GrammarParseError(f"malformed tree string: {err}")
    validate_tree(tree)
    return tree


def _hand_phrase_words(seg, hand, object_id):
    return [("H", hand), ("O", seg.word(object_id))]


def build_sentence(seg, hand):
    """Visual sentence of ``hand`` in a recognized segment, or None.

    None is returned when the hand grasps nothing, or when it is the second
    party of a collaborative event (its phrase is embedded in the first
    party's sentence).
    """
    for event in seg.events:
        if event.second_hand == hand:
            return None

    for event in seg.events:
        if event.first_hand != hand:
            continue
        held = event.object_id
        if event.tool_id is None:
            terminals = (
                _hand_phrase_words(seg, hand, held)
                + [("C", event.label.value)]
                + _hand_phrase_words(seg, event.second_hand, held)
            )
        else:
            actor = seg.activity(hand)
            if actor is None or actor.label is None:
                continue
            terminals = (
                _hand_phrase_words(seg, hand, event.tool_id)
                + [("A", actor.label.value)]
                + _hand_phrase_words(seg, event.second_hand, held)
            )
        return VisualSentence(terminals, seg.segment_id, hand)

    activity = seg.activity(hand)
    if activity is None or activity.grasped_id is None:
        return None
    terminals = [("H", hand), ("O", activity.grasped)]
    if activity.label is not None and activity.targets:
        terminals.append(("A", activity.label.value))
        terminals.extend(("O", word) for word in activity.targets)
    return VisualSentence(terminals, seg.segment_id, hand)


def segment_sentences(seg):
    """Sentences of every hand in a segment, in hand-key order."""
    sentences = []
    for hand in seg.hand_keys():
        sentence = build_sentence(seg, hand)
        if sentence is not None:
            sentences.append(sentence)
    return sentences


class ActionDirective(
    namedtuple(
        "ActionDirective",
        [
            "event_id",
            "agent",
            "hand",
            "action",
            "tool",
            "tool_id",
            "targets",
            "role",
            "partner",
        ],
    )
):
    """One agent's part of an action tree.

    ``action`` is None for a plain grasp. ``role`` is one of giver,
    receiver, holder and actor for collaborative trees; ``partner`` is then
    the other hand.
    """

    __slots__ = ()

    @property
    def object(self):
        if self.action == ActionLabel.TRANSFER.value:
            return self.targets[0]
        return self.tool

    @property
    def src(self):
        if self.action == ActionLabel.TRANSFER.value:
            return self.targets[-2]
        return None

    @property
    def dst(self):
        if self.action == ActionLabel.TRANSFER.value:
            return self.targets[-1]
        return None


def _hand_and_object(phrase):
    while phrase[0].label() == "HP":
        phrase = phrase[0]
    return phrase[0][0], phrase[1][0]


def _attachments(tree):
    attached = []
    while len(tree) == 2 and tree[1].label() in ("AP", "CP"):
        attached.append(tree[1])
        tree = tree[0]
    return list(reversed(attached))


def tree_to_directive(tree, event_id=0, tool_id=None):
    """Directives of every agent taking part in ``tree``.

    Parameters
    ----------
    tree: nltk.Tree
        A valid action tree.

    event_id: int (optional, default 0)
        Shared by all directives of the tree.

    tool_id: str (optional)
        Object id of the acting hand's grasped object.

    Returns
    -------
    directives: tuple of ActionDirective
        The acting hand first; collaborative trees add the partner's
        directive.
    """
    try:
        validate_tree(tree)
    except GrammarParseError as err:
        raise ValueError(f"malformed tree: {err}")
    if tree.label() != "HP":
        raise ValueError(f"malformed tree: root is {tree.label()}, not HP")

    hand, tool = _hand_and_object(tree)
    agent = person_of(hand)
    attachments = _attachments(tree)
    if not attachments:
        return (
            ActionDirective(
                event_id, agent, hand, None, tool, tool_id, (), None, None
            ),
        )

    directives = []
    for phrase in attachments:
        action = phrase[0][0]
        argument = phrase[1]
        if argument.label() == "HP":
            partner, held = _hand_and_object(argument)
            if phrase.label() == "CP" and action == ActionLabel.HANDOVER.value:
                roles = ("giver", "receiver", action)
            elif phrase.label() == "CP":
                roles = ("holder", "actor", action)
            else:
                roles = ("actor", "holder", ActionLabel.HOLDING.value)
            directives.append(
                ActionDirective(
                    event_id,
                    agent,
                    hand,
                    action,
                    tool,
                    tool_id,
                    (held,),
                    roles[0],
                    partner,
                )
            )
            directives.append(
                ActionDirective(
                    event_id,
                    person_of(partner),
                    partner,
                    roles[2],
                    held,
                    None,
                    (tool,),
                    roles[1],
                    hand,
                )
            )
        else:
            targets = tuple(argument.leaves())
            directives.append(
                ActionDirective(
                    event_id, agent, hand, action, tool, tool_id, targets, None, None
                )
            )
    return tuple(directives)


def write_dot(tree, path):
    """Write one tree as a graph description file."""
    graph = nx.DiGraph()

    def add(node, name):
        label = node.label() if isinstance(node, Tree) else node
        graph.add_node(name, label=f'"{label}"')
        if isinstance(node, Tree):
            for i, child in enumerate(node):
                child_name = f"{name}_{i}"
                add(child, child_name)
                graph.add_edge(name, child_name)

    add(tree, "n")
    nx.nx_pydot.write_dot(graph, path)


TreeEntry = namedtuple(
    "TreeEntry",
    [
        "segment_id",
        "start_frame",
        "end_frame",
        "hand",
        "agent",
        "tree",
        "grasped_id",
        "failure",
    ],
    defaults=(None,),
)


def parse_segments(segments):
    """Tree entries of every sentence of every recognized segment."""
    entries = []
    for seg in segments:
        for sentence in segment_sentences(seg):
            activity = seg.activity(sentence.hand)
            entries.append(
                TreeEntry(
                    seg.segment_id,
                    seg.start_frame,
                    seg.end_frame,
                    sentence.hand,
                    person_of(sentence.hand),
                    parse(sentence),
                    activity.grasped_id if activity is not None else None,
                )
            )
    return entries


def entry_to_dict(entry):
    document = {
        "segment": entry.segment_id,
        "start": entry.start_frame,
        "end": entry.end_frame,
        "hand": entry.hand,
        "agent": entry.agent,
        "tree": tree_to_string(entry.tree),
        "grasped_id": entry.grasped_id,
    }
    if entry.failure is not None:
        document["failure"] = entry.failure
    return document


def entry_from_dict(document):
    tree = tree_from_string(document["tree"])
    hand = document.get("hand")
    if hand is None:
        hand, _ = _hand_and_object(tree)
    return TreeEntry(
        document.get("segment"),
        int(document["start"]),
        int(document["end"]),
        hand,
        document.get("agent", person_of(hand)),
        tree,
        document.get("grasped_id"),
        document.get("failure"),
    )


def save_trees(entries, path):
    write_jsonl([entry_to_dict(entry) for entry in entries], path)


def load_trees(path):
    """Read a trees file; also used for ground truth, where ``failure`` may be set."""
    entries = []
    for line_number, text in iter_jsonl(path):
        try:
            entries.append(entry_from_dict(json.loads(text)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise ValueError(f"malformed tree entry at line {line_number}: {err}")
    return entries
