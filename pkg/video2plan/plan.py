# License: BSD 2 clause
"""Merged timelines, motion primitives and the multi-agent action graph."""
import copy
import os
from collections import OrderedDict, defaultdict, namedtuple
from warnings import warn

import networkx as nx

from video2plan.grammar import is_grasp_only, tree_to_directive, unparse
from video2plan.ingest import DATA_DIR, ObjectClass
from video2plan.utils import read_json, write_json

DEFAULT_LIBRARY_PATH = os.path.join(DATA_DIR, "primitives.json")
PRIMITIVE_KINDS = ("grasp", "engage", "actuate", "place")


class DecompositionError(ValueError):
    pass


class PlanError(ValueError):
    pass


def _ingredient_count(tree, lexicon):
    return sum(
        1
        for word, kind in tree.pos()
        if kind == "O" and lexicon.get(word) is ObjectClass.INGREDIENT
    )


def merge_key(tree, lexicon):
    """Terminals of ``tree`` without its ingredient words."""
    return tuple(
        (terminal.kind, terminal.word)
        for terminal in unparse(tree)
        if not (
            terminal.kind == "O"
            and lexicon.get(terminal.word) is ObjectClass.INGREDIENT
        )
    )


def _grasp_pair(tree):
    return tuple(tree.pos()[:2])


def _absorbs(kept, entry):
    """Whether a grasp-only tree is part of the action of its neighbour."""
    a, b = kept.tree, entry.tree
    if is_grasp_only(a) == is_grasp_only(b):
        return False
    return _grasp_pair(a) == _grasp_pair(b)


def merge_segments(entries, lexicon):
    """Merge consecutive entries of each hand showing the same action.

    Entries of one hand merge when their spans are contiguous and their
    trees agree once ingredient words are removed. A grasp-only entry is
    absorbed by a contiguous action entry grasping the same object. The
    merged span is the union; the kept tree is an action tree when there is
    one, then the one with the most ingredient leaves, the earliest on ties.

    Parameters
    ----------
    entries: list of TreeEntry

    lexicon: dict
        label -> ObjectClass.

    Returns
    -------
    merged: list of TreeEntry
        Ordered by start frame, then hand.
    """
    lanes = defaultdict(list)
    for entry in entries:
        lanes[entry.hand].append(entry)

    merged = []
    for hand in sorted(lanes):
        run = None
        for entry in sorted(lanes[hand], key=lambda e: (e.start_frame, e.end_frame)):
            if run is not None and run[-1].end_frame == entry.start_frame:
                kept = _kept(run, lexicon)
                if merge_key(kept.tree, lexicon) == merge_key(
                    entry.tree, lexicon
                ) or _absorbs(kept, entry):
                    run.append(entry)
                    continue
            if run is not None:
                merged.append(_merge_run(run, lexicon))
            run = [entry]
        if run is not None:
            merged.append(_merge_run(run, lexicon))
    return sorted(merged, key=lambda e: (e.start_frame, e.hand))


def _kept(run, lexicon):
    kept = run[0]
    for entry in run[1:]:
        if (not is_grasp_only(entry.tree), _ingredient_count(entry.tree, lexicon)) > (
            not is_grasp_only(kept.tree),
            _ingredient_count(kept.tree, lexicon),
        ):
            kept = entry
    return kept


def _merge_run(run, lexicon):
    return _kept(run, lexicon)._replace(
        segment_id=run[0].segment_id,
        start_frame=run[0].start_frame,
        end_frame=run[-1].end_frame,
    )


MotionPrimitive = namedtuple(
    "MotionPrimitive", ["kind", "agent", "object", "target", "params"]
)


class PrimitiveLibrary(object):
    """Motion primitive templates per action.

    Each action maps either to ``{"steps": [...]}`` or, for collaborative
    actions, to ``{"roles": {role: [...]}}``. A step is a dict with a
    ``kind`` and an ``object``, ``target`` or ``motion`` value; values
    starting with ``$`` are filled from the directive (``$tool``,
    ``$target``, ``$src``, ``$dst``, ``$object``, ``$partner``,
    ``$action``).
    """

    def __init__(self, actions):
        for action, entry in actions.items():
            if "roles" in entry:
                templates = entry["roles"].values()
            else:
                templates = [entry["steps"]]
            for steps in templates:
                for step in steps:
                    if step.get("kind") not in PRIMITIVE_KINDS:
                        raise ValueError(
                            f"unknown primitive kind {step.get('kind')!r} "
                            f"for '{action}'"
                        )
        self.actions = actions

    @classmethod
    def from_file(cls, path):
        return cls(read_json(path)["actions"])

    @classmethod
    def default(cls):
        return cls.from_file(DEFAULT_LIBRARY_PATH)

    def save(self, path):
        write_json({"actions": self.actions}, path)

    def template(self, action, role=None):
        if action not in self.actions:
            raise DecompositionError(
                f"unknown action '{action}'; the library has: "
                + ", ".join(sorted(self.actions))
            )
        entry = self.actions[action]
        if "roles" not in entry:
            return entry["steps"]
        if role not in entry["roles"]:
            raise DecompositionError(
                f"action '{action}' has no template for role {role!r}; roles: "
                + ", ".join(sorted(entry["roles"]))
            )
        return entry["roles"][role]


def _resolve(value, directive):
    if not isinstance(value, str) or not value.startswith("$"):
        return value
    name = value[1:]
    if name == "tool":
        return directive.tool
    if name == "target":
        return directive.targets[-1] if directive.targets else None
    if name == "action":
        return directive.action
    if name == "partner":
        return directive.partner
    if name in ("src", "dst", "object"):
        return getattr(directive, name)
    raise DecompositionError(f"unknown template value '{value}'")


def decompose(directive, library):
    """Motion primitives of one directive.

    Parameters
    ----------
    directive: ActionDirective

    library: PrimitiveLibrary

    Returns
    -------
    primitives: tuple of MotionPrimitive
    """
    if directive.action is None:
        raise DecompositionError("a grasp-only directive has no primitives")
    primitives = []
    for step in library.template(directive.action, directive.role):
        params = {"event": directive.event_id, "action": directive.action}
        if directive.role is not None:
            params["role"] = directive.role
        if "motion" in step:
            params["motion"] = _resolve(step["motion"], directive)
        primitives.append(
            MotionPrimitive(
                step["kind"],
                directive.agent,
                _resolve(step.get("object"), directive),
                _resolve(step.get("target"), directive),
                params,
            )
        )
    return tuple(primitives)


class ActionGraph(object):
    """Primitives of all agents with lane and sync edges.

    Nodes are integer ids carrying a MotionPrimitive's fields as
    attributes. Edges carry ``kind`` ``"lane"`` (within an agent) or
    ``"sync"`` (across agents).
    """

    def __init__(self, graph=None, lanes=None):
        self.graph = graph if graph is not None else nx.DiGraph()
        self.lanes = OrderedDict(sorted((lanes or {}).items()))

    def __len__(self):
        return self.graph.number_of_nodes()

    def __eq__(self, other):
        if not isinstance(other, ActionGraph):
            return NotImplemented
        return (
            dict(self.graph.nodes(data=True)) == dict(other.graph.nodes(data=True))
            and sorted(self.graph.edges(data="kind"))
            == sorted(other.graph.edges(data="kind"))
            and self.lanes == other.lanes
        )

    @property
    def agents(self):
        return list(self.lanes)

    def primitive(self, node):
        data = self.graph.nodes[node]
        return MotionPrimitive(
            data["kind"], data["agent"], data["object"], data["target"], data["params"]
        )

    def nodes(self):
        return sorted(self.graph.nodes)

    def edges(self, kind=None):
        return sorted(
            (u, v)
            for u, v, edge_kind in self.graph.edges(data="kind")
            if kind is None or edge_kind == kind
        )

    @property
    def sync_edges(self):
        return self.edges("sync")

    def actuates(self):
        return sorted(
            (self.graph.nodes[n]["agent"], self.graph.nodes[n]["params"]["motion"])
            for n in self.graph.nodes
            if self.graph.nodes[n]["kind"] == "actuate"
        )

    def check_acyclic(self):
        try:
            cycle = nx.find_cycle(self.graph)
        except nx.NetworkXNoCycle:
            return
        raise PlanError(f"cycle detected: {[edge[:2] for edge in cycle]}")


def _first(nodes, graph, kind):
    for node in nodes:
        if node in graph and graph.nodes[node]["kind"] == kind:
            return node
    return None


def _last(nodes, graph, kind):
    return _first(list(reversed(nodes)), graph, kind)


def build_graph(merged, library):
    """Action graph of a merged timeline.

    Each person is an agent whose lane chains the primitives of its
    directives in timeline order. Event ids number the action entries;
    grasp-only entries contribute nothing. A place followed by a grasp of the same
    object instance by the same agent is elided. Handovers order the
    giver's release after the receiver's engage and the receiver's grasp
    after the giver's engage; holdings bracket the actor's engage..actuate
    span between the holder's hold and place.

    Parameters
    ----------
    merged: list of TreeEntry
        As returned by :func:`merge_segments`.

    library: PrimitiveLibrary

    Returns
    -------
    graph: ActionGraph
    """
    graph = nx.DiGraph()
    lanes = defaultdict(list)
    last_directive = {}
    events = defaultdict(dict)
    next_id = 0

    actions = [entry for entry in merged if not is_grasp_only(entry.tree)]
    for event_id, entry in enumerate(actions):
        for directive in tree_to_directive(entry.tree, event_id, entry.grasped_id):
            if directive.action is None:
                continue
            primitives = list(decompose(directive, library))
            lane = lanes[directive.agent]
            previous = last_directive.get(directive.agent)
            if (
                previous is not None
                and previous.tool_id is not None
                and previous.tool_id == directive.tool_id
                and lane
                and graph.nodes[lane[-1]]["kind"] == "place"
                and primitives
                and primitives[0].kind == "grasp"
            ):
                graph.remove_node(lane.pop())
                primitives = primitives[1:]

            nodes = []
            for primitive in primitives:
                graph.add_node(
                    next_id,
                    kind=primitive.kind,
                    agent=primitive.agent,
                    object=primitive.object,
                    target=primitive.target,
                    params=primitive.params,
                )
                if lane:
                    graph.add_edge(lane[-1], next_id, kind="lane")
                lane.append(next_id)
                nodes.append(next_id)
                next_id += 1
            last_directive[directive.agent] = directive
            if directive.role is not None:
                events[event_id][directive.role] = nodes

    for event_id in sorted(events):
        _add_sync_edges(graph, events[event_id], event_id)

    relabel = {node: i for i, node in enumerate(sorted(graph.nodes))}
    graph = nx.relabel_nodes(graph, relabel)
    result = ActionGraph(
        graph, {agent: [relabel[n] for n in nodes] for agent, nodes in lanes.items()}
    )
    result.check_acyclic()
    return result


def _add_sync_edges(graph, roles, event_id):
    edges = []
    if "giver" in roles and "receiver" in roles:
        giver, receiver = roles["giver"], roles["receiver"]
        edges.append(
            (_first(receiver, graph, "engage"), _first(giver, graph, "actuate"))
        )
        edges.append(
            (_first(giver, graph, "engage"), _first(receiver, graph, "actuate"))
        )
    elif "holder" in roles and "actor" in roles:
        holder, actor = roles["holder"], roles["actor"]
        edges.append((_first(holder, graph, "actuate"), _first(actor, graph, "engage")))
        edges.append((_last(actor, graph, "actuate"), _last(holder, graph, "place")))
    edges = [(u, v) for u, v in edges if u is not None and v is not None]
    if not edges:
        warn(f"Collaborative event {event_id} yields no synchronization edge")
    for u, v in edges:
        graph.add_edge(u, v, kind="sync")


def plan_from_trees(entries, library, lexicon):
    """Merge tree entries and build their action graph."""
    return build_graph(merge_segments(entries, lexicon), library)


def plan_to_dict(graph):
    return {
        "agents": graph.agents,
        "nodes": [
            {
                "id": node,
                "agent": data["agent"],
                "kind": data["kind"],
                "object": data["object"],
                "target": data["target"],
                "params": data["params"],
            }
            for node, data in sorted(graph.graph.nodes(data=True))
        ],
        "edges": [list(edge) for edge in graph.edges("lane")],
        "sync_edges": [list(edge) for edge in graph.sync_edges],
        "lanes": {agent: list(nodes) for agent, nodes in graph.lanes.items()},
    }


def plan_from_dict(document):
    try:
        graph = nx.DiGraph()
        for node in document["nodes"]:
            graph.add_node(
                int(node["id"]),
                kind=node["kind"],
                agent=node["agent"],
                object=node.get("object"),
                target=node.get("target"),
                params=copy.deepcopy(node.get("params", {})),
            )
        for kind, key in (("lane", "edges"), ("sync", "sync_edges")):
            for u, v in document[key]:
                if u not in graph or v not in graph:
                    raise PlanError(f"edge ({u}, {v}) references an unknown node")
                graph.add_edge(int(u), int(v), kind=kind)
        lanes = document.get("lanes")
        if lanes is None:
            lanes = defaultdict(list)
            for node in sorted(graph.nodes):
                lanes[graph.nodes[node]["agent"]].append(node)
    except (KeyError, TypeError) as err:
        raise PlanError(f"malformed plan document: {err}")
    result = ActionGraph(graph, {agent: list(nodes) for agent, nodes in lanes.items()})
    for u, v in result.sync_edges:
        if graph.nodes[u]["agent"] == graph.nodes[v]["agent"]:
            raise PlanError(f"sync edge ({u}, {v}) does not cross agents")
    result.check_acyclic()
    return result


def export_plan(graph, path, format="plan-doc"):
    """Write ``graph`` as a plan document (JSON) or a graph description file."""
    if format == "plan-doc":
        write_json(plan_to_dict(graph), path)
    elif format == "dot":
        dot = nx.DiGraph()
        for node, data in graph.graph.nodes(data=True):
            name = data["params"].get("motion") or data["object"] or data["target"]
            dot.add_node(node, label=f'"{data["agent"]}: {data["kind"]} {name}"')
        for u, v, kind in graph.graph.edges(data="kind"):
            dot.add_edge(u, v, style="dashed" if kind == "sync" else "solid")
        nx.nx_pydot.write_dot(dot, path)
    else:
        raise ValueError(f"unknown plan format '{format}'")


def load_plan(path):
    return plan_from_dict(read_json(path))


def critical_path_length(graph, durations):
    """Duration-weighted longest path through ``graph``.

    ``durations`` provides ``duration(node, kind)`` in seconds.
    """
    finish = {}
    for node in nx.topological_sort(graph.graph):
        start = max((finish[p] for p in graph.graph.predecessors(node)), default=0.0)
        finish[node] = start + durations.duration(node, graph.graph.nodes[node]["kind"])
    return max(finish.values(), default=0.0)
