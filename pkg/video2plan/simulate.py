# License: BSD 2 clause
"""Logical-time execution of action graphs."""
import heapq
import math
import os
from collections import namedtuple

import pandas as pd

from video2plan.ingest import DATA_DIR
from video2plan.utils import read_json, write_json

DEFAULT_DURATIONS_PATH = os.path.join(DATA_DIR, "durations.json")
DEFAULT_DURATIONS = {"grasp": 2.0, "engage": 3.0, "actuate": 4.0, "place": 2.0}

# Ends are handled before starts at equal times
_END, _START = 0, 1


class DeadlockError(RuntimeError):
    def __init__(self, blocked):
        self.blocked = sorted(blocked)
        super(DeadlockError, self).__init__(
            f"deadlock: nodes {self.blocked} can never start"
        )


class DurationModel(object):
    """Seconds per primitive kind, with per-node overrides.

    Parameters
    ----------
    defaults: dict (optional)
        kind -> seconds; missing kinds fall back to grasp 2, engage 3,
        actuate 4 and place 2.

    overrides: dict (optional)
        node id -> seconds.
    """

    def __init__(self, defaults=None, overrides=None):
        self.defaults = dict(DEFAULT_DURATIONS)
        self.defaults.update(defaults or {})
        self.overrides = {
            int(node): float(value) for node, value in (overrides or {}).items()
        }
        for value in list(self.defaults.values()) + list(self.overrides.values()):
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"durations must be positive and finite, got {value}")

    @classmethod
    def from_file(cls, path):
        document = read_json(path)
        return cls(document.get("defaults"), document.get("overrides"))

    @classmethod
    def uniform(cls, seconds):
        return cls({kind: seconds for kind in DEFAULT_DURATIONS})

    def to_dict(self):
        return {
            "defaults": dict(sorted(self.defaults.items())),
            "overrides": {
                str(node): value for node, value in sorted(self.overrides.items())
            },
        }

    def save(self, path):
        write_json(self.to_dict(), path)

    def duration(self, node, kind):
        if node in self.overrides:
            return self.overrides[node]
        return float(self.defaults[kind])


TraceEvent = namedtuple("TraceEvent", ["time", "agent", "node", "phase"])


class ExecutionTrace(object):
    def __init__(self, events, makespan):
        self.events = list(events)
        self.makespan = makespan

    def __len__(self):
        return len(self.events)

    def __eq__(self, other):
        if not isinstance(other, ExecutionTrace):
            return NotImplemented
        return self.events == other.events and self.makespan == other.makespan

    def times(self):
        """node -> (start, end) for every executed node."""
        start, end = {}, {}
        for event in self.events:
            (start if event.phase == "start" else end)[event.node] = event.time
        return {node: (start[node], end.get(node)) for node in start}

    def to_frame(self):
        return pd.DataFrame(
            [tuple(event) for event in self.events],
            columns=["time", "agent", "node", "phase"],
        )


def save_trace(trace, path):
    trace.to_frame().to_csv(path, index=False, float_format="%.6f")


def load_trace(path):
    frame = pd.read_csv(path, dtype={"agent": str, "phase": str})
    events = [
        TraceEvent(float(row.time), row.agent, int(row.node), row.phase)
        for row in frame.itertuples(index=False)
    ]
    makespan = max((event.time for event in events), default=0.0)
    return ExecutionTrace(events, makespan)


def _dependencies(graph):
    dependencies = {
        node: set(graph.graph.predecessors(node)) for node in graph.graph.nodes
    }
    for nodes in graph.lanes.values():
        for u, v in zip(nodes, nodes[1:]):
            dependencies[v].add(u)
    return dependencies


def run(graph, durations=None):
    """Execute ``graph`` in logical time.

    A node starts as soon as every predecessor (lane or sync) has ended;
    agents progress concurrently. Events are processed in order of
    ``(time, phase, agent, node)`` with ends before starts, so the trace is
    deterministic.

    Parameters
    ----------
    graph: ActionGraph

    durations: DurationModel (optional)

    Returns
    -------
    trace: ExecutionTrace

    Raises
    ------
    DeadlockError
        When unfinished nodes remain but none can start.
    """
    durations = durations or DurationModel()
    nodes = graph.graph.nodes
    dependencies = _dependencies(graph)
    successors = {node: [] for node in nodes}
    for node, preds in dependencies.items():
        for pred in preds:
            successors[pred].append(node)
    pending = {node: len(preds) for node, preds in dependencies.items()}

    heap = [
        (0.0, _START, nodes[node]["agent"], node)
        for node in nodes
        if pending[node] == 0
    ]
    heapq.heapify(heap)
    events = []
    finished = set()
    while heap:
        time, phase, agent, node = heapq.heappop(heap)
        if phase == _START:
            events.append(TraceEvent(time, agent, node, "start"))
            end = time + durations.duration(node, nodes[node]["kind"])
            heapq.heappush(heap, (end, _END, agent, node))
            continue
        events.append(TraceEvent(time, agent, node, "end"))
        finished.add(node)
        for succ in sorted(successors[node]):
            pending[succ] -= 1
            if pending[succ] == 0:
                heapq.heappush(heap, (time, _START, nodes[succ]["agent"], succ))

    if len(finished) < len(nodes):
        raise DeadlockError(set(nodes) - finished)
    makespan = max((event.time for event in events), default=0.0)
    return ExecutionTrace(events, makespan)


def check_trace(trace, graph):
    """Ordering violations of ``trace`` against ``graph``.

    Returns
    -------
    violations: list of str
        Empty iff every node ran, every edge ``(u, v)`` has
        ``end(u) <= start(v)`` and every agent ran its lane in order.
    """
    times = trace.times()
    violations = []
    for node in sorted(graph.graph.nodes):
        if node not in times or times[node][1] is None:
            violations.append(f"node {node} was not executed")
        elif times[node][0] > times[node][1]:
            violations.append(f"node {node} ends before it starts")
    if violations:
        return violations

    for u, v, kind in sorted(graph.graph.edges(data="kind")):
        if times[u][1] > times[v][0]:
            violations.append(
                f"{kind} edge ({u}, {v}): {u} ends at {times[u][1]:g} "
                f"after {v} starts at {times[v][0]:g}"
            )
    for agent, lane in graph.lanes.items():
        for u, v in zip(lane, lane[1:]):
            if graph.graph.has_edge(u, v):
                continue
            if times[u][1] > times[v][0]:
                violations.append(f"lane order of {agent}: {u} overlaps {v}")
    return violations
