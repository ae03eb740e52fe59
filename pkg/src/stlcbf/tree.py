"""Specification tree with per-node activation, terminal, and release
times.

The tree decomposes a formula in the desired form edge by edge: a temporal
node has one child (its operand), a conjunction node one child per
conjunct, and leaves are predicates (or the trivially-true constant).
Indices are assigned in deterministic pre-order, so identical input
produces identical trees.

Timing runs top-down: the root activates at 0; a temporal node's terminal
time is its activation plus the dwell t* (t* = t_a for an always node,
t* in [t_a, t_b] for an eventually node, t_b by default); conjunction and
leaf nodes carry zero-width windows; every child activates at its parent's
terminal time.  A leaf's release time is the sum of interval upper
endpoints along its root path, after which its contribution is pruned.
"""

from __future__ import annotations

from dataclasses import dataclass

from .formulas import (
    Always,
    And,
    Eventually,
    Formula,
    FormulaError,
    Interval,
    Pred,
    TrueF,
    format_formula,
)
from .transform import check_desired_form

__all__ = [
    "TreeError",
    "TreeNode",
    "NodeTiming",
    "SwitchPoint",
    "TimedTree",
    "build_tree",
    "assign_times",
    "release_times",
    "switching_sequence",
]

TIME_QUANTUM = 1e-9  # times closer than this are one switching instant


class TreeError(FormulaError):
    pass


@dataclass
class TreeNode:
    index: int
    formula: Formula
    kind: str  # "temporal" | "conjunction" | "leaf" | "true"
    op: str | None = None  # "G" or "F" for temporal nodes
    interval: Interval | None = None
    parent: int | None = None
    children: tuple[int, ...] = ()
    pred_name: str | None = None

    @property
    def is_root(self) -> bool:
        return self.parent is None


@dataclass
class NodeTiming:
    active: float
    terminal: float
    t_star: float | None = None  # temporal nodes only
    release: float | None = None  # predicate leaves only


@dataclass(frozen=True)
class SwitchPoint:
    time: float
    is_release: bool


@dataclass
class TimedTree:
    nodes: list[TreeNode]
    timings: list[NodeTiming]
    releases: dict[int, float]  # leaf index -> release time
    horizon: float
    switching: list[SwitchPoint]

    def node(self, index: int) -> TreeNode:
        return self.nodes[index]

    def timing(self, index: int) -> NodeTiming:
        return self.timings[index]

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def indices_of_kind(self, kind: str) -> list[int]:
        return [n.index for n in self.nodes if n.kind == kind]

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "index": n.index,
                    "kind": n.kind,
                    "formula": format_formula(n.formula),
                    "op": n.op,
                    "interval": (
                        [n.interval.t_a, n.interval.t_b] if n.interval else None
                    ),
                    "parent": n.parent,
                    "children": list(n.children),
                    "predicate": n.pred_name,
                    "active": t.active,
                    "terminal": t.terminal,
                    "t_star": t.t_star,
                    "release": t.release,
                }
                for n, t in zip(self.nodes, self.timings)
            ],
            "horizon": self.horizon,
            "switching": [
                {"time": s.time, "is_release": s.is_release} for s in self.switching
            ],
        }


def build_tree(f: Formula) -> list[TreeNode]:
    """Decompose a desired-form formula into tree nodes (pre-order)."""
    violations = check_desired_form(f)
    if violations:
        raise TreeError(f"formula not in desired form: {violations}")
    nodes: list[TreeNode] = []

    def add(formula: Formula, parent: int | None) -> int:
        idx = len(nodes)
        if isinstance(formula, Pred):
            nodes.append(
                TreeNode(idx, formula, "leaf", parent=parent, pred_name=formula.name)
            )
        elif isinstance(formula, TrueF):
            nodes.append(TreeNode(idx, formula, "true", parent=parent))
        elif isinstance(formula, (Always, Eventually)):
            op = "G" if isinstance(formula, Always) else "F"
            nodes.append(
                TreeNode(
                    idx, formula, "temporal", op=op,
                    interval=formula.interval, parent=parent,
                )
            )
            child = add(formula.child, idx)
            nodes[idx].children = (child,)
        elif isinstance(formula, And):
            nodes.append(TreeNode(idx, formula, "conjunction", parent=parent))
            nodes[idx].children = tuple(add(c, idx) for c in formula.children)
        else:
            raise TreeError(f"cannot place {formula!r} in a tree")
        return idx

    add(f, None)
    return nodes


def assign_times(nodes: list[TreeNode], t_star_policy="default") -> TimedTree:
    """Propagate activation/terminal times from the root (activated at 0).

    ``t_star_policy`` maps node index -> dwell t* for eventually nodes
    (must lie in [t_a, t_b]); always nodes are pinned to t* = t_a.
    """
    overrides: dict[int, float] = {} if t_star_policy == "default" else dict(t_star_policy)
    for idx in overrides:
        node = nodes[idx]
        if node.kind != "temporal" or node.op != "F":
            raise TreeError(
                f"t_star override only applies to eventually nodes, node {idx} "
                f"is {node.kind}{'/' + node.op if node.op else ''}"
            )

    timings = [NodeTiming(0.0, 0.0) for _ in nodes]

    def walk(idx: int, active: float):
        node = nodes[idx]
        if node.kind == "temporal":
            if node.op == "G":
                t_star = node.interval.t_a
            else:
                t_star = overrides.get(idx, node.interval.t_b)
                if not (node.interval.t_a - 1e-12 <= t_star <= node.interval.t_b + 1e-12):
                    raise TreeError(
                        f"t_star {t_star} outside [{node.interval.t_a},"
                        f"{node.interval.t_b}] for node {idx}"
                    )
            timings[idx] = NodeTiming(active, active + t_star, t_star=t_star)
        else:
            timings[idx] = NodeTiming(active, active)
        for c in node.children:
            walk(c, timings[idx].terminal)

    walk(0, 0.0)
    releases = release_times(nodes)
    for idx, rel in releases.items():
        timings[idx].release = rel
    horizon = max(releases.values(), default=0.0)
    switching = switching_sequence(nodes, timings, releases)
    return TimedTree(nodes, timings, releases, horizon, switching)


def release_times(nodes: list[TreeNode]) -> dict[int, float]:
    """Per predicate leaf, the sum of interval upper endpoints on its root
    path.  True-constant leaves never release."""
    out: dict[int, float] = {}
    for node in nodes:
        if node.kind != "leaf":
            continue
        total = 0.0
        k = node.parent
        while k is not None:
            anc = nodes[k]
            if anc.kind == "temporal":
                total += anc.interval.t_b
            k = anc.parent
        out[node.index] = total
    return out


def switching_sequence(
    nodes: list[TreeNode],
    timings: list[NodeTiming],
    releases: dict[int, float],
) -> list[SwitchPoint]:
    """Sorted, deduplicated union of 0, all activation/terminal times, and
    all release times, tagged by whether the instant releases a leaf."""
    release_keys = {round(t / TIME_QUANTUM) for t in releases.values()}
    rep: dict[int, float] = {0: 0.0}  # key -> first representative time
    for t in timings:
        for v in (t.active, t.terminal):
            rep.setdefault(round(v / TIME_QUANTUM), v)
    for v in releases.values():
        rep.setdefault(round(v / TIME_QUANTUM), v)
    return [SwitchPoint(rep[k], k in release_keys) for k in sorted(rep)]
