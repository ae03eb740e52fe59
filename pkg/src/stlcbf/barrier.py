"""Explicit parameterized barrier function over a timed specification tree.

Each temporal node contributes a linearly decaying margin
xi(t) = -a*sigma(t) + b, where sigma is the clamped elapsed time inside the
node's [active, terminal] window.  The terminal-zero constraint
b = a * (terminal - active) fixes the slope once the margin b is chosen,
so the margin at activation is the single free parameter per node.
Conjunction nodes combine children with the smooth minimum; a predicate
leaf is dropped from its enclosing smooth-min sums once the clock passes
its release time (a fully pruned chain propagates the drop upward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formulas import PredicateDef, eval_predicate, grad_predicate, smooth_min
from .tree import TimedTree, TreeError

__all__ = [
    "SynthesisError",
    "NodeDecay",
    "CbfSpec",
    "CbfValue",
    "sliding_window",
    "synthesize",
    "eval_cbf",
]

_INF = float("inf")


class SynthesisError(TreeError):
    pass


def sliding_window(active: float, terminal: float, t: float):
    """Clamped elapsed time inside [active, terminal].

    Returns (sigma, sigma_dot): 0 before activation, t - active inside the
    window, saturated at the window width after.  The rate is the piecewise
    0/1/0 derivative; window edges use the right-limit convention.
    """
    if t < active:
        return 0.0, 0.0
    if t < terminal:
        return t - active, 1.0
    return terminal - active, 0.0


@dataclass(frozen=True)
class NodeDecay:
    a: float
    b: float


@dataclass
class CbfSpec:
    tree: TimedTree
    table: dict[str, PredicateDef]
    decay: dict[int, NodeDecay]  # temporal node index -> (slope, margin)
    kappa: float

    def margin(self, index: int) -> NodeDecay:
        return self.decay[index]


@dataclass
class CbfValue:
    value: float
    grad_x: np.ndarray
    grad_t: float
    active_leaves: dict[int, bool]  # predicate leaf index -> still enforced

    @property
    def expired(self) -> bool:
        return not any(self.active_leaves.values())


def synthesize(tree: TimedTree, table: dict, margins: dict, kappa: float = 10.0) -> CbfSpec:
    """Derive per-node decay parameters from activation margins.

    ``margins`` maps temporal node index -> b (margin at activation, >= 0).
    Positive-width windows require a margin and get a = b / width;
    zero-width windows contribute nothing (a = b = 0) and reject a nonzero
    margin.
    """
    if not kappa > 0:
        raise SynthesisError("kappa must be positive")
    temporal = set(tree.indices_of_kind("temporal"))
    unknown = set(margins) - temporal
    if unknown:
        raise SynthesisError(
            f"margins given for non-temporal nodes: {sorted(unknown)}"
        )
    decay: dict[int, NodeDecay] = {}
    for idx in sorted(temporal):
        timing = tree.timing(idx)
        width = timing.terminal - timing.active
        b = margins.get(idx)
        if width <= 0:
            if b not in (None, 0, 0.0):
                raise SynthesisError(
                    f"node {idx} has a zero-width window; margin must be 0, got {b}"
                )
            decay[idx] = NodeDecay(0.0, 0.0)
            continue
        if b is None:
            raise SynthesisError(f"missing margin for temporal node {idx}")
        b = float(b)
        if b < 0:
            raise SynthesisError(f"margin for node {idx} must be >= 0, got {b}")
        decay[idx] = NodeDecay(b / width, b)
    return CbfSpec(tree, table, decay, float(kappa))


def eval_cbf(spec: CbfSpec, x, t: float) -> CbfValue:
    """Bottom-up evaluation of the barrier with exact gradients in x and t.

    Pruned leaves (t at or past their release) evaluate to +inf and drop
    out of enclosing smooth-min sums; when every predicate leaf is pruned
    the specification is expired and the value is +inf with zero gradients.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    x = np.asarray(x, dtype=float)
    tree = spec.tree
    active: dict[int, bool] = {}

    def ev(idx: int):
        node = tree.node(idx)
        if node.kind == "true":
            return _INF, None, 0.0
        if node.kind == "leaf":
            pruned = t >= tree.releases[idx] - 1e-12
            active[idx] = not pruned
            if pruned:
                return _INF, None, 0.0
            pred = spec.table[node.pred_name]
            return (
                eval_predicate(pred, x),
                grad_predicate(pred, x),
                0.0,
            )
        if node.kind == "temporal":
            cv, cgx, cgt = ev(node.children[0])
            if cv == _INF:
                return _INF, None, 0.0
            timing = tree.timing(idx)
            d = spec.decay[idx]
            sigma, sdot = sliding_window(timing.active, timing.terminal, t)
            return cv - d.a * sigma + d.b, cgx, cgt - d.a * sdot
        # conjunction
        vals, gxs, gts = [], [], []
        for c in node.children:
            cv, cgx, cgt = ev(c)
            if cv == _INF:
                continue
            vals.append(cv)
            gxs.append(cgx)
            gts.append(cgt)
        if not vals:
            return _INF, None, 0.0
        value, w = smooth_min(vals, spec.kappa)
        gx = np.zeros_like(x)
        gt = 0.0
        for wi, gxi, gti in zip(w, gxs, gts):
            gx += wi * gxi
            gt += wi * gti
        return value, gx, gt

    value, gx, gt = ev(0)
    if gx is None:
        gx = np.zeros_like(x)
    if not active:
        # no predicate leaves at all (pure-true specification)
        return CbfValue(_INF, gx, gt, {})
    if value == _INF and any(active.values()):
        raise AssertionError("finite leaves produced an infinite root value")
    return CbfValue(float(value), gx, float(gt), active)
