"""Rewriting passes that bring a formula into the tree-compatible form.

The target form has no Until, no negation or conjunction applied directly
to bare predicates, no Always distributed over a conjunction (nor the
mirrored same-interval always-of-predicate conjunction), and no identical
consecutive temporal operators.  Rewrites are sound but one-directional:
satisfying the rewritten formula implies satisfying the original, never
the converse.

Each elementary rewrite is recorded in a trace as (rule id, source
subformula, result subformula); replaying the trace on the input with
``replay_trace`` reproduces the output exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

from .formulas import (
    Always,
    And,
    Eventually,
    Formula,
    FormulaError,
    Interval,
    Negated,
    NotPred,
    Pred,
    PredicateDef,
    SmoothAnd,
    Until,
    children_of,
    format_formula,
    post_order,
    rebuild,
)

__all__ = [
    "TransformError",
    "GfSplit",
    "TransformConfig",
    "TraceStep",
    "TransformTrace",
    "rewrite_until",
    "fold_predicates",
    "distribute_always",
    "merge_nested_identical",
    "split_always_eventually",
    "to_desired_form",
    "check_desired_form",
    "substitute_first",
    "replay_trace",
]


class TransformError(FormulaError):
    pass


@dataclass(frozen=True)
class GfSplit:
    """Explicit always-eventually split: p_f point deadlines spaced by
    deltas (fractions of the inner window width)."""

    p_f: int
    deltas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.p_f < 1:
            raise TransformError("split needs p_f >= 1")
        if len(self.deltas) != self.p_f:
            raise TransformError(
                f"split has p_f = {self.p_f} but {len(self.deltas)} deltas"
            )


@dataclass(frozen=True)
class TransformConfig:
    kappa: float = 10.0
    # "auto", or per-occurrence overrides keyed by the formatted G-F
    # subformula text.
    gf_split: str | dict[str, GfSplit] = "auto"

    def __post_init__(self):
        if not self.kappa > 0:
            raise TransformError("kappa must be positive")
        if isinstance(self.gf_split, str) and self.gf_split != "auto":
            raise TransformError(f"unknown gf_split policy {self.gf_split!r}")


@dataclass(frozen=True)
class TraceStep:
    rule: str
    source: Formula
    result: Formula


TransformTrace = list


# --------------------------------------------------------------------------
# Substitution with conjunction splicing — the single primitive both the
# rewriter and trace replay go through, so traces replay exactly.
# --------------------------------------------------------------------------


def substitute_first(f: Formula, source: Formula, result: Formula) -> Formula:
    """Replace the first post-order occurrence of ``source`` by ``result``.

    When the replaced node was a conjunct and the replacement is itself a
    conjunction, its conjuncts are spliced into the enclosing one (rewrites
    that expand one conjunct never introduce an artificial nesting level).
    """

    def rec(node: Formula):
        # returns (new_node, status) with status in {0: untouched,
        # 1: replaced at this node, 2: replaced below}
        kids = children_of(node)
        if kids:
            new_kids = []
            status = 0
            for k in kids:
                if status:
                    new_kids.append(k)
                    continue
                nk, st = rec(k)
                if st:
                    status = 2
                    if st == 1 and isinstance(node, And) and isinstance(nk, And):
                        new_kids.extend(nk.children)
                        continue
                new_kids.append(nk)
            if status:
                return rebuild(node, tuple(new_kids)), 2
        if node == source:
            return result, 1
        return node, 0

    out, status = rec(f)
    if not status:
        raise TransformError(
            f"no occurrence of {format_formula(source)!r} to replace"
        )
    return out


def replay_trace(f: Formula, trace) -> Formula:
    for step in trace:
        f = substitute_first(f, step.source, step.result)
    return f


# --------------------------------------------------------------------------
# Elementary rewrite sites.  Each matcher inspects one node and returns the
# rewritten node, or None.
# --------------------------------------------------------------------------


def _site_until(node: Formula) -> Optional[Formula]:
    if isinstance(node, Until):
        return And(
            (
                Always(Interval(0.0, node.interval.t_b), node.left),
                Eventually(node.interval, node.right),
            )
        )
    return None


def _fresh_name(table: dict, base: str) -> str:
    name = base
    k = 2
    while name in table:
        name = f"{base}_{k}"
        k += 1
    return name


def _register_negation(table: dict, name: str) -> str:
    inner = table[name]
    wanted = Negated(inner)
    base = f"not_{name}"
    if base in table and table[base].shape == wanted:
        return base
    out = _fresh_name(table, base)
    table[out] = PredicateDef(out, wanted)
    return out


def _register_conjunction(table: dict, names, kappa: float) -> str:
    parts = tuple(table[n] for n in names)
    wanted = SmoothAnd(parts, kappa)
    for existing, pdef in table.items():
        if pdef.shape == wanted:
            return existing
    n_auto = sum(1 for k in table if k.startswith("and_"))
    out = _fresh_name(table, f"and_{n_auto}")
    table[out] = PredicateDef(out, wanted)
    return out


def _site_fold(node: Formula, table: dict, kappa: float) -> Optional[Formula]:
    if isinstance(node, NotPred):
        return Pred(_register_negation(table, node.name))
    if isinstance(node, And) and all(isinstance(c, Pred) for c in node.children):
        names = [c.name for c in node.children]
        return Pred(_register_conjunction(table, names, kappa))
    return None


def _site_distribute(node: Formula) -> Optional[Formula]:
    # Always over a conjunction distributes, except over a pure predicate
    # conjunction, which the fold rule turns into a single predicate first.
    if (
        isinstance(node, Always)
        and isinstance(node.child, And)
        and not all(isinstance(c, Pred) for c in node.child.children)
    ):
        iv = node.interval
        return And(tuple(Always(iv, c) for c in node.child.children))
    return None


def _site_merge_same_interval(node: Formula) -> Optional[Formula]:
    # The reverse distribution: same-interval always-of-predicate conjuncts
    # regroup under one Always so the fold rule can absorb them.
    if not isinstance(node, And):
        return None
    by_interval: dict[Interval, list[int]] = {}
    for i, c in enumerate(node.children):
        if isinstance(c, Always) and isinstance(c.child, Pred):
            by_interval.setdefault(c.interval, []).append(i)
    for c in node.children:  # first (in child order) interval with a group
        if not (isinstance(c, Always) and isinstance(c.child, Pred)):
            continue
        idxs = by_interval[c.interval]
        if len(idxs) < 2:
            continue
        grouped = Always(c.interval, And(tuple(node.children[i].child for i in idxs)))
        # the group takes the position of its first member
        merged = []
        for i, ch in enumerate(node.children):
            if i == idxs[0]:
                merged.append(grouped)
            elif i in idxs:
                continue
            else:
                merged.append(ch)
        if len(merged) == 1:
            return merged[0]
        return And(tuple(merged))
    return None


def _site_merge_nested(node: Formula) -> Optional[Formula]:
    for op in (Always, Eventually):
        if isinstance(node, op) and isinstance(node.child, op):
            outer, inner = node.interval, node.child.interval
            return op(
                Interval(outer.t_a + inner.t_a, outer.t_b + inner.t_b),
                node.child.child,
            )
    return None


def _find_site_1_to_4(f: Formula, table: dict, kappa: float):
    """First post-order node where one of rules 1-4 applies."""
    for node in post_order(f):
        res = _site_until(node)
        if res is not None:
            return node, res, "R1"
        res = _site_fold(node, table, kappa)
        if res is not None:
            return node, res, "R2"
        res = _site_merge_same_interval(node)
        if res is not None:
            return node, res, "R3"
        res = _site_distribute(node)
        if res is not None:
            return node, res, "R3"
        res = _site_merge_nested(node)
        if res is not None:
            return node, res, "R4"
    return None


def _fixpoint_1_to_4(f: Formula, table: dict, kappa: float, trace) -> Formula:
    while True:
        hit = _find_site_1_to_4(f, table, kappa)
        if hit is None:
            return f
        src, res, rule = hit
        f = substitute_first(f, src, res)
        trace.append(TraceStep(rule, src, res))


# --------------------------------------------------------------------------
# Rule 5: split an always-over-eventually into point-deadline conjuncts.
# --------------------------------------------------------------------------


def _split_deadlines(outer: Interval, inner: Interval, split: GfSplit | None):
    """Deadlines w_1..w_pf from the recurrence w_i = w_{i-1} +
    delta_i * inner.width, w_0 = outer.t_a + inner.t_a."""
    width = inner.width
    span = outer.width
    if width <= 0:
        raise TransformError("split needs a non-degenerate inner window")
    p_min = max(1, math.ceil(span / width - 1e-12))
    lb = span / (p_min * width) if split is None else span / (split.p_f * width)
    if split is None:
        split = GfSplit(p_min, (lb,) * p_min)
    if split.p_f < p_min:
        raise TransformError(
            f"p_f = {split.p_f} below the admissible minimum {p_min}"
        )
    w = outer.t_a + inner.t_a
    ws = []
    for d in split.deltas:
        if d < lb - 1e-12 or d > 1 + 1e-12:
            raise TransformError(
                f"delta {d} outside the admissible range [{lb}, 1]"
            )
        w = w + d * width
        ws.append(w)
    if ws[-1] > outer.t_b + inner.t_b + 1e-9:
        raise TransformError(
            f"deadline {ws[-1]} beyond the window end {outer.t_b + inner.t_b}"
        )
    return ws


def _find_gf_site(f: Formula):
    for node in post_order(f):
        if isinstance(node, Always) and isinstance(node.child, Eventually):
            yield node


def _apply_rule5(f: Formula, cfg: TransformConfig, trace) -> Formula:
    while True:
        site = None
        for node in _find_gf_site(f):
            if node.child.interval.width > 0:
                site = node
                break
        if site is None:
            break
        inner = site.child
        override = None
        if isinstance(cfg.gf_split, dict):
            override = cfg.gf_split.get(format_formula(site))
        ws = _split_deadlines(site.interval, inner.interval, override)
        res: Formula = And(
            tuple(Eventually(Interval(w, w), inner.child) for w in ws)
        ) if len(ws) > 1 else Eventually(Interval(ws[0], ws[0]), inner.child)
        f = substitute_first(f, site, res)
        trace.append(TraceStep("R5", site, res))
    for node in _find_gf_site(f):
        if node.child.interval.width == 0:
            warnings.warn(
                f"always-over-eventually with a point inner window left "
                f"unsplit: {format_formula(node)}",
                stacklevel=2,
            )
    return f


# --------------------------------------------------------------------------
# Public passes
# --------------------------------------------------------------------------


def rewrite_until(f: Formula) -> Formula:
    """Rule 1, bottom-up to fixpoint: l U[a,b] r -> G[0,b] l & F[a,b] r."""
    while True:
        site = next((n for n in post_order(f) if isinstance(n, Until)), None)
        if site is None:
            return f
        f = substitute_first(f, site, _site_until(site))


def fold_predicates(f: Formula, table: dict, cfg: TransformConfig) -> Formula:
    """Rule 2, to fixpoint: !mu and pure-predicate conjunctions become
    fresh predicates (negated / smooth-min shapes) registered in ``table``."""
    while True:
        hit = next(
            (
                (n, r)
                for n in post_order(f)
                if (r := _site_fold(n, table, cfg.kappa)) is not None
            ),
            None,
        )
        if hit is None:
            return f
        f = substitute_first(f, *hit)


def distribute_always(f: Formula, table: dict, cfg: TransformConfig) -> Formula:
    """Rule 3, both directions, to fixpoint.

    Always over a mixed conjunction distributes across the conjuncts;
    same-interval always-of-predicate conjuncts regroup and fold so no
    ``G[a,b] mu1 & G[a,b] mu2`` remains.
    """
    while True:
        hit = None
        for n in post_order(f):
            r = _site_merge_same_interval(n)
            if r is None and isinstance(n, Always) and isinstance(n.child, And):
                folded = _site_fold(n.child, table, cfg.kappa)
                if folded is not None:
                    r = Always(n.interval, folded)
                else:
                    r = _site_distribute(n)
            if r is not None:
                hit = (n, r)
                break
        if hit is None:
            return f
        f = substitute_first(f, *hit)


def merge_nested_identical(f: Formula) -> Formula:
    """Rule 4, to fixpoint: T[a1,b1] T[a2,b2] psi -> T[a1+a2,b1+b2] psi."""
    while True:
        hit = next(
            (
                (n, r)
                for n in post_order(f)
                if (r := _site_merge_nested(n)) is not None
            ),
            None,
        )
        if hit is None:
            return f
        f = substitute_first(f, *hit)


def split_always_eventually(f: Formula, cfg: TransformConfig) -> Formula:
    """Rule 5, every applicable site; point inner windows are left with a
    warning."""
    return _apply_rule5(f, cfg, [])


def to_desired_form(f: Formula, table: dict, cfg: TransformConfig):
    """Full pipeline: rules 1-4 to fixpoint, then rule 5, then re-check.

    Mutates ``table`` with generated predicates.  Returns the rewritten
    formula and the trace of elementary steps.
    """
    trace: TransformTrace = []
    f = _fixpoint_1_to_4(f, table, cfg.kappa, trace)
    f = _apply_rule5(f, cfg, trace)
    f = _fixpoint_1_to_4(f, table, cfg.kappa, trace)
    leftovers = check_desired_form(f)
    if leftovers:
        raise TransformError(f"rewriting did not converge: {leftovers}")
    return f, trace


def check_desired_form(f: Formula) -> list[str]:
    """Violations of the target form; empty means tree-compatible.

    Bare predicates as conjuncts next to temporal siblings are allowed
    (they become leaves); only patterns the rules can eliminate count.
    """
    out = []
    for node in post_order(f):
        if isinstance(node, Until):
            out.append(f"until present: {format_formula(node)}")
        elif isinstance(node, NotPred):
            out.append(f"negation on a bare predicate: {format_formula(node)}")
        elif isinstance(node, And):
            if all(isinstance(c, Pred) for c in node.children):
                out.append(
                    f"conjunction of bare predicates: {format_formula(node)}"
                )
            seen: dict[Interval, int] = {}
            for c in node.children:
                if isinstance(c, Always) and isinstance(c.child, Pred):
                    seen[c.interval] = seen.get(c.interval, 0) + 1
            for iv, count in seen.items():
                if count >= 2:
                    out.append(
                        "same-interval always-of-predicate conjunction: "
                        f"{format_formula(node)}"
                    )
        elif isinstance(node, Always):
            if isinstance(node.child, And):
                out.append(f"always over a conjunction: {format_formula(node)}")
            if isinstance(node.child, Always):
                out.append(
                    f"identical consecutive temporal operators: {format_formula(node)}"
                )
        elif isinstance(node, Eventually):
            if isinstance(node.child, Eventually):
                out.append(
                    f"identical consecutive temporal operators: {format_formula(node)}"
                )
    return out
