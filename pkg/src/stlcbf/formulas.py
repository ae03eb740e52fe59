"""Temporal-logic formula ASTs, the predicate function library, and the
text grammar.

Grammar, loosest to tightest binding::

    conj   := until ("&" until)*
    until  := unary ("U[a,b]" until)?        # right-associative
    unary  := "G[a,b]" unary | "F[a,b]" unary | "!" IDENT | "T"
            | IDENT | "(" conj ")"

Interval endpoints are non-negative decimal literals (scientific notation
accepted) with a <= b.  "&" is collected into a single n-ary ``And``; a
parenthesized conjunction stays a nested node, so ``parse(format(f))``
reproduces the structure exactly.  The names ``T``, and ``G``/``F``/``U``
when directly followed by "[", are reserved by the grammar.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

__all__ = [
    "FormulaError",
    "FormulaSyntaxError",
    "UnknownPredicateError",
    "Interval",
    "smooth_min",
    "Affine",
    "Ball",
    "Negated",
    "SmoothAnd",
    "PredicateDef",
    "predicate_dim",
    "eval_predicate",
    "grad_predicate",
    "Formula",
    "TrueF",
    "Pred",
    "NotPred",
    "And",
    "Always",
    "Eventually",
    "Until",
    "children_of",
    "rebuild",
    "post_order",
    "formula_horizon",
    "parse_formula",
    "format_formula",
]


class FormulaError(ValueError):
    """Malformed formula, interval, or predicate reference."""


class FormulaSyntaxError(FormulaError):
    """Parse failure; ``position`` is the byte offset into the input."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownPredicateError(FormulaError):
    def __init__(self, name: str, position: int | None = None):
        at = f" (at offset {position})" if position is not None else ""
        super().__init__(f"unknown predicate name {name!r}{at}")
        self.name = name
        self.position = position


@dataclass(frozen=True)
class Interval:
    """Time window of a temporal operator; 0 <= t_a <= t_b."""

    t_a: float
    t_b: float

    def __post_init__(self):
        if not (math.isfinite(self.t_a) and math.isfinite(self.t_b)):
            raise FormulaError("interval endpoints must be finite")
        if self.t_a < 0 or self.t_b < 0:
            raise FormulaError(
                f"interval endpoints must be non-negative, got [{self.t_a},{self.t_b}]"
            )
        if self.t_a > self.t_b:
            raise FormulaError(
                f"interval endpoints out of order: [{self.t_a},{self.t_b}]"
            )

    @property
    def width(self) -> float:
        return self.t_b - self.t_a


def smooth_min(values, kappa: float):
    """Log-sum-exp under-approximation of the pointwise minimum.

    Returns ``(value, weights)`` where value = -(1/kappa) * ln(sum_k
    exp(-kappa*h_k)) evaluated in a max-shifted form so kappa*h far beyond
    700 stays finite, and ``weights`` are the softmax coefficients
    exp(-kappa*h_k)/sum_j exp(-kappa*h_j) (the gradient weights; they sum
    to 1).  Guarantees value <= min(values) and
    min(values) - value <= ln(p)/kappa for p values.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("smooth_min requires a non-empty 1-d value list")
    if not kappa > 0:
        raise ValueError("smooth_min sharpness kappa must be positive")
    m = vals.min()
    z = np.exp(-kappa * (vals - m))  # largest term is exactly 1
    s = z.sum()
    return float(m - math.log(s) / kappa), z / s


# --------------------------------------------------------------------------
# Predicate shapes.  Every shape yields a continuously differentiable h with
# globally Lipschitz gradient; vectors are stored as tuples so shapes stay
# hashable and immutable.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Affine:
    """h(x) = a.x + b  (half-plane a.x + b >= 0)."""

    a: tuple[float, ...]
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class Ball:
    """h(x) = radius^2 - |x - center|^2  (disk of given radius)."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise FormulaError(f"ball radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Negated:
    """h(x) = -h_inner(x)."""

    inner: "PredicateDef"


@dataclass(frozen=True)
class SmoothAnd:
    """h(x) = smooth_min(h_1(x), ..., h_p(x) | kappa), p >= 2."""

    parts: tuple["PredicateDef", ...]
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if len(self.parts) < 2:
            raise FormulaError("SmoothAnd needs at least two parts")
        if not self.kappa > 0:
            raise FormulaError("SmoothAnd sharpness kappa must be positive")
        dims = {predicate_dim(p) for p in self.parts}
        if len(dims) != 1:
            raise FormulaError(f"SmoothAnd parts disagree on dimension: {sorted(dims)}")


Shape = Union[Affine, Ball, Negated, SmoothAnd]


@dataclass(frozen=True)
class PredicateDef:
    name: str
    shape: Shape


def predicate_dim(p) -> int:
    shape = p.shape if isinstance(p, PredicateDef) else p
    if isinstance(shape, Affine):
        return len(shape.a)
    if isinstance(shape, Ball):
        return len(shape.center)
    if isinstance(shape, Negated):
        return predicate_dim(shape.inner)
    if isinstance(shape, SmoothAnd):
        return predicate_dim(shape.parts[0])
    raise TypeError(f"not a predicate shape: {shape!r}")


def _check_dim(shape, x: np.ndarray):
    n = predicate_dim(shape)
    if x.shape != (n,):
        raise ValueError(
            f"state has shape {x.shape}, predicate expects dimension {n}"
        )


def eval_predicate(p, x) -> float:
    """Evaluate h(x) for a predicate definition or bare shape."""
    shape = p.shape if isinstance(p, PredicateDef) else p
    x = np.asarray(x, dtype=float)
    _check_dim(shape, x)
    return _eval_shape(shape, x)


def _eval_shape(shape, x: np.ndarray) -> float:
    if isinstance(shape, Affine):
        return float(np.dot(shape.a, x) + shape.b)
    if isinstance(shape, Ball):
        d = x - np.asarray(shape.center)
        return float(shape.radius**2 - np.dot(d, d))
    if isinstance(shape, Negated):
        return -_eval_shape(shape.inner.shape, x)
    if isinstance(shape, SmoothAnd):
        vals = [_eval_shape(p.shape, x) for p in shape.parts]
        return smooth_min(vals, shape.kappa)[0]
    raise TypeError(f"not a predicate shape: {shape!r}")


def grad_predicate(p, x) -> np.ndarray:
    """Exact analytic gradient of ``eval_predicate`` at x."""
    shape = p.shape if isinstance(p, PredicateDef) else p
    x = np.asarray(x, dtype=float)
    _check_dim(shape, x)
    return _grad_shape(shape, x)


def _grad_shape(shape, x: np.ndarray) -> np.ndarray:
    if isinstance(shape, Affine):
        return np.asarray(shape.a, dtype=float)
    if isinstance(shape, Ball):
        return -2.0 * (x - np.asarray(shape.center))
    if isinstance(shape, Negated):
        return -_grad_shape(shape.inner.shape, x)
    if isinstance(shape, SmoothAnd):
        vals = [_eval_shape(p.shape, x) for p in shape.parts]
        _, w = smooth_min(vals, shape.kappa)
        g = np.zeros_like(x)
        for wi, part in zip(w, shape.parts):
            g += wi * _grad_shape(part.shape, x)
        return g
    raise TypeError(f"not a predicate shape: {shape!r}")


# --------------------------------------------------------------------------
# Formula AST (immutable, structural equality).
# --------------------------------------------------------------------------


class Formula:
    """Base class for AST nodes; all subclasses are frozen dataclasses."""

    __slots__ = ()


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class Pred(Formula):
    name: str


@dataclass(frozen=True)
class NotPred(Formula):
    name: str


@dataclass(frozen=True)
class And(Formula):
    children: tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise FormulaError("conjunction needs at least two conjuncts")


@dataclass(frozen=True)
class Always(Formula):
    interval: Interval
    child: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    interval: Interval
    child: Formula


@dataclass(frozen=True)
class Until(Formula):
    interval: Interval
    left: Formula
    right: Formula


def children_of(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, And):
        return f.children
    if isinstance(f, (Always, Eventually)):
        return (f.child,)
    if isinstance(f, Until):
        return (f.left, f.right)
    return ()


def rebuild(f: Formula, children: tuple[Formula, ...]) -> Formula:
    """Reconstruct f with replacement children (same arity)."""
    if isinstance(f, And):
        return And(tuple(children))
    if isinstance(f, Always):
        (c,) = children
        return Always(f.interval, c)
    if isinstance(f, Eventually):
        (c,) = children
        return Eventually(f.interval, c)
    if isinstance(f, Until):
        l, r = children
        return Until(f.interval, l, r)
    if children:
        raise ValueError(f"{type(f).__name__} takes no children")
    return f


def post_order(f: Formula) -> Iterator[Formula]:
    for c in children_of(f):
        yield from post_order(c)
    yield f


def formula_horizon(f: Formula) -> float:
    """Signal length (beyond the evaluation instant) needed to decide f."""
    if isinstance(f, (Always, Eventually)):
        return f.interval.t_b + formula_horizon(f.child)
    if isinstance(f, Until):
        return f.interval.t_b + max(formula_horizon(f.left), formula_horizon(f.right))
    if isinstance(f, And):
        return max(formula_horizon(c) for c in f.children)
    return 0.0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<num>[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<punct>[!&(),\[\]])"
)


def _tokenize(text: str):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        tokens.append((kind, m.group(), i))
        i = m.end()
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, predicates):
        self.text = text
        self.predicates = predicates
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, offset=0):
        j = min(self.i + offset, len(self.toks) - 1)
        return self.toks[j]

    def advance(self):
        tok = self.toks[self.i]
        if tok[0] != "eof":
            self.i += 1
        return tok

    def expect_punct(self, ch: str):
        kind, val, pos = self.peek()
        if kind != "punct" or val != ch:
            raise FormulaSyntaxError(f"expected {ch!r}, found {val or 'end of input'!r}", pos)
        return self.advance()

    # ---- grammar levels ----

    def parse(self) -> Formula:
        f = self.conj()
        kind, val, pos = self.peek()
        if kind != "eof":
            raise FormulaSyntaxError(f"unexpected trailing input {val!r}", pos)
        return f

    def conj(self) -> Formula:
        items = [self.until()]
        while self._at_punct("&"):
            self.advance()
            items.append(self.until())
        if len(items) == 1:
            return items[0]
        return And(tuple(items))

    def until(self) -> Formula:
        lhs = self.unary()
        if self._at_temporal("U"):
            self.advance()
            iv = self.interval()
            rhs = self.until()  # right-associative
            return Until(iv, lhs, rhs)
        return lhs

    def unary(self) -> Formula:
        kind, val, pos = self.peek()
        if kind == "ident" and val in ("G", "F") and self._next_is_bracket():
            self.advance()
            iv = self.interval()
            child = self.unary()
            return Always(iv, child) if val == "G" else Eventually(iv, child)
        if kind == "punct" and val == "!":
            self.advance()
            nkind, nval, npos = self.peek()
            if nkind != "ident":
                raise FormulaSyntaxError("'!' must be followed by a predicate name", npos)
            self.advance()
            self._check_pred(nval, npos)
            return NotPred(nval)
        if kind == "punct" and val == "(":
            self.advance()
            inner = self.conj()
            self.expect_punct(")")
            return inner
        if kind == "ident":
            self.advance()
            if val == "T":
                return TrueF()
            self._check_pred(val, pos)
            return Pred(val)
        raise FormulaSyntaxError(
            f"expected a formula, found {val or 'end of input'!r}", pos
        )

    def interval(self) -> Interval:
        _, _, open_pos = self.expect_punct("[")
        a = self.number()
        self.expect_punct(",")
        b = self.number()
        self.expect_punct("]")
        try:
            return Interval(a, b)
        except FormulaError as exc:
            raise FormulaSyntaxError(str(exc), open_pos) from None

    def number(self) -> float:
        kind, val, pos = self.peek()
        if kind != "num":
            raise FormulaSyntaxError(f"expected a number, found {val or 'end of input'!r}", pos)
        self.advance()
        return float(val)

    # ---- helpers ----

    def _at_punct(self, ch: str) -> bool:
        kind, val, _ = self.peek()
        return kind == "punct" and val == ch

    def _at_temporal(self, name: str) -> bool:
        kind, val, _ = self.peek()
        return kind == "ident" and val == name and self._next_is_bracket()

    def _next_is_bracket(self) -> bool:
        kind, val, _ = self.peek(1)
        return kind == "punct" and val == "["

    def _check_pred(self, name: str, pos: int):
        if name not in self.predicates:
            raise UnknownPredicateError(name, pos)


def parse_formula(text: str, predicates) -> Formula:
    """Parse formula text against a predicate table (name -> PredicateDef).

    Raises FormulaSyntaxError (with byte offset) on malformed input,
    UnknownPredicateError for unresolved names.
    """
    return _Parser(text, predicates).parse()


# --------------------------------------------------------------------------
# Printer.  Parenthesization is minimal but exact: parse(format(f)) == f.
# --------------------------------------------------------------------------


def _format_number(x: float) -> str:
    if x == math.floor(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _fmt_interval(iv: Interval) -> str:
    return f"[{_format_number(iv.t_a)},{_format_number(iv.t_b)}]"


def _fmt(f: Formula, wrap_and: bool, wrap_until: bool) -> str:
    s = format_formula(f)
    if (isinstance(f, And) and wrap_and) or (isinstance(f, Until) and wrap_until):
        return f"({s})"
    return s


def format_formula(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "T"
    if isinstance(f, Pred):
        return f.name
    if isinstance(f, NotPred):
        return f"!{f.name}"
    if isinstance(f, And):
        # nested conjunctions must keep their grouping
        return " & ".join(_fmt(c, wrap_and=True, wrap_until=False) for c in f.children)
    if isinstance(f, Always):
        return f"G{_fmt_interval(f.interval)} {_fmt(f.child, True, True)}"
    if isinstance(f, Eventually):
        return f"F{_fmt_interval(f.interval)} {_fmt(f.child, True, True)}"
    if isinstance(f, Until):
        left = _fmt(f.left, wrap_and=True, wrap_until=True)  # U is right-assoc
        right = _fmt(f.right, wrap_and=True, wrap_until=False)
        return f"{left} U{_fmt_interval(f.interval)} {right}"
    raise TypeError(f"not a formula: {f!r}")
