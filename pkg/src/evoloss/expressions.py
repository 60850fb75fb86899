"""Expression trees for per-class loss function bodies.

The search grammar has unary operators ``log``, ``square``, ``sqrt``; binary
operators ``add``, ``sub``, ``mul``, ``div``; and leaves ``x`` (true label),
``y`` (predicted label) and the integer constants ``1`` and ``-1``. Mutation
may push integer constants outside {1, -1}, and coefficient binding
introduces float constants, so ``const`` accepts any int or float.

Text format: lowercase s-expressions, whitespace-insensitive between tokens,
e.g. ``(sub (log y) (div x y))``. Atoms are ``x``, ``y`` and numeric
literals; integer constants print without a decimal point so grammar trees
round-trip through the exact grammar, while float constants use ``repr``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

UNARY_OPS = ("log", "square", "sqrt")
BINARY_OPS = ("add", "sub", "mul", "div")
COMMUTATIVE_OPS = ("add", "mul")
LEAF_OPS = ("x", "y", "const")

ARITY: dict[str, int] = (
    {op: 1 for op in UNARY_OPS}
    | {op: 2 for op in BINARY_OPS}
    | {op: 0 for op in LEAF_OPS}
)


class _Invalid:
    """Marker for domain violations (log/sqrt out of domain, zero division)."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "INVALID"


INVALID = _Invalid()


@dataclass(frozen=True)
class Expr:
    """Immutable expression-tree node.

    ``op`` is one of the operator names above or a leaf kind; ``value`` is
    set only for ``const`` nodes.
    """

    op: str
    children: tuple["Expr", ...] = ()
    value: int | float | None = None

    def __post_init__(self) -> None:
        if self.op not in ARITY:
            raise ValueError(f"unknown node kind {self.op!r}")
        if len(self.children) != ARITY[self.op]:
            raise ValueError(
                f"{self.op!r} takes {ARITY[self.op]} children, got {len(self.children)}"
            )
        if self.op == "const":
            if not isinstance(self.value, (int, float)) or isinstance(self.value, bool):
                raise ValueError("const nodes need an int or float value")
        elif self.value is not None:
            raise ValueError(f"{self.op!r} nodes carry no value")

    @property
    def arity(self) -> int:
        return ARITY[self.op]

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __add__(self, other: "Expr") -> "Expr":
        return Expr("add", (self, other))

    def __sub__(self, other: "Expr") -> "Expr":
        return Expr("sub", (self, other))

    def __mul__(self, other: "Expr") -> "Expr":
        return Expr("mul", (self, other))

    def __truediv__(self, other: "Expr") -> "Expr":
        return Expr("div", (self, other))

    def __repr__(self) -> str:
        return f"Expr({format_expression(self)!r})"


X = Expr("x")
Y = Expr("y")


def const(value: int | float) -> Expr:
    return Expr("const", value=value)


def log(e: Expr) -> Expr:
    return Expr("log", (e,))


def square(e: Expr) -> Expr:
    return Expr("square", (e,))


def sqrt(e: Expr) -> Expr:
    return Expr("sqrt", (e,))


# ---------------------------------------------------------------------------
# Structure helpers


def size(e: Expr) -> int:
    """Number of nodes in the tree."""
    return 1 + sum(size(c) for c in e.children)


def depth(e: Expr) -> int:
    """Depth of the tree with the root at depth 0."""
    if e.is_leaf:
        return 0
    return 1 + max(depth(c) for c in e.children)


def preorder(e: Expr) -> Iterator[Expr]:
    """Yield nodes in pre-order; node indices elsewhere refer to this order."""
    yield e
    for c in e.children:
        yield from preorder(c)


def subtree_at(e: Expr, index: int) -> Expr:
    for i, node in enumerate(preorder(e)):
        if i == index:
            return node
    raise IndexError(f"node index {index} out of range for tree of size {size(e)}")


def replace_subtree(e: Expr, index: int, replacement: Expr) -> Expr:
    """Return a copy of ``e`` with the subtree at pre-order ``index`` swapped out."""
    if index == 0:
        return replacement
    offset = 1
    new_children = []
    replaced = False
    for child in e.children:
        child_size = size(child)
        if not replaced and offset <= index < offset + child_size:
            new_children.append(replace_subtree(child, index - offset, replacement))
            replaced = True
        else:
            new_children.append(child)
        offset += child_size
    if not replaced:
        raise IndexError(f"node index {index} out of range for tree of size {size(e)}")
    return Expr(e.op, tuple(new_children), e.value)


def contains_required_leaves(e: Expr) -> bool:
    """True iff the tree contains at least one ``x`` and one ``y`` leaf."""
    has_x = has_y = False
    for node in preorder(e):
        if node.op == "x":
            has_x = True
        elif node.op == "y":
            has_y = True
        if has_x and has_y:
            return True
    return False


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(e: Expr, x: float, y: float) -> float | _Invalid:
    """Evaluate at a single point; returns INVALID instead of raising on
    log/sqrt domain violations and division by zero."""
    op = e.op
    if op == "x":
        return float(x)
    if op == "y":
        return float(y)
    if op == "const":
        return float(e.value)
    a = evaluate(e.children[0], x, y)
    if a is INVALID:
        return INVALID
    if op == "log":
        return math.log(a) if a > 0.0 else INVALID
    if op == "square":
        return a * a
    if op == "sqrt":
        return math.sqrt(a) if a >= 0.0 else INVALID
    b = evaluate(e.children[1], x, y)
    if b is INVALID:
        return INVALID
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    # div
    return a / b if b != 0.0 else INVALID


def evaluate_array(e: Expr, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized evaluation. Domain violations yield nan/inf entries, which
    the training loop detects; the scalar path above is the reference for
    Invalid semantics."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(all="ignore"):
        return _eval_array(e, x, y)


def _eval_array(e: Expr, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    op = e.op
    if op == "x":
        return x
    if op == "y":
        return y
    if op == "const":
        return np.broadcast_to(np.float64(e.value), np.broadcast_shapes(x.shape, y.shape))
    a = _eval_array(e.children[0], x, y)
    if op == "log":
        return np.log(np.where(a > 0.0, a, np.nan))
    if op == "square":
        return a * a
    if op == "sqrt":
        return np.sqrt(a)
    b = _eval_array(e.children[1], x, y)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    return a / b


# ---------------------------------------------------------------------------
# Symbolic differentiation

# Smart constructors fold constants and drop additive/multiplicative
# identities so derivative trees stay small. Only differentiate_y uses them;
# search-facing operators never rewrite user trees.


def _is_const(e: Expr, value: float | None = None) -> bool:
    return e.op == "const" and (value is None or float(e.value) == value)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    return Expr("add", (a, b))


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    return Expr("sub", (a, b))


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    return Expr("mul", (a, b))


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return const(0)
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and float(b.value) != 0.0:
        return const(a.value / b.value)
    return Expr("div", (a, b))


def differentiate_y(e: Expr) -> Expr:
    """Symbolic partial derivative with respect to the ``y`` leaf.

    x and constant leaves differentiate to 0. The result stays inside the
    node set above (it may contain integer constants beyond {1, -1}); domain
    violations surface when the derivative tree is evaluated.
    """
    op = e.op
    if op == "y":
        return const(1)
    if op in ("x", "const"):
        return const(0)
    u = e.children[0]
    du = differentiate_y(u)
    if op == "log":
        return _div(du, u)
    if op == "square":
        return _mul(const(2), _mul(u, du))
    if op == "sqrt":
        return _div(du, _mul(const(2), Expr("sqrt", (u,))))
    v = e.children[1]
    dv = differentiate_y(v)
    if op == "add":
        return _add(du, dv)
    if op == "sub":
        return _sub(du, dv)
    if op == "mul":
        return _add(_mul(du, v), _mul(u, dv))
    # quotient rule: (u'v - uv') / v^2
    return _div(_sub(_mul(du, v), _mul(u, dv)), Expr("square", (v,)))


# ---------------------------------------------------------------------------
# Canonicalization

CanonicalKey = bytes


def _canonical_text(e: Expr) -> str:
    if e.is_leaf:
        return _format_atom(e)
    parts = [_canonical_text(c) for c in e.children]
    if e.op in COMMUTATIVE_OPS:
        parts.sort()
    return f"({e.op} {' '.join(parts)})"


def canonicalize(e: Expr) -> CanonicalKey:
    """Deterministic key identifying trees up to commutative operand order.

    Operands of add/mul are sorted by their canonical serialization before
    the key is derived; no other algebraic rewriting is applied.
    """
    return _canonical_text(e).encode("utf-8")


# ---------------------------------------------------------------------------
# Text format


class ExpressionSyntaxError(ValueError):
    """Raised by parse_expression; carries the offending character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def _format_atom(e: Expr) -> str:
    if e.op == "x":
        return "x"
    if e.op == "y":
        return "y"
    v = e.value
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float) and v.is_integer() and abs(v) < 1e15:
        return repr(v)  # keeps the ".0" so float constants stay floats
    return repr(v)


def format_expression(e: Expr) -> str:
    if e.is_leaf:
        return _format_atom(e)
    inner = " ".join(format_expression(c) for c in e.children)
    return f"({e.op} {inner})"


_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")
_INT = re.compile(r"[+-]?\d+\Z")
_FLOAT = re.compile(r"[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\Z")


def _tokenize(s: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(s):
        m = _TOKEN.match(s, pos)
        if m is None:
            break
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    return tokens


def parse_expression(s: str) -> Expr:
    """Parse the s-expression format produced by :func:`format_expression`."""
    tokens = _tokenize(s)
    expr, next_index = _parse(tokens, 0, len(s))
    if next_index != len(tokens):
        raise ExpressionSyntaxError("trailing input after expression", tokens[next_index][1])
    return expr


def _parse(tokens: list[tuple[str, int]], i: int, end: int) -> tuple[Expr, int]:
    if i >= len(tokens):
        raise ExpressionSyntaxError("unexpected end of input", end)
    tok, pos = tokens[i]
    if tok == ")":
        raise ExpressionSyntaxError("unexpected ')'", pos)
    if tok != "(":
        return _parse_atom(tok, pos), i + 1
    if i + 1 >= len(tokens):
        raise ExpressionSyntaxError("unexpected end of input", end)
    op, op_pos = tokens[i + 1]
    if op in ("(", ")"):
        raise ExpressionSyntaxError("expected an operator name after '('", op_pos)
    if op not in ARITY or ARITY[op] == 0:
        raise ExpressionSyntaxError(f"unknown operator {op!r}", op_pos)
    i += 2
    children = []
    for _ in range(ARITY[op]):
        child, i = _parse(tokens, i, end)
        children.append(child)
    if i >= len(tokens):
        raise ExpressionSyntaxError("unexpected end of input", end)
    closing, close_pos = tokens[i]
    if closing != ")":
        raise ExpressionSyntaxError(
            f"expected ')' to close {op!r}, found {closing!r}", close_pos
        )
    return Expr(op, tuple(children)), i + 1


def _parse_atom(tok: str, pos: int) -> Expr:
    if tok == "x":
        return X
    if tok == "y":
        return Y
    if _INT.match(tok):
        return const(int(tok))
    if _FLOAT.match(tok):
        return const(float(tok))
    raise ExpressionSyntaxError(f"unknown atom {tok!r}", pos)


# ---------------------------------------------------------------------------
# Random generation

_KIND_ORDER = ("add", "sub", "mul", "div", "log", "square", "sqrt", "x", "y", "1", "-1")
_KIND_ARITY = {k: ARITY.get(k, 0) for k in _KIND_ORDER}

DEFAULT_WEIGHTS: Mapping[str, float] = {
    "log": 3.0,
    "x": 3.0,
    "y": 3.0,
    "sqrt": 2.0,
    "add": 1.0,
    "sub": 1.0,
    "mul": 1.0,
    "div": 1.0,
    "square": 1.0,
    "1": 1.0,
    "-1": 1.0,
}


@dataclass(frozen=True)
class GenerationWeights:
    """Per-kind draw weights for random tree generation and mutation.

    Kinds are the operator names plus the leaf tokens ``x``, ``y``, ``1``
    and ``-1``. All weights must be nonnegative and at least one leaf kind
    must be positive, so a leaf can always be drawn at the depth limit.
    """

    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def __post_init__(self) -> None:
        unknown = set(self.weights) - set(_KIND_ORDER)
        if unknown:
            raise ValueError(f"unknown node kinds in weights: {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be nonnegative")
        if not any(
            self.weights.get(k, 0.0) > 0 for k in _KIND_ORDER if _KIND_ARITY[k] == 0
        ):
            raise ValueError("at least one leaf kind needs positive weight")

    def draw(self, rng: np.random.Generator, arities: tuple[int, ...]) -> str:
        """Draw a node kind with the given arities, proportionally to weight."""
        kinds = [
            k
            for k in _KIND_ORDER
            if _KIND_ARITY[k] in arities and self.weights.get(k, 0.0) > 0
        ]
        if not kinds:
            raise ValueError(f"no drawable kind with arity in {arities}")
        probs = np.array([self.weights[k] for k in kinds], dtype=float)
        probs /= probs.sum()
        return kinds[int(rng.choice(len(kinds), p=probs))]


def leaf_for_kind(kind: str) -> Expr:
    if kind == "x":
        return X
    if kind == "y":
        return Y
    return const(int(kind))


def random_tree(
    weights: GenerationWeights, max_depth: int, rng: np.random.Generator
) -> Expr:
    """Grow a random tree of depth at most ``max_depth`` (root at depth 0).

    At every position a kind is drawn proportionally to its weight; at the
    depth limit only leaf kinds are drawn.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    arities = (0,) if max_depth == 0 else (0, 1, 2)
    kind = weights.draw(rng, arities)
    arity = _KIND_ARITY[kind]
    if arity == 0:
        return leaf_for_kind(kind)
    children = tuple(random_tree(weights, max_depth - 1, rng) for _ in range(arity))
    return Expr(kind, children)
