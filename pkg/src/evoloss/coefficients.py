"""Multiplicative node coefficients for tuning a discovered expression.

Every node of a tree can carry a multiplicative coefficient; with all
coefficients at 1 the parameterized tree equals the original. Pruning drops
slots whose effect another slot can absorb (a factor on a mul/div operand
folds into the parent's factor; a factor on an add/sub node distributes onto
its children), shrinking the search space without shrinking the family of
representable functions.

Serialized form: the base expression in text format plus the coefficient
values, with slots ordered by pre-order node index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .expressions import Expr, const, format_expression, parse_expression, preorder, size


@dataclass(frozen=True)
class CoeffExpr:
    """A base tree plus coefficient slots at selected pre-order positions."""

    base: Expr
    slots: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        n = size(self.base)
        if any(not 0 <= s < n for s in self.slots):
            raise ValueError("slot index out of range for base tree")
        if list(self.slots) != sorted(set(self.slots)):
            raise ValueError("slots must be strictly increasing pre-order indices")
        if len(self.values) != len(self.slots):
            raise ValueError(
                f"expected {len(self.slots)} coefficient values, got {len(self.values)}"
            )

    @property
    def dimension(self) -> int:
        return len(self.slots)

    def with_values(self, values: Sequence[float]) -> "CoeffExpr":
        values = tuple(float(v) for v in values)
        if len(values) != len(self.slots):
            raise ValueError(
                f"expected {len(self.slots)} coefficient values, got {len(values)}"
            )
        return CoeffExpr(self.base, self.slots, values)

    def to_dict(self) -> dict:
        return {
            "expression": format_expression(self.base),
            "slots": list(self.slots),
            "values": list(self.values),
            "slot_order": "preorder",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoeffExpr":
        return cls(
            base=parse_expression(d["expression"]),
            slots=tuple(int(s) for s in d["slots"]),
            values=tuple(float(v) for v in d["values"]),
        )


def attach_coefficients(e: Expr) -> CoeffExpr:
    """One multiplicative slot per node, all initialized to 1."""
    return CoeffExpr(e, tuple(range(size(e))), (1.0,) * size(e))


def prune_absorbable(ce: CoeffExpr) -> CoeffExpr:
    """Drop slots another slot can absorb.

    A slot is kept iff its node is not add/sub (those factors distribute
    onto the children) and its parent is not mul/div (those factors fold
    into the parent's slot). Absorbability is decided structurally from the
    operator kinds only; the reduced form spans the same function family.
    Only slots present in ``ce`` are considered.
    """
    parent_op: dict[int, str] = {}
    ops: list[str] = []

    def walk(node: Expr, index: int) -> int:
        ops.append(node.op)
        child_index = index + 1
        for child in node.children:
            parent_op[child_index] = node.op
            child_index = walk(child, child_index)
        return child_index

    walk(ce.base, 0)
    kept = [
        (s, v)
        for s, v in zip(ce.slots, ce.values)
        if ops[s] not in ("add", "sub") and parent_op.get(s) not in ("mul", "div")
    ]
    if not kept:
        return CoeffExpr(ce.base, (), ())
    slots, values = zip(*kept)
    return CoeffExpr(ce.base, tuple(slots), tuple(values))


def bind(ce: CoeffExpr, values: Sequence[float] | None = None) -> Expr:
    """Expand the coefficients into the tree: each slot node becomes
    ``(mul c node)``. The result is an ordinary expression, so evaluation
    and differentiation apply unchanged."""
    if values is None:
        values = ce.values
    values = [float(v) for v in values]
    if len(values) != len(ce.slots):
        raise ValueError(f"expected {len(ce.slots)} coefficient values, got {len(values)}")
    by_slot = dict(zip(ce.slots, values))

    def rebuild(node: Expr, index: int) -> tuple[Expr, int]:
        child_index = index + 1
        children = []
        for child in node.children:
            new_child, child_index = rebuild(child, child_index)
            children.append(new_child)
        rebuilt = Expr(node.op, tuple(children), node.value)
        if index in by_slot:
            rebuilt = Expr("mul", (const(by_slot[index]), rebuilt))
        return rebuilt, child_index

    expanded, _ = rebuild(ce.base, 0)
    return expanded
