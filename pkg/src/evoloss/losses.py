"""Built-in per-class loss bodies used as baselines and analysis subjects.

Each builtin is the scalar body f(x_i, y_i); the trainer applies the fixed
reduction wrapper L = -(1/n) * sum_i f(x_i, y_i) over the n classes.

* ``cross_entropy``: f = x * log(y)
* ``baikal``:        f = log(y) - x / y
* ``baikal_cma``:    baikal with six tuned multiplicative coefficients,
                     c0 * (c1*log(c2*y) - c3*(c4*x)/(c5*y))
"""

from __future__ import annotations

from dataclasses import dataclass

from .coefficients import CoeffExpr, attach_coefficients, bind
from .expressions import Expr, X, Y, log, parse_expression

BAIKAL_CMA_COEFFICIENTS = (2.7279, 0.9863, 1.5352, -1.1135, 1.3716, -0.8411)


@dataclass(frozen=True)
class BuiltinLoss:
    name: str
    body: Expr
    formula: str
    coefficients: CoeffExpr | None = None


def _cross_entropy() -> BuiltinLoss:
    return BuiltinLoss(
        name="cross_entropy",
        body=X * log(Y),
        formula="-(1/n) * sum_i x_i * log(y_i)",
    )


def _baikal() -> BuiltinLoss:
    return BuiltinLoss(
        name="baikal",
        body=log(Y) - X / Y,
        formula="-(1/n) * sum_i log(y_i) - x_i / y_i",
    )


def _baikal_cma() -> BuiltinLoss:
    # Slots in pre-order over the baikal body (sub, log, y, div, x, y) carry
    # c0..c5 respectively.
    coeffs = attach_coefficients(log(Y) - X / Y).with_values(BAIKAL_CMA_COEFFICIENTS)
    return BuiltinLoss(
        name="baikal_cma",
        body=bind(coeffs),
        formula="-(1/n) * sum_i c0*(c1*log(c2*y_i) - c3*(c4*x_i)/(c5*y_i)), "
        "c = (2.7279, 0.9863, 1.5352, -1.1135, 1.3716, -0.8411)",
        coefficients=coeffs,
    )


_BUILTINS = {
    "cross_entropy": _cross_entropy,
    "baikal": _baikal,
    "baikal_cma": _baikal_cma,
}


def builtin_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin(name: str) -> BuiltinLoss:
    """Look up a builtin by name; raises ValueError for unknown names."""
    key = name.strip().lower()
    if key not in _BUILTINS:
        raise ValueError(f"unknown builtin loss {name!r}; known: {', '.join(_BUILTINS)}")
    return _BUILTINS[key]()


def as_body_expression(loss: "str | Expr | CoeffExpr | BuiltinLoss") -> Expr:
    """Normalize the accepted loss specifications to a plain body tree.

    Strings name a builtin or, if they start with ``(`` or are a bare atom,
    parse as an expression in the text format.
    """
    if isinstance(loss, Expr):
        return loss
    if isinstance(loss, BuiltinLoss):
        return loss.body
    if isinstance(loss, CoeffExpr):
        return bind(loss)
    if isinstance(loss, str):
        name = loss.strip().lower()
        if name in _BUILTINS:
            return _BUILTINS[name]().body
        if name.startswith("(") or name in ("x", "y"):
            return parse_expression(loss)
        raise ValueError(
            f"unknown loss {loss!r}; expected a builtin name ({', '.join(_BUILTINS)}) "
            "or an s-expression"
        )
    raise TypeError(f"cannot interpret {type(loss).__name__} as a loss body")
