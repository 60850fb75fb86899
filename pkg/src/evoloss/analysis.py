"""Binary-classification loss curves, minima, and output histograms.

For two classes the label and prediction vectors collapse to <x0, 1-x0> and
<y0, 1-y0>, so any per-class body f induces a one-variable curve

    g(y0) = -(1/2) * (f(x0, y0) + f(1-x0, 1-y0))

evaluated with the trainer's output clipping. Minima of g locate where a
trained network's confidence settles; histograms of softmax outputs show the
same effect empirically.
"""

from __future__ import annotations

import csv as _csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import CoeffExpr
from .expressions import Expr, evaluate_array
from .losses import as_body_expression
from .network import TrainedModel

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def binary_expand(
    loss: "Expr | CoeffExpr | str",
    x0: int,
    clip_epsilon: float = 1e-7,
) -> Callable[[np.ndarray], np.ndarray]:
    """Return the binary curve g(y0) for a fixed true label x0 in {0, 1}."""
    if x0 not in (0, 1):
        raise ValueError("x0 must be 0 or 1")
    body = as_body_expression(loss)

    def curve(y0):
        y0 = np.clip(np.asarray(y0, dtype=float), clip_epsilon, 1.0 - clip_epsilon)
        first = evaluate_array(body, np.full_like(y0, float(x0)), y0)
        second = evaluate_array(body, np.full_like(y0, float(1 - x0)), 1.0 - y0)
        return -0.5 * (first + second)

    return curve


def find_minimum(
    curve: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    tol: float = 1e-6,
    grid: int = 1000,
) -> float:
    """Argmin of the curve on [lo, hi]: a grid scan brackets the global
    minimum, then golden-section search refines it to ``tol``."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    ys = np.linspace(lo, hi, grid)
    values = np.asarray(curve(ys), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("curve takes non-finite values inside the bracket")
    k = int(np.argmin(values))
    a = ys[max(k - 1, 0)]
    b = ys[min(k + 1, grid - 1)]

    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = float(curve(np.array([x1]))[0])
    f2 = float(curve(np.array([x2]))[0])
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = float(curve(np.array([x1]))[0])
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = float(curve(np.array([x2]))[0])
    return (a + b) / 2.0


def monotone_direction(
    curve: Callable[[np.ndarray], np.ndarray],
    lo: float = 0.01,
    hi: float = 0.99,
    grid: int = 1000,
) -> str:
    """'decreasing', 'increasing', or 'none' from a grid sign test."""
    ys = np.linspace(lo, hi, grid)
    diffs = np.diff(np.asarray(curve(ys), dtype=float))
    if np.all(diffs < 0):
        return "decreasing"
    if np.all(diffs > 0):
        return "increasing"
    return "none"


def interior_minimum_profile(
    curve: Callable[[np.ndarray], np.ndarray],
    lo: float = 0.01,
    hi: float = 0.99,
    grid: int = 1000,
) -> dict:
    """Grid evidence for a non-monotone curve: location of the grid minimum
    and whether the curve rises on a nonempty segment after it."""
    ys = np.linspace(lo, hi, grid)
    values = np.asarray(curve(ys), dtype=float)
    k = int(np.argmin(values))
    rises_after = k < grid - 1 and bool(np.any(np.diff(values[k:]) > 0))
    return {
        "argmin": float(ys[k]),
        "interior": 0 < k < grid - 1,
        "rises_after": rises_after,
    }


@dataclass(frozen=True)
class BinaryLossCurve:
    loss_name: str
    x0: int
    y0: np.ndarray
    values: np.ndarray
    argmin_y0: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["y0", "loss"])
            for y0, v in zip(self.y0, self.values):
                writer.writerow([repr(float(y0)), repr(float(v))])


def sample_curve(
    loss: "Expr | CoeffExpr | str",
    x0: int,
    loss_name: str = "",
    lo: float = 0.01,
    hi: float = 0.99,
    grid: int = 1000,
) -> BinaryLossCurve:
    curve = binary_expand(loss, x0)
    ys = np.linspace(lo, hi, grid)
    values = np.asarray(curve(ys), dtype=float)
    return BinaryLossCurve(
        loss_name=loss_name,
        x0=x0,
        y0=ys,
        values=values,
        argmin_y0=find_minimum(curve, lo, hi),
    )


@dataclass(frozen=True)
class OutputHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    provenance: str = ""

    @property
    def mode_bin(self) -> int:
        return int(np.argmax(self.counts))

    @property
    def mode_center(self) -> float:
        k = self.mode_bin
        return float((self.bin_edges[k] + self.bin_edges[k + 1]) / 2.0)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def output_histogram(
    model: TrainedModel,
    features: np.ndarray,
    bins: int = 50,
    max_class_only: bool = False,
    provenance: str = "",
) -> OutputHistogram:
    """Histogram of softmax outputs over [0, 1].

    By default every output value is binned (counts sum to samples *
    classes); with ``max_class_only`` only each sample's largest output is,
    which profiles prediction confidence.
    """
    probs = model.predict_proba(np.asarray(features, dtype=float))
    values = probs.max(axis=1) if max_class_only else probs.ravel()
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return OutputHistogram(bin_edges=edges, counts=counts, provenance=provenance)
