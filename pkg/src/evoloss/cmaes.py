"""(mu/mu_w, lambda)-CMA-ES with weighted rank-mu covariance updates.

Minimization only; callers maximizing an accuracy pass ``1 - accuracy``.
The ask/tell interface owns no objective: ``ask`` samples lambda candidates
from N(mean, sigma^2 C) and ``tell`` updates the state from their
fitnesses. ``minimize`` is the closed-loop driver.

Strategy constants (n = dimension, defaults):

    lambda   4 + floor(3 ln n)            population size
    mu       floor(lambda / 2)            parents kept
    w_i      ln(mu + 1/2) - ln(i)         recombination weights, normalized
    mu_eff   1 / sum w_i^2                variance-effective selection mass
    c_sigma  (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma  1 + 2 max(0, sqrt((mu_eff - 1)/(n + 1)) - 1) + c_sigma
    c_c      (4 + mu_eff/n) / (n + 4 + 2 mu_eff/n)
    c_1      2 / ((n + 1.3)^2 + mu_eff)
    c_mu     min(1 - c_1, 2 (mu_eff - 2 + 1/mu_eff) / ((n + 2)^2 + mu_eff))
    chi_n    E||N(0, I)|| ~ sqrt(n) (1 - 1/(4n) + 1/(21 n^2))

The eigendecomposition of C is refreshed every
max(1, floor(1 / (10 (c_1 + c_mu) n))) generations; between refreshes
``ask`` keeps sampling with the cached basis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NumericalHealthError(RuntimeError):
    """Covariance lost numerical validity (non-finite or indefinite)."""

    def __init__(self, message: str, generation: int):
        super().__init__(f"{message} (generation {generation})")
        self.generation = generation


@dataclass
class CmaesConfig:
    """Run settings. ``lam``, ``mu`` and ``weights`` default from the
    dimension as in the table above; ``sigma0`` defaults to 1.5."""

    dimension: int
    sigma0: float = 1.5
    lam: int | None = None
    mu: int | None = None
    weights: tuple[float, ...] | None = None
    max_evaluations: int = 10_000
    target_fitness: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.lam is None:
            self.lam = 4 + int(math.floor(3 * math.log(self.dimension)))
        if self.lam < 2:
            raise ValueError("lam must be at least 2")
        if self.mu is None:
            self.mu = self.lam // 2
        if not 1 <= self.mu <= self.lam:
            raise ValueError("mu must satisfy 1 <= mu <= lam")
        if self.weights is None:
            raw = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
            self.weights = tuple(raw / raw.sum())
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.mu,):
            raise ValueError(f"expected {self.mu} recombination weights, got {w.shape}")
        if np.any(w <= 0):
            raise ValueError("recombination weights must be positive")
        if self.mu > 1 and np.any(np.diff(w) >= 0):
            raise ValueError("recombination weights must be strictly decreasing")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("recombination weights must sum to 1")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be positive")


@dataclass
class CmaesState:
    """Mutable optimizer state; one logical owner must alternate ask/tell."""

    cfg: CmaesConfig
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    path_sigma: np.ndarray
    path_c: np.ndarray
    eigen_basis: np.ndarray
    eigen_values: np.ndarray  # sqrt of covariance eigenvalues
    inv_sqrt_cov: np.ndarray
    generation: int = 0
    evaluations: int = 0
    last_decomposition: int = 0
    # derived constants, fixed at init
    mu_eff: float = 0.0
    c_sigma: float = 0.0
    d_sigma: float = 0.0
    c_c: float = 0.0
    c_1: float = 0.0
    c_mu: float = 0.0
    chi_n: float = 0.0
    eigen_interval: int = 1


def cmaes_init(x0: Sequence[float], cfg: CmaesConfig) -> CmaesState:
    """Fresh state: mean at x0, step size sigma0, identity covariance."""
    x0 = np.asarray(x0, dtype=float)
    n = cfg.dimension
    if x0.shape != (n,):
        raise ValueError(f"x0 must have length {n}, got shape {x0.shape}")

    w = np.asarray(cfg.weights, dtype=float)
    mu_eff = 1.0 / float(np.sum(w**2))
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
    c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n**2))

    return CmaesState(
        cfg=cfg,
        mean=x0.copy(),
        sigma=float(cfg.sigma0),
        cov=np.eye(n),
        path_sigma=np.zeros(n),
        path_c=np.zeros(n),
        eigen_basis=np.eye(n),
        eigen_values=np.ones(n),
        inv_sqrt_cov=np.eye(n),
        mu_eff=mu_eff,
        c_sigma=c_sigma,
        d_sigma=d_sigma,
        c_c=c_c,
        c_1=c_1,
        c_mu=c_mu,
        chi_n=chi_n,
        eigen_interval=max(1, int(math.floor(1.0 / (10.0 * (c_1 + c_mu) * n)))),
    )


def ask(state: CmaesState, rng: np.random.Generator) -> np.ndarray:
    """Sample lambda candidates, returned as rows of a (lam, n) array."""
    n = state.cfg.dimension
    z = rng.standard_normal((state.cfg.lam, n))
    # x = m + sigma * B D z
    return state.mean + state.sigma * (z * state.eigen_values) @ state.eigen_basis.T


def tell(
    state: CmaesState,
    candidates: Sequence[np.ndarray],
    fitnesses: Sequence[float],
) -> CmaesState:
    """Rank candidates (lower fitness is better; non-finite ranks worst,
    ties keep submission order) and apply the mean, step-size and
    covariance updates."""
    lam, mu = state.cfg.lam, state.cfg.mu
    cands = np.asarray(candidates, dtype=float)
    fits = np.asarray(fitnesses, dtype=float)
    if cands.shape != (lam, state.cfg.dimension):
        raise ValueError(f"expected {lam} candidates of dimension {state.cfg.dimension}")
    if fits.shape != (lam,):
        raise ValueError(f"expected {lam} fitness values, got {fits.shape}")

    ranked = np.where(np.isfinite(fits), fits, np.inf)
    order = np.argsort(ranked, kind="stable")
    w = np.asarray(state.cfg.weights, dtype=float)

    old_mean = state.mean
    steps = (cands[order[:mu]] - old_mean) / state.sigma  # y_i, mu best
    step_w = w @ steps
    state.mean = old_mean + state.sigma * step_w

    c_s, d_s = state.c_sigma, state.d_sigma
    state.path_sigma = (1.0 - c_s) * state.path_sigma + math.sqrt(
        c_s * (2.0 - c_s) * state.mu_eff
    ) * (state.inv_sqrt_cov @ step_w)
    norm_ps = float(np.linalg.norm(state.path_sigma))
    state.sigma *= math.exp((c_s / d_s) * (norm_ps / state.chi_n - 1.0))

    expected = math.sqrt(1.0 - (1.0 - c_s) ** (2 * (state.generation + 1)))
    h_sigma = 1.0 if norm_ps / expected < (1.4 + 2.0 / (state.cfg.dimension + 1.0)) * state.chi_n else 0.0
    c_c = state.c_c
    state.path_c = (1.0 - c_c) * state.path_c + h_sigma * math.sqrt(
        c_c * (2.0 - c_c) * state.mu_eff
    ) * step_w

    rank_one = np.outer(state.path_c, state.path_c)
    rank_mu = (w[:, None, None] * (steps[:, :, None] @ steps[:, None, :])).sum(axis=0)
    stall = (1.0 - h_sigma) * c_c * (2.0 - c_c)  # variance make-up when h_sigma stalls the path
    state.cov = (
        (1.0 - state.c_1 - state.c_mu) * state.cov
        + state.c_1 * (rank_one + stall * state.cov)
        + state.c_mu * rank_mu
    )
    state.cov = (state.cov + state.cov.T) / 2.0

    state.generation += 1
    state.evaluations += lam
    if state.generation - state.last_decomposition >= state.eigen_interval:
        _decompose(state)
    return state


def _decompose(state: CmaesState) -> None:
    if not np.all(np.isfinite(state.cov)):
        raise NumericalHealthError("covariance has non-finite entries", state.generation)
    values, basis = np.linalg.eigh(state.cov)
    floor = 1e-14 * max(float(values.max()), 1e-300)
    if float(values.min()) < -1e-10 * max(float(values.max()), 1.0):
        raise NumericalHealthError("covariance is not positive definite", state.generation)
    values = np.maximum(values, floor)
    state.eigen_values = np.sqrt(values)
    state.eigen_basis = basis
    state.inv_sqrt_cov = basis @ np.diag(1.0 / state.eigen_values) @ basis.T
    state.last_decomposition = state.generation


@dataclass
class HistoryRow:
    generation: int
    evaluations: int
    sigma: float
    best_fitness: float  # best seen so far (non-increasing)
    mean_fitness: float  # mean of the generation's finite fitnesses


@dataclass
class MinimizeResult:
    best: np.ndarray
    best_fitness: float
    history: list[HistoryRow] = field(default_factory=list)


def minimize(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    cfg: CmaesConfig,
    rng: np.random.Generator | None = None,
) -> MinimizeResult:
    """Ask/tell loop until the evaluation budget or target fitness is hit;
    returns the best candidate ever evaluated."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    state = cmaes_init(x0, cfg)
    best_x = np.asarray(x0, dtype=float).copy()
    best_f = math.inf
    history: list[HistoryRow] = []

    while state.evaluations + cfg.lam <= cfg.max_evaluations:
        candidates = ask(state, rng)
        fits = np.array([float(objective(c)) for c in candidates])
        finite = fits[np.isfinite(fits)]
        gen_best = int(np.argmin(np.where(np.isfinite(fits), fits, np.inf)))
        if np.isfinite(fits[gen_best]) and fits[gen_best] < best_f:
            best_f = float(fits[gen_best])
            best_x = candidates[gen_best].copy()
        tell(state, candidates, fits)
        history.append(
            HistoryRow(
                generation=state.generation,
                evaluations=state.evaluations,
                sigma=state.sigma,
                best_fitness=best_f,
                mean_fitness=float(finite.mean()) if finite.size else math.inf,
            )
        )
        if cfg.target_fitness is not None and best_f <= cfg.target_fitness:
            break
    return MinimizeResult(best=best_x, best_fitness=best_f, history=history)


def write_history_csv(path, history: Sequence[HistoryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "evaluations", "sigma", "best_fitness", "mean_fitness"])
        for row in history:
            writer.writerow(
                [row.generation, row.evaluations, repr(row.sigma), repr(row.best_fitness), repr(row.mean_fitness)]
            )
