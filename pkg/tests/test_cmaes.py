import math

import numpy as np
import pytest

from evoloss.cmaes import (
    CmaesConfig,
    CmaesState,
    NumericalHealthError,
    ask,
    cmaes_init,
    minimize,
    tell,
    write_history_csv,
)


def sphere(v):
    return float(v @ v)


def rosenbrock(v):
    return float(100.0 * (v[1] - v[0] ** 2) ** 2 + (1.0 - v[0]) ** 2)


class TestConfig:
    def test_dimension_defaults(self):
        cfg = CmaesConfig(dimension=10)
        assert cfg.lam == 4 + int(math.floor(3 * math.log(10)))
        assert cfg.mu == cfg.lam // 2
        w = np.array(cfg.weights)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(w) < 0)

    def test_sigma_default(self):
        assert CmaesConfig(dimension=6).sigma0 == 1.5

    def test_validation(self):
        with pytest.raises(ValueError):
            CmaesConfig(dimension=0)
        with pytest.raises(ValueError):
            CmaesConfig(dimension=3, sigma0=-1.0)
        with pytest.raises(ValueError):
            CmaesConfig(dimension=3, lam=8, mu=9)
        with pytest.raises(ValueError):
            CmaesConfig(dimension=3, lam=8, mu=2, weights=(0.5, 0.5))  # not decreasing


class TestInit:
    def test_baikal_dimension_state(self):
        cfg = CmaesConfig(dimension=6)
        state = cmaes_init(np.ones(6), cfg)
        assert state.sigma == 1.5
        assert np.array_equal(state.mean, np.ones(6))

    def test_identity_covariance_eigenvalues(self):
        state = cmaes_init(np.zeros(4), CmaesConfig(dimension=4))
        assert np.allclose(np.linalg.eigvalsh(state.cov), 1.0)
        assert np.allclose(state.eigen_values, 1.0)

    def test_same_seed_same_first_ask(self):
        cfg = CmaesConfig(dimension=5, rng_seed=9)
        a = ask(cmaes_init(np.zeros(5), cfg), np.random.default_rng(9))
        b = ask(cmaes_init(np.zeros(5), cfg), np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cmaes_init(np.zeros(3), CmaesConfig(dimension=4))


class TestAsk:
    def test_candidate_counts(self):
        for lam in (4, 8, 16):
            cfg = CmaesConfig(dimension=3, lam=lam)
            state = cmaes_init(np.zeros(3), cfg)
            assert len(ask(state, np.random.default_rng(0))) == lam

    def test_small_sigma_collapses_to_mean(self):
        cfg = CmaesConfig(dimension=3, sigma0=1e-12)
        state = cmaes_init(np.full(3, 2.0), cfg)
        candidates = ask(state, np.random.default_rng(1))
        assert np.allclose(candidates, 2.0, atol=1e-10)

    def test_sample_covariance_matches_sigma_squared_identity(self):
        cfg = CmaesConfig(dimension=2, sigma0=0.7, lam=10_000)
        state = cmaes_init(np.zeros(2), cfg)
        candidates = ask(state, np.random.default_rng(2))
        sample_cov = np.cov(candidates.T)
        assert np.allclose(sample_cov, 0.49 * np.eye(2), atol=0.05 * 0.49)


class TestTell:
    def test_mu_one_moves_mean_to_best(self):
        cfg = CmaesConfig(dimension=2, lam=4, mu=1, weights=(1.0,))
        state = cmaes_init(np.zeros(2), cfg)
        candidates = np.array([[1.0, 0.0], [0.2, 0.1], [3.0, 3.0], [0.5, -2.0]])
        tell(state, candidates, [sphere(c) for c in candidates])
        assert np.allclose(state.mean, [0.2, 0.1])

    def test_all_equal_fitness_uses_submission_order(self):
        cfg = CmaesConfig(dimension=2, lam=4, mu=2)
        state = cmaes_init(np.zeros(2), cfg)
        candidates = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 2.0]])
        tell(state, candidates, [5.0, 5.0, 5.0, 5.0])
        w = np.array(cfg.weights)
        expected = w[0] * candidates[0] + w[1] * candidates[1]
        assert np.allclose(state.mean, expected)

    def test_non_finite_fitness_ranked_worst(self):
        cfg = CmaesConfig(dimension=2, lam=4, mu=1, weights=(1.0,))
        state = cmaes_init(np.zeros(2), cfg)
        candidates = np.array([[9.0, 9.0], [0.1, 0.1], [1.0, 1.0], [2.0, 2.0]])
        tell(state, candidates, [float("nan"), 7.0, float("inf"), 1.0])
        assert np.allclose(state.mean, [2.0, 2.0])  # fitness 1.0 wins

    def test_sphere_converges(self):
        cfg = CmaesConfig(dimension=2, sigma0=1.0, rng_seed=4)
        state = cmaes_init(np.array([3.0, 3.0]), cfg)
        rng = np.random.default_rng(4)
        for _ in range(200):
            candidates = ask(state, rng)
            tell(state, candidates, [sphere(c) for c in candidates])
        assert np.linalg.norm(state.mean) < 1e-6

    def test_length_validation(self):
        cfg = CmaesConfig(dimension=2, lam=4)
        state = cmaes_init(np.zeros(2), cfg)
        with pytest.raises(ValueError):
            tell(state, np.zeros((3, 2)), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            tell(state, np.zeros((4, 2)), [1.0, 2.0, 3.0])


class TestInvariants:
    def test_covariance_symmetric_positive_definite_long_run(self):
        # 1,000 generations on the sphere
        cfg = CmaesConfig(dimension=10, rng_seed=8)
        state = cmaes_init(np.random.default_rng(1).uniform(-5, 5, 10), cfg)
        rng = np.random.default_rng(8)
        for _ in range(1000):
            candidates = ask(state, rng)
            tell(state, candidates, [sphere(c) for c in candidates])
            assert np.max(np.abs(state.cov - state.cov.T)) < 1e-10
        assert np.linalg.eigvalsh(state.cov).min() > 0

    def test_best_so_far_monotone(self):
        cfg = CmaesConfig(dimension=5, max_evaluations=2000, rng_seed=13)
        result = minimize(sphere, np.full(5, 2.0), cfg)
        best = [row.best_fitness for row in result.history]
        assert all(b <= a for a, b in zip(best, best[1:]))

    def test_rank_invariance_under_monotone_transform(self):
        # identical mean sequences on f and exp(f) with identical seeds
        def run(transform):
            cfg = CmaesConfig(dimension=2, sigma0=0.5, rng_seed=21)
            state = cmaes_init(np.array([1.0, 1.0]), cfg)
            rng = np.random.default_rng(21)
            means = []
            for _ in range(60):
                candidates = ask(state, rng)
                tell(state, candidates, [transform(sphere(c)) for c in candidates])
                means.append(state.mean.copy())
            return np.array(means)

        plain = run(lambda f: f)
        warped = run(math.exp)
        assert np.array_equal(plain, warped)

    def test_determinism(self):
        cfg = CmaesConfig(dimension=4, max_evaluations=1200, rng_seed=33)
        r1 = minimize(sphere, np.full(4, 1.5), cfg)
        r2 = minimize(sphere, np.full(4, 1.5), cfg)
        assert [(h.sigma, h.best_fitness) for h in r1.history] == [
            (h.sigma, h.best_fitness) for h in r2.history
        ]
        assert np.array_equal(r1.best, r2.best)


class TestMinimize:
    def test_sphere_10d_benchmark(self):
        x0 = np.random.default_rng(7).uniform(-5, 5, 10)
        cfg = CmaesConfig(dimension=10, max_evaluations=5000, rng_seed=42)
        result = minimize(sphere, x0, cfg)
        assert result.best_fitness < 1e-10
        assert result.history[-1].evaluations <= 5000

    def test_rosenbrock_2d_benchmark(self):
        cfg = CmaesConfig(dimension=2, max_evaluations=20_000, rng_seed=3)
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), cfg)
        assert result.best_fitness < 1e-8
        assert result.history[-1].evaluations <= 20_000

    def test_budget_of_one_generation(self):
        cfg = CmaesConfig(dimension=3, rng_seed=1)
        cfg2 = CmaesConfig(dimension=3, max_evaluations=cfg.lam, rng_seed=1)
        result = minimize(sphere, np.zeros(3), cfg2)
        assert len(result.history) == 1

    def test_target_fitness_stops_early(self):
        cfg = CmaesConfig(dimension=3, max_evaluations=50_000, target_fitness=1e-3, rng_seed=5)
        result = minimize(sphere, np.full(3, 2.0), cfg)
        assert result.best_fitness <= 1e-3
        assert result.history[-1].evaluations < 50_000

    def test_non_finite_covariance_raises_health_error(self):
        cfg = CmaesConfig(dimension=2, lam=4, mu=2)
        state = cmaes_init(np.zeros(2), cfg)
        state.cov[0, 0] = float("nan")
        state.eigen_interval = 1
        with pytest.raises(NumericalHealthError):
            tell(state, np.zeros((4, 2)), [1.0, 2.0, 3.0, 4.0])

    def test_history_csv(self, tmp_path):
        cfg = CmaesConfig(dimension=2, max_evaluations=60, rng_seed=2)
        result = minimize(sphere, np.ones(2), cfg)
        path = tmp_path / "history.csv"
        write_history_csv(path, result.history)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "generation,evaluations,sigma,best_fitness,mean_fitness"
        assert len(lines) == len(result.history) + 1
