"""Scikit-learn estimator facade.

Three estimators wrap the functional core so the pieces compose with
pipelines, grid search and ``clone``:

* :class:`ExpressionLossClassifier` -- the softmax MLP trained under an
  arbitrary expression loss (fit/predict/predict_proba/score).
* :class:`LossFunctionSearch` -- the discovery genetic algorithm; ``fit``
  searches for the loss body whose short-budget training maximizes held-out
  accuracy on (X, y).
* :class:`CoefficientTuner` -- attaches and prunes coefficients on a given
  body and tunes them with CMA-ES against the same oracle.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cmaes import CmaesConfig, minimize
from .coefficients import attach_coefficients, bind, prune_absorbable
from .datasets import DatasetSplit
from .evalpool import EvalJob, EvaluationPool
from .evolution import FitnessCache, GaConfig, evolve
from .expressions import (
    GenerationWeights,
    contains_required_leaves,
    format_expression,
    parse_expression,
)
from .losses import as_body_expression
from .network import ModelConfig
from .seeding import derive_seed
from .training import FitnessTask, TrainConfig, train

__all__ = ["ExpressionLossClassifier", "LossFunctionSearch", "CoefficientTuner"]


def _seed_of(random_state) -> int:
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    raise TypeError("random_state must be an int seed or None")


def _holdout_split(X, y, fraction: float, seed: int) -> DatasetSplit:
    """Stratified train/validation carve-out packaged as a DatasetSplit
    (the test split stays empty; estimators score through ``score``)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("validation_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    val_idx = []
    for c in classes:
        members = np.flatnonzero(y == c)
        members = members[rng.permutation(len(members))]
        take = max(1, int(round(fraction * len(members))))
        if take >= len(members):
            raise ValueError(f"class {c} has too few samples for a validation carve-out")
        val_idx.append(members[:take])
    val_idx = np.sort(np.concatenate(val_idx))
    mask = np.zeros(len(y), dtype=bool)
    mask[val_idx] = True
    return DatasetSplit(
        train_x=X[~mask],
        train_y=y[~mask],
        val_x=X[mask],
        val_y=y[mask],
        test_x=X[:0],
        test_y=y[:0],
        num_classes=len(classes),
        provenance=f"holdout(fraction={fraction}, seed={seed})",
    )


class ExpressionLossClassifier(ClassifierMixin, BaseEstimator):
    """Softmax MLP trained by SGD under an expression loss.

    Parameters
    ----------
    loss : str or expression, default="cross_entropy"
        Builtin name, s-expression text, or a parsed body tree.
    hidden_layers : tuple of int, default=(128,)
        Hidden widths; every hidden layer uses ReLU.
    dropout : float, default=0.4
        Inverted-dropout probability after each hidden activation.
    batch_size, learning_rate, steps : SGD schedule.
    clip_epsilon : float, default=1e-7
        Softmax outputs are clipped into [clip_epsilon, 1 - clip_epsilon]
        before the loss body sees them.
    random_state : int or None
        Seeds both weight initialization and batch sampling.

    Attributes
    ----------
    classes_ : ndarray of the sorted class labels seen in fit.
    model_ : the trained network.
    report_ : the training FitnessReport (failure flags, final loss).
    """

    def __init__(
        self,
        loss="cross_entropy",
        hidden_layers=(128,),
        dropout=0.4,
        batch_size=100,
        learning_rate=0.01,
        steps=2000,
        clip_epsilon=1e-7,
        random_state=None,
    ):
        self.loss = loss
        self.hidden_layers = hidden_layers
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.clip_epsilon = clip_epsilon
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        codes = np.searchsorted(self.classes_, y)
        seed = _seed_of(self.random_state)
        data = DatasetSplit(
            train_x=X,
            train_y=codes,
            val_x=X,
            val_y=codes,
            test_x=X[:0],
            test_y=codes[:0],
            num_classes=len(self.classes_),
            provenance="estimator-fit",
        )
        model_cfg = ModelConfig(
            input_dim=X.shape[1],
            num_classes=len(self.classes_),
            hidden_layers=tuple(self.hidden_layers),
            dropout=self.dropout,
            weight_init_seed=derive_seed(seed, "init"),
        )
        train_cfg = TrainConfig(
            batch_size=min(self.batch_size, len(y)),
            learning_rate=self.learning_rate,
            steps=self.steps,
            eval_every=self.steps,  # curve kept minimal: the final point only
            clip_epsilon=self.clip_epsilon,
            rng_seed=derive_seed(seed, "sgd"),
        )
        self.model_, self.report_, self.curve_ = train(
            model_cfg, data, as_body_expression(self.loss), train_cfg
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict_proba(X)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class LossFunctionSearch(BaseEstimator):
    """Genetic-programming search for a loss function body.

    ``fit(X, y)`` carves a stratified validation set, then evolves a
    population of expression trees whose fitness is the validation accuracy
    of a small classifier trained for ``steps`` SGD steps with that loss.

    Attributes
    ----------
    best_expression_ : str, the best body in text form.
    best_fitness_ : float, its validation accuracy.
    report_ : the full EvolutionReport.
    """

    def __init__(
        self,
        population_size=80,
        elites_per_generation=6,
        recombination_probability=0.8,
        mutation_rate=0.05,
        replace_with_leaf_rate=0.025,
        leaf_to_subtree_rate=0.025,
        initial_max_depth=2,
        generations=10,
        hidden_layers=(16,),
        dropout=0.0,
        batch_size=32,
        learning_rate=0.01,
        steps=200,
        clip_epsilon=1e-7,
        validation_fraction=0.25,
        n_jobs=1,
        random_state=0,
    ):
        self.population_size = population_size
        self.elites_per_generation = elites_per_generation
        self.recombination_probability = recombination_probability
        self.mutation_rate = mutation_rate
        self.replace_with_leaf_rate = replace_with_leaf_rate
        self.leaf_to_subtree_rate = leaf_to_subtree_rate
        self.initial_max_depth = initial_max_depth
        self.generations = generations
        self.hidden_layers = hidden_layers
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.clip_epsilon = clip_epsilon
        self.validation_fraction = validation_fraction
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _task(self, X, y, seed: int) -> FitnessTask:
        data = _holdout_split(X, y, self.validation_fraction, derive_seed(seed, "split"))
        return FitnessTask(
            model=ModelConfig(
                input_dim=X.shape[1],
                num_classes=data.num_classes,
                hidden_layers=tuple(self.hidden_layers),
                dropout=self.dropout,
            ),
            data=data,
            train=TrainConfig(
                batch_size=min(self.batch_size, len(data.train_y)),
                learning_rate=self.learning_rate,
                steps=self.steps,
                clip_epsilon=self.clip_epsilon,
            ),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = unique_labels(y)
        codes = np.searchsorted(classes, y)
        seed = _seed_of(self.random_state)
        cfg = GaConfig(
            population_size=self.population_size,
            elites_per_generation=self.elites_per_generation,
            recombination_probability=self.recombination_probability,
            mutation_rate=self.mutation_rate,
            replace_with_leaf_rate=self.replace_with_leaf_rate,
            leaf_to_subtree_rate=self.leaf_to_subtree_rate,
            initial_max_depth=self.initial_max_depth,
            generations=self.generations,
            rng_seed=derive_seed(seed, "gp"),
        )
        cache = FitnessCache()
        with EvaluationPool(
            self._task(X, codes, seed),
            workers=self.n_jobs,
            base_seed=derive_seed(seed, "fitness"),
        ) as pool:
            self.report_ = evolve(
                cfg,
                GenerationWeights(),
                pool,
                rng=np.random.default_rng(cfg.rng_seed),
                cache=cache,
            )
        self.best_expression_ = self.report_.best_expression
        self.best_fitness_ = self.report_.best_fitness
        self.cache_stats_ = {"hits": cache.hits, "misses": cache.misses}
        self.n_features_in_ = X.shape[1]
        return self

    def best_body(self):
        check_is_fitted(self, "best_expression_")
        return parse_expression(self.best_expression_)


class CoefficientTuner(BaseEstimator):
    """CMA-ES coefficient tuning of a fixed loss body.

    ``fit(X, y)`` attaches one multiplicative coefficient per node, prunes
    the absorbable ones, and minimizes (1 - validation accuracy) over the
    remaining coefficient vector starting from all ones with step size
    ``sigma0``. The all-ones baseline counts as the first evaluated
    candidate, so the tuned result is never worse than the untuned body.

    Attributes
    ----------
    coefficients_ : tuple of tuned values (pre-order slot order).
    tuned_expression_ : str, the coefficient-expanded body.
    baseline_fitness_, tuned_fitness_ : validation accuracies.
    history_ : CMA-ES HistoryRow list.
    """

    def __init__(
        self,
        expression="baikal",
        sigma0=1.5,
        max_evaluations=500,
        hidden_layers=(16,),
        dropout=0.0,
        batch_size=32,
        learning_rate=0.01,
        steps=200,
        clip_epsilon=1e-7,
        validation_fraction=0.25,
        n_jobs=1,
        random_state=0,
    ):
        self.expression = expression
        self.sigma0 = sigma0
        self.max_evaluations = max_evaluations
        self.hidden_layers = hidden_layers
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.clip_epsilon = clip_epsilon
        self.validation_fraction = validation_fraction
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = unique_labels(y)
        codes = np.searchsorted(classes, y)
        seed = _seed_of(self.random_state)
        body = as_body_expression(self.expression)
        if not contains_required_leaves(body):
            raise ValueError("loss body must contain both an x and a y leaf")
        coeffs = prune_absorbable(attach_coefficients(body))

        search = LossFunctionSearch(
            hidden_layers=self.hidden_layers,
            dropout=self.dropout,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            steps=self.steps,
            clip_epsilon=self.clip_epsilon,
            validation_fraction=self.validation_fraction,
        )
        task = search._task(X, codes, seed)
        with EvaluationPool(
            task, workers=self.n_jobs, base_seed=derive_seed(seed, "fitness")
        ) as pool:

            def objective(vector) -> float:
                job = EvalJob(job_id="tune", expression=coeffs, values=tuple(vector))
                return 1.0 - pool.evaluate_batch([job])[0].fitness

            x0 = np.ones(coeffs.dimension)
            baseline = objective(x0)
            cfg = CmaesConfig(
                dimension=coeffs.dimension,
                sigma0=self.sigma0,
                max_evaluations=self.max_evaluations,
                rng_seed=derive_seed(seed, "cmaes"),
            )
            result = minimize(objective, x0, cfg)

        if baseline <= result.best_fitness:
            best_vector, best_objective = x0, baseline
        else:
            best_vector, best_objective = result.best, result.best_fitness
        self.base_coefficients_ = coeffs
        self.coefficients_ = tuple(float(v) for v in best_vector)
        tuned = coeffs.with_values(self.coefficients_)
        self.tuned_expression_ = format_expression(bind(tuned))
        self.baseline_fitness_ = 1.0 - baseline
        self.tuned_fitness_ = 1.0 - best_objective
        self.history_ = result.history
        self.n_features_in_ = X.shape[1]
        return self
