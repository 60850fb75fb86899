"""evoloss: discovery and tuning of neural-network loss functions.

A genetic algorithm evolves per-class loss bodies as expression trees, a
built-in softmax-MLP trainer scores candidates by short-budget validation
accuracy, and CMA-ES tunes multiplicative coefficients of the winners.
"""

__version__ = "0.1.0"

from .analysis import binary_expand, find_minimum, output_histogram
from .coefficients import CoeffExpr, attach_coefficients, bind, prune_absorbable
from .cmaes import CmaesConfig, ask, cmaes_init, minimize, tell
from .datasets import DatasetSplit, load_csv, load_idx, split, subsample_portion, synth_blobs, synth_digits
from .evolution import EvolutionReport, FitnessCache, GaConfig, Genome, evolve
from .expressions import (
    Expr,
    GenerationWeights,
    INVALID,
    canonicalize,
    contains_required_leaves,
    differentiate_y,
    evaluate,
    format_expression,
    parse_expression,
    random_tree,
)
from .losses import BuiltinLoss, as_body_expression, builtin, builtin_names
from .network import ModelConfig, TrainedModel
from .training import (
    FailureKind,
    FitnessReport,
    FitnessTask,
    TrainConfig,
    aggregate_loss,
    fitness_of,
    train,
)
from .estimators import CoefficientTuner, ExpressionLossClassifier, LossFunctionSearch

__all__ = [
    "BuiltinLoss",
    "CmaesConfig",
    "CoeffExpr",
    "CoefficientTuner",
    "DatasetSplit",
    "EvolutionReport",
    "Expr",
    "ExpressionLossClassifier",
    "FailureKind",
    "FitnessCache",
    "FitnessReport",
    "FitnessTask",
    "GaConfig",
    "GenerationWeights",
    "Genome",
    "INVALID",
    "LossFunctionSearch",
    "ModelConfig",
    "TrainConfig",
    "TrainedModel",
    "aggregate_loss",
    "as_body_expression",
    "ask",
    "attach_coefficients",
    "binary_expand",
    "bind",
    "builtin",
    "builtin_names",
    "canonicalize",
    "cmaes_init",
    "contains_required_leaves",
    "differentiate_y",
    "evaluate",
    "evolve",
    "find_minimum",
    "fitness_of",
    "format_expression",
    "load_csv",
    "load_idx",
    "minimize",
    "output_histogram",
    "parse_expression",
    "prune_absorbable",
    "random_tree",
    "split",
    "subsample_portion",
    "synth_blobs",
    "synth_digits",
    "tell",
    "train",
]
