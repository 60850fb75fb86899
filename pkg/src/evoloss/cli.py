"""Command-line entry point.

Subcommands::

    evolve    discover loss functions with the genetic algorithm
    tune      CMA-ES coefficient tuning of one loss body
    train     full training runs (paired losses, seeds, dataset portions)
    analyze   binary loss curves and their minima
    hist      softmax-output histogram of a saved model
    rerun     repeat a run from its manifest

Every run writes ``manifest.json`` first, then ``logs/``, ``results/``
(CSV/JSON), ``models/`` (binary) and ``expressions/`` (text) under the
output directory. Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import binary_expand, monotone_direction, output_histogram, sample_curve
from .cmaes import NumericalHealthError, minimize, write_history_csv
from .coefficients import attach_coefficients, bind, prune_absorbable
from .config import (
    ConfigError,
    DEFAULT_CONFIG,
    apply_overrides,
    cmaes_config,
    ga_config,
    generation_weights,
    load_config,
    merge_config,
    read_manifest,
    task_descriptor,
    write_manifest,
)
from .evalpool import EvalJob, EvaluationPool
from .evolution import FitnessCache, evolve
from .expressions import (
    Expr,
    ExpressionSyntaxError,
    contains_required_leaves,
    format_expression,
    parse_expression,
)
from .losses import as_body_expression, builtin_names
from .network import ModelConfig, TrainedModel
from .seeding import derive_seed
from .training import FailureKind, TrainConfig, build_task, train

log = logging.getLogger("evoloss")

# argument/flag names recorded in the manifest per command, for `rerun`
_EXPECTED_MINIMA = {"baikal": (0.69, 0.73), "baikal_cma": (0.75, 0.79)}


def _prepare_out(out_dir: Path) -> dict[str, Path]:
    dirs = {
        "out": out_dir,
        "logs": out_dir / "logs",
        "results": out_dir / "results",
        "models": out_dir / "models",
        "expressions": out_dir / "expressions",
    }
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(dirs["logs"] / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    pkg_logger = logging.getLogger("evoloss")
    pkg_logger.setLevel(logging.INFO)
    pkg_logger.propagate = False  # run.log only; the CLI prints its own summary
    for old in [h for h in pkg_logger.handlers if isinstance(h, logging.FileHandler)]:
        pkg_logger.removeHandler(old)
        old.close()
    pkg_logger.addHandler(handler)
    return dirs


def _effective_config(args) -> dict:
    preloaded = getattr(args, "_preloaded_config", None)
    if preloaded is not None:
        config = merge_config(preloaded)
    elif args.config:
        config = load_config(args.config)
    else:
        config = merge_config({})
    if args.set:
        config = apply_overrides(config, args.set)
    if getattr(args, "workers", None) is not None:
        config["workers"] = args.workers
    return config


def _resolve_loss(spec: str) -> tuple[str, Expr]:
    """Accepts a builtin name, s-expression text, or a path to a text file
    holding one expression. Returns a filename-safe label and the body."""
    path = Path(spec)
    if path.is_file():
        body = parse_expression(path.read_text().strip())
        return path.stem, body
    body = as_body_expression(spec)
    if spec.strip().lower() in builtin_names():
        return spec.strip().lower(), body
    label = re.sub(r"[^a-z0-9]+", "-", spec.strip().lower()).strip("-")[:40] or "expr"
    return label, body


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# evolve


def cmd_evolve(args) -> int:
    config = _effective_config(args)
    dirs = _prepare_out(Path(args.out))
    write_manifest(dirs["out"], "evolve", config, {"args": {}})

    ga = ga_config(config)
    weights = generation_weights(config)
    descriptor = task_descriptor(config)
    cache = FitnessCache()
    log.info("evolve: population=%d generations=%d", ga.population_size, ga.generations)
    with EvaluationPool(
        descriptor,
        workers=config["workers"],
        base_seed=derive_seed(config["run_seed"], "fitness"),
    ) as pool:
        report = evolve(ga, weights, pool, rng=np.random.default_rng(ga.rng_seed), cache=cache)

    with open(dirs["results"] / "generations.jsonl", "w") as fh:
        for record in report.records:
            fh.write(record.to_json() + "\n")
    _write_json(dirs["results"] / "summary.json", report.summary())
    (dirs["expressions"] / "best.txt").write_text(report.best_expression + "\n")
    log.info("evolve: best fitness %.4f with %s", report.best_fitness, report.best_expression)
    print(f"best expression: {report.best_expression}")
    print(f"best fitness:    {report.best_fitness:.4f}")
    return 0


# ---------------------------------------------------------------------------
# tune


def cmd_tune(args) -> int:
    config = _effective_config(args)
    label, body = _resolve_loss(args.loss)
    if not contains_required_leaves(body):
        raise ConfigError(f"loss {label!r} fails the leaf gate: it needs both x and y")
    dirs = _prepare_out(Path(args.out))
    write_manifest(dirs["out"], "tune", config, {"args": {"loss": args.loss}})

    coeffs = prune_absorbable(attach_coefficients(body))
    descriptor = task_descriptor(config)
    cache = FitnessCache()
    log.info("tune: %s with %d coefficients", label, coeffs.dimension)
    with EvaluationPool(
        descriptor,
        workers=config["workers"],
        base_seed=derive_seed(config["run_seed"], "fitness"),
        cache=cache,
    ) as pool:

        def objective(vector) -> float:
            job = EvalJob(job_id="tune", expression=coeffs, values=tuple(float(v) for v in vector))
            return 1.0 - pool.evaluate_batch([job])[0].fitness

        x0 = np.ones(coeffs.dimension)
        baseline_objective = objective(x0)  # the untuned body is candidate zero
        cma_cfg = cmaes_config(config, coeffs.dimension)
        result = minimize(objective, x0, cma_cfg)

    if baseline_objective <= result.best_fitness:
        best_vector, best_objective = x0, baseline_objective
    else:
        best_vector, best_objective = result.best, result.best_fitness
    tuned = coeffs.with_values(tuple(float(v) for v in best_vector))

    write_history_csv(dirs["results"] / "cmaes_history.csv", result.history)
    _write_json(dirs["expressions"] / "tuned.json", tuned.to_dict())
    (dirs["expressions"] / "tuned.txt").write_text(format_expression(bind(tuned)) + "\n")
    summary = {
        "loss": label,
        "coefficients": list(tuned.values),
        "untuned_fitness": 1.0 - baseline_objective,
        "tuned_fitness": 1.0 - best_objective,
        "evaluations": len(result.history) * cma_cfg.lam + 1,
        "sigma0": cma_cfg.sigma0,
    }
    _write_json(dirs["results"] / "summary.json", summary)
    print(f"untuned fitness: {summary['untuned_fitness']:.4f}")
    print(f"tuned fitness:   {summary['tuned_fitness']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    config = _effective_config(args)
    if config["train"]["steps"] < 1:
        raise ConfigError("train.steps must be positive")
    losses = [_resolve_loss(spec) for spec in args.loss]
    portions = args.portion or [1.0]
    dirs = _prepare_out(Path(args.out))
    write_manifest(
        dirs["out"],
        "train",
        config,
        {"args": {"loss": args.loss, "seeds": args.seeds, "portion": portions,
                  "save_models": args.save_models}},
    )

    rows = []
    per_loss: dict[str, dict[str, dict]] = {}
    for portion in portions:
        descriptor = task_descriptor(config)
        if portion != 1.0:
            descriptor = task_descriptor(
                apply_overrides(config, [f"dataset.portion={portion}"])
            )
        task = build_task(descriptor)
        for label, body in losses:
            accs, curves = [], []
            for idx in range(args.seeds):
                seed = derive_seed(config["run_seed"], "train", label, portion, idx)
                model_cfg = ModelConfig(
                    input_dim=task.model.input_dim,
                    num_classes=task.model.num_classes,
                    hidden_layers=task.model.hidden_layers,
                    dropout=task.model.dropout,
                    weight_init_seed=derive_seed(seed, "init"),
                )
                train_cfg = TrainConfig(
                    batch_size=task.train.batch_size,
                    learning_rate=task.train.learning_rate,
                    steps=task.train.steps,
                    eval_every=task.train.eval_every,
                    clip_epsilon=task.train.clip_epsilon,
                    rng_seed=derive_seed(seed, "sgd"),
                )
                model, report, curve = train(model_cfg, task.data, body, train_cfg)
                test_x, test_y = task.data.test_x, task.data.test_y
                if not len(test_y):
                    test_x, test_y = task.data.val_x, task.data.val_y
                test_acc = model.accuracy(test_x, test_y) if report.failure is FailureKind.NONE else 0.0
                tag = f"{label}_p{portion}_s{idx}"
                curve.write_csv(dirs["results"] / f"curve_{tag}.csv")
                if args.save_models:
                    model.save(dirs["models"] / f"{tag}.bin")
                rows.append((label, portion, idx, test_acc, report.fitness, report.failure.value))
                accs.append(test_acc)
                curves.append(curve)
                log.info("train %s: test accuracy %.4f (%s)", tag, test_acc, report.failure.value)
            stats = {
                "mean_test_accuracy": float(np.mean(accs)),
                "std_test_accuracy": float(np.std(accs)),
                "test_accuracies": accs,
            }
            checkpoints = sorted({s for c in curves for s, _, _ in c.rows})
            stats["mean_val_accuracy_by_step"] = {
                str(s): float(np.mean([c.value_at(s) for c in curves]))
                for s in checkpoints
                if all(any(r[0] == s for r in c.rows) for c in curves)
            }
            per_loss.setdefault(label, {})[str(portion)] = stats

    with open(dirs["results"] / "comparison.csv", "w") as fh:
        fh.write("loss,portion,seed,test_accuracy,val_accuracy,failure\n")
        for label, portion, idx, test_acc, val_acc, failure in rows:
            fh.write(f"{label},{portion},{idx},{test_acc!r},{val_acc!r},{failure}\n")

    differences = []
    labels = [label for label, _ in losses]
    for portion in portions:
        for i, a in enumerate(labels):
            for b in labels[i + 1 :]:
                diff = (
                    per_loss[a][str(portion)]["mean_test_accuracy"]
                    - per_loss[b][str(portion)]["mean_test_accuracy"]
                )
                differences.append(
                    {"portion": portion, "a": a, "b": b, "mean_difference": diff}
                )
    _write_json(
        dirs["results"] / "summary.json",
        {"per_loss": per_loss, "differences": differences},
    )
    for d in differences:
        sign = "+" if d["mean_difference"] >= 0 else ""
        print(
            f"portion {d['portion']}: mean({d['a']}) - mean({d['b']}) = "
            f"{sign}{d['mean_difference']:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    config = _effective_config(args)
    label, body = _resolve_loss(args.loss)
    dirs = _prepare_out(Path(args.out))
    write_manifest(dirs["out"], "analyze", config, {"args": {"loss": args.loss, "x0": args.x0}})

    x0_values = [1, 0] if args.x0 == "both" else [int(args.x0)]
    summary = {"loss": label, "curves": []}
    for x0 in x0_values:
        curve = sample_curve(body, x0, loss_name=label, lo=0.01, hi=0.99)
        curve.write_csv(dirs["results"] / f"curve_{label}_x0{x0}.csv")
        direction = monotone_direction(binary_expand(body, x0))
        entry = {"x0": x0, "argmin_y0": curve.argmin_y0, "monotonicity": direction}
        if x0 == 1 and label in _EXPECTED_MINIMA:
            lo, hi = _EXPECTED_MINIMA[label]
            entry["expected_argmin_range"] = [lo, hi]
            entry["within_expected"] = bool(lo <= curve.argmin_y0 <= hi)
        summary["curves"].append(entry)
        print(f"x0={x0}: argmin y0 = {curve.argmin_y0:.4f}, curve is {direction}")
    _write_json(dirs["results"] / "minima.json", summary)
    return 0


# ---------------------------------------------------------------------------
# hist


def cmd_hist(args) -> int:
    config = _effective_config(args)
    dirs = _prepare_out(Path(args.out))
    write_manifest(
        dirs["out"],
        "hist",
        config,
        {"args": {"model": args.model, "bins": args.bins, "max_class": args.max_class}},
    )
    model = TrainedModel.load(args.model)
    task = build_task(task_descriptor(config))
    features = task.data.test_x if len(task.data.test_y) else task.data.val_x
    if model.input_dim != features.shape[1]:
        raise ConfigError(
            f"model expects {model.input_dim} features, dataset has {features.shape[1]}"
        )
    hist = output_histogram(
        model,
        features,
        bins=args.bins,
        max_class_only=args.max_class,
        provenance=str(args.model),
    )
    hist.write_csv(dirs["results"] / "histogram.csv")
    _write_json(
        dirs["results"] / "summary.json",
        {
            "model": str(args.model),
            "bins": args.bins,
            "max_class_only": args.max_class,
            "mode_bin": hist.mode_bin,
            "mode_center": hist.mode_center,
            "total_count": int(hist.counts.sum()),
        },
    )
    print(f"mode bin center: {hist.mode_center:.3f}")
    return 0


# ---------------------------------------------------------------------------
# rerun


def cmd_rerun(args) -> int:
    manifest = read_manifest(args.manifest)
    command = manifest["command"]
    stored = manifest.get("args", {})
    forward = ["--out", args.out]
    if command == "evolve":
        argv = ["evolve", *forward]
    elif command == "tune":
        argv = ["tune", "--loss", stored["loss"], *forward]
    elif command == "train":
        argv = ["train", *forward, "--seeds", str(stored["seeds"])]
        for spec in stored["loss"]:
            argv += ["--loss", spec]
        for portion in stored["portion"]:
            argv += ["--portion", str(portion)]
        if stored.get("save_models"):
            argv.append("--save-models")
    elif command == "analyze":
        argv = ["analyze", "--loss", stored["loss"], "--x0", str(stored["x0"]), *forward]
    elif command == "hist":
        argv = ["hist", "--model", stored["model"], "--bins", str(stored["bins"]), *forward]
        if stored.get("max_class"):
            argv.append("--max-class")
    else:
        raise ConfigError(f"manifest command {command!r} is not rerunnable")
    parser = build_parser()
    new_args = parser.parse_args(argv)
    new_args.config = None
    new_args._preloaded_config = manifest["config"]
    return new_args.func(new_args)


# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override a config value (repeatable; JSON-parsed)",
    )
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--workers", type=int, default=None, help="evaluation workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evoloss", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"evoloss {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("evolve", help="run the loss-function discovery GA")
    _add_common(p)
    p.set_defaults(func=cmd_evolve)

    p = subs.add_parser("tune", help="CMA-ES coefficient tuning of one loss")
    _add_common(p)
    p.add_argument("--loss", required=True, help="builtin name, expression, or file")
    p.set_defaults(func=cmd_tune)

    p = subs.add_parser("train", help="full training runs with comparisons")
    _add_common(p)
    p.add_argument("--loss", action="append", required=True, help="repeatable loss spec")
    p.add_argument("--seeds", type=int, default=1, help="seeds per loss")
    p.add_argument(
        "--portion", action="append", type=float, default=None,
        help="training-set portion in (0, 1] (repeatable)",
    )
    p.add_argument("--save-models", action="store_true", help="write model binaries")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("analyze", help="binary loss curve and minima")
    _add_common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--x0", choices=["0", "1", "both"], default="both")
    p.set_defaults(func=cmd_analyze)

    p = subs.add_parser("hist", help="softmax-output histogram of a model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model binary from `train`")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--max-class", action="store_true", help="bin only each sample's largest output")
    p.set_defaults(func=cmd_hist)

    p = subs.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest", help="path to manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ExpressionSyntaxError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalHealthError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
