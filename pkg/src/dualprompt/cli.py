"""Command-line entry point: generate, train, evaluate, ablate, sweep-lookback, gradcheck.

Run configs are strict JSON::

    {
      "dataset": "data/manifest.json",
      "series": ["event-signal"],
      "output_dir": "runs/event",
      "save_predictions": false,
      "train": {"learning_rate": 0.001, "max_epochs": 20, "seeds": [1, 2, 3], ...},
      "model": {"model_dim": 16, "prompt_heads": 4, "prompt_tokens": 34, ...}
    }

Relative dataset paths resolve against the config file's directory. The
``DUALPROMPT_OUTPUT_DIR`` environment variable overrides ``output_dir``.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import SEGMENTS, load_dataset, split_windows, write_dataset
from .datagen import SUITE_SPECS, GeneratorSpec, generate
from .estimator import DualPromptForecaster
from .exceptions import ContractViolation, DivergenceError, DualPromptError, ValidationError
from .gradcheck import format_results, run_suite
from .network import VARIANTS, ModelConfig
from .training import (
    TrainConfig,
    ablation_json,
    ablation_table,
    run_ablation,
    run_seeds,
    sweep_lookback,
)

log = logging.getLogger("dualprompt")

OUTPUT_ENV = "DUALPROMPT_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

_TOP_KEYS = {"dataset", "series", "output_dir", "save_predictions", "train", "model"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
# estimator params that belong to the train section, not the model section
_SHARED = {"lookback", "horizon", "variant", "learning_rate", "max_epochs", "patience",
           "batch_size", "random_state"}
_MODEL_KEYS = set(DualPromptForecaster().get_params()) - _SHARED


@dataclass
class RunConfig:
    dataset: Path
    train: TrainConfig
    model: dict = field(default_factory=dict)
    series: list = None
    output_dir: Path = Path("runs")
    save_predictions: bool = False

    def estimator(self):
        return DualPromptForecaster(**self.model)

    def load_series(self):
        return load_dataset(self.dataset, self.series)


def _check_model(model, train, problems):
    """Construct the model-side configs once so every bad field is reported."""
    found = []
    _check_model_fields(model, train, found)
    problems += found


def _check_model_fields(model, train, problems):
    params = DualPromptForecaster(**model).get_params()
    params.update(lookback=train.get("lookback", 15), horizon=train.get("horizon", 7))
    params["seed"] = params.pop("random_state")
    for key in ("model_dim", "n_layers", "n_heads", "ff_dim", "max_len", "vocab_size",
                "text_dim", "prompt_dim", "prompt_heads", "prompt_tokens", "patch_len",
                "stride"):
        value = params[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            problems.append(f"model.{key} must be a positive integer, got {value!r}")
    if problems:
        return
    if params["model_dim"] % params["n_heads"]:
        problems.append(
            f"model.model_dim={params['model_dim']} must be divisible by n_heads={params['n_heads']}"
        )
    if params["prompt_dim"] % params["prompt_heads"]:
        problems.append(
            f"model.prompt_dim={params['prompt_dim']} must be divisible by "
            f"prompt_heads={params['prompt_heads']}"
        )
    if params["stride"] > params["patch_len"]:
        problems.append(f"model.stride={params['stride']} exceeds patch_len={params['patch_len']}")
    if params["patch_len"] > params["lookback"]:
        problems.append(
            f"model.patch_len={params['patch_len']} exceeds lookback={params['lookback']}"
        )
    if problems:
        return
    try:
        cfg = ModelConfig.from_dict(params)
    except DualPromptError as exc:
        problems.append(f"model: {exc}")
        return
    longest = max(replace(cfg, variant=v).sequence_length for v in VARIANTS)
    if longest > cfg.max_len:
        problems.append(f"model.max_len={cfg.max_len} is below the longest input {longest}")


def parse_run_config(raw, base_dir=Path(".")):
    """Validate a decoded config document; raises :class:`ValidationError` with every problem."""
    problems = []
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    problems += [f"unknown key {k!r}" for k in sorted(set(raw) - _TOP_KEYS)]
    train = raw.get("train", {})
    model = raw.get("model", {})
    for name, section, allowed in (("train", train, _TRAIN_KEYS), ("model", model, _MODEL_KEYS)):
        if not isinstance(section, dict):
            problems.append(f"{name} must be an object")
            continue
        problems += [f"unknown key {name}.{k!r}" for k in sorted(set(section) - allowed)]

    dataset = raw.get("dataset")
    if not dataset:
        problems.append("dataset: required path to a manifest.json is missing")
    else:
        dataset = Path(dataset)
        if not dataset.is_absolute():
            dataset = base_dir / dataset
        if not dataset.is_file():
            problems.append(f"dataset: manifest {dataset} does not exist")
    series = raw.get("series")
    if series is not None and (
        not isinstance(series, list) or not all(isinstance(s, str) for s in series)
    ):
        problems.append("series must be a list of series ids")
    save_predictions = raw.get("save_predictions", False)
    if not isinstance(save_predictions, bool):
        problems.append("save_predictions must be true or false")

    train_cfg = None
    if isinstance(train, dict) and not set(train) - _TRAIN_KEYS:
        try:
            train_cfg = TrainConfig(**train)
        except ValidationError as exc:
            problems += [f"train: {p}" for p in exc.problems]
        except (TypeError, ValueError) as exc:
            problems.append(f"train: {exc}")
    if isinstance(model, dict) and not set(model) - _MODEL_KEYS and isinstance(train, dict):
        _check_model(model, train, problems)
    if problems:
        raise ValidationError(problems)

    output_dir = Path(os.environ.get(OUTPUT_ENV) or raw.get("output_dir") or "runs")
    return RunConfig(dataset, train_cfg, dict(model), series, output_dir, save_predictions)


def load_run_config(path):
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(raw, path.parent)


# ---------------------------------------------------------------------------
# commands


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _checkpoint_path(out, variant, seed):
    path = out / "checkpoints" / f"{variant.lower()}-seed{seed}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_predictions(path, estimator, windows):
    pred = estimator.predict(windows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "window_start", "step", "prediction", "target"])
        for w, row in zip(windows, pred):
            for step, (p, t) in enumerate(zip(row, w.targets), 1):
                writer.writerow([w.series_id, w.start, step, repr(float(p)), repr(float(t))])


def cmd_generate(args):
    if args.spec is None and not args.suite:
        raise ValidationError("generate needs --spec FILE or --suite")
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "data")
    if args.suite:
        series = [generate(spec) for spec in SUITE_SPECS.values()]
    else:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"spec file {args.spec} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.spec}: invalid JSON ({exc})") from None
        try:
            spec = GeneratorSpec.from_dict(raw)
        except TypeError as exc:
            raise ValidationError(f"{args.spec}: {exc}") from None
        series = [generate(spec)]
    manifest = write_dataset(series, out)
    print(manifest)
    return EXIT_OK


def cmd_train(args):
    run = load_run_config(args.config)
    series = run.load_series()
    out = run.output_dir
    cfg = run.train

    def on_fitted(seed, est, splits):
        est.save(_checkpoint_path(out, cfg.variant, seed))
        if run.save_predictions:
            write_predictions(
                out / "predictions" / f"{cfg.variant.lower()}-seed{seed}.csv", est, splits["test"]
            )

    report = run_seeds(run.estimator(), series, cfg, on_fitted=on_fitted)
    _write(out / f"report-{cfg.variant.lower()}.json", report.to_json())
    print(f"{cfg.variant}: MSE {report.mse:.6f}  MAE {report.mae:.6f}")
    return EXIT_OK


def cmd_evaluate(args):
    run = load_run_config(args.config)
    est = DualPromptForecaster.load(args.checkpoint)
    splits = split_windows(run.load_series(), est.lookback, est.horizon, run.train.split_ratio)
    segment = splits[args.segment]
    mse, mae = est.evaluate(segment)
    name = Path(args.checkpoint).stem
    payload = {"checkpoint": name, "segment": args.segment, "windows": len(segment),
               "mse": mse, "mae": mae}
    _write(run.output_dir / f"evaluation-{name}.json",
           json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if run.save_predictions:
        write_predictions(run.output_dir / "predictions" / f"{name}-{args.segment}.csv", est, segment)
    print(f"{name} on {args.segment}: MSE {mse:.6f}  MAE {mae:.6f}")
    return EXIT_OK


def cmd_ablate(args):
    run = load_run_config(args.config)
    reports = run_ablation(run.estimator(), run.load_series(), run.train, VARIANTS)
    out = run.output_dir
    _write(out / "ablation.json", ablation_json(reports))
    table = ablation_table(reports)
    _write(out / "ablation.txt", table)
    print(table, end="")
    return EXIT_OK


def _parse_lookbacks(text):
    try:
        values = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ValidationError(f"--lookbacks must be integers, got {text!r}") from None
    if not values:
        raise ValidationError("--lookbacks is empty")
    return values


def cmd_sweep_lookback(args):
    run = load_run_config(args.config)
    rows = sweep_lookback(run.estimator(), run.load_series(), run.train,
                          _parse_lookbacks(args.lookbacks))
    out = run.output_dir
    payload = [{"lookback": L, "mse": mse, "mae": mae} for L, mse, mae in rows]
    _write(out / "sweep.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    lines = ["lookback,mse,mae"] + [f"{L},{mse!r},{mae!r}" for L, mse, mae in rows]
    _write(out / "sweep.csv", "\n".join(lines) + "\n")
    for L, mse, mae in rows:
        print(f"L={L:<4d} MSE {mse:.6f}  MAE {mae:.6f}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_suite(seed=args.seed)
    print(format_results(results), end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def build_parser():
    parser = argparse.ArgumentParser(prog="dualprompt", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic JSONL datasets and a manifest")
    p.add_argument("--spec", help="GeneratorSpec JSON file")
    p.add_argument("--suite", action="store_true", help="write the four canonical datasets")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one variant over all configured seeds")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--segment", choices=SEGMENTS, default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train all five variants and tabulate MSE/MAE")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-lookback", help="train FULL at several lookbacks")
    p.add_argument("--config", required=True)
    p.add_argument("--lookbacks", required=True, help="e.g. 5,10,15")
    p.set_defaults(func=cmd_sweep_lookback)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print("invalid input:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DualPromptError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
