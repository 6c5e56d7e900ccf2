"""Training loop, early stopping, metrics, seed averaging, ablation and lookback sweeps."""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import SPLIT_RATIO, split_windows
from .exceptions import ContractViolation, DivergenceError, ValidationError
from .network import VARIANTS, normalize_variant


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    seeds: tuple = (1, 2, 3)
    batch_size: int = 16
    split_ratio: tuple = SPLIT_RATIO
    lookback: int = 15
    horizon: int = 7
    variant: str = "FULL"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "split_ratio", tuple(float(r) for r in self.split_ratio))
        problems = []
        if self.learning_rate < 0:
            problems.append(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 < self.patience < self.max_epochs:
            problems.append(
                f"patience must satisfy 0 < patience < max_epochs, got {self.patience}"
            )
        if not self.seeds:
            problems.append("seeds must not be empty")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.split_ratio) != 3 or abs(sum(self.split_ratio) - 1.0) > 1e-9:
            problems.append(f"split_ratio must have three fractions summing to 1: {self.split_ratio}")
        try:
            object.__setattr__(self, "variant", normalize_variant(self.variant))
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ValidationError(problems)


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, value):
        """Record one epoch's validation loss; returns True if it is a new best."""
        self.epoch += 1
        if value < self.best:
            self.best = value
            self.best_epoch = self.epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self):
        return self.stale >= self.patience


def regression_metrics(pred, target):
    """(MSE, MAE) over every window and horizon step."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.size == 0:
        raise ContractViolation("cannot evaluate an empty set of windows")
    if pred.shape != target.shape:
        raise ContractViolation(f"prediction shape {pred.shape} != target shape {target.shape}")
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def predict_features(network, feats, batch_size=256):
    out = []
    for start in range(0, len(feats), batch_size):
        idx = np.arange(start, min(start + batch_size, len(feats)))
        out.append(network.forward(feats.take(idx)).data)
    return np.concatenate(out, axis=0)


@dataclass
class FitResult:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    initial_train_mse: float = float("nan")
    final_train_mse: float = float("nan")
    data_order_digest: str = ""


def fit_network(network, train_feats, train_targets, val_feats=None, val_targets=None,
                learning_rate=1e-3, max_epochs=20, patience=3, batch_size=16, seed=1):
    """Train the trainable partition of ``network`` with Adam on denormalized MSE.

    The best-validation snapshot is restored before returning. Without a
    validation set every epoch counts as an improvement.
    """
    trainable, _ = network.partition_parameters()
    opt = ad.Adam(trainable, lr=learning_rate)
    order_rng = np.random.default_rng([seed, 0x0D])
    digest = hashlib.sha256()
    stopper = EarlyStopper(patience)
    result = FitResult()
    result.initial_train_mse = regression_metrics(
        predict_features(network, train_feats), train_targets
    )[0]
    best = [p.data.copy() for p in trainable]
    n = len(train_feats)

    for epoch in range(1, max_epochs + 1):
        perm = order_rng.permutation(n)
        digest.update(perm.astype(np.int64).tobytes())
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size), 1):
            idx = perm[start:start + batch_size]
            opt.zero_grad()
            loss = ad.mse_loss(network.forward(train_feats.take(idx)), train_targets[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            opt.step()
            total += value * len(idx)
        result.train_loss.append(total / n)

        if val_feats is not None:
            val = regression_metrics(predict_features(network, val_feats), val_targets)[0]
            result.val_loss.append(val)
        else:
            val = -float(epoch)
        if stopper.update(val):
            best = [p.data.copy() for p in trainable]
        result.epochs_run = epoch
        if val_feats is not None and stopper.should_stop:
            break

    for p, arr in zip(trainable, best):
        p.data = arr
    result.best_epoch = stopper.best_epoch
    result.final_train_mse = regression_metrics(
        predict_features(network, train_feats), train_targets
    )[0]
    result.data_order_digest = digest.hexdigest()
    return result


# ---------------------------------------------------------------------------
# reports


def _mean(values):
    return sum(values) / len(values)


@dataclass
class SeedResult:
    seed: int
    train_loss: list
    val_loss: list
    best_epoch: int
    epochs_run: int
    test_mse: float
    test_mae: float
    initial_train_mse: float
    final_train_mse: float
    data_order_digest: str


@dataclass
class RunReport:
    variant: str
    config: dict
    seeds: list
    prompt_sample: str = ""

    @property
    def mse(self):
        return _mean([s.test_mse for s in self.seeds])

    @property
    def mae(self):
        return _mean([s.test_mae for s in self.seeds])

    def to_dict(self):
        return {
            "variant": self.variant,
            "config": self.config,
            "per_seed": [asdict(s) for s in self.seeds],
            "mse": self.mse,
            "mae": self.mae,
            "prompt_sample": self.prompt_sample,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], d["config"], [SeedResult(**s) for s in d["per_seed"]],
                   d.get("prompt_sample", ""))


def train_seed(estimator, splits):
    """Fit one seed of ``estimator`` on ``splits`` and score it on the test windows."""
    estimator.fit(splits["train"], eval_set=splits["validation"])
    test_mse, test_mae = estimator.evaluate(splits["test"])
    h = estimator.history_
    result = SeedResult(
        int(estimator.random_state), h.train_loss, h.val_loss, h.best_epoch, h.epochs_run,
        test_mse, test_mae, h.initial_train_mse, h.final_train_mse, h.data_order_digest,
    )
    return result


def run_seeds(estimator, series_list, cfg, on_fitted=None):
    """Train a fresh clone of ``estimator`` per seed; returns a :class:`RunReport`.

    ``on_fitted(seed, fitted_estimator, splits)`` is called after each seed,
    e.g. to write a checkpoint.
    """
    from sklearn.base import clone

    splits = split_windows(series_list, cfg.lookback, cfg.horizon, cfg.split_ratio)
    results = []
    sample = ""
    for seed in cfg.seeds:
        est = clone(estimator).set_params(
            lookback=cfg.lookback, horizon=cfg.horizon, variant=cfg.variant,
            learning_rate=cfg.learning_rate, max_epochs=cfg.max_epochs,
            patience=cfg.patience, batch_size=cfg.batch_size, random_state=seed,
        )
        results.append(train_seed(est, splits))
        if not sample and est.network_.cfg.layout.count("E"):
            sample = est.network_.explicit_prompt(splits["test"][0].values)
        if on_fitted is not None:
            on_fitted(seed, est, splits)
    config = {"train": _config_dict(cfg), "model": estimator.get_params()}
    return RunReport(cfg.variant, config, results, sample)


def _config_dict(cfg):
    d = asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    d["split_ratio"] = list(cfg.split_ratio)
    return d


def run_ablation(estimator, series_list, cfg, variants=VARIANTS):
    """One :class:`RunReport` per variant, all with identical seeds and data order."""
    from dataclasses import replace

    return {v: run_seeds(estimator, series_list, replace(cfg, variant=v)) for v in variants}


def ablation_table(reports):
    """Plain-text table: one column per variant, MSE and MAE rows."""
    names = [v.replace("_", "-") for v in reports]
    width = max(10, *(len(n) for n in names))
    header = "metric".ljust(8) + "".join(n.rjust(width + 2) for n in names)
    lines = [header, "-" * len(header)]
    for metric in ("mse", "mae"):
        cells = "".join(f"{getattr(r, metric):.6f}".rjust(width + 2) for r in reports.values())
        lines.append(metric.upper().ljust(8) + cells)
    return "\n".join(lines) + "\n"


def ablation_json(reports):
    payload = {
        "order": list(reports),
        "rows": [{"variant": v, "mse": r.mse, "mae": r.mae} for v, r in reports.items()],
        "reports": {v: r.to_dict() for v, r in reports.items()},
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def sweep_lookback(estimator, series_list, cfg, lookbacks):
    """Train the FULL variant at each lookback; returns ``[(lookback, mse, mae), ...]``."""
    from dataclasses import replace

    patch_len = estimator.get_params()["patch_len"]
    bad = [L for L in lookbacks if L < patch_len + 1]
    if bad:
        raise ValidationError(f"lookbacks {bad} are shorter than patch_len + 1 = {patch_len + 1}")
    rows = []
    for L in sorted(set(int(x) for x in lookbacks)):
        report = run_seeds(estimator, series_list, replace(cfg, lookback=L, variant="FULL"))
        rows.append((L, report.mse, report.mae))
    return rows
