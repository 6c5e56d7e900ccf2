"""scikit-learn compatible wrapper around :class:`~dualprompt.network.DualPromptNetwork`."""

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .data import WindowSample
from .exceptions import ConfigurationError, DimensionError, ValidationError
from .network import DualPromptNetwork, ModelConfig
from .prompts import DEFAULT_DESCRIPTION
from .training import fit_network, predict_features, regression_metrics

_FORMAT = "dualprompt-checkpoint/1"


def check_windows(X, y=None, lookback=None, horizon=None):
    """Normalize window inputs to ``(values, texts, targets)``.

    ``X`` holds either :class:`WindowSample` objects or ``(values, texts)``
    pairs. ``y`` overrides sample targets when given; targets may be None
    for prediction.
    """
    if isinstance(X, WindowSample):
        X = [X]
    X = list(X)
    if not X:
        raise ValidationError("no windows given")
    values, texts, targets = [], [], []
    for i, item in enumerate(X):
        if isinstance(item, WindowSample):
            v, s, t = item.values, item.texts, item.targets
        else:
            try:
                v, s = item
            except (TypeError, ValueError):
                raise ValidationError(f"window {i}: expected (values, texts) pair") from None
            t = None
        v = np.asarray(v, dtype=float)
        if v.ndim != 1:
            raise DimensionError(f"window {i}: values must be 1-D, got shape {v.shape}")
        if s is not None and len(s) != len(v):
            raise DimensionError(f"window {i}: {len(s)} summaries for {len(v)} values")
        values.append(v)
        texts.append(None if s is None else [str(x) for x in s])
        targets.append(t)
    lengths = {len(v) for v in values}
    if len(lengths) != 1:
        raise DimensionError(f"windows have differing lengths {sorted(lengths)}")
    values = np.stack(values)
    if lookback is not None and values.shape[1] != lookback:
        raise DimensionError(f"windows have length {values.shape[1]}, lookback is {lookback}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("window values must be finite")
    if any(t is None for t in texts):
        texts = None

    if y is not None:
        targets = np.asarray(y, dtype=float)
    elif all(t is not None for t in targets):
        targets = np.stack([np.asarray(t, dtype=float) for t in targets])
    else:
        targets = None
    if targets is not None:
        if targets.ndim != 2 or targets.shape[0] != values.shape[0]:
            raise DimensionError(
                f"targets must have shape ({values.shape[0]}, T), got {targets.shape}"
            )
        if horizon is not None and targets.shape[1] != horizon:
            raise DimensionError(f"targets have {targets.shape[1]} steps, horizon is {horizon}")
    return values, texts, targets


def check_is_fitted(estimator):
    if getattr(estimator, "network_", None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() or load() first"
        )


class DualPromptForecaster(RegressorMixin, BaseEstimator):
    """Multimodal forecaster with an explicit and a textual prompt prefix.

    ``fit`` trains only the trainable partition (textual-prompt block, RevIN
    affine, patch embedding, output head, backbone positions and layer
    norms). Pass ``eval_set`` to enable early stopping on validation MSE.
    ``predict`` returns an ``(n_windows, horizon)`` array on the original
    scale.
    """

    def __init__(self, lookback=15, horizon=7, variant="FULL", model_dim=32, n_layers=2,
                 n_heads=2, ff_dim=64, max_len=128, vocab_size=1024, text_dim=32,
                 prompt_dim=32, prompt_heads=4, prompt_tokens=40, patch_len=4, stride=2,
                 description=DEFAULT_DESCRIPTION, backbone_seed=0, learning_rate=1e-3,
                 max_epochs=20, patience=3, batch_size=16, random_state=1):
        self.lookback = lookback
        self.horizon = horizon
        self.variant = variant
        self.model_dim = model_dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.text_dim = text_dim
        self.prompt_dim = prompt_dim
        self.prompt_heads = prompt_heads
        self.prompt_tokens = prompt_tokens
        self.patch_len = patch_len
        self.stride = stride
        self.description = description
        self.backbone_seed = backbone_seed
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.random_state = random_state

    def _model_config(self):
        params = self.get_params()
        params["seed"] = params.pop("random_state")
        return ModelConfig.from_dict(params)

    def _features(self, X, y=None):
        values, texts, targets = check_windows(X, y, self.lookback)
        return self.network_.prepare(values, texts), targets

    def fit(self, X, y=None, eval_set=None):
        if self.random_state is None:
            raise ConfigurationError("random_state must be an integer for reproducible training")
        self.network_ = DualPromptNetwork(self._model_config())
        feats, targets = self._features(X, y)
        if targets is None:
            raise ValidationError("fit needs targets: pass y or WindowSample objects")
        if targets.shape[1] != self.horizon:
            raise DimensionError(f"targets have {targets.shape[1]} steps, horizon is {self.horizon}")
        val_feats = val_targets = None
        if eval_set is not None:
            if (isinstance(eval_set, tuple) and len(eval_set) == 2
                    and not isinstance(eval_set[0], WindowSample)):
                val_feats, val_targets = self._features(*eval_set)
            else:
                val_feats, val_targets = self._features(eval_set)
            if val_targets is None:
                raise ValidationError("eval_set needs targets")
        self.history_ = fit_network(
            self.network_, feats, targets, val_feats, val_targets,
            learning_rate=self.learning_rate, max_epochs=self.max_epochs,
            patience=self.patience, batch_size=self.batch_size, seed=self.random_state,
        )
        self.n_features_in_ = self.lookback
        return self

    def predict(self, X):
        check_is_fitted(self)
        feats, _ = self._features(X)
        return predict_features(self.network_, feats)

    def evaluate(self, X, y=None):
        """Return ``(mse, mae)`` against the windows' targets."""
        check_is_fitted(self)
        feats, targets = self._features(X, y)
        if targets is None:
            raise ValidationError("evaluate needs targets")
        return regression_metrics(predict_features(self.network_, feats), targets)

    # -- persistence ------------------------------------------------------

    def save(self, path):
        """Write every named parameter plus the estimator params to an ``.npz`` file."""
        check_is_fitted(self)
        meta = {"format": _FORMAT, "params": self.get_params()}
        arrays = self.network_.state_arrays()
        path = Path(path)
        with path.open("wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        return path

    @classmethod
    def load(cls, path):
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != _FORMAT:
                raise ConfigurationError(f"{path}: not a dualprompt checkpoint")
            est = cls(**meta["params"])
            est.network_ = DualPromptNetwork(est._model_config())
            est.network_.load_state_arrays({k: data[k] for k in data.files if k != "__meta__"})
        est.n_features_in_ = est.lookback
        return est
