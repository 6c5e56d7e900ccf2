"""Reversible instance normalization, patch slicing, and patch embedding.

Patch count follows ``P = floor((L - L_p) / stride) + 2``. Sliding a window
of length ``L_p`` with step ``stride`` over a sequence of length ``N`` yields
``floor((N - L_p) / stride) + 1`` patches, so the extra patch comes from
padding the window with ``stride`` copies of its last value (``N = L + stride``).
Patch ``i`` (1-based) covers padded indices ``(i-1)*stride ... (i-1)*stride + L_p - 1``.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, DimensionError, NonInvertibleError


@dataclass
class RevINState:
    """Per-forward normalization statistics plus the shared affine parameters.

    ``mean`` and ``var`` have one entry per window (shape ``(..., 1)``).
    """

    gamma: object
    beta: object
    eps: float = 1e-5
    mean: object = None
    var: object = None

    @property
    def std(self):
        return np.sqrt(self.var)

    @property
    def scale(self):
        return np.sqrt(self.var + self.eps)


def revin_parameters(prefix="revin"):
    return (
        ad.Parameter(np.ones(1), f"{prefix}.gamma"),
        ad.Parameter(np.zeros(1), f"{prefix}.beta"),
    )


def revin_normalize(window, state):
    """Standardize each window (last axis) with population variance, then affine."""
    x = np.asarray(window.data if isinstance(window, ad.Tensor) else window, dtype=float)
    state.mean = x.mean(axis=-1, keepdims=True)
    state.var = x.var(axis=-1, keepdims=True)
    normalized = ad.Tensor((x - state.mean) / state.scale)
    return normalized * state.gamma + state.beta


def revin_denormalize(predictions, state):
    """Exact inverse of :func:`revin_normalize` applied to model outputs."""
    if state.mean is None:
        raise ValueError("RevIN state has no statistics; call revin_normalize first")
    gamma = ad.tensor(state.gamma)
    if np.any(gamma.data == 0.0):
        raise NonInvertibleError("RevIN gamma is zero; denormalization is undefined")
    y = ad.div(ad.sub(predictions, state.beta), gamma)
    return ad.add(ad.mul(y, state.scale), state.mean)


@dataclass(frozen=True)
class PatchConfig:
    patch_len: int = 4
    stride: int = 2
    lookback: int = 15

    def __post_init__(self):
        if self.patch_len < 1 or self.stride < 1 or self.lookback < 1:
            raise ConfigurationError(f"patch settings must be positive: {self}")
        if self.patch_len > self.lookback:
            raise ConfigurationError(
                f"patch_len={self.patch_len} exceeds lookback={self.lookback}"
            )

    @property
    def n_patches(self):
        return (self.lookback - self.patch_len) // self.stride + 2

    def indices(self):
        """``P x L_p`` source indices into the unpadded window."""
        starts = np.arange(self.n_patches)[:, None] * self.stride
        padded = starts + np.arange(self.patch_len)[None, :]
        return np.minimum(padded, self.lookback - 1)


def pad_window(window, stride):
    x = np.asarray(window, dtype=float)
    tail = np.repeat(x[..., -1:], stride, axis=-1)
    return np.concatenate([x, tail], axis=-1)


def patchify(window, cfg):
    """Return a ``P x L_p`` array of patches (batched windows are supported)."""
    x = np.asarray(window, dtype=float)
    if x.shape[-1] != cfg.lookback:
        raise DimensionError(f"window length {x.shape[-1]} != lookback {cfg.lookback}")
    padded = pad_window(x, cfg.stride)
    starts = np.arange(cfg.n_patches) * cfg.stride
    return np.stack([padded[..., s:s + cfg.patch_len] for s in starts], axis=-2)


def patchify_tensor(window, cfg):
    """Differentiable :func:`patchify`: a gather through :meth:`PatchConfig.indices`."""
    window = ad.tensor(window)
    if window.shape[-1] != cfg.lookback:
        raise DimensionError(f"window length {window.shape[-1]} != lookback {cfg.lookback}")
    return window[..., cfg.indices()]


class PatchEmbedding:
    def __init__(self, patch_len, model_dim, rng, prefix="patch"):
        bound = 1.0 / np.sqrt(patch_len)
        self.patch_len = patch_len
        self.weight = ad.Parameter(
            rng.uniform(-bound, bound, size=(patch_len, model_dim)), f"{prefix}.weight"
        )
        self.bias = ad.Parameter(rng.uniform(-bound, bound, size=model_dim), f"{prefix}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, patches):
        patches = ad.tensor(patches)
        if patches.shape[-1] != self.patch_len:
            raise DimensionError(
                f"patch width {patches.shape[-1]} != embedding input {self.patch_len}"
            )
        # exact_rows: each patch row is bitwise the same as embedding it alone
        return ad.linear(patches, self.weight, self.bias, exact_rows=True)


def embed_patches(patches, emb):
    return emb(patches)
