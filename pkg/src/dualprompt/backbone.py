"""Frozen decoder-style transformer with trainable positions and layer norms."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import CapacityError, ConfigurationError, ContractViolation


@dataclass(frozen=True)
class BackboneConfig:
    model_dim: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 64
    max_len: int = 128
    vocab_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ConfigurationError(
                f"model_dim={self.model_dim} must be divisible by n_heads={self.n_heads}"
            )
        if min(self.model_dim, self.n_layers, self.n_heads, self.ff_dim, self.max_len) < 1:
            raise ConfigurationError(f"backbone sizes must be positive: {self}")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Block:
    """Pre-norm block: causal multi-head attention then a GELU feed-forward."""

    def __init__(self, cfg, rng, prefix):
        D, F = cfg.model_dim, cfg.ff_dim
        self.n_heads = cfg.n_heads
        self.head_dim = D // cfg.n_heads

        def frozen(name, data):
            return ad.Parameter(data, f"{prefix}.{name}", trainable=False)

        def norm(name):
            return (
                ad.Parameter(np.ones(D), f"{prefix}.{name}.gamma"),
                ad.Parameter(np.zeros(D), f"{prefix}.{name}.beta"),
            )

        self.w_q = frozen("attn.w_q", _uniform(rng, (D, D), D))
        self.w_k = frozen("attn.w_k", _uniform(rng, (D, D), D))
        self.w_v = frozen("attn.w_v", _uniform(rng, (D, D), D))
        self.w_o = frozen("attn.w_o", _uniform(rng, (D, D), D))
        self.b_o = frozen("attn.b_o", _uniform(rng, D, D))
        self.ff1_w = frozen("ff1.weight", _uniform(rng, (D, F), D))
        self.ff1_b = frozen("ff1.bias", _uniform(rng, F, D))
        self.ff2_w = frozen("ff2.weight", _uniform(rng, (F, D), F))
        self.ff2_b = frozen("ff2.bias", _uniform(rng, D, F))
        self.ln1 = norm("ln1")
        self.ln2 = norm("ln2")

    def parameters(self):
        return [
            self.w_q, self.w_k, self.w_v, self.w_o, self.b_o,
            self.ff1_w, self.ff1_b, self.ff2_w, self.ff2_b,
            *self.ln1, *self.ln2,
        ]

    def attention(self, x):
        n = x.shape[-2]
        mask = np.tril(np.ones((n, n), dtype=bool))
        q = ad.matmul(x, self.w_q)
        k = ad.matmul(x, self.w_k)
        v = ad.matmul(x, self.w_v)
        scale = 1.0 / np.sqrt(self.head_dim)
        heads = []
        for h in range(self.n_heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh, kh, vh = q[..., cols], k[..., cols], v[..., cols]
            att = ad.softmax_rows(ad.matmul(qh, ad.transpose(kh)) * scale, mask=mask)
            heads.append(ad.matmul(att, vh))
        return ad.linear(ad.concat(heads, axis=-1), self.w_o, self.b_o)

    def __call__(self, x):
        x = x + self.attention(ad.layer_norm(x, *self.ln1))
        h = ad.gelu(ad.linear(ad.layer_norm(x, *self.ln2), self.ff1_w, self.ff1_b))
        return x + ad.linear(h, self.ff2_w, self.ff2_b)


class Backbone:
    """Stand-in for a pretrained causal language model.

    The token table and every attention/feed-forward weight are frozen; the
    positional table and all layer norms are trainable.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0x6B7])
        D = cfg.model_dim
        self.token_table = ad.Parameter(
            rng.uniform(-1.0, 1.0, size=(cfg.vocab_size, D)), "backbone.token_table",
            trainable=False,
        )
        self.positions = ad.Parameter(_uniform(rng, (cfg.max_len, D), D), "backbone.positions")
        self.blocks = [Block(cfg, rng, f"backbone.block{i}") for i in range(cfg.n_layers)]
        self.ln_f = (
            ad.Parameter(np.ones(D), "backbone.ln_f.gamma"),
            ad.Parameter(np.zeros(D), "backbone.ln_f.beta"),
        )

    def parameters(self):
        params = [self.token_table, self.positions]
        for block in self.blocks:
            params.extend(block.parameters())
        return params + list(self.ln_f)

    def __call__(self, x):
        n = x.shape[-2]
        if n > self.cfg.max_len:
            raise CapacityError(
                f"sequence length {n} exceeds backbone max_len {self.cfg.max_len}"
            )
        h = x + self.positions[:n]
        for block in self.blocks:
            h = block(h)
        return ad.layer_norm(h, *self.ln_f)


def backbone_forward(inputs, model):
    return model(inputs)


class OutputHead:
    """Flatten the patch positions row-major and project to the horizon."""

    def __init__(self, n_patches, model_dim, horizon, rng, prefix="head"):
        fan_in = n_patches * model_dim
        self.n_patches = n_patches
        self.model_dim = model_dim
        self.horizon = horizon
        self.weight = ad.Parameter(_uniform(rng, (fan_in, horizon), fan_in), f"{prefix}.weight")
        self.bias = ad.Parameter(_uniform(rng, horizon, fan_in), f"{prefix}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, patch_hidden):
        lead = patch_hidden.shape[:-2]
        flat = ad.reshape(patch_hidden, *lead, self.n_patches * self.model_dim)
        return ad.linear(flat, self.weight, self.bias)


def strip_prefix_and_project(hidden, bundle, head):
    """Drop every prompt row, keep the final ``P`` rows, and project to ``T`` values."""
    if hidden.shape[-2] != bundle.length:
        raise ContractViolation(
            f"hidden state has {hidden.shape[-2]} rows but the bundle describes {bundle.length}"
        )
    return head(hidden[..., bundle.prefix_length:, :])
