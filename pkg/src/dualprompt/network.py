"""The dual-prompt forecasting network and its ablation variants."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .backbone import Backbone, BackboneConfig, OutputHead, strip_prefix_and_project
from .exceptions import CapacityError, ConfigurationError, DimensionError
from .prompts import (
    DEFAULT_DESCRIPTION,
    TextualPrompt,
    assemble_bundle,
    build_explicit_prompt,
    prompt_token_ids,
)
from .series import (
    PatchConfig,
    PatchEmbedding,
    RevINState,
    patchify_tensor,
    revin_denormalize,
    revin_normalize,
    revin_parameters,
)
from .text import SummaryEncoder, Vocabulary, compute_stats, encode_window_texts

VARIANTS = ("FULL", "SEP", "STP", "DP_NTSA", "SPET")

# which prefixes each variant feeds the backbone, in order
_LAYOUTS = {
    "FULL": ("E", "I", "X"),
    "SEP": ("E", "X"),
    "STP": ("I", "X"),
    "DP_NTSA": ("E", "I", "X"),
    "SPET": ("I", "E", "X"),
}


def normalize_variant(name):
    key = str(name).upper().replace("-", "_")
    if key not in VARIANTS:
        raise ConfigurationError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return key


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 15
    horizon: int = 7
    variant: str = "FULL"
    model_dim: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 64
    max_len: int = 128
    vocab_size: int = 1024
    text_dim: int = 32
    prompt_dim: int = 32
    prompt_heads: int = 4
    prompt_tokens: int = 40
    patch_len: int = 4
    stride: int = 2
    revin_eps: float = 1e-5
    description: str = DEFAULT_DESCRIPTION
    backbone_seed: int = 0
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.lookback < 2 or self.horizon < 1:
            raise ConfigurationError(
                f"lookback must be >= 2 and horizon >= 1, got {self.lookback}, {self.horizon}"
            )
        if self.prompt_tokens < 1:
            raise ConfigurationError("prompt_tokens must be >= 1")

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})

    def to_dict(self):
        return asdict(self)

    @property
    def patch(self):
        return PatchConfig(self.patch_len, self.stride, self.lookback)

    @property
    def layout(self):
        return _LAYOUTS[self.variant]

    @property
    def sequence_length(self):
        w = self.prompt_tokens if "E" in self.layout else 0
        L = self.lookback if "I" in self.layout else 0
        return w + L + self.patch.n_patches


@dataclass
class WindowFeatures:
    """Precomputed, parameter-free inputs for a set of windows."""

    values: np.ndarray
    text_states: np.ndarray = None
    prompt_ids: np.ndarray = None
    prompts: list = None

    def __len__(self):
        return self.values.shape[0]

    def take(self, index):
        return WindowFeatures(
            self.values[index],
            None if self.text_states is None else self.text_states[index],
            None if self.prompt_ids is None else self.prompt_ids[index],
            None if self.prompts is None else [self.prompts[i] for i in np.atleast_1d(index)],
        )


class DualPromptNetwork:
    """Explicit prefix ``E``, textual prefix ``I``, patch tokens ``X`` through a frozen backbone."""

    def __init__(self, cfg):
        self.cfg = cfg
        layout = cfg.layout
        if cfg.sequence_length > cfg.max_len:
            raise CapacityError(
                f"variant {cfg.variant} needs {cfg.sequence_length} positions, max_len is {cfg.max_len}"
            )
        self.vocab = Vocabulary(cfg.vocab_size, seed=cfg.backbone_seed)
        self.encoder = SummaryEncoder(self.vocab, cfg.text_dim, seed=cfg.backbone_seed)
        self.backbone = Backbone(BackboneConfig(
            model_dim=cfg.model_dim, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
            ff_dim=cfg.ff_dim, max_len=cfg.max_len, vocab_size=cfg.vocab_size,
            seed=cfg.backbone_seed,
        ))
        rng = np.random.default_rng([cfg.seed, 0x7E57])
        self.patch_cfg = cfg.patch
        self.textual = None
        if "I" in layout:
            self.textual = TextualPrompt(
                cfg.text_dim, cfg.prompt_dim, cfg.prompt_heads, cfg.model_dim, rng,
                attention=cfg.variant != "DP_NTSA",
            )
        self.revin = revin_parameters()
        self.patch = PatchEmbedding(cfg.patch_len, cfg.model_dim, rng)
        self.head = OutputHead(self.patch_cfg.n_patches, cfg.model_dim, cfg.horizon, rng)

    # -- parameters -------------------------------------------------------

    def parameters(self):
        params = list(self.encoder.parameters()) + self.backbone.parameters()
        if self.textual is not None:
            params += self.textual.parameters()
        return params + list(self.revin) + self.patch.parameters() + self.head.parameters()

    def named_parameters(self):
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ConfigurationError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def partition_parameters(self):
        trainable, frozen = [], []
        for p in self.parameters():
            (trainable if p.trainable else frozen).append(p)
        return trainable, frozen

    # -- inputs -----------------------------------------------------------

    def explicit_prompt(self, window):
        return build_explicit_prompt(
            compute_stats(window), self.cfg.lookback, self.cfg.horizon, self.cfg.description
        )

    def prepare(self, values, texts=None):
        """Encode summaries and render explicit prompts for a stack of windows."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.cfg.lookback:
            raise DimensionError(
                f"expected windows of shape (n, {self.cfg.lookback}), got {values.shape}"
            )
        feats = WindowFeatures(values)
        layout = self.cfg.layout
        if "I" in layout:
            if texts is None or len(texts) != len(values):
                raise DimensionError("textual variants need one summary list per window")
            feats.text_states = np.stack([
                encode_window_texts(t, self.encoder, self.cfg.lookback) for t in texts
            ])
        if "E" in layout:
            feats.prompts = [self.explicit_prompt(v) for v in values]
            feats.prompt_ids = np.array([
                prompt_token_ids(p, self.vocab, self.cfg.prompt_tokens) for p in feats.prompts
            ])
        return feats

    # -- forward ----------------------------------------------------------

    def assemble(self, feats):
        """Build the backbone input for a batch; returns ``(bundle, sequence, revin_state)``."""
        state = RevINState(*self.revin, eps=self.cfg.revin_eps)
        normalized = revin_normalize(feats.values, state)
        X = self.patch(patchify_tensor(normalized, self.patch_cfg))
        E = I = None
        if feats.prompt_ids is not None:
            E = ad.Tensor(self.backbone.token_table.data[feats.prompt_ids])
        if feats.text_states is not None:
            I = self.textual(ad.Tensor(feats.text_states))
        bundle, seq = assemble_bundle(E, I, X, order=self.cfg.layout)
        return bundle, seq, state

    def forward(self, feats):
        """Denormalized ``(n, T)`` predictions as a Tensor."""
        bundle, seq, state = self.assemble(feats)
        hidden = self.backbone(seq)
        out = strip_prefix_and_project(hidden, bundle, self.head)
        return revin_denormalize(out, state)

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_arrays(self, arrays):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ConfigurationError(
                f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=float)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def forward_variant(values, texts, network, variant):
    """Forecast a single window with ``network``; ``variant`` must match its build."""
    if normalize_variant(variant) != network.cfg.variant:
        raise ConfigurationError(
            f"network was built for {network.cfg.variant}, not {normalize_variant(variant)}"
        )
    feats = network.prepare(np.asarray(values, dtype=float)[None, :], None if texts is None else [texts])
    return network.forward(feats).data[0]
