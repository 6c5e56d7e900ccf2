"""Explicit (hard) and textual (soft) prompt prefixes."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError, DimensionError, InvalidPromptError
from .text import PAD_ID, format_number, tokenize

DEFAULT_DESCRIPTION = "Daily series with news."


@dataclass(frozen=True)
class ExplicitPromptTemplate:
    description: str = DEFAULT_DESCRIPTION
    task: str = "Task: given the previous {L} steps, forecast the next {T} steps."
    statistics: str = (
        "Statistics: min {min}, max {max}, median {median}, "
        "the trend is {trend}, top lags are {lags}."
    )

    def render(self, stats, L, T):
        lags = ", ".join(str(k) for k in stats.top_lags) or "none"
        stat_text = self.statistics.format(
            min=format_number(stats.min),
            max=format_number(stats.max),
            median=format_number(stats.median),
            trend=stats.trend,
            lags=lags,
        )
        return f"{self.description} {self.task.format(L=L, T=T)} {stat_text}"


def build_explicit_prompt(stats, L, T, description=DEFAULT_DESCRIPTION):
    return ExplicitPromptTemplate(description=description).render(stats, L, T)


def prompt_token_ids(prompt, vocab, length=None):
    """Token ids of ``prompt``, optionally truncated or right-padded to ``length``."""
    ids = tokenize(prompt, vocab)
    if not ids:
        raise InvalidPromptError(f"prompt {prompt!r} produced no tokens")
    if length is not None:
        ids = ids[:length] + [PAD_ID] * max(0, length - len(ids))
    return ids


def embed_explicit_prompt(prompt, table, vocab, length=None):
    """Frozen lookup ``E`` (``w x D``); never carries a gradient."""
    ids = prompt_token_ids(prompt, vocab, length)
    data = table.data if isinstance(table, ad.Tensor) else np.asarray(table)
    return ad.Tensor(data[ids])


class TextualPrompt:
    """Trainable soft-prompt block turning CLS vectors ``S`` into prefix ``I``.

    ``S`` is projected to ``d_m``, refined by ``K`` heads of scaled dot-product
    self-attention (no mask), concatenated back to ``d_m``, projected to ``D``
    and passed through ReLU. With ``attention=False`` the attention stage is
    skipped entirely.
    """

    def __init__(self, text_dim, prompt_dim, n_heads, model_dim, rng, attention=True,
                 prefix="textual"):
        if n_heads < 1 or prompt_dim % n_heads:
            raise ConfigurationError(
                f"prompt_dim={prompt_dim} must be divisible by prompt_heads={n_heads}"
            )
        self.text_dim = text_dim
        self.prompt_dim = prompt_dim
        self.n_heads = n_heads
        self.head_dim = prompt_dim // n_heads
        self.model_dim = model_dim
        self.attention = attention

        def p(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return ad.Parameter(rng.uniform(-bound, bound, size=shape), f"{prefix}.{name}")

        self.in_w = p("in.weight", (text_dim, prompt_dim), text_dim)
        self.in_b = p("in.bias", prompt_dim, text_dim)
        self.heads = []
        if attention:
            for k in range(n_heads):
                self.heads.append(tuple(
                    p(f"head{k}.{n}", (prompt_dim, self.head_dim), prompt_dim)
                    for n in ("w_q", "w_k", "w_v")
                ))
        self.out_w = p("out.weight", (prompt_dim, model_dim), prompt_dim)
        self.out_b = p("out.bias", model_dim, prompt_dim)

    def parameters(self):
        params = [self.in_w, self.in_b]
        for head in self.heads:
            params.extend(head)
        return params + [self.out_w, self.out_b]

    def attention_weights(self, s_proj):
        """Per-head softmax matrices, for inspection."""
        scale = 1.0 / np.sqrt(self.head_dim)
        out = []
        for w_q, w_k, _ in self.heads:
            q = ad.matmul(s_proj, w_q)
            k = ad.matmul(s_proj, w_k)
            out.append(ad.softmax_rows(ad.matmul(q, ad.transpose(k)) * scale))
        return out

    def __call__(self, S):
        S = ad.tensor(S)
        if S.shape[-1] != self.text_dim:
            raise DimensionError(
                f"textual prompt expects {self.text_dim} columns, got shape {S.shape}"
            )
        z = ad.linear(S, self.in_w, self.in_b)
        if self.attention:
            heads = []
            for (_, _, w_v), att in zip(self.heads, self.attention_weights(z)):
                heads.append(ad.matmul(att, ad.matmul(z, w_v)))
            z = ad.concat(heads, axis=-1)
        return ad.relu(ad.linear(z, self.out_w, self.out_b))


def textual_prompt_forward(S, params):
    return params(S)


@dataclass
class PromptBundle:
    """Backbone input pieces and the prefix bookkeeping needed to strip them."""

    E: object
    I: object
    X: object
    order: tuple = ("E", "I", "X")

    @property
    def w(self):
        return 0 if self.E is None else self.E.shape[-2]

    @property
    def L(self):
        return 0 if self.I is None else self.I.shape[-2]

    @property
    def P(self):
        return self.X.shape[-2]

    @property
    def prefix_length(self):
        return self.w + self.L

    @property
    def length(self):
        return self.w + self.L + self.P


def assemble_bundle(E, I, X, order=("E", "I", "X")):
    """Concatenate the available pieces row-wise in ``order``.

    Returns ``(bundle, sequence)``. ``E`` or ``I`` may be None for single-prompt
    variants; ``X`` always comes last.
    """
    pieces = {"E": E, "I": I, "X": X}
    if order[-1] != "X":
        raise ConfigurationError(f"patch embeddings must come last, got order {order}")
    parts = [pieces[name] for name in order if pieces[name] is not None]
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1:
        raise DimensionError(
            f"prompt pieces disagree on width: {[p.shape for p in parts]}"
        )
    return PromptBundle(E, I, X, tuple(order)), ad.concat(parts, axis=-2)
