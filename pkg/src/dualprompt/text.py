"""Hashed word tokenizer, a frozen CLS-style summary encoder, and window statistics.

These are small deterministic stand-ins for a pretrained tokenizer and a
pretrained sentence encoder. Nothing in here is ever trained.
"""

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import AlignmentError, InsufficientDataError

PAD_ID = 0

_TOKEN_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:e[-+]?\d+)?|[^\W\d_]+|\d+", re.UNICODE)
_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:e[-+]?\d+)?$")


def format_number(value):
    """Render ``value`` with 4 significant digits, keeping trailing zeros."""
    text = f"{float(value):#.4g}"
    if "e" not in text:
        text = text.rstrip(".")
    return text


@dataclass(frozen=True)
class Vocabulary:
    """Hashed vocabulary. Id 0 is reserved for padding."""

    size: int = 1024
    scheme: str = "blake2b-64"
    seed: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")
        if self.scheme != "blake2b-64":
            raise ValueError(f"unknown hashing scheme {self.scheme!r}")

    def token_id(self, word):
        digest = hashlib.blake2b(
            word.encode("utf-8"),
            digest_size=8,
            key=int(self.seed).to_bytes(8, "little", signed=True),
        ).digest()
        return 1 + int.from_bytes(digest, "little") % (self.size - 1)


def words(text):
    """Lowercased word list; numeric literals become 4-significant-digit strings."""
    out = []
    for tok in _TOKEN_RE.findall(text.lower()):
        if _NUMBER_RE.match(tok):
            tok = format_number(float(tok))
        out.append(tok)
    return out


def tokenize(text, vocab):
    return [vocab.token_id(w) for w in words(text)]


CLS_SCALE = 0.02


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SummaryEncoder:
    """One frozen bidirectional transformer block read out at a CLS position.

    Post-norm layout (attention, residual, norm, feed-forward, residual, norm)
    with a single attention head and no positional table.
    """

    def __init__(self, vocab, dim=32, seed=0):
        self.vocab = vocab
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng([seed, 0xB347])
        M = dim

        def p(name, data):
            return ad.Parameter(data, f"encoder.{name}", trainable=False)

        self.table = p("table", rng.uniform(-1.0, 1.0, size=(vocab.size, M)))
        # a full-scale frozen CLS vector dominates the residual and maps every
        # summary to nearly the same output, so it starts close to zero
        self.cls = p("cls", rng.uniform(-CLS_SCALE, CLS_SCALE, size=M))
        self.w_q = p("attn.w_q", _uniform(rng, (M, M), M))
        self.w_k = p("attn.w_k", _uniform(rng, (M, M), M))
        self.w_v = p("attn.w_v", _uniform(rng, (M, M), M))
        self.w_o = p("attn.w_o", _uniform(rng, (M, M), M))
        self.ln1_g = p("ln1.gamma", np.ones(M))
        self.ln1_b = p("ln1.beta", np.zeros(M))
        self.ln2_g = p("ln2.gamma", np.ones(M))
        self.ln2_b = p("ln2.beta", np.zeros(M))
        self.ff1_w = p("ff1.weight", _uniform(rng, (M, 2 * M), M))
        self.ff1_b = p("ff1.bias", _uniform(rng, 2 * M, M))
        self.ff2_w = p("ff2.weight", _uniform(rng, (2 * M, M), 2 * M))
        self.ff2_b = p("ff2.bias", _uniform(rng, M, 2 * M))
        self._cache = {}

    def parameters(self):
        return [
            self.table, self.cls, self.w_q, self.w_k, self.w_v, self.w_o,
            self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b, self.ff1_w, self.ff1_b, self.ff2_w, self.ff2_b,
        ]

    @property
    def seen_texts(self):
        return frozenset(self._cache)

    def _encode(self, text):
        ids = tokenize(text, self.vocab)
        h = np.vstack([self.cls.data[None, :], self.table.data[ids]])
        x = ad.Tensor(h)
        q = ad.matmul(x, self.w_q)
        k = ad.matmul(x, self.w_k)
        v = ad.matmul(x, self.w_v)
        att = ad.softmax_rows(ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(self.dim)))
        x = ad.layer_norm(x + ad.matmul(ad.matmul(att, v), self.w_o), self.ln1_g, self.ln1_b)
        ff = ad.linear(ad.gelu(ad.linear(x, self.ff1_w, self.ff1_b)), self.ff2_w, self.ff2_b)
        x = ad.layer_norm(x + ff, self.ln2_g, self.ln2_b)
        return x.data[0]

    def encode(self, text):
        """Return the M-dimensional CLS vector for ``text`` (cached, pure)."""
        vec = self._cache.get(text)
        if vec is None:
            vec = self._encode(text)
            vec.setflags(write=False)
            self._cache[text] = vec
        return vec.copy()


def encode_summary(text, encoder):
    return encoder.encode(text)


def encode_window_texts(summaries, encoder, length=None):
    """Stack per-timestamp CLS vectors into an ``L x M`` array."""
    summaries = list(summaries)
    if length is not None and len(summaries) != length:
        raise AlignmentError(f"expected {length} summaries, got {len(summaries)}")
    if not summaries:
        raise AlignmentError("no summaries to encode")
    return np.vstack([encoder.encode(s) for s in summaries])


# ---------------------------------------------------------------------------
# window statistics


@dataclass(frozen=True)
class WindowStats:
    min: float
    max: float
    median: float
    slope: float
    trend: str
    top_lags: tuple = field(default_factory=tuple)


def autocorrelation(x, lag):
    """Biased sample autocorrelation with mean removal."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    denom = np.dot(c, c)
    if denom == 0.0:
        return 0.0
    return float(np.dot(c[:-lag], c[lag:]) / denom)


def compute_stats(window, n_lags=5):
    x = np.asarray(window, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InsufficientDataError(f"statistics need at least 2 values, got {x.size}")
    L = x.size
    ordered = np.sort(x)
    mid = L // 2
    median = ordered[mid] if L % 2 else 0.5 * (ordered[mid - 1] + ordered[mid])

    t = np.arange(L, dtype=float)
    tc = t - t.mean()
    slope = float(np.dot(tc, x - x.mean()) / np.dot(tc, tc))
    if slope > 1e-9:
        trend = "upward"
    elif slope < -1e-9:
        trend = "downward"
    else:
        trend = "flat"

    if np.all(x == x[0]):
        lags = ()
    else:
        scores = [(-autocorrelation(x, k), k) for k in range(1, L)]
        lags = tuple(k for _, k in sorted(scores)[:n_lags])
    return WindowStats(float(ordered[0]), float(ordered[-1]), float(median), slope, trend, lags)
