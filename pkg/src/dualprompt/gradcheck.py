"""Central finite-difference checks for every differentiable piece of the model.

Each check builds a small seeded instance, computes analytic gradients with
:func:`dualprompt.autodiff.backward` and compares them with central
differences. The error reported per check is the largest, over checked
arrays, of ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

STEP = 1e-5
TOLERANCE = 1e-4
DEEP_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_gradient(loss_fn, array, h=STEP):
    """Central differences of ``loss_fn()`` w.r.t. ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = array[i]
        array[i] = old + h
        up = loss_fn()
        array[i] = old - h
        down = loss_fn()
        array[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def check_gradients(build_loss, params, h=STEP):
    """Max relative error over ``params`` for the scalar built by ``build_loss()``.

    ``params`` are tensors with ``requires_grad`` set; ``build_loss`` must read
    them afresh on every call.
    """
    for p in params:
        p.grad = None
    ad.backward(build_loss())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = numeric_gradient(lambda: build_loss().item(), p.data, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _leaf(rng, *shape, low=-1.0, high=1.0):
    return ad.Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_kinks(rng, shape, margin=1e-3):
    x = rng.uniform(-1.0, 1.0, size=shape)
    x[np.abs(x) < margin] += 2 * margin
    return ad.Tensor(x, requires_grad=True)


# ---------------------------------------------------------------------------
# primitive checks


def _check_matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    batched, shared = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 3)
    return max(
        check_gradients(lambda: ad.tsum(ad.matmul(a, b)), [a, b]),
        check_gradients(lambda: ad.tsum(ad.mul(ad.matmul(batched, shared), ad.matmul(batched, shared))),
                        [batched, shared]),
    )


def _check_softmax(rng):
    a = _leaf(rng, 4, 4, low=-2, high=2)
    w = ad.Tensor(rng.normal(size=(4, 4)))
    mask = np.tril(np.ones((4, 4), dtype=bool))
    return max(
        check_gradients(lambda: ad.tsum(ad.mul(ad.softmax_rows(a), w)), [a]),
        check_gradients(lambda: ad.tsum(ad.mul(ad.softmax_rows(a, mask), w)), [a]),
    )


def _check_layer_norm(rng):
    x = _leaf(rng, 2, 6, low=-2, high=2)
    gamma, beta = _leaf(rng, 6), _leaf(rng, 6)
    w = ad.Tensor(rng.normal(size=(2, 6)))
    return check_gradients(lambda: ad.tsum(ad.mul(ad.layer_norm(x, gamma, beta), w)), [x, gamma, beta])


def _check_relu(rng):
    x = _away_from_kinks(rng, (4, 5))
    w = ad.Tensor(rng.normal(size=(4, 5)))
    return check_gradients(lambda: ad.tsum(ad.mul(ad.relu(x), w)), [x])


def _check_gelu(rng):
    x = _leaf(rng, 4, 5, low=-3, high=3)
    w = ad.Tensor(rng.normal(size=(4, 5)))
    return check_gradients(lambda: ad.tsum(ad.mul(ad.gelu(x), w)), [x])


def _check_linear(rng):
    x, w, b = _leaf(rng, 5, 3), _leaf(rng, 3, 2), _leaf(rng, 2)
    target = rng.normal(size=(5, 2))
    return check_gradients(lambda: ad.mse_loss(ad.linear(x, w, b), target), [x, w, b])


def _check_mse(rng):
    pred = _leaf(rng, 3, 4)
    target = rng.normal(size=(3, 4))
    return check_gradients(lambda: ad.mse_loss(pred, target), [pred])


def _check_composite(rng):
    x, w, b = _away_from_kinks(rng, (4, 3)), _leaf(rng, 3, 2), _leaf(rng, 2)
    target = rng.normal(size=(4, 2))
    return check_gradients(lambda: ad.mse_loss(ad.relu(ad.linear(x, w, b)), target), [x, w, b])


def _check_elementwise(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, low=0.5, high=2.0)
    return check_gradients(
        lambda: ad.tmean(ad.div(ad.mul(ad.sub(a, b), ad.add(a, b)), b)), [a, b]
    )


def _check_shape_ops(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 2, 4)
    w = ad.Tensor(rng.normal(size=(2, 12)))

    def loss():
        joined = ad.concat([a, b], axis=-2)
        picked = ad.getitem(joined, (slice(None), np.array([0, 4, 2, 0])))
        flat = ad.reshape(ad.transpose(picked), 2, 16)
        return ad.tsum(ad.mul(ad.getitem(flat, (slice(None), slice(2, 14))), w))

    return check_gradients(loss, [a, b])


# ---------------------------------------------------------------------------
# module checks


def _check_textual_prompt(rng, attention=True):
    from .prompts import TextualPrompt

    block = TextualPrompt(6, 8, 2, 10, np.random.default_rng(int(rng.integers(1 << 31))),
                          attention=attention)
    S = rng.normal(size=(4, 6))
    target = rng.normal(size=(4, 10))
    # shift the output bias so no pre-activation sits at the ReLU kink
    block.out_b.data += 0.5
    return check_gradients(lambda: ad.mse_loss(block(S), target), block.parameters())


def _check_series_path(rng):
    from .series import PatchConfig, PatchEmbedding, RevINState, patchify_tensor, revin_normalize

    cfg = PatchConfig(patch_len=4, stride=2, lookback=11)
    emb = PatchEmbedding(4, 5, np.random.default_rng(int(rng.integers(1 << 31))))
    gamma = ad.Parameter(np.array([1.3]), "gamma")
    beta = ad.Parameter(np.array([0.2]), "beta")
    windows = rng.normal(size=(2, 11)) * 3 + 1
    target = rng.normal(size=(2, cfg.n_patches, 5))

    def loss():
        state = RevINState(gamma, beta)
        return ad.mse_loss(emb(patchify_tensor(revin_normalize(windows, state), cfg)), target)

    return check_gradients(loss, [gamma, beta] + emb.parameters())


def _check_revin_inverse(rng):
    from .series import RevINState, revin_denormalize, revin_normalize

    gamma = ad.Parameter(np.array([0.7]), "gamma")
    beta = ad.Parameter(np.array([-0.3]), "beta")
    pred = _leaf(rng, 3, 4)
    windows = rng.normal(size=(3, 9)) + 2
    target = rng.normal(size=(3, 4))

    def loss():
        state = RevINState(gamma, beta)
        revin_normalize(windows, state)
        return ad.mse_loss(revin_denormalize(pred, state), target)

    return check_gradients(loss, [gamma, beta, pred])


def _check_output_head(rng):
    from .backbone import OutputHead

    head = OutputHead(3, 4, 2, np.random.default_rng(int(rng.integers(1 << 31))))
    hidden = _leaf(rng, 2, 3, 4)
    target = rng.normal(size=(2, 2))
    return check_gradients(lambda: ad.mse_loss(head(hidden), target), head.parameters() + [hidden])


def _check_backbone(rng):
    from .backbone import Backbone, BackboneConfig

    model = Backbone(BackboneConfig(model_dim=8, n_layers=1, n_heads=2, ff_dim=16, max_len=8,
                                    vocab_size=16, seed=int(rng.integers(1 << 31))))
    x = rng.normal(size=(5, 8))
    target = rng.normal(size=(5, 8))
    trainable = [p for p in model.parameters() if p.trainable]
    return check_gradients(lambda: ad.mse_loss(model(x), target), trainable)


def _check_end_to_end(rng, variant="FULL"):
    from .network import DualPromptNetwork, ModelConfig

    cfg = ModelConfig(
        lookback=8, horizon=3, variant=variant, model_dim=8, n_layers=1, n_heads=2, ff_dim=16,
        max_len=32, vocab_size=64, text_dim=8, prompt_dim=8, prompt_heads=2, prompt_tokens=6,
        patch_len=4, stride=2, backbone_seed=int(rng.integers(1 << 31)),
        seed=int(rng.integers(1 << 31)),
    )
    net = DualPromptNetwork(cfg)
    values = rng.normal(size=(2, 8)) + 5
    texts = [["quiet day"] * 7 + ["strike announced, expect surge"], ["routine trading"] * 8]
    feats = net.prepare(values, texts)
    target = rng.normal(size=(2, 3)) + 5
    trainable, _ = net.partition_parameters()
    return check_gradients(lambda: ad.mse_loss(net.forward(feats), target), trainable)


CHECKS = (
    ("matmul", _check_matmul, TOLERANCE),
    ("softmax_rows", _check_softmax, TOLERANCE),
    ("layer_norm", _check_layer_norm, TOLERANCE),
    ("relu", _check_relu, TOLERANCE),
    ("gelu", _check_gelu, TOLERANCE),
    ("linear", _check_linear, TOLERANCE),
    ("mse_loss", _check_mse, TOLERANCE),
    ("mse(relu(linear))", _check_composite, TOLERANCE),
    ("elementwise", _check_elementwise, TOLERANCE),
    ("shape ops", _check_shape_ops, TOLERANCE),
    ("textual prompt", _check_textual_prompt, TOLERANCE),
    ("textual prompt, no attention", lambda rng: _check_textual_prompt(rng, attention=False),
     TOLERANCE),
    ("revin affine + patch embedding", _check_series_path, TOLERANCE),
    ("revin denormalize", _check_revin_inverse, TOLERANCE),
    ("output head", _check_output_head, TOLERANCE),
    ("backbone norms + positions", _check_backbone, DEEP_TOLERANCE),
    ("end-to-end FULL", _check_end_to_end, DEEP_TOLERANCE),
    ("end-to-end SPET", lambda rng: _check_end_to_end(rng, "SPET"), DEEP_TOLERANCE),
)


def run_suite(seed=0, checks=CHECKS):
    """Run every check with its own seeded generator; returns a list of :class:`CheckResult`."""
    results = []
    for i, (name, fn, tol) in enumerate(checks):
        start = time.perf_counter()
        err = fn(np.random.default_rng([seed, i]))
        results.append(CheckResult(name, err, tol, time.perf_counter() - start))
    return results


def format_results(results):
    width = max(len(r.name) for r in results)
    lines = [
        f"{'PASS' if r.passed else 'FAIL'}  {r.name.ljust(width)}  "
        f"max rel err {r.max_rel_error:.3e}  (tol {r.tolerance:g}, {r.seconds:.2f}s)"
        for r in results
    ]
    return "\n".join(lines) + "\n"
