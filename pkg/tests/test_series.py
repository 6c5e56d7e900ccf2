import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualprompt import autodiff as ad
from dualprompt.exceptions import ConfigurationError, DimensionError, NonInvertibleError
from dualprompt.gradcheck import check_gradients
from dualprompt.series import (
    PatchConfig,
    PatchEmbedding,
    RevINState,
    embed_patches,
    pad_window,
    patchify,
    patchify_tensor,
    revin_denormalize,
    revin_normalize,
    revin_parameters,
)


def state(gamma=1.0, beta=0.0, eps=1e-5):
    return RevINState(ad.Parameter(np.array([gamma]), "g"), ad.Parameter(np.array([beta]), "b"), eps)


# -- RevIN ------------------------------------------------------------------------------


def test_normalize_hand_values():
    s = state(eps=0.0)
    out = revin_normalize(np.array([1.0, 2.0, 3.0]), s).data
    np.testing.assert_allclose(out, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    assert s.mean == 2.0 and s.var == pytest.approx(2 / 3)
    np.testing.assert_allclose(revin_normalize(np.array([1.0, 2.0, 3.0]), state()).data,
                               [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_constant_window_normalizes_to_beta():
    np.testing.assert_array_equal(revin_normalize(np.full(6, 4.0), state()).data, np.zeros(6))
    np.testing.assert_array_equal(revin_normalize(np.full(6, 4.0), state(beta=0.3)).data,
                                  np.full(6, 0.3))


def test_denormalize_fixed_point_and_hand_value():
    s = state(beta=0.7)
    revin_normalize(np.array([9.0, 11.0]), s)
    np.testing.assert_allclose(revin_denormalize(np.array([0.7]), s).data, [10.0])
    s = state(eps=0.0)
    s.mean, s.var = np.array([10.0]), np.array([4.0])
    assert revin_denormalize(np.array([1.0]), s).data[0] == 12.0


def test_round_trip_over_seeded_windows():
    rng = np.random.default_rng(0)
    windows = [rng.normal(rng.normal() * 50, rng.uniform(0.01, 20), size=15) for _ in range(99)]
    windows.append(np.full(15, 3.25))
    for i, w in enumerate(windows):
        s = state(gamma=rng.uniform(0.2, 3) * rng.choice([-1, 1]), beta=rng.normal())
        back = revin_denormalize(revin_normalize(w, s), s).data
        assert np.max(np.abs(back - w)) <= 1e-9, i


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)),
       st.floats(0.1, 5.0), st.floats(-2.0, 2.0))
def test_round_trip_property(w, gamma, beta):
    s = state(gamma, beta)
    back = revin_denormalize(revin_normalize(w, s), s).data
    assert np.max(np.abs(back - w)) <= 1e-9


def test_zero_gamma_is_not_invertible():
    s = state(gamma=0.0)
    revin_normalize(np.arange(4.0), s)
    with pytest.raises(NonInvertibleError):
        revin_denormalize(np.zeros(2), s)


def test_batched_windows_keep_their_own_statistics():
    s = state()
    w = np.array([[1.0, 2.0, 3.0], [10.0, 10.0, 40.0]])
    out = revin_normalize(w, s).data
    for row, orig in zip(out, w):
        single = state()
        np.testing.assert_array_equal(row, revin_normalize(orig, single).data)
    assert s.mean.shape == (2, 1)


def test_revin_parameters_are_trainable_scalars():
    gamma, beta = revin_parameters()
    assert gamma.shape == beta.shape == (1,)
    assert gamma.trainable and beta.trainable
    assert gamma.data[0] == 1.0 and beta.data[0] == 0.0


# -- patching -------------------------------------------------------------------------------


def test_patch_count_law_exhaustive_sweep():
    failures = []
    for L in range(1, 65):
        for Lp in range(1, L + 1):
            for stride in range(1, Lp + 1):
                cfg = PatchConfig(Lp, stride, L)
                got = patchify(np.arange(float(L)), cfg).shape
                want = (L - Lp) // stride + 2
                if got != (want, Lp) or cfg.n_patches != want:
                    failures.append((L, Lp, stride, got))
    assert failures == []


def test_default_configuration_gives_seven_patches():
    cfg = PatchConfig(4, 2, 15)
    patches = patchify(np.arange(15.0), cfg)
    assert patches.shape == (7, 4)
    np.testing.assert_array_equal(patches[0], [0, 1, 2, 3])
    np.testing.assert_array_equal(patches[-1], [12, 13, 14, 14])


def test_full_length_patch_boundary():
    w = np.arange(5.0)
    patches = patchify(w, PatchConfig(5, 1, 5))
    np.testing.assert_array_equal(patches, [[0, 1, 2, 3, 4], [1, 2, 3, 4, 4]])


def test_patch_elements_follow_index_rule():
    L, Lp, stride = 10, 3, 3
    w = np.random.default_rng(1).normal(size=L)
    padded = pad_window(w, stride)
    assert padded.shape == (L + stride,)
    patches = patchify(w, PatchConfig(Lp, stride, L))
    for i in range(1, patches.shape[0] + 1):
        for j in range(Lp):
            assert patches[i - 1, j] == padded[(i - 1) * stride + j]


def test_non_overlapping_patches_cover_each_index_once():
    L, Lp = 12, 4
    idx = PatchConfig(Lp, Lp, L).indices()
    seen = [int(v) for v in idx.ravel() if v < L - 1]
    assert len(seen) == len(set(seen))


def test_tensor_patchify_matches_array_version():
    cfg = PatchConfig(4, 2, 15)
    w = np.random.default_rng(2).normal(size=(3, 15))
    np.testing.assert_array_equal(patchify_tensor(w, cfg).data, patchify(w, cfg))


def test_patch_config_errors():
    with pytest.raises(ConfigurationError):
        PatchConfig(5, 2, 4)
    with pytest.raises(ConfigurationError):
        PatchConfig(4, 0, 10)
    with pytest.raises(DimensionError):
        patchify(np.zeros(9), PatchConfig(4, 2, 10))


# -- embedding ---------------------------------------------------------------------------------


@pytest.fixture
def emb():
    return PatchEmbedding(4, 6, np.random.default_rng(3))


def test_zero_patches_give_bias_rows(emb):
    out = embed_patches(np.zeros((7, 4)), emb).data
    np.testing.assert_array_equal(out, np.tile(emb.bias.data, (7, 1)))


def test_identical_patches_give_identical_rows(emb):
    out = emb(np.tile([1.0, -2.0, 0.5, 3.0], (5, 1))).data
    assert all(row.tobytes() == out[0].tobytes() for row in out)


def test_rows_match_independent_linear_calls(emb):
    patches = np.random.default_rng(4).normal(size=(7, 4))
    out = emb(patches).data
    for i, p in enumerate(patches):
        single = emb(p[None, :]).data[0]
        assert out[i].tobytes() == single.tobytes()


def test_width_mismatch(emb):
    with pytest.raises(DimensionError):
        emb(np.zeros((7, 5)))


def test_gradients_through_normalize_patchify_embed():
    rng = np.random.default_rng(5)
    cfg = PatchConfig(4, 2, 15)
    emb = PatchEmbedding(4, 3, rng)
    gamma, beta = revin_parameters()
    gamma.data[:] = 1.4
    beta.data[:] = -0.2
    w = rng.normal(size=(2, 15)) * 4 + 7
    target = rng.normal(size=(2, 7, 3))

    def loss():
        s = RevINState(gamma, beta)
        return ad.mse_loss(emb(patchify_tensor(revin_normalize(w, s), cfg)), target)

    assert check_gradients(loss, [gamma, beta, emb.weight, emb.bias]) <= 1e-4
