import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatedhtr.errors import ConfigError, DimensionError, UsageError
from gatedhtr.layers import (
    ConvBlockParams, GateParams, conv_block_backward, conv_block_forward, gated_backward,
    gated_forward, map_to_sequence, sequence_to_map, update_running_stats,
)
from gatedhtr.tensor import conv2d

from conftest import grad_check


def block_params(rng, c_in=2, c_out=3, k=(3, 3), dropout=0.0, stride=(1, 1), padding=(1, 1)):
    return ConvBlockParams(
        kernels=rng.uniform(-1, 1, (c_out, c_in) + k),
        prelu_alpha=rng.uniform(0.05, 0.5, c_out),
        bn_gamma=rng.uniform(0.5, 1.5, c_out), bn_beta=rng.uniform(-0.5, 0.5, c_out),
        bn_running_mean=rng.uniform(-0.2, 0.2, c_out), bn_running_var=rng.uniform(0.5, 2.0, c_out),
        dropout_p=dropout, stride=stride, padding=padding)


# --- gated layer ----------------------------------------------------------------

def test_gate_zero_kernels_kill_everything(rng):
    x = rng.standard_normal((2, 4, 5))
    y, _ = gated_forward(x, GateParams(np.zeros((2, 2, 3, 3))))
    np.testing.assert_array_equal(y, 0.0)


def test_gate_zero_input(rng):
    y, _ = gated_forward(np.zeros((2, 4, 5)), GateParams(rng.standard_normal((2, 2, 3, 3))))
    np.testing.assert_array_equal(y, 0.0)


def test_gate_scalar_case():
    y, _ = gated_forward(np.array([[[2.0]]]), GateParams(np.array([[[[10.0]]]])))
    assert y[0, 0, 0] == pytest.approx(2.0 * np.tanh(20.0), rel=1e-15)
    assert y[0, 0, 0] == pytest.approx(2.0, abs=1e-15)


def test_gate_preserves_shape_and_bounds(rng):
    for _ in range(20):
        x = rng.standard_normal((3, 5, 7))
        y, _ = gated_forward(x, GateParams(rng.standard_normal((3, 3, 3, 5))))
        assert y.shape == x.shape
        assert np.all(np.abs(y) <= np.abs(x))


def test_gate_even_kernel_rejected():
    with pytest.raises(ConfigError):
        gated_forward(np.ones((1, 4, 4)), GateParams(np.ones((1, 1, 2, 2))))


def test_gate_channel_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        gated_forward(np.ones((2, 4, 4)), GateParams(np.ones((3, 2, 3, 3))))


def test_gate_backward_zero_grad(rng):
    x = rng.standard_normal((2, 3, 3))
    _, cache = gated_forward(x, GateParams(rng.standard_normal((2, 2, 3, 3))))
    dx, g = gated_backward(cache, np.zeros_like(x))
    assert not dx.any() and not g["gate_kernels"].any()


def test_gate_backward_saturated():
    x = np.array([[[1.0, -2.0], [0.5, 3.0]]])
    k = np.full((1, 1, 1, 1), 50.0)
    _, cache = gated_forward(x, GateParams(k))
    dx, g = gated_backward(cache, np.ones_like(x))
    np.testing.assert_allclose(dx, np.sign(x), atol=1e-12)
    assert np.abs(g["gate_kernels"]).max() < 1e-12


def test_gate_backward_random_single_map(rng):
    x = rng.uniform(-1, 1, (1, 3, 3))
    k = rng.uniform(-1, 1, (1, 1, 3, 3))
    y, cache = gated_forward(x, GateParams(k))
    g = rng.standard_normal(y.shape)
    dx, grads = gated_backward(cache, g)
    assert grad_check(lambda v: np.sum(gated_forward(v, GateParams(k))[0] * g), x, dx) < 1e-4
    assert grad_check(lambda v: np.sum(gated_forward(x, GateParams(v))[0] * g), k, grads["gate_kernels"]) < 1e-4


def test_gate_backward_needs_cache():
    with pytest.raises(UsageError):
        gated_backward(None, np.ones((1, 2, 2)))


# --- conv block -------------------------------------------------------------------

def test_block_without_dropout_train_equals_infer_given_same_stats(rng):
    p = block_params(rng)
    x = rng.standard_normal((4, 2, 5, 5))
    y_train, cache = conv_block_forward(x, p, "train")
    p.bn_running_mean = cache["batch_mean"].copy()
    p.bn_running_var = cache["batch_var"].copy()
    y_infer, _ = conv_block_forward(x, p, "infer")
    np.testing.assert_allclose(y_train, y_infer, rtol=1e-12, atol=1e-12)


def test_prelu_alpha_one_is_identity(rng):
    p = block_params(rng)
    p.prelu_alpha = np.ones(3)
    p.bn_gamma, p.bn_beta = np.ones(3), np.zeros(3)
    p.bn_running_mean, p.bn_running_var = np.zeros(3), np.ones(3)
    x = rng.standard_normal((2, 2, 4, 4))
    y, _ = conv_block_forward(x, p, "infer", eps=0.0)
    np.testing.assert_allclose(y, conv2d(x, p.kernels, (1, 1), (1, 1)), rtol=1e-12)


def test_batchnorm_fixed_point():
    # a 1x1 identity conv; the batch has per-channel mean 0 and variance 1 exactly
    p = ConvBlockParams(kernels=np.ones((1, 1, 1, 1)), prelu_alpha=np.ones(1), bn_gamma=np.ones(1),
                        bn_beta=np.zeros(1), bn_running_mean=np.zeros(1), bn_running_var=np.ones(1),
                        padding=(0, 0))
    x = np.array([1.0, -1.0, 1.0, -1.0]).reshape(2, 1, 1, 2)
    y, _ = conv_block_forward(x, p, "train")
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), rtol=1e-14)
    np.testing.assert_allclose(y, x, atol=1e-5)


def test_infer_mode_is_seed_independent(rng):
    p = block_params(rng, dropout=0.5)
    x = rng.standard_normal((2, 2, 4, 4))
    a, _ = conv_block_forward(x, p, "infer", rng=1)
    b, _ = conv_block_forward(x, p, "infer", rng=2)
    np.testing.assert_array_equal(a, b)


def test_train_dropout_needs_rng(rng):
    with pytest.raises(UsageError):
        conv_block_forward(np.ones((1, 2, 3, 3)), block_params(rng, dropout=0.2), "train")


def test_dropout_validation(rng):
    with pytest.raises(ConfigError):
        block_params(rng, dropout=1.0)


def test_inverted_dropout_preserves_expectation(rng):
    p = block_params(rng, c_in=1, c_out=2, dropout=0.2)
    x = rng.standard_normal((1, 1, 4, 4))
    # the same block without dropout gives the expected value of the masked output
    p0 = block_params(np.random.default_rng(0), c_in=1, c_out=2)
    p0.kernels, p0.prelu_alpha, p0.bn_gamma, p0.bn_beta = p.kernels, p.prelu_alpha, p.bn_gamma, p.bn_beta
    clean, _ = conv_block_forward(x, p0, "train")
    gen = np.random.default_rng(5)
    samples = np.stack([conv_block_forward(x, p, "train", rng=gen)[0] for _ in range(10_000)])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0) / np.sqrt(len(samples))
    assert np.all(np.abs(mean - clean) <= 3 * se + 1e-12)


def test_block_backward_matches_finite_differences(rng):
    for mode in ("train", "infer"):
        for stride, pad, k in [((1, 1), (1, 1), (3, 3)), ((2, 1), (0, 1), (2, 4))]:
            p = block_params(rng, k=k, stride=stride, padding=pad, dropout=0.3)
            x = rng.uniform(-1, 1, (2, 2, 5, 6))
            seed = 11

            def run(x_=x, **over):
                q = ConvBlockParams(**{**p.__dict__, **over})
                return conv_block_forward(x_, q, mode, rng=seed)[0]

            y, cache = conv_block_forward(x, p, mode, rng=seed)
            g = rng.standard_normal(y.shape)
            dx, grads = conv_block_backward(cache, g)
            assert grad_check(lambda v: np.sum(run(v) * g), x, dx) < 1e-4
            for name in ("kernels", "prelu_alpha", "bn_gamma", "bn_beta"):
                err = grad_check(lambda v: np.sum(run(**{name: v}) * g), getattr(p, name), grads[name])
                assert err < 1e-4, (mode, name, err)


def test_block_backward_needs_cache():
    with pytest.raises(UsageError):
        conv_block_backward(None, np.ones(3))


def test_running_stats_update(rng):
    p = block_params(rng)
    m0, v0 = p.bn_running_mean.copy(), p.bn_running_var.copy()
    _, cache = conv_block_forward(rng.standard_normal((3, 2, 4, 4)), p, "train")
    update_running_stats(p, cache, momentum=0.9)
    n = 3 * 4 * 4
    np.testing.assert_allclose(p.bn_running_mean, 0.9 * m0 + 0.1 * cache["batch_mean"])
    np.testing.assert_allclose(p.bn_running_var, 0.9 * v0 + 0.1 * cache["batch_var"] * n / (n - 1))


# --- map to sequence ----------------------------------------------------------------

def test_map_to_sequence_default_shape():
    seq = map_to_sequence(np.zeros((256, 1, 128)), 256)
    assert seq.shape == (128, 256)


def test_map_to_sequence_single_step():
    assert map_to_sequence(np.array([[[7.0]]]), 1).tolist() == [[7.0]]


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_map_to_sequence_columns(c, h, w, seed):
    fm = np.random.default_rng(seed).standard_normal((c, h, w))
    seq = map_to_sequence(fm, c * h)
    for k in range(w):
        np.testing.assert_array_equal(seq[k], fm[:, :, k].reshape(-1))
    np.testing.assert_array_equal(sequence_to_map(seq, fm.shape), fm)


def test_map_to_sequence_wrong_width():
    with pytest.raises(ConfigError):
        map_to_sequence(np.zeros((56, 4, 128)), 256)
