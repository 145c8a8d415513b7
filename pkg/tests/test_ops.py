import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from artdenoise import ops
from artdenoise.gradcheck import grad_check, primitive_cases
from artdenoise.ops import (BatchNormStateError, DegenerateChannelError, ShapeError, batch_norm,
                            conv1d, layer_norm, linear, log_softmax, maxpool1d, mse_loss,
                            multi_head_attention, new_batch_norm_state, scaled_attention,
                            upsample1d, zscore)
from artdenoise.tensor import Tensor


def arr(*rows):
    return np.array(rows, dtype=float)


# -- conv / pool / upsample ---------------------------------------------------

def test_conv_identity_kernel():
    out = conv1d(arr([1, 2, 3]), np.array([[[1.0]]]), np.zeros(1))
    np.testing.assert_array_equal(out.data, [[1, 2, 3]])


def test_conv_centred_delta_same_padding():
    out = conv1d(arr([4, 5, 6]), np.array([[[0.0, 1, 0]]]))
    np.testing.assert_array_equal(out.data, [[4, 5, 6]])


def test_conv_valid_sliding_dot():
    out = conv1d(arr([1, 2, 3]), np.array([[[1.0, 1]]]), padding="valid")
    np.testing.assert_array_equal(out.data, [[3, 5]])


def test_conv_matches_correlate_oracle():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((3, 20)), rng.standard_normal((2, 3, 5)), rng.standard_normal(2)
    out = conv1d(x, w, b).data
    for o in range(2):
        ref = b[o] + sum(np.correlate(np.pad(x[i], 2), w[o, i], mode="valid") for i in range(3))
        np.testing.assert_allclose(out[o], ref, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv1d(np.zeros((2, 8)), np.zeros((1, 3, 3)))


@pytest.mark.parametrize("x, expected", [
    ([1, 3, 2, 5], [3, 5]),
    ([7, 7, 7, 7], [7, 7]),
    ([-1, -2, 0, -5], [-1, 0]),
])
def test_maxpool_examples(x, expected):
    np.testing.assert_array_equal(maxpool1d(arr(x)).data, [expected])


def test_maxpool_tie_sends_gradient_to_first():
    x = Tensor(arr([7, 7, 1, 2]), requires_grad=True)
    maxpool1d(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [[1, 0, 0, 1]])


@pytest.mark.parametrize("x, expected", [
    ([1, 2], [1, 1, 2, 2]),
    ([0], [0, 0]),
    ([3, -1, 4], [3, 3, -1, -1, 4, 4]),
])
def test_upsample_examples(x, expected):
    np.testing.assert_array_equal(upsample1d(arr(x)).data, [expected])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 8), elements=st.floats(-5, 5)))
def test_pool_of_upsample_is_identity(x):
    np.testing.assert_array_equal(maxpool1d(upsample1d(x)).data, x)


# -- linear -------------------------------------------------------------------

def test_linear_identity():
    x = np.random.default_rng(1).standard_normal((3, 5))
    np.testing.assert_array_equal(linear(x, np.eye(3), np.zeros(3)).data, x)


def test_linear_zero_weight_gives_bias_columns():
    out = linear(np.ones((2, 4)), np.zeros((3, 2)), arr(1, 2, 3)).data
    np.testing.assert_array_equal(out, np.repeat(arr(1, 2, 3)[:, None], 4, axis=1))


def test_linear_hand_matmul():
    out = linear(arr([1], [1]), arr([1, 2], [3, 4]), np.zeros(2)).data
    np.testing.assert_array_equal(out, [[3], [7]])


def test_pointwise_expansion_example():
    out = linear(arr([3, 4]), arr([1], [2]), np.zeros(2)).data
    np.testing.assert_array_equal(out, [[3, 4], [6, 8]])


# -- normalisation ------------------------------------------------------------

def test_layer_norm_examples():
    g, b = np.ones(3), np.zeros(3)
    np.testing.assert_array_equal(layer_norm(np.full((3, 1), 5.0), g, b).data, np.zeros((3, 1)))
    np.testing.assert_allclose(layer_norm(arr([1], [2], [3]), g, b).data[:, 0],
                               [-1.2247, 0, 1.2247], atol=1e-4)
    np.testing.assert_allclose(layer_norm(arr([1], [-1]), np.ones(2), np.zeros(2)).data[:, 0],
                               [1, -1], atol=1e-4)


def test_batch_norm_two_sample_batch():
    state = new_batch_norm_state(1)
    out = batch_norm(np.array([[[2.0]], [[4.0]]]), np.ones(1), np.zeros(1), state, training=True)
    np.testing.assert_allclose(out.data.ravel(), [-1, 1], atol=1e-4)
    assert state["count"][0] == 1


def test_batch_norm_symmetric_batch():
    x = np.random.default_rng(2).standard_normal((1, 3, 1))
    out = batch_norm(np.concatenate([x, -x]), np.ones(3), np.zeros(3), new_batch_norm_state(3), True)
    np.testing.assert_allclose(np.abs(out.data), 1, atol=1e-3)


def test_batch_norm_eval_with_unit_stats_is_identity():
    state = new_batch_norm_state(2)
    state["count"][0] = 1
    x = np.random.default_rng(3).standard_normal((4, 2, 5))
    np.testing.assert_allclose(batch_norm(x, np.ones(2), np.zeros(2), state, False).data, x, rtol=1e-5)


def test_batch_norm_eval_before_training_fails():
    with pytest.raises(BatchNormStateError):
        batch_norm(np.ones((2, 2, 3)), np.ones(2), np.zeros(2), new_batch_norm_state(2), False)


def test_batch_norm_eval_leaves_state_untouched():
    state = new_batch_norm_state(2)
    x = np.random.default_rng(4).standard_normal((3, 2, 6))
    batch_norm(x, np.ones(2), np.zeros(2), state, True)
    before = {k: v.copy() for k, v in state.items()}
    batch_norm(x * 3, np.ones(2), np.zeros(2), state, False)
    for k in state:
        np.testing.assert_array_equal(state[k], before[k])


def test_log_softmax_examples():
    np.testing.assert_allclose(log_softmax(np.zeros((4, 1))).data, np.log(0.25))
    np.testing.assert_allclose(log_softmax(arr([1], [2])).data[:, 0], [-1.3133, -0.3133], atol=1e-4)
    out = log_softmax(arr([0], [-1e4])).data[:, 0]
    assert out[0] == pytest.approx(0) and out[1] < -1e3


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 7), elements=st.floats(-50, 50)))
def test_log_softmax_exponentiates_to_distribution(x):
    np.testing.assert_allclose(np.exp(log_softmax(x).data).sum(axis=0), 1.0, atol=1e-12)


def test_zscore_examples():
    np.testing.assert_allclose(zscore(arr([1, 2, 3])).data, [[-1.2247, 0, 1.2247]], atol=1e-4)
    x = zscore(np.random.default_rng(5).standard_normal((3, 50))).data
    np.testing.assert_allclose(zscore(x).data, x, atol=1e-6)
    with pytest.raises(DegenerateChannelError):
        zscore(np.ones((2, 10)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 16), elements=st.floats(-100, 100)).filter(
    lambda a: np.all(a.std(axis=1) > 1e-3)))
def test_zscore_moments(x):
    z = zscore(x).data
    assert np.all(np.abs(z.mean(axis=1)) < 1e-6)
    assert np.all(np.abs(z.std(axis=1) - 1) < 1e-6)


# -- attention ----------------------------------------------------------------

def test_zero_logits_give_uniform_attention_and_mean_output():
    v = np.random.default_rng(6).standard_normal((4, 3))
    w = []
    out = scaled_attention(np.zeros((4, 2)), np.zeros((4, 2)), v, weights_out=w).data
    np.testing.assert_allclose(w[0], 0.25)
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (4, 1)))


def test_identical_value_rows_pass_through():
    rng = np.random.default_rng(7)
    v = np.tile(rng.standard_normal(3), (5, 1))
    out = scaled_attention(rng.standard_normal((4, 2)), rng.standard_normal((5, 2)), v).data
    np.testing.assert_allclose(out, np.tile(v[0], (4, 1)))


def test_two_by_two_attention():
    eye = np.eye(2)
    out = scaled_attention(eye, eye, eye, scale=1.0).data
    a = np.exp(1) / (np.exp(1) + 1)
    np.testing.assert_allclose(out, [[a, 1 - a], [1 - a, a]], atol=1e-12)


def test_attention_matches_loop_oracle():
    rng = np.random.default_rng(8)
    q, k, v = rng.standard_normal((6, 4)), rng.standard_normal((7, 4)), rng.standard_normal((7, 3))
    out = scaled_attention(q, k, v).data
    for i in range(6):
        logits = np.array([q[i] @ k[j] / 2.0 for j in range(7)])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        np.testing.assert_allclose(out[i], w @ v, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 5, 4), elements=st.floats(-20, 20)),
       arrays(np.float64, (2, 6, 4), elements=st.floats(-20, 20)), st.booleans())
def test_attention_rows_sum_to_one(q, k, causal):
    if causal:
        k = k[:, :5]
    w = []
    scaled_attention(q, k, np.ones(k.shape[:-1] + (2,)), causal=causal, weights_out=w)
    np.testing.assert_allclose(w[0].sum(axis=-1), 1.0, atol=1e-9)
    if causal:
        assert np.all(np.triu(w[0][0], 1) == 0)


def _mha_params(rng, d, identity=False):
    p = {}
    for key in ops.MHA_KEYS:
        if key.startswith("w"):
            p[key] = np.eye(d) if identity else rng.standard_normal((d, d)) / np.sqrt(d)
        else:
            p[key] = np.zeros(d) if identity else rng.standard_normal(d)
    return p


def test_single_head_with_identity_projections_is_plain_attention():
    x = np.random.default_rng(9).standard_normal((4, 6))
    out = multi_head_attention(x, x, _mha_params(None, 4, identity=True), heads=1).data
    ref = scaled_attention(x.T, x.T, x.T).data.T
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_zero_input_zero_bias_gives_zero_output():
    p = _mha_params(np.random.default_rng(10), 4)
    for key in ("bq", "bv", "bo"):
        p[key] = np.zeros(4)
    np.testing.assert_array_equal(multi_head_attention(np.zeros((4, 5)), np.zeros((4, 5)), p, 2).data, 0)


def test_mha_matches_per_head_oracle():
    rng = np.random.default_rng(11)
    d, t, h = 16, 8, 8
    x = rng.standard_normal((d, t))
    p = _mha_params(rng, d)
    out = multi_head_attention(x, x, p, heads=h).data
    q, k, v = p["wq"] @ x + p["bq"][:, None], p["wk"] @ x, p["wv"] @ x + p["bv"][:, None]
    dh = d // h
    heads = []
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        logits = q[sl].T @ k[sl] / np.sqrt(dh)
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        heads.append((w @ v[sl].T).T)
    ref = p["wo"] @ np.concatenate(heads) + p["bo"][:, None]
    np.testing.assert_allclose(out, ref, atol=1e-12)


# -- loss -----------------------------------------------------------------------

def test_mse_examples():
    y = np.random.default_rng(12).standard_normal((4, 6))
    assert mse_loss(y, y).item() == 0
    assert mse_loss(y + 1, y).item() == pytest.approx(1)
    d = np.zeros(24)
    d[:6], d[6:12] = 1, -1
    assert mse_loss(y + d.reshape(4, 6), y).item() == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        mse_loss(y, y[:2])


# -- gradient checks ------------------------------------------------------------

@pytest.mark.parametrize("name, fn, inputs", primitive_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_primitive_gradients(name, fn, inputs):
    assert grad_check(fn, inputs) < 1e-4


@pytest.mark.parametrize("op, inputs, tol", [
    (ops.linear, lambda r: [r.standard_normal((3, 6)), r.standard_normal((4, 3)), r.standard_normal(4)], 1e-6),
    (ops.log_softmax, lambda r: [r.standard_normal((4, 6))], 1e-6),
    (ops.scaled_attention, lambda r: [r.standard_normal((5, 4)), r.standard_normal((5, 4)),
                                      r.standard_normal((5, 3))], 1e-5),
])
def test_tight_gradient_bounds(op, inputs, tol):
    ts = [Tensor(a) for a in inputs(np.random.default_rng(13))]
    assert grad_check(op, ts, seed=3) < tol
