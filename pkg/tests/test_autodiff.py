import math

import numpy as np
import pytest

from armsense import autodiff as ad
from armsense.checkpoint import load_weights, save_weights
from armsense.errors import (
    GraphConsumed,
    HeadDivisibility,
    NonScalarOutput,
    ProbabilityOutOfRange,
    ShapeMismatch,
)


def _t(values, grad=True):
    return ad.Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


def _rand(shape, seed, scale=1.0):
    return np.random.default_rng(seed).standard_normal(shape) * scale


# --- forward values ----------------------------------------------------------


def test_softmax_uniform_on_equal_logits():
    out = ad.softmax_last_dim(_t([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_softmax_rows_sum_to_one():
    x = _t(_rand((7, 9), 0, 5.0))
    out = ad.softmax_last_dim(x)
    assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-6


def test_softmax_stable_for_huge_logits():
    out = ad.softmax_last_dim(_t([1000.0, 1000.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_cross_entropy_closed_form():
    # -log softmax([10, -10])[0] = log(1 + e^-20)
    loss = ad.cross_entropy(_t([10.0, -10.0]), 0)
    assert float(loss.data) == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert float(loss.data) == pytest.approx(2.061e-9, rel=1e-3)


def test_cross_entropy_decreases_in_correct_logit():
    low = ad.cross_entropy(_t([1.0, 0.0]), 0)
    high = ad.cross_entropy(_t([3.0, 0.0]), 0)
    assert float(high.data) < float(low.data)


def test_relu_and_gelu_anchors():
    assert float(ad.gelu(_t([0.0])).data[0]) == 0.0
    assert float(ad.relu(_t([-5.0])).data[0]) == 0.0
    # gelu(x) -> x for large x, -> 0 for very negative x
    assert float(ad.gelu(_t([10.0])).data[0]) == pytest.approx(10.0, rel=1e-6)
    assert abs(float(ad.gelu(_t([-10.0])).data[0])) < 1e-8


def test_dropout_identity_cases():
    x = _t(_rand((5, 5), 1))
    assert ad.dropout(x, 0.0, ad.make_rng(0), train=True) is x
    assert ad.dropout(x, 0.7, ad.make_rng(0), train=False) is x


def test_dropout_rejects_bad_probability():
    with pytest.raises(ProbabilityOutOfRange):
        ad.dropout(_t([1.0]), 1.0, ad.make_rng(0), train=True)


def test_dropout_inverted_scaling_expectation():
    x = ad.Tensor(np.ones((50, 50)))
    rng = ad.make_rng(123)
    total = np.zeros((50, 50))
    n = 200
    for _ in range(n):
        total += ad.dropout(x, 0.4, rng, train=True).data
    assert abs(total.mean() / n - 1.0) < 0.02


def test_dropout_deterministic_under_seed():
    x = ad.Tensor(_rand((20, 20), 2))
    a = ad.dropout(x, 0.3, ad.make_rng(9), train=True).data
    b = ad.dropout(x, 0.3, ad.make_rng(9), train=True).data
    assert np.array_equal(a, b)


# --- gradients ---------------------------------------------------------------


def test_backward_sum_of_squares():
    x = _t(_rand((4, 3), 3))
    loss = ad.scale(ad.sum_all(ad.mul(x, x)), 0.5)
    ad.backward(loss)
    assert np.allclose(x.grad, x.data)


def test_backward_linear_cross_entropy_closed_form():
    # single linear layer + CE: dW = input outer (softmax - onehot)
    x = ad.Tensor(_rand((5,), 4))
    w = _t(_rand((5, 3), 5, 0.5))
    logits = ad.matmul(x, w)
    loss = ad.cross_entropy(logits, 2)
    ad.backward(loss)
    z = x.data @ w.data
    soft = np.exp(z - z.max())
    soft /= soft.sum()
    soft[2] -= 1.0
    assert np.allclose(w.grad, np.outer(x.data, soft), atol=1e-12)


def test_backward_requires_scalar():
    x = _t(_rand((3, 3), 6))
    with pytest.raises(NonScalarOutput):
        ad.backward(ad.mul(x, x))


def test_double_backward_raises():
    x = _t([1.0, 2.0])
    loss = ad.sum_all(ad.mul(x, x))
    ad.backward(loss)
    with pytest.raises(GraphConsumed):
        ad.backward(loss)


def test_grad_accumulates_across_paths():
    x = _t([2.0])
    y = ad.add(x, x)  # dy/dx = 2
    ad.backward(ad.sum_all(y))
    assert x.grad[0] == pytest.approx(2.0)


def _sq(t):
    return ad.sum_all(ad.mul(t, t))


@pytest.mark.parametrize(
    "name,build",
    [
        ("matmul", lambda p: _sq(ad.matmul(p[0], p[1]))),
        ("add_broadcast", lambda p: _sq(ad.add(p[0], p[2]))),
        ("relu", lambda p: _sq(ad.relu(p[0]))),
        ("gelu", lambda p: _sq(ad.gelu(p[0]))),
        ("softmax", lambda p: _sq(ad.softmax_last_dim(p[0]))),
        ("transpose", lambda p: _sq(ad.transpose(p[0]))),
        ("mean", lambda p: _sq(ad.mean_over_axis(p[0], 0))),
        ("concat", lambda p: _sq(ad.concat_last_dim(p[0], p[0]))),
        ("take_rows", lambda p: _sq(ad.take_rows(p[0], 2))),
    ],
)
def test_grad_check_each_op(name, build):
    params = [
        _t(_rand((4, 6), 7)),
        _t(_rand((6, 3), 8, 0.7)),
        _t(_rand((6,), 9)),
    ]
    err = ad.grad_check(lambda: build(params), params, eps=1e-5)
    assert err < 1e-7, name


def test_grad_check_layer_norm():
    x = _t(_rand((5, 8), 10))
    gain = _t(1.0 + 0.1 * _rand((8,), 11))
    bias = _t(0.1 * _rand((8,), 12))

    def f():
        out = ad.layer_norm(x, gain, bias)
        return ad.sum_all(ad.mul(out, out))

    assert ad.grad_check(f, [x, gain, bias], eps=1e-5) < 1e-5


def test_grad_check_cross_entropy_batch():
    logits = _t(_rand((6, 8), 13))
    assert ad.grad_check(lambda: ad.cross_entropy(logits, [0, 3, 7, 1, 1, 5]), [logits]) < 1e-7


def test_grad_check_detects_corruption():
    x = _t(_rand((4, 4), 14))
    w = _t(_rand((4, 2), 15))

    def f():
        return ad.cross_entropy(ad.matmul(x, w), [0, 1, 0, 1])

    baseline = ad.grad_check(f, [x, w], eps=1e-5)
    assert baseline < 1e-7

    original = ad.backward

    def corrupting_backward(loss):
        original(loss)
        w.grad[0, 0] *= 1.10  # +10% fault on one weight

    ad.backward = corrupting_backward
    try:
        corrupted = ad.grad_check(f, [x, w], eps=1e-5)
    finally:
        ad.backward = original
    assert corrupted > 1e-2


# --- attention ---------------------------------------------------------------


def test_attention_single_key_returns_value():
    q = _t(_rand((1, 4), 16))
    k = _t(_rand((1, 4), 17))
    v = _t(_rand((1, 6), 18))
    out = ad.attention(q, k, v)
    assert np.allclose(out.data, v.data)


def test_attention_orthogonal_scores_average_values():
    q = ad.Tensor(np.zeros((2, 4)))
    k = ad.Tensor(_rand((5, 4), 19))
    v = ad.Tensor(_rand((5, 3), 20))
    out = ad.attention(q, k, v)
    assert np.allclose(out.data, np.tile(v.data.mean(axis=0), (2, 1)))


def test_attention_two_by_two_by_hand():
    q = ad.Tensor(np.eye(2))
    k = ad.Tensor(np.eye(2))
    v = ad.Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    out = ad.attention(q, k, v)
    e = math.exp(1.0 / math.sqrt(2.0))
    w_match = e / (e + 1.0)
    expected = np.array([[w_match, 1 - w_match], [1 - w_match, w_match]])
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_matches_brute_force_random_sizes():
    rng = np.random.default_rng(21)
    for n in range(2, 7):
        for d in (2, 4, 8):
            q = ad.Tensor(rng.standard_normal((n, d)))
            k = ad.Tensor(rng.standard_normal((n, d)))
            v = ad.Tensor(rng.standard_normal((n, d + 1)))
            scores = q.data @ k.data.T / math.sqrt(d)
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            expected = (e / e.sum(axis=-1, keepdims=True)) @ v.data
            assert np.abs(ad.attention(q, k, v).data - expected).max() < 1e-10


def test_attention_key_value_permutation_invariance():
    rng = np.random.default_rng(22)
    q = ad.Tensor(rng.standard_normal((4, 5)))
    k = ad.Tensor(rng.standard_normal((6, 5)))
    v = ad.Tensor(rng.standard_normal((6, 3)))
    base = ad.attention(q, k, v).data
    perm = rng.permutation(6)
    shuffled = ad.attention(q, ad.Tensor(k.data[perm]), ad.Tensor(v.data[perm]))
    assert np.abs(base - shuffled.data).max() < 1e-12


def test_attention_output_in_convex_hull():
    rng = np.random.default_rng(23)
    q = ad.Tensor(rng.standard_normal((3, 4)))
    k = ad.Tensor(rng.standard_normal((5, 4)))
    v = ad.Tensor(rng.standard_normal((5, 2)))
    out = ad.attention(q, k, v).data
    assert np.all(out <= v.data.max(axis=0) + 1e-12)
    assert np.all(out >= v.data.min(axis=0) - 1e-12)


def test_attention_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.attention(_t(_rand((2, 3), 0)), _t(_rand((2, 4), 1)), _t(_rand((2, 2), 2)))


def _mha_weights(dim, heads, seed, dtype=np.float64):
    rng = np.random.default_rng(seed)
    hd = dim // heads
    return {
        "wq": [ad.Tensor(rng.standard_normal((dim, hd))) for _ in range(heads)],
        "wk": [ad.Tensor(rng.standard_normal((dim, hd))) for _ in range(heads)],
        "wv": [ad.Tensor(rng.standard_normal((dim, hd))) for _ in range(heads)],
        "wo": ad.Tensor(rng.standard_normal((dim, dim))),
    }


def test_mha_single_head_reduces_to_attention():
    x = ad.Tensor(_rand((5, 4), 24))
    weights = _mha_weights(4, 1, 25)
    out = ad.multi_head_attention(x, weights)
    inner = ad.attention(
        ad.matmul(x, weights["wq"][0]),
        ad.matmul(x, weights["wk"][0]),
        ad.matmul(x, weights["wv"][0]),
    )
    assert np.allclose(out.data, inner.data @ weights["wo"].data)


def test_mha_matches_per_head_brute_force():
    x = ad.Tensor(_rand((3, 4), 26))
    weights = _mha_weights(4, 2, 27)

    def np_attn(q, k, v):
        s = q @ k.T / math.sqrt(q.shape[1])
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        return (e / e.sum(axis=-1, keepdims=True)) @ v

    heads = [
        np_attn(x.data @ weights["wq"][i].data, x.data @ weights["wk"][i].data, x.data @ weights["wv"][i].data)
        for i in range(2)
    ]
    expected = np.concatenate(heads, axis=-1) @ weights["wo"].data
    assert np.abs(ad.multi_head_attention(x, weights).data - expected).max() < 1e-12


def test_mha_output_shape_and_divisibility():
    x = ad.Tensor(_rand((6, 8), 28))
    out = ad.multi_head_attention(x, _mha_weights(8, 4, 29))
    assert out.data.shape == (6, 8)
    bad = _mha_weights(8, 4, 30)
    bad["wq"] = bad["wq"][:3]
    bad["wk"] = bad["wk"][:3]
    bad["wv"] = bad["wv"][:3]
    with pytest.raises(HeadDivisibility):
        ad.multi_head_attention(x, bad)


# --- checkpoint format -------------------------------------------------------


def test_checkpoint_roundtrip_bytes(tmp_path):
    named = {
        "a.weight": np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32),
        "b.bias": np.random.default_rng(1).standard_normal(5).astype(np.float32),
    }
    path = tmp_path / "w.rfsw"
    save_weights(path, named)
    first = path.read_bytes()
    loaded = load_weights(path)
    assert set(loaded) == set(named)
    for key in named:
        assert np.array_equal(loaded[key], named[key])
    save_weights(path, loaded)
    assert path.read_bytes() == first
