import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualpath_av import numerics as nx
from dualpath_av.attention import (
    banded_mask,
    feed_forward,
    init_ffn,
    init_mha,
    multi_head_attention,
    scaled_dot_attention,
)
from dualpath_av.numerics import Tensor
from dualpath_av.params import ParameterStore


def reference_attention(q, k, v, heads, allow=None):
    """Plain per-head loop, no shared code with the implementation."""
    d = q.shape[-1] // heads
    outs = []
    for i in range(heads):
        sl = slice(i * d, (i + 1) * d)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(d)
        if allow is not None:
            s = np.where(allow, s, -np.inf)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        outs.append((e / e.sum(axis=1, keepdims=True)) @ v[:, sl])
    return np.concatenate(outs, axis=1)


def test_zero_query_averages_values():
    rng = np.random.default_rng(0)
    k, v = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    out = scaled_dot_attention(Tensor(np.zeros((3, 4))), Tensor(k), Tensor(v), heads=1).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (3, 1)), atol=1e-12)


def test_mask_single_key_selects_value_row():
    rng = np.random.default_rng(1)
    q, k, v = (rng.standard_normal((4, 6)) for _ in range(3))
    allow = np.zeros((4, 4), bool)
    allow[:, 2] = True
    out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), heads=2, allow=allow).data
    np.testing.assert_allclose(out, np.tile(v[2], (4, 1)), atol=1e-12)


def test_hand_computed_two_by_two():
    # D_k = 1: scores are [[0, 0], [0, 1]]; row 2 weights are (1, e) / (1 + e)
    q = np.array([[0.0], [1.0]])
    k = np.array([[0.0], [1.0]])
    v = np.array([[1.0], [3.0]])
    out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), heads=1).data
    e = np.e
    np.testing.assert_allclose(out[:, 0], [2.0, (1 + 3 * e) / (1 + e)], atol=1e-12)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_matches_reference_loop(heads):
    rng = np.random.default_rng(heads)
    q, k, v = rng.standard_normal((7, 8)), rng.standard_normal((9, 8)), rng.standard_normal((9, 8))
    allow = rng.random((7, 9)) < 0.6
    allow[:, 0] = True
    out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), heads, allow).data
    np.testing.assert_allclose(out, reference_attention(q, k, v, heads, allow), atol=1e-12)


def test_leading_batch_dims_are_independent():
    rng = np.random.default_rng(2)
    q, k, v = (rng.standard_normal((3, 5, 8)) for _ in range(3))
    out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), heads=2).data
    for b in range(3):
        np.testing.assert_allclose(out[b], reference_attention(q[b], k[b], v[b], 2), atol=1e-12)


def test_weights_normalized_and_masked_exactly_zero():
    rng = np.random.default_rng(3)
    q, k, v = (Tensor(rng.standard_normal((10, 8))) for _ in range(3))
    allow = banded_mask(10, 2)
    _, w = scaled_dot_attention(q, k, v, heads=2, allow=allow, return_weights=True)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(w.data[:, ~allow] == 0.0)


def test_all_allowed_mask_is_bit_identical():
    rng = np.random.default_rng(4)
    q, k, v = (Tensor(rng.standard_normal((6, 8)).astype(np.float32)) for _ in range(3))
    a = scaled_dot_attention(q, k, v, 2).data
    b = scaled_dot_attention(q, k, v, 2, allow=np.ones((6, 6), bool)).data
    assert a.tobytes() == b.tobytes()


def test_mask_shape_checked():
    x = Tensor(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        scaled_dot_attention(x, x, x, 1, allow=np.ones((3, 4), bool))


def test_heads_must_divide_width():
    x = Tensor(np.zeros((4, 6)))
    with pytest.raises(ValueError):
        scaled_dot_attention(x, x, x, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_self_attention_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    store = ParameterStore(rng, np.float64)
    init_mha(store, "m", 6, 6, heads=2, d_k=3)
    x = rng.standard_normal((n, 6))
    perm = rng.permutation(n)
    a = multi_head_attention(Tensor(x), Tensor(x), store.view("m"), 2).data
    b = multi_head_attention(Tensor(x[perm]), Tensor(x[perm]), store.view("m"), 2).data
    np.testing.assert_allclose(b, a[perm], atol=1e-10)


# -- multi-head wrapper -----------------------------------------------------------

def _mha_store(seed=0, d_in=6, d_out=5, heads=2, d_k=3):
    store = ParameterStore(np.random.default_rng(seed), np.float64)
    init_mha(store, "m", d_in, d_out, heads, d_k)
    return store


def test_mha_output_shape_and_parameter_shapes():
    store = _mha_store()
    assert store["m.q.weight"].shape == (6, 6)
    assert store["m.o.weight"].shape == (6, 5)
    out = multi_head_attention(Tensor(np.ones((7, 6))), Tensor(np.ones((4, 6))), store.view("m"), 2)
    assert out.shape == (7, 5)


def test_mha_zero_value_weights_give_output_bias():
    store = _mha_store(1)
    store["m.v.weight"].data[:] = 0
    store["m.v.bias"].data[:] = 0
    x = Tensor(np.random.default_rng(2).standard_normal((4, 6)))
    out = multi_head_attention(x, x, store.view("m"), 2).data
    np.testing.assert_allclose(out, np.tile(store["m.o.bias"].data, (4, 1)), atol=1e-12)


def test_mha_rejects_wrong_input_dim():
    store = _mha_store()
    with pytest.raises(ValueError):
        multi_head_attention(Tensor(np.ones((3, 5))), Tensor(np.ones((3, 6))), store.view("m"), 2)


def test_mha_gradient_check():
    rng = np.random.default_rng(5)
    store = _mha_store(5)
    xq = nx.parameter(rng.standard_normal((4, 6)), name="xq", dtype=np.float64)
    xkv = nx.parameter(rng.standard_normal((3, 6)), name="xkv", dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 5)))
    params = {**store, "xq": xq, "xkv": xkv}
    report = nx.grad_check(lambda: nx.tsum(nx.mul(multi_head_attention(xq, xkv, store.view("m"), 2), w)), params)
    assert report.passed, report.worst


# -- feed-forward -------------------------------------------------------------------

def _ffn_store(seed=0, dim=4, hidden=8):
    store = ParameterStore(np.random.default_rng(seed), np.float64)
    init_ffn(store, "f", dim, hidden)
    return store


def test_ffn_zero_weights_give_zero():
    store = _ffn_store()
    for p in store.values():
        p.data[:] = 0
    out = feed_forward(Tensor(np.random.default_rng(1).standard_normal((3, 4))), store.view("f"))
    assert not out.data.any()


def test_ffn_negative_preactivation_passes_second_bias():
    store = _ffn_store(2)
    store["f.fc1.weight"].data[:] = 0
    store["f.fc1.bias"].data[:] = -1.0
    out = feed_forward(Tensor(np.ones((2, 4))), store.view("f")).data
    np.testing.assert_allclose(out, np.tile(store["f.fc2.bias"].data, (2, 1)))


def test_ffn_matches_numpy():
    store = _ffn_store(3)
    x = np.random.default_rng(4).standard_normal((5, 4))
    w1, b1 = store["f.fc1.weight"].data, store["f.fc1.bias"].data
    w2, b2 = store["f.fc2.weight"].data, store["f.fc2.bias"].data
    expected = np.maximum(x @ w1 + b1, 0) @ w2 + b2
    np.testing.assert_allclose(feed_forward(Tensor(x), store.view("f")).data, expected, atol=1e-12)


def test_ffn_gradient_check():
    store = _ffn_store(6)
    x = nx.parameter(np.random.default_rng(7).standard_normal((3, 4)), name="x", dtype=np.float64)
    w = Tensor(np.random.default_rng(8).standard_normal((3, 4)))
    report = nx.grad_check(lambda: nx.tsum(nx.mul(feed_forward(x, store.view("f")), w)), {**store, "x": x})
    assert report.passed, report.worst


# -- banded mask --------------------------------------------------------------------

def test_banded_mask_values():
    m = banded_mask(5, 1)
    expected = np.array([[1, 1, 0, 0, 0],
                         [1, 1, 1, 0, 0],
                         [0, 1, 1, 1, 0],
                         [0, 0, 1, 1, 1],
                         [0, 0, 0, 1, 1]], bool)
    assert np.array_equal(m, expected)


def test_banded_mask_default_width_and_disable():
    m = banded_mask(200, 62)
    assert m[0, 62] and not m[0, 63] and m[199, 137] and not m[199, 136]
    assert m.sum(axis=1).max() == 125
    assert banded_mask(10, -1) is None


def test_banded_mask_wide_band_allows_everything():
    assert banded_mask(20, 62).all()
