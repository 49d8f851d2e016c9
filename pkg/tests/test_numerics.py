import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from autr import numerics as nx
from autr.numerics import Tensor

from oracles import central_diff, rel_err, softmax64


@pytest.fixture(autouse=True)
def float64():
    with nx.precision(np.float64):
        yield


def param(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


# ------------------------------------------------------------------- matmul


def test_matmul_identity():
    out = nx.matmul(np.eye(2), [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_zero_row_selection():
    out = nx.matmul([[1.0, 0.0]], [[0.0], [5.0]])
    np.testing.assert_array_equal(out.data, [[0.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(nx.matmul(a, b).data, expected, rtol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nx.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5),
       st.integers(0, 2**31 - 1))
def test_matmul_associative(m, k, n, p, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal(s) for s in ((m, k), (k, n), (n, p)))
    left = nx.matmul(nx.matmul(a, b), c).data
    right = nx.matmul(a, nx.matmul(b, c)).data
    assert np.all(rel_err(left, right) < 1e-4)


# ------------------------------------------------------------------ softmax


def test_softmax_symmetric():
    np.testing.assert_allclose(nx.softmax([0.0, 0.0]).data, [0.5, 0.5])


def test_softmax_large_logits_do_not_overflow():
    out = nx.softmax([1000.0, 0.0]).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)


def test_softmax_matches_direct_formula():
    x = np.array([1.0, 2.0, 3.0])
    direct = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(nx.softmax(x).data, direct, rtol=1e-14)


def test_softmax_mask_zeroes_positions():
    out = nx.softmax([1.0, 5.0, 2.0], mask=[True, False, True]).data
    assert out[1] == 0.0
    np.testing.assert_allclose(out[[0, 2]], softmax64([1.0, 2.0]))


def test_softmax_all_masked_is_an_error():
    with pytest.raises(nx.DegenerateMaskError):
        nx.softmax([1.0, 2.0], mask=[False, False])


def test_masked_positions_receive_no_gradient():
    x = param([1.0, 5.0, 2.0])
    y = nx.softmax(x, mask=[True, False, True])
    loss = nx.sum_(y * np.array([1.0, 2.0, 3.0]))
    (g,) = nx.backward(loss, [x])
    assert g[1] == 0.0


vectors = hnp.arrays(np.float64, st.integers(1, 12),
                     elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(vectors, st.randoms(use_true_random=False))
def test_softmax_normalized_and_permutation_equivariant(x, rnd):
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    y = nx.softmax(x).data
    assert abs(y.sum() - 1.0) <= 1e-6
    assert np.all(y >= 0)
    np.testing.assert_allclose(nx.softmax(x[perm]).data, y[perm], rtol=1e-12, atol=1e-300)


def test_log_softmax_matches_log_of_softmax():
    x = np.array([[0.3, -2.0, 4.0], [1.0, 1.0, 1.0]])
    np.testing.assert_allclose(nx.log_softmax(x).data, np.log(nx.softmax(x).data), rtol=1e-12)


# -------------------------------------------------------------- elementwise


def test_elementwise_basics():
    assert nx.elementwise("sigmoid", 0.0).item() == 0.5
    assert nx.elementwise("tanh", 0.0).item() == 0.0
    np.testing.assert_array_equal(nx.elementwise("mul", [1.0, 2.0], [3.0, 4.0]).data, [3, 8])
    np.testing.assert_array_equal(nx.elementwise("add", [1.0, 2.0], 1.0).data, [2, 3])


def test_elementwise_incompatible_shapes():
    with pytest.raises(nx.DimensionError):
        nx.add(np.ones(3), np.ones(2))


def test_log_is_floored():
    out = nx.log([0.0, 1.0]).data
    assert out[0] == pytest.approx(np.log(1e-12))
    assert np.all(np.isfinite(out))


def test_unknown_elementwise_op():
    with pytest.raises(ValueError):
        nx.elementwise("relu", 1.0)


def test_float32_is_default_outside_precision_switch():
    with nx.precision(np.float32):
        assert nx.as_tensor([1.0, 2.0]).dtype == np.float32
        assert (Tensor(np.ones(2, np.float32)) * 2.0).dtype == np.float32


# --------------------------------------------------------------- gather_rows


def test_gather_first_basis_vector():
    out = nx.gather_rows(np.eye(4), [0])
    np.testing.assert_array_equal(out.data, [[1, 0, 0, 0]])


def test_gather_duplicate_ids_accumulate_gradient():
    table = param(np.arange(20.0).reshape(5, 4))
    rows = nx.gather_rows(table, [3, 1, 3])
    (g,) = nx.backward(nx.sum_(rows), [table])
    np.testing.assert_array_equal(g[3], [2, 2, 2, 2])
    np.testing.assert_array_equal(g[1], [1, 1, 1, 1])
    np.testing.assert_array_equal(g[[0, 2, 4]], 0)


def test_gather_matches_naive_copy():
    rng = np.random.default_rng(3)
    table = rng.standard_normal((7, 3))
    ids = rng.integers(0, 7, size=11)
    expected = np.array([[table[i, j] for j in range(3)] for i in ids])
    np.testing.assert_array_equal(nx.gather_rows(table, ids).data, expected)


def test_gather_out_of_range_names_id():
    with pytest.raises(IndexError, match="9"):
        nx.gather_rows(np.eye(4), [1, 9])


# ------------------------------------------------------------------ backward


def test_backward_square():
    x = param(3.0)
    (g,) = nx.backward(x * x, [x])
    assert g == 6.0


def test_backward_constant_gives_zero():
    x = param(3.0)
    c = Tensor(np.array(5.0))
    (g,) = nx.backward(c + 0.0 * 1.0 + Tensor(np.array(0.0), requires_grad=True), [x])
    assert g == 0.0


def test_backward_requires_scalar():
    x = param([1.0, 2.0])
    with pytest.raises(nx.ContractError):
        nx.backward(x * 2.0, [x])


def test_backward_mapping_and_leaf_grads():
    x, y = param(2.0), param(-4.0)
    q = (x + y) * (x + 1.0)
    assert nx.backward(q, {"x": x, "y": y}) == {"x": 1.0, "y": 3.0}
    nx.backward(q)
    assert x.grad == 1.0 and y.grad == 3.0


def test_no_grad_records_nothing():
    x = param([1.0, 2.0])
    with nx.no_grad():
        y = nx.sum_(x * x)
    assert not y.requires_grad


def _composite(a, b, c, ids, mask):
    h = nx.tanh(a @ b) * nx.sigmoid(a @ b)
    s = nx.softmax(h + nx.log(nx.exp(h) + 1.0), mask=mask)
    e = nx.gather_rows(c, ids)
    lp = nx.log_softmax(nx.concat([s, e], axis=-1))
    picked = nx.pick(lp, np.zeros(lp.shape[:-1], dtype=int))
    return nx.sum_(picked) + nx.mean(nx.clip(nx.square(a), -1.0, 0.5)) \
        + nx.sum_(nx.stack([a[:, 0], a[:, 1]]) / (nx.exp(a[:, :2]).reshape(2, -1) + 1.0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_composite_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (param(rng.standard_normal(s)) for s in ((2, 3), (3, 4), (5, 2)))
    ids = rng.integers(0, 5, size=2)
    mask = np.array([True, True, False, True])
    loss = _composite(a, b, c, ids, mask)
    grads = nx.backward(loss, [a, b, c])
    with nx.no_grad():
        numeric = central_diff(lambda: [_composite(a, b, c, ids, mask).item()],
                               [a.data, b.data, c.data])
    for g, n in zip(grads, numeric):
        assert np.max(rel_err(g, n)) < 1e-4
