import numpy as np
import pytest

from drivesql.attention_ref import (
    BevGrid,
    attention_weights,
    cross_attention,
    inject,
    inst_bev_qformer,
    mv_qformer,
    softmax_rows,
)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _naive_cross_attention(queries, keys, values):
    d = queries.shape[1]
    out = np.zeros((queries.shape[0], values.shape[1]))
    for i in range(queries.shape[0]):
        logits = [queries[i] @ keys[j] / np.sqrt(d) for j in range(keys.shape[0])]
        shifted = np.array(logits) - max(logits)
        weights = np.exp(shifted)
        weights /= weights.sum()
        for j in range(keys.shape[0]):
            out[i] += weights[j] * values[j]
    return out


def test_weights_rows_sum_to_one():
    rng = np.random.default_rng(0)
    w = attention_weights(_rand(rng, 5, 8), _rand(rng, 11, 8))
    assert w.shape == (5, 11)
    assert np.all(w > 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)


def test_output_is_convex_combination_of_values():
    rng = np.random.default_rng(1)
    values = _rand(rng, 9, 4)
    out = cross_attention(_rand(rng, 6, 3), _rand(rng, 9, 3), values)
    for col in range(values.shape[1]):
        assert np.all(out[:, col] <= values[:, col].max() + 1e-9)
        assert np.all(out[:, col] >= values[:, col].min() - 1e-9)


def test_single_key_returns_its_value():
    rng = np.random.default_rng(2)
    value = _rand(rng, 1, 7)
    out = cross_attention(_rand(rng, 4, 5), _rand(rng, 1, 5), value)
    np.testing.assert_allclose(out, np.repeat(value, 4, axis=0), atol=1e-12)


def test_zero_values_give_zero_output():
    rng = np.random.default_rng(3)
    out = cross_attention(_rand(rng, 3, 4), _rand(rng, 6, 4), np.zeros((6, 2)))
    np.testing.assert_allclose(out, 0.0, atol=0.0)


def test_matches_naive_double_loop():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n, m, d, dv = rng.integers(1, 12, size=4)
        q, k, v = _rand(rng, n, d), _rand(rng, m, d), _rand(rng, m, dv)
        np.testing.assert_allclose(
            cross_attention(q, k, v), _naive_cross_attention(q, k, v), atol=1e-9
        )


def test_softmax_shift_invariance():
    rng = np.random.default_rng(5)
    logits = _rand(rng, 6, 9)
    shifted = logits + rng.standard_normal((6, 1))
    np.testing.assert_allclose(softmax_rows(logits), softmax_rows(shifted), atol=1e-6)


def test_softmax_handles_large_logits():
    logits = np.array([[1000.0, 1000.0, -1000.0]])
    out = softmax_rows(logits)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[0, :2], 0.5, atol=1e-9)


def test_key_value_permutation_is_a_no_op():
    rng = np.random.default_rng(6)
    q, k, v = _rand(rng, 5, 6), _rand(rng, 10, 6), _rand(rng, 10, 3)
    perm = rng.permutation(10)
    np.testing.assert_allclose(
        cross_attention(q, k, v), cross_attention(q, k[perm], v[perm]), atol=1e-6
    )


def test_mv_qformer_is_self_keyed():
    rng = np.random.default_rng(7)
    q, t = _rand(rng, 4, 8), _rand(rng, 13, 8)
    np.testing.assert_allclose(mv_qformer(q, t), cross_attention(q, t, t), atol=0.0)


def test_inst_bev_row_count_and_order():
    rng = np.random.default_rng(8)
    dim, qdim = 6, 5
    bev = BevGrid(4, 3, dim, _rand(rng, 4, 3, dim))
    projection = _rand(rng, dim, qdim)
    bev_q, inst = _rand(rng, 32, qdim), _rand(rng, 12, qdim)
    out = inst_bev_qformer(bev_q, inst, bev, projection)
    assert out.shape == (44, qdim)
    stacked = np.vstack([bev_q, inst])
    keys = bev.flattened() @ projection
    np.testing.assert_allclose(out, cross_attention(stacked, keys, keys), atol=1e-12)


def test_single_cell_grid_collapses_to_projected_cell():
    rng = np.random.default_rng(9)
    dim = 4
    cell = _rand(rng, 1, 1, dim)
    bev = BevGrid(1, 1, dim, cell)
    projection = np.eye(dim)
    out = inst_bev_qformer(_rand(rng, 3, dim), _rand(rng, 2, dim), bev, projection)
    np.testing.assert_allclose(out, np.repeat(cell.reshape(1, dim), 5, axis=0), atol=1e-12)


def test_flattened_walks_rows_then_columns():
    dim = 2
    data = np.arange(3 * 2 * dim, dtype=float).reshape(3, 2, dim)
    grid = BevGrid(3, 2, dim, data)
    flat = grid.flattened()
    assert flat.shape == (6, dim)
    np.testing.assert_array_equal(flat, data.reshape(6, dim))


def test_inject_is_residual():
    rng = np.random.default_rng(10)
    mv = _rand(rng, 7, 5)
    np.testing.assert_allclose(inject(mv, np.zeros((4, 5))), mv, atol=0.0)
    tokens = _rand(rng, 6, 5)
    np.testing.assert_allclose(
        inject(mv, tokens), mv + cross_attention(mv, tokens, tokens), atol=1e-12
    )


def test_dimension_mismatches_are_rejected():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError):
        attention_weights(_rand(rng, 2, 3), _rand(rng, 2, 4))
    with pytest.raises(ValueError):
        attention_weights(_rand(rng, 2, 3), np.empty((0, 3)))
    with pytest.raises(ValueError):
        cross_attention(_rand(rng, 2, 3), _rand(rng, 4, 3), _rand(rng, 5, 3))
    with pytest.raises(ValueError):
        inst_bev_qformer(
            _rand(rng, 2, 3),
            _rand(rng, 2, 3),
            BevGrid(2, 2, 4, _rand(rng, 2, 2, 4)),
            _rand(rng, 4, 7),
        )
    with pytest.raises(ValueError):
        attention_weights(np.array([[np.nan, 1.0]]), _rand(rng, 2, 2))


def test_grid_validation():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        BevGrid(0, 2, 3, np.zeros((0, 2, 3)))
    with pytest.raises(ValueError):
        BevGrid(2, 2, 0, np.zeros((2, 2, 0)))
    with pytest.raises(ValueError):
        BevGrid(2, 2, 3, _rand(rng, 2, 3, 3))
    bad = np.zeros((2, 2, 3))
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        BevGrid(2, 2, 3, bad)


def test_one_dimensional_inputs_are_rejected():
    with pytest.raises(ValueError):
        attention_weights(np.ones(3), np.ones((2, 3)))
