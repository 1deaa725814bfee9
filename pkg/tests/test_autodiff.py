"""Finite-difference oracles for every differentiable op, plus tape contracts.

Gradient checks build a scalar loss from each op through a fixed random
projection, perturb every input entry by +-h, and compare the central
difference against the recorded backward pass. Errors are measured as
|analytic - numeric| / max(1, |numeric|) so truly-zero gradients are held to
an absolute 1e-4 rather than an undefined relative one.
"""

import threading

import numpy as np
import pytest

from tabsage import autodiff as ad
from tabsage.errors import (
    DoubleBackward,
    EmptyMask,
    InvalidRate,
    IsolatedNode,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
    SingleRowTrainBatch,
)
from tabsage.knn import build_knn_graph

H = 1e-5
TOL = 1e-4


def fd_check(build_loss, arrays, tol=TOL, h=H):
    """Compare backward grads of build_loss(arrays) against central differences.

    build_loss receives plain ndarrays and must return (loss_tensor, tracked)
    where tracked is the list of Tensors whose grads map 1:1 onto arrays.
    """
    with ad.Tape() as tape:
        loss, tracked = build_loss(*arrays)
        tape.backward(loss)
    analytic = [t.grad.copy() for t in tracked]

    for ai, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            bumped = [a.copy() for a in arrays]
            bumped[ai][idx] += h
            up, _ = build_loss(*bumped)
            bumped[ai][idx] -= 2 * h
            down, _ = build_loss(*bumped)
            numeric[idx] = (up.values[0, 0] - down.values[0, 0]) / (2 * h)
        err = np.abs(analytic[ai] - numeric) / np.maximum(1.0, np.abs(numeric))
        assert err.max() < tol, f"input {ai}: max rel err {err.max():.3e}"


def project(out, rng_seed=0):
    """Scalar loss: tsum(out @ R) with a fixed random projection."""
    r = np.random.default_rng(rng_seed).normal(size=(out.shape[1], 1))
    return ad.tsum(ad.matmul(out, ad.Tensor(r)))


# --- individual ops ----------------------------------------------------------


def test_matmul_identity_and_hand_value():
    eye = ad.Tensor(np.eye(2))
    m = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(eye, m).values, m.values)
    v = ad.Tensor([[1.0], [1.0]])
    assert np.array_equal(ad.matmul(m, v).values, [[3.0], [7.0]])


def test_matmul_gradients():
    rng = np.random.default_rng(1)
    for trial in range(20):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))

        def build(a_arr, b_arr):
            ta = ad.Tensor(a_arr, requires_grad=True)
            tb = ad.Tensor(b_arr, requires_grad=True)
            return project(ad.matmul(ta, tb), trial), [ta, tb]

        fd_check(build, [a, b])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_relu_values():
    x = ad.Tensor([[-1.0, 0.0, 2.0]])
    assert np.array_equal(ad.relu(x).values, [[0.0, 0.0, 2.0]])
    pos = ad.Tensor([[0.5, 3.0]])
    assert np.array_equal(ad.relu(pos).values, pos.values)


def test_relu_gradient_mask():
    rng = np.random.default_rng(2)
    for trial in range(20):
        x = rng.normal(size=(4, 3))
        x[np.abs(x) < 0.05] += 0.2  # keep clear of the kink

        def build(x_arr):
            tx = ad.Tensor(x_arr, requires_grad=True)
            return project(ad.relu(tx), trial), [tx]

        fd_check(build, [x])


def test_transpose_and_concat_and_bias_gradients():
    rng = np.random.default_rng(3)
    for trial in range(20):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 2))
        bias = rng.normal(size=(1, 6))

        def build(a_arr, b_arr, bias_arr):
            ta = ad.Tensor(a_arr, requires_grad=True)
            tb = ad.Tensor(b_arr, requires_grad=True)
            tbias = ad.Tensor(bias_arr, requires_grad=True)
            cat = ad.concat_cols(ad.transpose(ad.transpose(ta)), tb)
            return project(ad.add_bias(cat, tbias), trial), [ta, tb, tbias]

        fd_check(build, [a, b, bias])


def test_batch_norm_train_statistics():
    rng = np.random.default_rng(4)
    x = ad.Tensor(rng.normal(loc=3.0, scale=2.0, size=(50, 6)))
    state = ad.BatchNormState(6)
    out = ad.batch_norm(x, state, "train")
    assert np.allclose(out.values.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(out.values.var(axis=0), 1.0, atol=1e-6)


def test_batch_norm_constant_column_is_zero():
    x = ad.Tensor(np.full((8, 3), 7.0))
    out = ad.batch_norm(x, ad.BatchNormState(3), "train")
    assert np.allclose(out.values, 0.0)


def test_batch_norm_single_row_train_rejected():
    with pytest.raises(SingleRowTrainBatch):
        ad.batch_norm(ad.Tensor(np.ones((1, 3))), ad.BatchNormState(3), "train")


def test_batch_norm_eval_uses_running_stats():
    state = ad.BatchNormState(2)
    state.running_mean[:] = [1.0, -1.0]
    state.running_var[:] = [4.0, 0.25]
    x = ad.Tensor([[3.0, 0.0], [1.0, -1.0]])
    out = ad.batch_norm(x, state, "eval")
    expected = (x.values - [1.0, -1.0]) / np.sqrt([4.0 + 1e-5, 0.25 + 1e-5])
    assert np.allclose(out.values, expected)


def test_batch_norm_gradients_with_off_unit_affine():
    # gamma away from 1 and beta away from 0 so a dropped factor cannot hide
    rng = np.random.default_rng(5)
    for trial in range(20):
        x = rng.normal(size=(6, 3))
        gamma = rng.uniform(0.5, 2.0, size=(1, 3))
        beta = rng.normal(size=(1, 3))

        def build(x_arr, g_arr, b_arr):
            tx = ad.Tensor(x_arr, requires_grad=True)
            state = ad.BatchNormState(3)
            state.gamma.values[:] = g_arr
            state.beta.values[:] = b_arr
            out = ad.batch_norm(tx, state, "train")
            return project(out, trial), [tx, state.gamma, state.beta]

        fd_check(build, [x, gamma, beta])


def test_batch_norm_eval_gradient():
    rng = np.random.default_rng(6)
    for trial in range(5):
        x = rng.normal(size=(4, 3))

        def build(x_arr):
            tx = ad.Tensor(x_arr, requires_grad=True)
            state = ad.BatchNormState(3)
            state.running_mean[:] = [0.3, -0.2, 0.1]
            state.running_var[:] = [1.5, 0.7, 2.0]
            state.gamma.values[:] = [[1.3, 0.6, 1.1]]
            return project(ad.batch_norm(tx, state, "eval"), trial), [tx]

        fd_check(build, [x])


def test_dropout_zero_rate_and_eval_are_identity():
    x = ad.Tensor(np.arange(6.0).reshape(2, 3))
    rng = np.random.default_rng(0)
    for mode in ("train", "eval"):
        out = ad.dropout(x, 0.0, mode, rng)
        assert np.array_equal(out.values, x.values)
    out = ad.dropout(x, 0.25, "eval", rng)
    assert np.array_equal(out.values, x.values)


def test_dropout_monte_carlo_expectation():
    x = ad.Tensor(np.full((1, 4), 2.0))
    rng = np.random.default_rng(123)
    total = np.zeros((1, 4))
    draws = 10**5
    for _ in range(draws):
        total += ad.dropout(x, 0.25, "train", rng).values
    mean = total / draws
    assert np.all(np.abs(mean - 2.0) / 2.0 < 0.02)


def test_dropout_invalid_rate():
    x = ad.Tensor(np.ones((2, 2)))
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidRate):
        ad.dropout(x, 1.0, "train", rng)
    with pytest.raises(InvalidRate):
        ad.dropout(x, -0.1, "train", rng)


def test_dropout_gradient_reuses_mask():
    rng_data = np.random.default_rng(7)
    for trial in range(20):
        x = rng_data.normal(size=(5, 4)) + 3.0

        def build(x_arr):
            tx = ad.Tensor(x_arr, requires_grad=True)
            out = ad.dropout(tx, 0.25, "train", np.random.default_rng(trial))
            return project(out, trial), [tx]

        fd_check(build, [x])


def test_neighbor_mean_values():
    pts = np.array([[0.0], [1.0], [3.0]])
    graph = build_knn_graph(pts, 1)
    h = ad.Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = ad.neighbor_mean(h, graph)
    assert np.allclose(out.values[0], [3.0, 4.0])  # single neighbor: copy
    assert np.allclose(out.values[1], [3.0, 4.0])  # mean of rows 0 and 2
    assert np.allclose(out.values[2], [3.0, 4.0])


def test_neighbor_mean_gradient_on_random_graph():
    rng = np.random.default_rng(8)
    pts = rng.random((5, 2))
    graph = build_knn_graph(pts, 2)
    for trial in range(20):
        h = rng.normal(size=(5, 3))

        def build(h_arr):
            th = ad.Tensor(h_arr, requires_grad=True)
            return project(ad.neighbor_mean(th, graph), trial), [th]

        fd_check(build, [h])


def test_neighbor_mean_shape_mismatch():
    pts = np.random.default_rng(9).random((6, 2))
    graph = build_knn_graph(pts, 2)
    with pytest.raises(ShapeMismatch):
        ad.neighbor_mean(ad.Tensor(np.ones((4, 3))), graph)


def test_mean_pool_gradient():
    rng = np.random.default_rng(19)
    import scipy.sparse as sp

    pool = sp.csr_matrix(np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]]))
    pool_t = sp.csr_matrix(pool.T)
    for trial in range(10):
        h = rng.normal(size=(3, 4))

        def build(h_arr):
            th = ad.Tensor(h_arr, requires_grad=True)
            return project(ad.mean_pool(th, pool, pool_t), trial), [th]

        fd_check(build, [h])


def test_mse_loss_values():
    pred = ad.Tensor([[0.0], [2.0]])
    target = np.array([0.0, 0.0])
    out = ad.mse_loss(pred, target, np.array([0, 1]))
    assert out.values[0, 0] == 2.0
    same = ad.mse_loss(ad.Tensor(target), target, np.array([0, 1]))
    assert same.values[0, 0] == 0.0


def test_mse_loss_empty_mask():
    with pytest.raises(EmptyMask):
        ad.mse_loss(ad.Tensor(np.ones((3, 1))), np.ones(3), np.array([], dtype=int))


def test_mse_loss_gradient_tight():
    rng = np.random.default_rng(10)
    for trial in range(20):
        pred = rng.normal(size=(6, 1))
        target = rng.normal(size=6)
        mask = np.sort(rng.choice(6, size=4, replace=False))

        def build(p_arr):
            tp = ad.Tensor(p_arr, requires_grad=True)
            return ad.mse_loss(tp, target, mask), [tp]

        fd_check(build, [pred], tol=1e-6)


def test_mse_loss_gradient_with_duplicate_mask_entries():
    pred = ad.Tensor(np.array([[1.0], [2.0], [5.0]]), requires_grad=True)
    target = np.array([0.0, 0.0, 0.0])
    mask = np.array([0, 0, 2])
    with ad.Tape() as tape:
        loss = ad.mse_loss(pred, target, mask)
        tape.backward(loss)
    # duplicates accumulate: rows weighted by their multiplicity
    expected = np.array([[2 * 2.0 / 3 * 1.0], [0.0], [2.0 / 3 * 5.0]])
    assert np.allclose(pred.grad, expected)


# --- tape mechanics ----------------------------------------------------------


def test_backward_on_linear_sum():
    w = ad.Tensor(np.ones((3, 2)), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(w)
        tape.backward(loss)
    assert np.array_equal(w.grad, np.ones((3, 2)))


def test_untracked_tensor_has_no_grad():
    x = ad.Tensor(np.ones((2, 2)))
    w = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(ad.matmul(x, w))
        tape.backward(loss)
    assert x.grad is None
    assert w.grad is not None


def test_two_layer_composite_gradients():
    rng = np.random.default_rng(11)
    for trial in range(20):
        x = rng.normal(size=(5, 3))
        w1 = rng.normal(size=(3, 4))
        w2 = rng.normal(size=(4, 1))
        target = rng.normal(size=5)

        def build(w1_arr, w2_arr):
            tw1 = ad.Tensor(w1_arr, requires_grad=True)
            tw2 = ad.Tensor(w2_arr, requires_grad=True)
            hidden = ad.relu(ad.matmul(ad.Tensor(x), tw1))
            pred = ad.matmul(hidden, tw2)
            return ad.mse_loss(pred, target, np.arange(5)), [tw1, tw2]

        fd_check(build, [w1, w2])


def test_fanout_accumulates_additively():
    base = np.random.default_rng(12).normal(size=(3, 3))

    def run(branches):
        w = ad.Tensor(base.copy(), requires_grad=True)
        with ad.Tape() as tape:
            parts = []
            if "a" in branches:
                parts.append(ad.tsum(ad.relu(w)))
            if "b" in branches:
                parts.append(ad.tsum(ad.matmul(w, ad.Tensor(np.eye(3)))))
            loss = parts[0]
            for extra in parts[1:]:
                loss = ad.add_bias(loss, extra)
            tape.backward(loss)
        return w.grad.copy()

    both = run("ab")
    assert np.allclose(both, run("a") + run("b"))


def test_double_backward_rejected():
    w = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(w)
        tape.backward(loss)
    with pytest.raises(DoubleBackward):
        tape.backward(loss)


def test_non_scalar_loss_rejected():
    w = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.Tape() as tape:
        out = ad.relu(w)
        with pytest.raises(NonScalarLoss):
            tape.backward(out)


def test_non_finite_value_names_the_op():
    big = ad.Tensor(np.full((2, 2), 1e308))
    with np.errstate(over="ignore"):
        with pytest.raises(NonFiniteValue) as err:
            ad.matmul(big, big)
    assert "matmul" in str(err.value)


def test_ops_outside_tape_are_not_recorded():
    w = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    out = ad.relu(w)  # no tape active
    assert out._tape is None
    with ad.Tape() as tape:
        loss = ad.tsum(w)
        tape.backward(loss)
    assert np.array_equal(w.grad, np.ones((2, 2)))


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(77)
        x = ad.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        state = ad.BatchNormState(4)
        with ad.Tape() as tape:
            out = ad.dropout(
                ad.relu(ad.batch_norm(x, state, "train")),
                0.25,
                "train",
                np.random.default_rng(5),
            )
            loss = ad.tsum(out)
            tape.backward(loss)
        return out.values.copy(), x.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)


def test_tensor_must_be_two_dimensional():
    with pytest.raises(ShapeMismatch):
        ad.Tensor(np.ones((2, 2, 2)))
    col = ad.Tensor(np.ones(4))
    assert col.shape == (4, 1)


def test_independent_tapes_on_threads():
    errors = []

    def worker(seed):
        try:
            rng = np.random.default_rng(seed)
            w = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            for _ in range(30):
                with ad.Tape() as tape:
                    loss = ad.tsum(ad.relu(w))
                    tape.backward(loss)
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
