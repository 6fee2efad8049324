"""Autodiff core: per-op finite differences, invariants, Adam, stores."""
import numpy as np
import pytest

from dga import tensor as T
from dga.errors import ContractError, DimensionError

from _util import check_op_grad, fd_grad, rel_err


def randm(rng, *shape):
    return T.Tensor(rng.standard_normal(shape))


def kink_free(rng, *shape):
    # keep relu inputs away from the fold so central differences are clean
    mag = rng.uniform(0.1, 1.0, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return T.Tensor(mag * sign)


# ---------------------------------------------------------------------------
# finite differences, op by op


def test_grad_matmul():
    check_op_grad(lambda ts: T.matmul(ts[0], ts[1]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 4, 5)])


def test_grad_matmul_vec():
    check_op_grad(lambda ts: T.matmul(ts[0], ts[1]),
                  lambda rng: [randm(rng, 4), randm(rng, 4, 3)])
    check_op_grad(lambda ts: T.matmul(ts[0], ts[1]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 4)])


def test_grad_add_forms():
    check_op_grad(lambda ts: T.add(ts[0], ts[1]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 3, 4)])
    # matrix + bias row broadcast
    check_op_grad(lambda ts: T.add(ts[0], ts[1]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 4)])
    # + 0-d scalar
    check_op_grad(lambda ts: T.add(ts[0], ts[1]),
                  lambda rng: [randm(rng, 5), T.Tensor(rng.standard_normal(()))])


def test_grad_sub_mul():
    check_op_grad(lambda ts: T.sub(ts[0], ts[1]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 3, 4)])
    check_op_grad(lambda ts: T.rsub(1.0, ts[0]),
                  lambda rng: [randm(rng, 6)])
    check_op_grad(lambda ts: T.mul(ts[0], ts[1]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 3, 4)])
    check_op_grad(lambda ts: T.mul(ts[0], 1.7),
                  lambda rng: [randm(rng, 3, 4)])


def test_grad_scale_rows():
    check_op_grad(lambda ts: T.scale_rows(ts[0], ts[1]),
                  lambda rng: [randm(rng, 4, 3), randm(rng, 4)])


def test_grad_elementwise():
    check_op_grad(lambda ts: T.tanh(ts[0]), lambda rng: [randm(rng, 3, 4)])
    check_op_grad(lambda ts: T.sigmoid(ts[0]), lambda rng: [randm(rng, 3, 4)])
    check_op_grad(lambda ts: T.relu(ts[0]), lambda rng: [kink_free(rng, 3, 4)])


def test_grad_softmax():
    check_op_grad(lambda ts: T.softmax(ts[0]), lambda rng: [randm(rng, 7)])
    check_op_grad(lambda ts: T.softmax_rows(ts[0]), lambda rng: [randm(rng, 4, 6)])


def test_grad_l2_normalize():
    # keep inputs away from the zero-norm guard
    def vec(rng):
        v = rng.standard_normal(6)
        return [T.Tensor(v + np.sign(v) * 0.2)]
    check_op_grad(lambda ts: T.l2_normalize(ts[0]), vec)
    check_op_grad(lambda ts: T.l2_normalize_rows(ts[0]),
                  lambda rng: [T.Tensor(rng.standard_normal((4, 5)) + 0.3)])


def test_grad_shape_ops():
    check_op_grad(lambda ts: T.transpose(ts[0]), lambda rng: [randm(rng, 3, 5)])
    check_op_grad(lambda ts: T.concat(ts), lambda rng: [randm(rng, 3), randm(rng, 4)])
    check_op_grad(lambda ts: T.hstack(ts),
                  lambda rng: [randm(rng, 3, 2), randm(rng, 3, 4)])
    check_op_grad(lambda ts: T.stack_rows(ts),
                  lambda rng: [randm(rng, 4), randm(rng, 4), randm(rng, 4)])
    check_op_grad(lambda ts: T.row(ts[0], 1), lambda rng: [randm(rng, 3, 4)])
    check_op_grad(lambda ts: T.pick(ts[0], 2), lambda rng: [randm(rng, 6)])
    check_op_grad(lambda ts: T.gather_rows(ts[0], np.array([0, 2, 2, 1])),
                  lambda rng: [randm(rng, 3, 4)])


def test_grad_reductions():
    check_op_grad(lambda ts: T.tsum(ts[0]), lambda rng: [randm(rng, 3, 4)])
    check_op_grad(
        lambda ts: T.sum_scalars([T.tsum(t) for t in ts]),
        lambda rng: [randm(rng, 3), randm(rng, 3)])
    check_op_grad(
        lambda ts: T.mean_scalars([T.tsum(t) for t in ts]),
        lambda rng: [randm(rng, 3), randm(rng, 3), randm(rng, 3)])


def test_grad_lstm_cell():
    check_op_grad(lambda ts: T.lstm_cell(ts[0], ts[1]),
                  lambda rng: [randm(rng, 12), randm(rng, 3)])


def test_grad_lstm_cell_single_output():
    # use only h downstream; the unused cell-state output must not break
    # backward (its gradient defaults to zeros)
    check_op_grad(lambda ts: T.lstm_cell(ts[0], ts[1])[0],
                  lambda rng: [randm(rng, 12), randm(rng, 3)])


def test_grad_pair_score():
    check_op_grad(lambda ts: T.pair_score(ts[0], ts[1], ts[2]),
                  lambda rng: [randm(rng, 3, 4), randm(rng, 5, 4), randm(rng, 4)])


def test_grad_edge_prop():
    edges = np.array([[0, 3, 4], [1, 0, 0], [7, 11, 0]], dtype=np.int64)
    check_op_grad(
        lambda ts: T.edge_prop(ts[0], ts[1], ts[2], edges),
        lambda rng: [randm(rng, 3, 4), randm(rng, 11), randm(rng, 11, 4)])


def test_grad_blend():
    def inputs(rng):
        k, m = 3, 4
        lam = rng.uniform(0.1, 0.9, k)
        p_prev = rng.uniform(0.2, 1.0, k)
        return [randm(rng, k, m), randm(rng, k, m), T.Tensor(lam),
                T.Tensor(p_prev), T.Tensor(p_prev + lam)]
    check_op_grad(lambda ts: T.blend(*ts), inputs)


# ---------------------------------------------------------------------------
# op invariants


def test_softmax_sums_and_shift_invariance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.standard_normal(9) * 3.0
        with T.no_grad():
            s = T.softmax(T.Tensor(v)).data
            s_shift = T.softmax(T.Tensor(v + 13.7)).data
        assert abs(s.sum() - 1.0) < 1e-9
        assert np.all(s >= 0.0)
        assert np.max(np.abs(s - s_shift)) < 1e-9


def test_softmax_rows_sums():
    rng = np.random.default_rng(1)
    with T.no_grad():
        s = T.softmax_rows(T.Tensor(rng.standard_normal((6, 5)) * 4.0)).data
    assert np.max(np.abs(s.sum(axis=1) - 1.0)) < 1e-9


def test_l2_normalize_norms():
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.standard_normal(7) * rng.uniform(1e-7, 10.0)
        with T.no_grad():
            n = np.linalg.norm(T.l2_normalize(T.Tensor(v)).data)
        assert n <= 1.0 + 1e-9
        if np.linalg.norm(v) >= 1e-6:
            assert abs(n - 1.0) < 1e-6
    with T.no_grad():
        z = T.l2_normalize(T.Tensor(np.zeros(4))).data
    assert np.all(z == 0.0)


def test_matmul_associativity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, c = (T.Tensor(rng.standard_normal((4, 4))) for _ in range(3))
        with T.no_grad():
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-9


def test_blend_matches_formula_on_active_rows():
    rng = np.random.default_rng(4)
    k, m = 5, 3
    inner = rng.standard_normal((k, m))
    m_prev = rng.standard_normal((k, m))
    lam = rng.uniform(0.1, 0.9, k)
    p_prev = rng.uniform(0.2, 1.0, k)
    p_new = p_prev + lam
    with T.no_grad():
        out = T.blend(T.Tensor(inner), T.Tensor(m_prev), T.Tensor(lam),
                      T.Tensor(p_prev), T.Tensor(p_new)).data
    want = (lam[:, None] * inner + p_prev[:, None] * m_prev) / p_new[:, None]
    assert np.max(np.abs(out - want)) < 1e-12


def test_blend_passthrough_is_bitwise():
    rng = np.random.default_rng(5)
    k, m = 4, 3
    inner = rng.standard_normal((k, m))
    m_prev = rng.standard_normal((k, m))
    lam = np.array([0.0, 0.5, 0.0, 0.4])
    p_prev = np.array([0.0, 0.3, 0.8, 0.0])
    p_new = p_prev + lam
    with T.no_grad():
        out = T.blend(T.Tensor(inner), T.Tensor(m_prev), T.Tensor(lam),
                      T.Tensor(p_prev), T.Tensor(p_new)).data
    # rows 0 and 2 have lam == 0 (row 0 also p_new == 0): exact pass-through
    assert out[0].tobytes() == m_prev[0].tobytes()
    assert out[2].tobytes() == m_prev[2].tobytes()
    assert not np.array_equal(out[1], m_prev[1])


# ---------------------------------------------------------------------------
# tape mechanics


def test_backward_accumulates_shared_input():
    x = T.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with T.Tape() as tape:
        y = T.add(x, x)
        loss = T.tsum(y)
    T.backward(loss, tape)
    assert np.allclose(x.grad, 2.0)

    x.grad = None
    with T.Tape() as tape:
        loss = T.tsum(T.mul(x, x))
    T.backward(loss, tape)
    assert np.allclose(x.grad, 2.0 * x.data)


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        y = T.mul(x, 2.0)
    with pytest.raises(ContractError):
        T.backward(y, tape)


def test_no_grad_blocks_recording():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        with T.no_grad():
            y = T.tsum(T.mul(x, 3.0))
    assert len(tape.nodes) == 0
    assert y.requires_grad is False


def test_no_requires_grad_no_recording():
    x = T.Tensor(np.ones(3))
    with T.Tape() as tape:
        T.tsum(T.mul(x, 3.0))
    assert len(tape.nodes) == 0


def test_backward_seed_scales():
    x = T.Tensor(np.arange(3.0), requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(x)
    T.backward(loss, tape, seed=0.25)
    assert np.allclose(x.grad, 0.25)


def test_watch_kinks_records_relu_margins():
    with T.no_grad(), T.watch_kinks() as kw:
        T.relu(T.Tensor(np.array([0.3, -0.7, 2.0])))
        T.relu(T.Tensor(np.array([-0.05, 1.0])))
    assert abs(kw.min_margin() - 0.05) < 1e-15


def test_dimension_errors():
    with pytest.raises(DimensionError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        T.lstm_cell(T.Tensor(np.ones(10)), T.Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        T.pair_score(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 4))),
                     T.Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        T.edge_prop(T.Tensor(np.ones((3, 2))), T.Tensor(np.ones(11)),
                    T.Tensor(np.ones((11, 2))),
                    np.zeros((2, 2), dtype=np.int64))
    with pytest.raises(DimensionError):
        T.blend(T.Tensor(np.ones((3, 2))), T.Tensor(np.ones((3, 2))),
                T.Tensor(np.ones(2)), T.Tensor(np.ones(3)),
                T.Tensor(np.ones(3)))


# ---------------------------------------------------------------------------
# parameter store and Adam


def make_store(rng, shapes):
    store = T.ParameterStore()
    for i, shape in enumerate(shapes):
        store.add(f"p{i}", rng.standard_normal(shape))
    return store


def test_store_duplicate_name_rejected():
    store = T.ParameterStore()
    store.add("w", np.ones(2))
    with pytest.raises(ContractError):
        store.add("w", np.ones(2))


def test_store_zero_and_scale_grads():
    rng = np.random.default_rng(6)
    store = make_store(rng, [(2, 3), (4,)])
    for _, t in store.items():
        t.grad = np.ones_like(t.data)
    store.scale_grads(0.5)
    assert np.allclose(store["p0"].grad, 0.5)
    store.zero_grads()
    for _, t in store.items():
        assert np.all(t.grad == 0.0)
    assert store.total_size() == 10


def test_adam_matches_reference():
    rng = np.random.default_rng(7)
    store = make_store(rng, [(3, 2), (4,), ()])
    ref = {name: t.data.copy() for name, t in store.items()}
    m = {name: np.zeros_like(t.data) for name, t in store.items()}
    v = {name: np.zeros_like(t.data) for name, t in store.items()}
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8

    for step in range(1, 6):
        grads = {name: rng.standard_normal(t.data.shape)
                 for name, t in store.items()}
        for name, t in store.items():
            t.grad = grads[name].copy()
        T.adam_step(store, lr)
        for name in ref:
            g = grads[name]
            m[name] = b1 * m[name] + (1 - b1) * g
            v[name] = b2 * v[name] + (1 - b2) * g * g
            mhat = m[name] / (1 - b1 ** step)
            vhat = v[name] / (1 - b2 ** step)
            ref[name] = ref[name] - lr * mhat / (np.sqrt(vhat) + eps)
            assert np.max(np.abs(store[name].data - ref[name])) < 1e-14
            # gradients are the caller's to clear
            assert np.array_equal(store[name].grad, grads[name])
    assert store.step_count == 5


def test_adam_missing_grad_rejected():
    rng = np.random.default_rng(8)
    store = make_store(rng, [(2,)])
    with pytest.raises(ContractError):
        T.adam_step(store, 0.01)
