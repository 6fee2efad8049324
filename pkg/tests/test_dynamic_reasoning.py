"""Gated message passing: step weights, gate accumulation, memory blending."""
import numpy as np
import pytest

from dga import model
from dga import tensor as T
from dga.errors import ContractError
from dga.dynamic_reasoning import (ReasoningState, propagate, run_reasoning,
                                   step_weights, update_gates)
from dga.language import ReasoningProgram
from dga.scene_graph import (NUM_EDGE_TYPES, BoundingBox, ObjectProposal,
                             build_graph)
from dga.static_attention import MultimodalGraph

from _util import rel_err


def reason_params(d_m, seed=0):
    cfg = model.ModelConfig(vocab_size=8, d_v=4, d_emb=4, d_h=3,
                            d_spatial=2, d_m=d_m, d_gate_hidden=3, d_pair=3,
                            d_edge_hidden=3, d_analyzer=4, d_analyzer_attn=3,
                            d_match=4)
    return model.init_parameters(cfg, seed=seed)


def toy_graph(k, rng, d_m):
    props = []
    for _ in range(k):
        props.append(ObjectProposal(
            box=BoundingBox(float(rng.uniform(0.1, 0.9)),
                            float(rng.uniform(0.1, 0.9)), 0.1, 0.1),
            visual_feature=rng.standard_normal(4)))
    graph = build_graph(props)
    x_m = T.Tensor(rng.standard_normal((k, d_m)))
    return MultimodalGraph(graph=graph, x_m=x_m)


def normalized_tables(rng, k, length, z0=None):
    """Random alpha/beta with columns summing to z0 and 1-z0."""
    if z0 is None:
        z0 = rng.uniform(0.2, 0.8, length)
    a = rng.uniform(0.1, 1.0, (k, length))
    alpha = a / a.sum(axis=0) * z0
    b = rng.uniform(0.1, 1.0, (NUM_EDGE_TYPES, length))
    beta = b / b.sum(axis=0) * (1.0 - z0)
    return T.Tensor(alpha), T.Tensor(beta)


def uniform_program(rng, length, steps):
    program = ReasoningProgram()
    for _ in range(steps):
        r = rng.uniform(0.1, 1.0, length)
        program.R.append(T.Tensor(r / r.sum()))
        program.Y.append(None)
    return program


def test_step_weights_mass():
    rng = np.random.default_rng(0)
    alpha, beta = normalized_tables(rng, k=5, length=4)
    r = rng.uniform(0.0, 1.0, 4)
    r /= r.sum()
    with T.no_grad():
        w = step_weights(T.Tensor(r), alpha, beta)
    assert rel_err(w.lam.data, alpha.data @ r) < 1e-12
    assert rel_err(w.mu.data, beta.data @ r) < 1e-12
    assert abs(w.lam.data.sum() + w.mu.data.sum() - 1.0) < 1e-9


def test_gate_monotonicity_exact():
    rng = np.random.default_rng(1)
    k, length = 4, 5
    alpha, beta = normalized_tables(rng, k, length)
    state = ReasoningState(m=None, p=T.Tensor(rng.uniform(0.0, 2.0, k)),
                           nu=T.Tensor(rng.uniform(0.0, 2.0, NUM_EDGE_TYPES)),
                           step=3)
    r = rng.uniform(0.0, 1.0, length)
    with T.no_grad():
        w = step_weights(T.Tensor(r / r.sum()), alpha, beta)
        p_new, nu_new = update_gates(w, state)
    # adding nonnegative mass can never decrease a gate
    assert np.all(p_new.data >= state.p.data)
    assert np.all(nu_new.data >= state.nu.data)


def test_total_gate_mass_equals_steps():
    rng = np.random.default_rng(2)
    k, length, steps = 5, 6, 3
    params = reason_params(d_m=7, seed=2)
    mgraph = toy_graph(k, rng, d_m=7)
    alpha, beta = normalized_tables(rng, k, length)
    program = uniform_program(rng, length, steps)
    with T.no_grad():
        state, history = run_reasoning(mgraph, program, alpha, beta, params)
    total = state.p.data.sum() + state.nu.data.sum()
    assert abs(total - steps) < 1e-5
    assert len(history) == steps
    assert state.step == steps


def test_first_step_installs_features():
    rng = np.random.default_rng(3)
    params = reason_params(d_m=7, seed=3)
    mgraph = toy_graph(4, rng, d_m=7)
    alpha, beta = normalized_tables(rng, 4, 5)
    program = uniform_program(rng, 5, 1)
    with T.no_grad():
        state, _ = run_reasoning(mgraph, program, alpha, beta, params)
    assert state.m.data.tobytes() == mgraph.x_m.data.tobytes()


def test_propagate_matches_manual_computation():
    # K=2 chain with a single directed edge, checked against plain numpy
    rng = np.random.default_rng(4)
    d_m = 3
    params = reason_params(d_m=d_m, seed=4)

    props = [
        ObjectProposal(box=BoundingBox(0.3, 0.5, 0.1, 0.1),
                       visual_feature=rng.standard_normal(4)),
        ObjectProposal(box=BoundingBox(0.7, 0.5, 0.1, 0.1),
                       visual_feature=rng.standard_normal(4)),
    ]
    graph = build_graph(props)
    assert graph.edges[0, 1] == 8 and graph.edges[1, 0] == 4

    m_prev = rng.standard_normal((2, d_m))
    p_prev = np.array([0.6, 0.3])
    lam = np.array([0.25, 0.15])
    p_new = p_prev + lam
    nu_new = rng.uniform(0.1, 1.0, NUM_EDGE_TYPES)

    mgraph = MultimodalGraph(graph=graph, x_m=None)
    state = ReasoningState(m=T.Tensor(m_prev), p=T.Tensor(p_prev),
                           nu=None, step=1)
    from dga.dynamic_reasoning import StepWeights
    w = StepWeights(lam=T.Tensor(lam), mu=None)
    with T.no_grad():
        out = propagate(mgraph, state, w, T.Tensor(p_new),
                        T.Tensor(nu_new), params).data

    # manual: node k receives from j where edges[j, k] = n > 0
    w_left = params["reason.w_left"].data
    b_left = params["reason.b_left"].data
    w_tilde = params["reason.w_tilde"].data
    b_tilde = params["reason.b_tilde"].data
    w_hat = params["reason.w_hat"].data
    b_hat = params["reason.b_hat"].data

    scaled = (m_prev @ w_left) * p_prev[:, None]
    m_left = np.zeros((2, d_m))
    code01 = graph.edges[0, 1]  # sender 0 -> receiver 1
    code10 = graph.edges[1, 0]  # sender 1 -> receiver 0
    m_left[1] += nu_new[code01 - 1] * (scaled[0] + b_left[code01 - 1])
    m_left[0] += nu_new[code10 - 1] * (scaled[1] + b_left[code10 - 1])
    m_tilde = m_prev @ w_tilde + b_tilde
    inner = (m_left + m_tilde) @ w_hat + b_hat
    want = (lam[:, None] * inner + p_prev[:, None] * m_prev) / p_new[:, None]

    assert rel_err(out, want) < 1e-12


def test_zero_lambda_keeps_memory_bitwise():
    # alpha concentrates each word on one node; step 2's distribution
    # ignores node 0, so its memory must pass through untouched
    rng = np.random.default_rng(5)
    d_m = 6
    params = reason_params(d_m=d_m, seed=5)
    mgraph = toy_graph(2, rng, d_m=d_m)
    alpha = T.Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    beta = T.Tensor(np.zeros((NUM_EDGE_TYPES, 2)))
    program = ReasoningProgram()
    program.R = [T.Tensor(np.array([1.0, 0.0])),
                 T.Tensor(np.array([0.0, 1.0]))]
    program.Y = [None, None]
    with T.no_grad():
        state, history = run_reasoning(mgraph, program, alpha, beta, params)
    w2, _ = history[1]
    assert w2.lam.data[0] == 0.0
    after_step1 = history[0][1].m.data
    assert state.m.data[0].tobytes() == after_step1[0].tobytes()
    assert state.m.data[1].tobytes() != after_step1[1].tobytes()


def test_frozen_node_keeps_memory_bitwise():
    # a node with zero gate mass through all steps never changes
    rng = np.random.default_rng(6)
    d_m = 6
    params = reason_params(d_m=d_m, seed=6)
    mgraph = toy_graph(3, rng, d_m=d_m)
    alpha = T.Tensor(np.array([[0.7, 0.3],
                               [0.3, 0.7],
                               [0.0, 0.0]]))
    beta = T.Tensor(np.zeros((NUM_EDGE_TYPES, 2)))
    program = ReasoningProgram()
    program.R = [T.Tensor(np.array([0.5, 0.5])) for _ in range(3)]
    program.Y = [None] * 3
    with T.no_grad():
        state, _ = run_reasoning(mgraph, program, alpha, beta, params)
    assert state.p.data[2] == 0.0
    assert state.m.data[2].tobytes() == mgraph.x_m.data[2].tobytes()


def test_run_reasoning_rejects_empty_program():
    rng = np.random.default_rng(7)
    params = reason_params(d_m=5, seed=7)
    mgraph = toy_graph(2, rng, d_m=5)
    alpha, beta = normalized_tables(rng, 2, 3)
    with pytest.raises(ContractError):
        run_reasoning(mgraph, ReasoningProgram(), alpha, beta, params)
