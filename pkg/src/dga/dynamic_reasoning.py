"""Multi-step gated message passing over the multimodal graph.

Each step reweights the static attention tables with that step's word
distribution, accumulates the resulting node/edge-type gates, and
blends neighbor messages into per-node memories. Node memories after
the final step represent compound objects ("the man wearing a gray
shirt", not just "the man").
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .scene_graph import NUM_EDGE_TYPES


@dataclass
class StepWeights:
    """How much this step talks about each node and edge type."""

    lam: object  # K node weights
    mu: object   # 11 edge-type weights


@dataclass
class ReasoningState:
    m: object    # K x D_m memories
    p: object    # K node gates, nondecreasing in t
    nu: object   # 11 edge-type gates, nondecreasing in t
    step: int


def step_weights(r_t, alpha, beta):
    """Collapse word attention through the step's word distribution.

    lam_k = sum_l r_l alpha_{k,l} and mu_n = sum_l r_l beta_{n,l};
    total mass sums to 1 because each word's gates do.
    """
    lam = T.matmul(alpha, r_t)
    mu = T.matmul(beta, r_t)
    return StepWeights(lam=lam, mu=mu)


def update_gates(w, state):
    """Additive gate accumulation; returns (p_new, nu_new)."""
    return T.add(state.p, w.lam), T.add(state.nu, w.mu)


def propagate(mgraph, state, w, p_new, nu_new, params):
    """One message-passing update of the memories (steps t >= 2).

    Incoming messages are gated by the receiving edge's accumulated
    type gate; each node then blends the transformed message sum with
    its own memory in proportion to lam vs the old gate mass. Nodes
    with zero new gate mass keep their memory bit-for-bit.
    """
    edges = mgraph.graph.edges
    scaled = T.scale_rows(T.matmul(state.m, params["reason.w_left"]), state.p)
    m_left = T.edge_prop(scaled, nu_new, params["reason.b_left"], edges)
    m_tilde = T.add(T.matmul(state.m, params["reason.w_tilde"]),
                    params["reason.b_tilde"])
    inner = T.add(T.matmul(T.add(m_left, m_tilde), params["reason.w_hat"]),
                  params["reason.b_hat"])
    return T.blend(inner, state.m, w.lam, state.p, p_new)


def run_reasoning(mgraph, program, alpha, beta, params):
    """Run all steps; returns the final state and per-step history.

    Step 1 installs the fused features as memories and applies the
    gate update; later steps propagate. History entries pair each
    step's weights with the state after that step.
    """
    if program.steps < 1:
        raise ContractError("reasoning needs at least one step")
    k = mgraph.x_m.shape[0]
    state = ReasoningState(
        m=None,
        p=T.Tensor(np.zeros(k)),
        nu=T.Tensor(np.zeros(NUM_EDGE_TYPES)),
        step=0,
    )
    history = []
    for t, r_t in enumerate(program.R, start=1):
        w = step_weights(r_t, alpha, beta)
        p_new, nu_new = update_gates(w, state)
        if t == 1:
            m_new = mgraph.x_m
        else:
            m_new = propagate(mgraph, state, w, p_new, nu_new, params)
        state = ReasoningState(m=m_new, p=p_new, nu=nu_new, step=t)
        history.append((w, state))
    return state, history
