"""Static language-vision attention.

Splits each word's unit of attention mass between an entity share
(spread over graph nodes) and a relation share (spread over the 11
attendable edge types), then fuses per-node language context into the
node features. Computed once per scene-expression pair; the dynamic
reasoning steps only reweight these tables.
"""

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError
from .scene_graph import NUM_EDGE_TYPES


@dataclass
class WordTypeGates:
    """Per-word entity/relation split; z0 + z1 = 1 exactly."""

    z0: object  # L entity weights in (0,1)
    z1: object  # L relation weights


@dataclass
class StaticAttention:
    alpha: object  # K x L node-word weights; column l sums to z0_l
    beta: object   # 11 x L edge-type-word weights; column l sums to z1_l
    context: object  # K language context vectors c_k


@dataclass
class MultimodalGraph:
    graph: object
    x_m: object  # K x D_m fused node features


def word_type_gates(f, params):
    """Two-layer map from embedding to entity weight; z1 is the rest."""
    hidden = T.add(T.matmul(f, params["gates.w0"]), params["gates.b0"])
    logits = T.add(T.matmul(hidden, params["gates.w1"]), params["gates.b1"])
    z0 = T.sigmoid(logits)
    z1 = T.rsub(1.0, z0)
    return WordTypeGates(z0=z0, z1=z1)


def node_word_attention(x_i, f, gates, params):
    """Word-to-node attention table and per-node language context.

    Logits use the additive-tanh form w . tanh(W1 x_k + W0 f_l); the
    softmax runs over nodes for each word, then the entity gate scales
    the whole row, so column l of the returned table sums to z0_l.
    """
    u = T.matmul(f, params["attn.node.w0"])
    v = T.matmul(x_i, params["attn.node.w1"])
    table = T.pair_score(u, v, params["attn.node.w2"])  # L x K
    normed = T.softmax_rows(table)
    alpha = T.transpose(T.scale_rows(normed, gates.z0))  # K x L
    context = T.matmul(alpha, f)
    return alpha, context


def edge_type_attention(f, gates, params):
    """Word-to-edge-type attention; type 0 (no relation) gets no mass."""
    hidden = T.relu(T.add(T.matmul(f, params["attn.edge.w0"]),
                          params["attn.edge.b0"]))
    logits = T.add(T.matmul(hidden, params["attn.edge.w1"]),
                   params["attn.edge.b1"])  # L x 11
    normed = T.softmax_rows(logits)
    return T.transpose(T.scale_rows(normed, gates.z1))  # 11 x L


def project_node_features(x_o, spatial_raw, params):
    """Assemble x^I rows: visual feature joined with projected spatial."""
    proj = T.matmul(spatial_raw, params["spatial.w_p"])
    return T.hstack([x_o, proj])


def fuse_multimodal(graph, x_i, context, params):
    """Fuse node features with language context: W_m [x^I ; c] + b_m."""
    w_m = params["fuse.w_m"]
    want = x_i.shape[1] + context.shape[1]
    if w_m.shape[0] != want:
        raise ContractError(
            f"fusion weight expects input dim {w_m.shape[0]}, got {want}")
    if x_i.shape[0] != context.shape[0]:
        raise ContractError(
            f"node/context row mismatch: {x_i.shape[0]} vs {context.shape[0]}")
    x_m = T.add(T.matmul(T.hstack([x_i, context]), w_m), params["fuse.b_m"])
    return MultimodalGraph(graph=graph, x_m=x_m)


def static_attention(x_i, f, gates, params):
    """Full static stage: attention tables plus context, one struct."""
    alpha, context = node_word_attention(x_i, f, gates, params)
    beta = edge_type_attention(f, gates, params)
    assert beta.shape[0] == NUM_EDGE_TYPES
    return StaticAttention(alpha=alpha, beta=beta, context=context)
