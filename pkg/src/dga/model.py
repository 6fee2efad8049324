"""Model configuration, parameter initialization, and the full forward pass.

Everything upstream of scoring lives here: encode the expression, run
the analyzer, build static attention over the scene graph, fuse, and
reason. Scoring and the training loop sit in ``matching`` to keep the
dependency chain one-directional.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .dynamic_reasoning import run_reasoning
from .errors import CompatibilityError
from .language import (Expression, encode_expression, run_analyzer)
from .scene_graph import NUM_EDGE_TYPES, build_graph
from .static_attention import (fuse_multimodal, project_node_features,
                               static_attention, word_type_gates)


@dataclass
class ModelConfig:
    """All dimensions and step count; serialized into checkpoints."""

    vocab_size: int
    d_v: int = 32            # visual feature dim (2048 for CNN features)
    d_emb: int = 64
    d_h: int = 64            # LSTM hidden per direction
    d_spatial: int = 16      # projected spatial feature dim
    d_m: int = 128           # fused/multimodal node dim
    d_gate_hidden: int = 64
    d_pair: int = 64         # node-word attention inner dim
    d_edge_hidden: int = 64
    d_analyzer: int = 128
    d_analyzer_attn: int = 64
    d_match: int = 128
    steps: int = 3
    l_max: int = 20

    @property
    def d_xi(self):
        return self.d_v + self.d_spatial

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _xavier(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_parameters(config, seed):
    """Fresh ParameterStore; registration order is the wire order."""
    rng = np.random.default_rng(seed)
    c = config
    store = T.ParameterStore()
    two_h = 2 * c.d_h

    store.add("embed.table", rng.uniform(-0.1, 0.1, size=(c.vocab_size, c.d_emb)))

    for direction in ("fwd", "bwd"):
        store.add(f"lstm.{direction}.w_x",
                  _xavier(rng, c.d_emb, c.d_h, (c.d_emb, 4 * c.d_h)))
        store.add(f"lstm.{direction}.w_h",
                  _xavier(rng, c.d_h, c.d_h, (c.d_h, 4 * c.d_h)))
        bias = np.zeros(4 * c.d_h)
        bias[c.d_h:2 * c.d_h] = 1.0  # open forget gates at the start
        store.add(f"lstm.{direction}.b", bias)

    for t in range(1, c.steps + 1):
        store.add(f"analyzer.step{t}.w", _xavier(rng, two_h, two_h, (two_h, two_h)))
        store.add(f"analyzer.step{t}.b", np.zeros(two_h))
    store.add("analyzer.y0", rng.uniform(-0.1, 0.1, size=two_h))
    store.add("analyzer.w_u",
              _xavier(rng, 2 * two_h, c.d_analyzer, (2 * two_h, c.d_analyzer)))
    store.add("analyzer.b_u", np.zeros(c.d_analyzer))
    store.add("analyzer.w_s0",
              _xavier(rng, c.d_analyzer, c.d_analyzer_attn,
                      (c.d_analyzer, c.d_analyzer_attn)))
    store.add("analyzer.w_s1",
              _xavier(rng, two_h, c.d_analyzer_attn, (two_h, c.d_analyzer_attn)))
    store.add("analyzer.w_s2",
              _xavier(rng, c.d_analyzer_attn, 1, (c.d_analyzer_attn,)))

    store.add("gates.w0", _xavier(rng, c.d_emb, c.d_gate_hidden,
                                  (c.d_emb, c.d_gate_hidden)))
    store.add("gates.b0", np.zeros(c.d_gate_hidden))
    store.add("gates.w1", _xavier(rng, c.d_gate_hidden, 1, (c.d_gate_hidden,)))
    store.add("gates.b1", np.zeros(()))

    store.add("attn.node.w0", _xavier(rng, c.d_emb, c.d_pair,
                                      (c.d_emb, c.d_pair)))
    store.add("attn.node.w1", _xavier(rng, c.d_xi, c.d_pair,
                                      (c.d_xi, c.d_pair)))
    store.add("attn.node.w2", _xavier(rng, c.d_pair, 1, (c.d_pair,)))

    store.add("attn.edge.w0", _xavier(rng, c.d_emb, c.d_edge_hidden,
                                      (c.d_emb, c.d_edge_hidden)))
    store.add("attn.edge.b0", np.zeros(c.d_edge_hidden))
    store.add("attn.edge.w1", _xavier(rng, c.d_edge_hidden, NUM_EDGE_TYPES,
                                      (c.d_edge_hidden, NUM_EDGE_TYPES)))
    store.add("attn.edge.b1", np.zeros(NUM_EDGE_TYPES))

    store.add("spatial.w_p", _xavier(rng, 5, c.d_spatial, (5, c.d_spatial)))
    store.add("fuse.w_m", _xavier(rng, c.d_xi + c.d_emb, c.d_m,
                                  (c.d_xi + c.d_emb, c.d_m)))
    store.add("fuse.b_m", np.zeros(c.d_m))

    store.add("reason.w_left", _xavier(rng, c.d_m, c.d_m, (c.d_m, c.d_m)))
    store.add("reason.b_left", np.zeros((NUM_EDGE_TYPES, c.d_m)))
    store.add("reason.w_tilde", _xavier(rng, c.d_m, c.d_m, (c.d_m, c.d_m)))
    store.add("reason.b_tilde", np.zeros(c.d_m))
    store.add("reason.w_hat", _xavier(rng, c.d_m, c.d_m, (c.d_m, c.d_m)))
    store.add("reason.b_hat", np.zeros(c.d_m))

    store.add("match.w_c0", _xavier(rng, c.d_m, c.d_match, (c.d_m, c.d_match)))
    store.add("match.w_c1", _xavier(rng, two_h, c.d_match, (two_h, c.d_match)))
    return store


@dataclass
class PreparedScene:
    """Scene with graph prebuilt and tokens encoded; reused every epoch."""

    graph: object
    x_o: np.ndarray          # K x D_v stacked visual features
    token_ids: list
    tokens: list
    gt: int
    depth: int
    gt_box: object = None    # set in detected-proposal evaluation mode

    @property
    def num_proposals(self):
        return len(self.graph.proposals)


def prepare_scene(scene, vocab):
    """Build the graph and encode tokens once, ahead of training."""
    graph = build_graph(scene.proposals())
    x_o = np.stack([p.visual_feature for p in graph.proposals])
    return PreparedScene(
        graph=graph,
        x_o=x_o,
        token_ids=vocab.encode(scene.tokens),
        tokens=list(scene.tokens),
        gt=scene.gt,
        depth=scene.depth,
        gt_box=scene.gt_box,
    )


def check_scene_compat(prep, config, vocab):
    """Raise CompatibilityError when a scene cannot feed this model."""
    d_v = prep.x_o.shape[1]
    if d_v != config.d_v:
        raise CompatibilityError(
            f"visual feature dim mismatch: dataset d_v={d_v}, model d_v={config.d_v}")
    for word in prep.tokens:
        if word not in vocab:
            raise CompatibilityError(
                f"token {word!r} not covered by the checkpoint vocabulary")
    if len(prep.tokens) > config.l_max:
        raise CompatibilityError(
            f"expression length {len(prep.tokens)} exceeds model l_max={config.l_max}")


@dataclass
class ForwardOutputs:
    """Everything the scorer and the trace writer need."""

    enc: object
    program: object
    gates: object
    attention: object
    final_state: object
    history: list = field(default_factory=list)


def forward_scene(params, config, prep):
    """Full pipeline up to (but not including) match scoring."""
    expr = Expression(list(prep.token_ids), l_max=config.l_max)
    enc = encode_expression(expr, params)
    program = run_analyzer(enc, config.steps, params)

    gates = word_type_gates(enc.F, params)
    x_o = T.Tensor(prep.x_o)
    spatial = T.Tensor(prep.graph.spatial_raw)
    x_i = project_node_features(x_o, spatial, params)
    att = static_attention(x_i, enc.F, gates, params)
    mg = fuse_multimodal(prep.graph, x_i, att.context, params)

    final_state, history = run_reasoning(mg, program, att.alpha, att.beta,
                                         params)
    return ForwardOutputs(enc=enc, program=program, gates=gates,
                          attention=att, final_state=final_state,
                          history=history)
