"""Dynamic graph attention for referring expression grounding.

A desk-scale implementation: spatial-relation graphs over object
proposals, a soft constituent-expression analyzer, multi-step gated
message passing, and cosine matching, on top of a from-scratch
reverse-mode autodiff core with an optional compiled kernel backend.
"""

from .errors import (CompatibilityError, ContractError, DataError,
                     DGAError, DimensionError, GenerationError, ParseError,
                     SceneError, VocabularyError)
from .kernels import available_backends, backend_name, set_backend
from .tensor import (ParameterStore, Tape, Tensor, adam_step, backward,
                     no_grad)
from .scene_graph import (BoundingBox, EDGE_NAMES, NUM_EDGE_TYPES,
                          ObjectProposal, VisualGraph, build_graph,
                          classify_edge, iou, spatial_feature)
from .language import (EncodedExpression, Expression, ReasoningProgram,
                       Vocabulary, analyzer_step, encode_expression,
                       run_analyzer)
from .static_attention import (MultimodalGraph, StaticAttention,
                               WordTypeGates, edge_type_attention,
                               fuse_multimodal, node_word_attention,
                               project_node_features, static_attention,
                               word_type_gates)
from .dynamic_reasoning import (ReasoningState, StepWeights, propagate,
                                run_reasoning, step_weights, update_gates)
from .matching import (EvalReport, MatchResult, TrainConfig, evaluate,
                       matching_scores, score_scene, train, triplet_loss)
from .model import (ForwardOutputs, ModelConfig, PreparedScene,
                    forward_scene, init_parameters, prepare_scene)
from .synth import (SynthObject, SynthScene, evaluate_expression,
                    generate_dataset, generate_expression, generate_sample,
                    generate_scene, load_dataset, write_dataset)
from .checkpoint import (load_into_store, read_checkpoint, store_arrays,
                         write_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "CompatibilityError", "ContractError", "DGAError",
    "DataError", "DimensionError", "EDGE_NAMES", "EncodedExpression",
    "EvalReport", "Expression", "ForwardOutputs", "GenerationError",
    "MatchResult", "ModelConfig", "MultimodalGraph", "NUM_EDGE_TYPES",
    "ObjectProposal", "ParameterStore", "ParseError", "PreparedScene",
    "ReasoningProgram", "ReasoningState", "SceneError", "StaticAttention",
    "StepWeights", "SynthObject", "SynthScene", "Tape", "Tensor",
    "TrainConfig", "VisualGraph", "Vocabulary", "VocabularyError",
    "WordTypeGates", "adam_step", "analyzer_step", "available_backends",
    "backend_name", "backward", "build_graph", "classify_edge",
    "edge_type_attention", "encode_expression", "evaluate",
    "evaluate_expression", "forward_scene", "fuse_multimodal",
    "generate_dataset", "generate_expression", "generate_sample",
    "generate_scene", "init_parameters", "iou", "load_dataset",
    "load_into_store", "matching_scores", "no_grad", "node_word_attention",
    "prepare_scene", "project_node_features", "propagate",
    "read_checkpoint", "run_analyzer", "run_reasoning", "score_scene",
    "set_backend", "spatial_feature", "static_attention", "step_weights",
    "store_arrays", "train", "triplet_loss", "update_gates",
    "word_type_gates", "write_checkpoint", "write_dataset",
]
