"""Match scoring, triplet loss, the training loop, and evaluation.

Scores are cosine similarities between projected node memories and the
projected expression vector. Training uses a hinge over the hardest
in-scene negative, recomputed every forward pass.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DataError
from .model import forward_scene
from .scene_graph import iou


@dataclass
class MatchResult:
    scores: np.ndarray  # K cosine scores in [-1, 1]
    predicted: int      # argmax, lowest index on ties


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.0005
    margin: float = 0.1
    steps: int = 3
    epochs: int = 30
    seed: int = 0
    lr_halve_every: int = 0  # 0 disables the schedule

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.epochs < 0:
            raise ContractError("batch size, learning rate, epochs must be positive")
        if self.margin < 0:
            raise ContractError("margin must be nonnegative")


def matching_scores(m_final, q, params):
    """Cosine match scores plus the argmax pick.

    score_k is the inner product of the two L2-normalized projections;
    numpy argmax already breaks ties at the lowest index.
    """
    node_proj = T.l2_normalize_rows(T.matmul(m_final, params["match.w_c0"]))
    expr_proj = T.l2_normalize(T.matmul(q, params["match.w_c1"]))
    scores = T.matmul(node_proj, expr_proj)
    predicted = int(np.argmax(scores.data))
    return scores, MatchResult(scores=scores.data.copy(), predicted=predicted)


def triplet_loss(scores, gt, margin):
    """Hinge on the hardest same-scene negative: max(neg + margin - gt, 0)."""
    k = scores.shape[0]
    if k < 2:
        raise ContractError("triplet loss needs at least one negative proposal")
    if not 0 <= gt < k:
        raise ContractError(f"ground-truth index {gt} out of range for K={k}")
    masked = scores.data.copy()
    masked[gt] = -np.inf
    hard = int(np.argmax(masked))
    gap = T.add(T.sub(T.pick(scores, hard), T.pick(scores, gt)),
                T.Tensor(np.asarray(margin)))
    return T.relu(gap)


def score_scene(params, config, prep):
    """Forward plus scoring; returns (scores tensor, MatchResult, outputs)."""
    out = forward_scene(params, config, prep)
    scores, result = matching_scores(out.final_state.m, out.enc.q, params)
    return scores, result, out


def _predict(params, config, prep):
    with T.no_grad():
        _, result, _ = score_scene(params, config, prep)
    return result


def _is_correct(prep, result):
    if prep.gt_box is not None:
        # detected-proposal mode: correctness is IoU against the gt box
        box = prep.graph.proposals[result.predicted].box
        return iou(box, prep.gt_box) > 0.5
    return result.predicted == prep.gt


def _worker_count():
    raw = os.environ.get("DGA_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


@dataclass
class EvalReport:
    accuracy: float
    count: int
    correct: int
    per_depth: dict = field(default_factory=dict)
    predictions: list = field(default_factory=list)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "count": self.count,
            "correct": self.correct,
            "per_depth": {str(d): v for d, v in sorted(self.per_depth.items())},
        }


def evaluate(dataset, params, config):
    """Greedy accuracy over prepared scenes, with a per-depth breakdown."""
    if not dataset:
        raise DataError("cannot evaluate an empty dataset")
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: _predict(params, config, p),
                                    dataset))
    else:
        results = [_predict(params, config, prep) for prep in dataset]

    totals, hits = {}, {}
    correct = 0
    predictions = []
    for prep, result in zip(dataset, results):
        ok = _is_correct(prep, result)
        correct += ok
        totals[prep.depth] = totals.get(prep.depth, 0) + 1
        hits[prep.depth] = hits.get(prep.depth, 0) + ok
        predictions.append(result.predicted)
    per_depth = {d: {"count": totals[d], "accuracy": hits[d] / totals[d]}
                 for d in totals}
    return EvalReport(accuracy=correct / len(dataset), count=len(dataset),
                      correct=correct, per_depth=per_depth,
                      predictions=predictions)


def train(dataset, train_config, params, model_config, log_hook=None):
    """Minibatch training; returns one log record per epoch.

    Per-scene losses are averaged within a batch (the backward seed
    carries the 1/batch factor), gradients are zeroed between batches,
    and each epoch ends with an evaluation pass at the updated
    parameters so the logged train accuracy matches a later eval run
    on the same data.
    """
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    rng = np.random.default_rng(train_config.seed)
    log = []
    lr = train_config.learning_rate
    n = len(dataset)
    for epoch in range(1, train_config.epochs + 1):
        started = time.perf_counter()
        if train_config.lr_halve_every and epoch > 1 \
                and (epoch - 1) % train_config.lr_halve_every == 0:
            lr *= 0.5
        order = rng.permutation(n)
        loss_total = 0.0
        for start in range(0, n, train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            params.zero_grads()
            for idx in batch:
                prep = dataset[int(idx)]
                with T.Tape() as tape:
                    scores, _, _ = score_scene(params, model_config, prep)
                    loss = triplet_loss(scores, prep.gt, train_config.margin)
                loss_total += loss.item()
                if loss.item() > 0.0:
                    T.backward(loss, tape, seed=1.0 / len(batch))
            T.adam_step(params, lr)
        report = evaluate(dataset, params, model_config)
        record = {
            "epoch": epoch,
            "mean_loss": loss_total / n,
            "train_accuracy": report.accuracy,
            "wall_time": time.perf_counter() - started,
        }
        log.append(record)
        if log_hook is not None:
            log_hook(record)
    return log
