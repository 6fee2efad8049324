"""Command-line entry point: gen-data, train, eval, trace.

Option precedence is flags over config file over defaults, and every
artifact carries the resolved configuration that produced it. Exit
codes: 0 success, 2 flag error, 3 data error, 4 compatibility error.
"""

import argparse
import json
import os
import sys

from . import checkpoint as ckpt
from . import matching, synth
from . import tensor as T
from .errors import CompatibilityError, DataError, DGAError
from .language import Vocabulary
from .model import (ModelConfig, check_scene_compat, init_parameters,
                    prepare_scene)

EXIT_OK = 0
EXIT_FLAG = 2
EXIT_DATA = 3
EXIT_COMPAT = 4

TRAIN_DEFAULTS = {
    "epochs": 30,
    "batch": 64,
    "lr": 0.0005,
    "margin": 0.1,
    "steps": 3,
    "seed": 0,
    "lr_halve_every": 0,
}

MODEL_DIM_KEYS = (
    "d_emb", "d_h", "d_spatial", "d_m", "d_gate_hidden", "d_pair",
    "d_edge_hidden", "d_analyzer", "d_analyzer_attn", "d_match", "l_max",
)


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_text_atomic(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_config_file(path, parser):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path}: invalid syntax: {exc}") from None
    if not isinstance(cfg, dict):
        parser.error("config file must hold a single object")
    return cfg


def _resolve(flag_value, file_cfg, key, default):
    if flag_value is not None:
        return flag_value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _parse_depths(text, parser):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        parser.error(f"--depths must be comma-separated numbers, got {text!r}")
    if len(parts) != 3:
        parser.error("--depths needs exactly three fractions (depth 0,1,2)")
    if abs(sum(parts) - 1.0) > 1e-9:
        parser.error(f"--depths must sum to 1, got sum {sum(parts)!r}")
    if any(p < 0 for p in parts):
        parser.error("--depths fractions must be nonnegative")
    return parts


def cmd_gen_data(args, parser):
    depths = _parse_depths(args.depths, parser)
    resolved = {
        "command": "gen-data", "count": args.count, "k": args.k,
        "depths": depths, "seed": args.seed, "d_v": args.dv,
        "noise": args.noise,
    }
    scenes = synth.generate_dataset(args.count, args.k, depths, args.seed,
                                    d_v=args.dv, noise=args.noise)
    synth.write_dataset(scenes, args.out, header=resolved)
    _emit({"written": args.out, "count": len(scenes),
           "per_depth": {str(d): c for d, c in synth.depth_counts(scenes).items()}})
    return EXIT_OK


def _prepare_all(scenes, vocab, config=None, check=False):
    prepared = []
    for scene in scenes:
        prep = prepare_scene(scene, vocab)
        if check:
            check_scene_compat(prep, config, vocab)
        prepared.append(prep)
    return prepared


def cmd_train(args, parser):
    file_cfg = _load_config_file(args.config, parser)
    resolved = {key: _resolve(getattr(args, key), file_cfg, key, default)
                for key, default in TRAIN_DEFAULTS.items()}
    if resolved["epochs"] < 0:
        parser.error("--epochs must be nonnegative")
    if resolved["batch"] < 1 or resolved["steps"] < 1:
        parser.error("--batch and --steps must be at least 1")
    if resolved["lr"] <= 0 or resolved["margin"] < 0:
        parser.error("--lr must be positive and --margin nonnegative")
    scenes, _ = synth.load_dataset(args.data)
    if not scenes:
        raise DataError(f"{args.data}: dataset is empty")
    vocab = Vocabulary.from_corpus([s.tokens for s in scenes])

    model_kwargs = {k: file_cfg["model"][k]
                    for k in MODEL_DIM_KEYS
                    if isinstance(file_cfg.get("model"), dict)
                    and k in file_cfg["model"]}
    config = ModelConfig(vocab_size=len(vocab),
                         d_v=scenes[0].features.shape[1],
                         steps=int(resolved["steps"]), **model_kwargs)
    train_config = matching.TrainConfig(
        batch_size=int(resolved["batch"]),
        learning_rate=float(resolved["lr"]),
        margin=float(resolved["margin"]),
        steps=int(resolved["steps"]),
        epochs=int(resolved["epochs"]),
        seed=int(resolved["seed"]),
        lr_halve_every=int(resolved["lr_halve_every"]),
    )
    params = init_parameters(config, train_config.seed)
    prepared = _prepare_all(scenes, vocab)

    log_lines = []

    def hook(record):
        _emit(record)
        log_lines.append(json.dumps(record, sort_keys=True))

    matching.train(prepared, train_config, params, config, log_hook=hook)

    meta = {
        "config": config.to_json(),
        "train_config": json.dumps(resolved, sort_keys=True),
        "vocab": json.dumps(vocab.to_list()),
    }
    ckpt.write_checkpoint(args.out, ckpt.store_arrays(params), meta=meta)
    if args.log is not None:
        _write_text_atomic(args.log, "".join(line + "\n" for line in log_lines))
    _emit({"checkpoint": args.out, "epochs": train_config.epochs,
           "train_config": resolved})
    return EXIT_OK


def _load_model(path):
    arrays, meta = ckpt.read_checkpoint(path)
    if "config" not in meta or "vocab" not in meta:
        raise CompatibilityError(f"{path}: checkpoint lacks config/vocab metadata")
    config = ModelConfig.from_json(meta["config"])
    vocab = Vocabulary.from_list(json.loads(meta["vocab"]))
    params = init_parameters(config, seed=0)
    ckpt.load_into_store(arrays, params)
    return params, config, vocab, meta


def cmd_eval(args, parser):
    params, config, vocab, meta = _load_model(args.ckpt)
    scenes, _ = synth.load_dataset(args.data)
    if not scenes:
        raise DataError(f"{args.data}: dataset is empty")
    prepared = _prepare_all(scenes, vocab, config, check=True)
    report = matching.evaluate(prepared, params, config)
    payload = report.to_dict()
    payload["checkpoint"] = args.ckpt
    payload["data"] = args.data
    payload["config"] = json.loads(meta["config"])
    _emit(payload)
    return EXIT_OK


def cmd_trace(args, parser):
    params, config, vocab, meta = _load_model(args.ckpt)
    scenes, _ = synth.load_dataset(args.data)
    if not 0 <= args.index < len(scenes):
        parser.error(f"--index {args.index} out of range for {len(scenes)} scenes")
    prep = prepare_scene(scenes[args.index], vocab)
    check_scene_compat(prep, config, vocab)

    with T.no_grad():
        scores, result, out = matching.score_scene(params, config, prep)

    steps = []
    for (weights, state), r_t in zip(out.history, out.program.R):
        steps.append({
            "step": state.step,
            "word_attention": [float(v) for v in r_t.data],
            "node_weights": [float(v) for v in weights.lam.data],
            "edge_type_weights": [float(v) for v in weights.mu.data],
        })
    doc = {
        "index": args.index,
        "tokens": prep.tokens,
        "num_proposals": prep.num_proposals,
        "gt": prep.gt,
        "steps": steps,
        "scores": [float(v) for v in result.scores],
        "predicted": result.predicted,
        "config": json.loads(meta["config"]),
    }
    _write_text_atomic(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _emit({"trace": args.out, "predicted": result.predicted, "gt": prep.gt})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dga",
        description="Graph-attention referring expression grounding")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--k", type=int, default=8, help="objects per scene")
    g.add_argument("--depths", default="0.34,0.33,0.33",
                   help="fractions for depth 0,1,2 (comma separated)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dv", type=int, default=32, help="visual feature dim")
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--margin", type=float, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--lr-halve-every", type=int, default=None,
                   dest="lr_halve_every")
    t.add_argument("--config", default=None, help="JSON config file")
    t.add_argument("--log", default=None, help="write epoch records here")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)

    r = sub.add_parser("trace", help="emit a reasoning trace")
    r.add_argument("--data", required=True)
    r.add_argument("--index", type=int, required=True)
    r.add_argument("--ckpt", required=True)
    r.add_argument("--out", required=True)

    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "trace": cmd_trace,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (DGAError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
