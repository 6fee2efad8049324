"""Synthetic scenes and templated referring expressions.

Objects carry shape/color/size attributes; features are one-hot
attribute blocks plus uniform noise, so the task is solvable but not
memorizable. Expressions are generated against a brute-force semantic
oracle that rejects any sample whose referent is not unique, and the
same oracle is exposed for soundness checks.

Datasets are newline-delimited records with all floats written at nine
significant digits; the generator pre-quantizes, so write -> load is
exact on every field.
"""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, ParseError, SceneError
from .scene_graph import BoundingBox, ObjectProposal, classify_edge

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "gray", "purple")
SIZES = ("small", "large")

# relation name -> edge-type code of "i REL j" (left of = code 8, etc.)
RELATIONS = {"left of": 8, "right of": 4, "above": 6, "below": 10}
RELATION_TOKENS = {
    "left of": ("left", "of"),
    "right of": ("right", "of"),
    "above": ("above",),
    "below": ("below",),
}

ONE_HOT_DIM = len(SHAPES) + len(COLORS) + len(SIZES)

MAX_PLACEMENT_TRIES = 1000
MAX_SAMPLE_TRIES = 200


def q9(x):
    """Quantize to nine significant decimal digits (the file precision)."""
    return float(f"{float(x):.9g}")


@dataclass
class SynthObject:
    shape: str
    color: str
    size: str
    box: BoundingBox


@dataclass
class SynthScene:
    objects: list
    features: np.ndarray     # K x D_v
    tokens: list
    gt: int
    depth: int
    gt_box: BoundingBox = None

    def proposals(self):
        return [ObjectProposal(box=obj.box, visual_feature=self.features[k])
                for k, obj in enumerate(self.objects)]


def _feature_vector(obj, rng, d_v, noise):
    feat = np.zeros(d_v)
    feat[SHAPES.index(obj.shape)] = 1.0
    feat[len(SHAPES) + COLORS.index(obj.color)] = 1.0
    feat[len(SHAPES) + len(COLORS) + SIZES.index(obj.size)] = 1.0
    feat += rng.uniform(-noise, noise, size=d_v)
    return np.array([q9(v) for v in feat])


def generate_scene(rng, k, d_v=32, noise=0.05):
    """K attributed objects with low-overlap boxes; returns (objects, features).

    Placement rejects any box with IoU >= 0.3 against an earlier one;
    after 1000 failed tries the scene is abandoned with an error.
    """
    if k < 2:
        raise GenerationError(f"need at least 2 objects per scene, got {k}")
    if d_v < ONE_HOT_DIM:
        raise GenerationError(
            f"feature dim {d_v} cannot hold the {ONE_HOT_DIM} attribute slots")
    from .scene_graph import iou  # local alias; avoids polluting module API

    objects = []
    for _ in range(k):
        size = SIZES[rng.integers(len(SIZES))]
        lo, hi = (0.06, 0.11) if size == "small" else (0.13, 0.22)
        for attempt in range(MAX_PLACEMENT_TRIES):
            w = q9(rng.uniform(lo, hi))
            h = q9(rng.uniform(lo, hi))
            cx = q9(rng.uniform(w / 2, 1.0 - w / 2))
            cy = q9(rng.uniform(h / 2, 1.0 - h / 2))
            box = BoundingBox(cx=cx, cy=cy, w=w, h=h)
            if all(iou(box, other.box) < 0.3 for other in objects):
                break
        else:
            raise GenerationError(
                f"could not place object {len(objects)} after {MAX_PLACEMENT_TRIES} tries")
        objects.append(SynthObject(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=COLORS[rng.integers(len(COLORS))],
            size=size,
            box=box,
        ))
    features = np.stack([_feature_vector(obj, rng, d_v, noise)
                         for obj in objects])
    return objects, features


def _edge_codes(objects):
    k = len(objects)
    codes = np.zeros((k, k), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            if i != j:
                codes[i, j] = classify_edge(objects[i], objects[j])
    return codes


def _attr_set(objects, color, shape):
    return {k for k, obj in enumerate(objects)
            if obj.shape == shape and (color is None or obj.color == color)}


def _rel_set(objects, codes, shape, rel_code, anchor):
    return {k for k in range(len(objects))
            if k != anchor and objects[k].shape == shape
            and codes[k, anchor] == rel_code}


def _parse_chain(tokens):
    # expr := "the" [color] shape (rel "the" [color] shape)*
    pos = 0
    segments = []
    rel_before = None
    while pos < len(tokens):
        if tokens[pos] != "the":
            raise ValueError(f"expected 'the' at position {pos}")
        pos += 1
        color = None
        if pos < len(tokens) and tokens[pos] in COLORS:
            color = tokens[pos]
            pos += 1
        if pos >= len(tokens) or tokens[pos] not in SHAPES:
            raise ValueError(f"expected a shape at position {pos}")
        shape = tokens[pos]
        pos += 1
        segments.append((color, shape, rel_before))
        if pos == len(tokens):
            break
        if tokens[pos] in ("left", "right"):
            if pos + 1 >= len(tokens) or tokens[pos + 1] != "of":
                raise ValueError(f"dangling {tokens[pos]!r} at position {pos}")
            rel_before = f"{tokens[pos]} of"
            pos += 2
        elif tokens[pos] in ("above", "below"):
            rel_before = tokens[pos]
            pos += 1
        else:
            raise ValueError(f"expected a relation at position {pos}")
    return segments


def evaluate_expression(objects, tokens):
    """Brute-force referent set of a templated expression.

    Resolution runs right to left; every anchor level must resolve to
    exactly one object or the expression fails to refer (empty set).
    The leftmost level's satisfying set is returned unreduced so
    callers can see ambiguity.
    """
    segments = _parse_chain(tokens)
    codes = _edge_codes(objects)
    color, shape, _ = segments[-1]
    current = _attr_set(objects, color, shape)
    for color, shape, rel in reversed(segments[:-1]):
        if len(current) != 1:
            return set()
        anchor = next(iter(current))
        if color is not None:
            raise ValueError("inner segments are shape-only in this grammar")
        current = _rel_set(objects, codes, shape, RELATIONS[rel], anchor)
    return current


def generate_expression(objects, depth, rng):
    """Tokens and gt for one scene, or None when no unambiguous sample exists.

    Depth is the hop count: 0 is attribute-only, 1 and 2 add relation
    hops. Candidate referents, relations, and anchors are tried in
    random order; every emitted sample is verified by the same
    uniqueness rules the oracle applies.
    """
    k = len(objects)
    codes = _edge_codes(objects)
    rel_names = list(RELATIONS)

    def perm(n):
        return [int(v) for v in rng.permutation(n)]

    if depth == 0:
        for i in perm(k):
            obj = objects[i]
            if _attr_set(objects, obj.color, obj.shape) == {i}:
                return ["the", obj.color, obj.shape], i
        return None

    if depth == 1:
        for i in perm(k):
            for r in perm(len(rel_names)):
                rel = rel_names[r]
                for j in perm(k):
                    if j == i or codes[i, j] != RELATIONS[rel]:
                        continue
                    anchor_obj = objects[j]
                    if _attr_set(objects, anchor_obj.color, anchor_obj.shape) != {j}:
                        continue
                    if _rel_set(objects, codes, objects[i].shape,
                                RELATIONS[rel], j) != {i}:
                        continue
                    tokens = (["the", objects[i].shape]
                              + list(RELATION_TOKENS[rel])
                              + ["the", anchor_obj.color, anchor_obj.shape])
                    return tokens, i
        return None

    if depth == 2:
        for i in perm(k):
            for r1 in perm(len(rel_names)):
                rel1 = rel_names[r1]
                for j in perm(k):
                    if j == i or codes[i, j] != RELATIONS[rel1]:
                        continue
                    for r2 in perm(len(rel_names)):
                        rel2 = rel_names[r2]
                        for m in perm(k):
                            if m in (i, j) or codes[j, m] != RELATIONS[rel2]:
                                continue
                            tail = objects[m]
                            if _attr_set(objects, tail.color, tail.shape) != {m}:
                                continue
                            if _rel_set(objects, codes, objects[j].shape,
                                        RELATIONS[rel2], m) != {j}:
                                continue
                            if _rel_set(objects, codes, objects[i].shape,
                                        RELATIONS[rel1], j) != {i}:
                                continue
                            tokens = (["the", objects[i].shape]
                                      + list(RELATION_TOKENS[rel1])
                                      + ["the", objects[j].shape]
                                      + list(RELATION_TOKENS[rel2])
                                      + ["the", tail.color, tail.shape])
                            return tokens, i
        return None

    raise GenerationError(f"unsupported expression depth {depth}")


def generate_sample(rng, k, depth, d_v=32, noise=0.05):
    """Scene plus verified expression; retries fresh scenes on ambiguity."""
    for _ in range(MAX_SAMPLE_TRIES):
        objects, features = generate_scene(rng, k, d_v=d_v, noise=noise)
        result = generate_expression(objects, depth, rng)
        if result is None:
            continue
        tokens, gt = result
        return SynthScene(objects=objects, features=features,
                          tokens=tokens, gt=gt, depth=depth)
    raise GenerationError(
        f"no unambiguous depth-{depth} sample in {MAX_SAMPLE_TRIES} scene draws")


def _depth_counts(count, depth_mix):
    base = [int(count * p) for p in depth_mix]
    remainder = count - sum(base)
    fractional = sorted(range(len(depth_mix)),
                        key=lambda d: (-(count * depth_mix[d] - base[d]), d))
    for d in fractional[:remainder]:
        base[d] += 1
    return base


def generate_dataset(count, k, depth_mix, seed, d_v=32, noise=0.05):
    """Deterministic dataset: scene index i uses rng stream (seed, i)."""
    if len(depth_mix) != 3 or abs(sum(depth_mix) - 1.0) > 1e-9:
        raise GenerationError(f"depth mix must be 3 fractions summing to 1, got {depth_mix}")
    counts = _depth_counts(count, depth_mix)
    schedule = [d for d, c in enumerate(counts) for _ in range(c)]
    scenes = []
    for idx, depth in enumerate(schedule):
        rng = np.random.default_rng([seed, idx])
        scenes.append(generate_sample(rng, k, depth, d_v=d_v, noise=noise))
    return scenes


# ---------------------------------------------------------------------------
# file format

HEADER_KEY = "__config__"


def _q9_tree(value):
    if isinstance(value, float):
        return q9(value)
    if isinstance(value, list):
        return [_q9_tree(v) for v in value]
    if isinstance(value, dict):
        return {k: _q9_tree(v) for k, v in value.items()}
    return value


def to_record(scene):
    objs = []
    for k, obj in enumerate(scene.objects):
        entry = {
            "cx": obj.box.cx, "cy": obj.box.cy,
            "w": obj.box.w, "h": obj.box.h,
            "feature": [float(v) for v in scene.features[k]],
        }
        if obj.shape is not None:
            entry["shape"] = obj.shape
            entry["color"] = obj.color
            entry["size"] = obj.size
        objs.append(entry)
    record = {"objects": objs, "tokens": list(scene.tokens),
              "gt": int(scene.gt), "depth": int(scene.depth)}
    if scene.gt_box is not None:
        b = scene.gt_box
        record["gt_box"] = {"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h}
    return record


def content_hash(scene):
    """Stable identity of a scene record, for split hygiene checks."""
    blob = json.dumps(_q9_tree(to_record(scene)), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _box_from(entry, where):
    try:
        return BoundingBox(cx=float(entry["cx"]), cy=float(entry["cy"]),
                           w=float(entry["w"]), h=float(entry["h"]))
    except KeyError as exc:
        raise ParseError(f"{where}: missing box field {exc}") from None
    except (TypeError, ValueError, SceneError) as exc:
        raise ParseError(f"{where}: bad box: {exc}") from None


def from_record(record, where="record"):
    try:
        raw_objects = record["objects"]
        tokens = record["tokens"]
        gt = record["gt"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{where}: missing field {exc}") from None
    if not isinstance(raw_objects, list) or len(raw_objects) < 2:
        raise ParseError(f"{where}: need at least 2 objects")
    if not isinstance(tokens, list) or not tokens \
            or not all(isinstance(t, str) for t in tokens):
        raise ParseError(f"{where}: tokens must be a nonempty string list")
    objects, rows = [], []
    d_v = None
    for k, entry in enumerate(raw_objects):
        box = _box_from(entry, f"{where} object {k}")
        feat = entry.get("feature")
        if not isinstance(feat, list) or not feat:
            raise ParseError(f"{where} object {k}: missing feature vector")
        if d_v is None:
            d_v = len(feat)
        elif len(feat) != d_v:
            raise ParseError(
                f"{where} object {k}: feature dim {len(feat)} != {d_v}")
        rows.append(np.asarray(feat, dtype=np.float64))
        objects.append(SynthObject(shape=entry.get("shape"),
                                   color=entry.get("color"),
                                   size=entry.get("size"), box=box))
    if not isinstance(gt, int) or not 0 <= gt < len(objects):
        raise ParseError(f"{where}: gt index {gt!r} out of range")
    gt_box = None
    if "gt_box" in record:
        gt_box = _box_from(record["gt_box"], f"{where} gt_box")
    return SynthScene(objects=objects, features=np.stack(rows),
                      tokens=[str(t) for t in tokens], gt=gt,
                      depth=int(record.get("depth", 0)), gt_box=gt_box)


def write_dataset(scenes, path, header=None):
    """One record per line; floats at nine significant digits; atomic."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({HEADER_KEY: _q9_tree(header)},
                                sort_keys=True) + "\n")
        for scene in scenes:
            fh.write(json.dumps(_q9_tree(to_record(scene)), sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_dataset(path):
    """Parse a dataset file; returns (scenes, header-or-None)."""
    scenes = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{os.path.basename(path)} line {lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: invalid record: {exc}") from None
            if lineno == 1 and isinstance(record, dict) and HEADER_KEY in record:
                header = record[HEADER_KEY]
                continue
            scenes.append(from_record(record, where=where))
    return scenes, header


def depth_counts(scenes):
    counts = {}
    for scene in scenes:
        counts[scene.depth] = counts.get(scene.depth, 0) + 1
    return dict(sorted(counts.items()))
