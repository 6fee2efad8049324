"""Spatial-relation graph over object proposals.

Boxes use normalized image coordinates (y grows downward). The edge
classifier assigns each ordered pair one of 12 categorical types:

    0 none, 1 inside, 2 cover, 3 overlap,
    4 right, 5 top-right, 6 top, 7 top-left,
    8 left, 9 bottom-left, 10 bottom, 11 bottom-right

where ``edges[i][j]`` describes proposal i relative to proposal j
(code 8 means "i is left of j"). Everything here is deterministic
geometry; no learned parts.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError

NUM_EDGE_TYPES = 11  # attendable types 1..11; 0 is structural absence

EDGE_NAMES = (
    "none", "inside", "cover", "overlap",
    "right", "top-right", "top", "top-left",
    "left", "bottom-left", "bottom", "bottom-right",
)


@dataclass(frozen=True)
class BoundingBox:
    """Center/size box in normalized coordinates."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise SceneError(f"box center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise SceneError(f"box size out of range: ({self.w}, {self.h})")

    # edges may extend past the image border; no clamping
    @property
    def x0(self):
        return self.cx - self.w / 2.0

    @property
    def x1(self):
        return self.cx + self.w / 2.0

    @property
    def y0(self):
        return self.cy - self.h / 2.0

    @property
    def y1(self):
        return self.cy + self.h / 2.0

    @property
    def area(self):
        return self.w * self.h


@dataclass
class ObjectProposal:
    box: BoundingBox
    visual_feature: np.ndarray

    def __post_init__(self):
        feat = np.asarray(self.visual_feature, dtype=np.float64)
        if feat.ndim != 1:
            raise SceneError(f"visual feature must be a vector, got shape {feat.shape}")
        if not np.all(np.isfinite(feat)):
            raise SceneError("visual feature contains non-finite values")
        self.visual_feature = feat


@dataclass
class VisualGraph:
    """Directed typed graph over K proposals."""

    proposals: list
    edges: np.ndarray          # K x K int64 edge-type codes, zero diagonal
    spatial_raw: np.ndarray    # K x 5 raw spatial vectors
    node_features: np.ndarray = field(default=None)  # filled by projection

    @property
    def num_nodes(self):
        return len(self.proposals)


def iou(a, b):
    """Intersection over union of two boxes; symmetric, in [0, 1]."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def spatial_feature(box):
    """Raw 5-vector [cx, cy, w, h, w*h]; the learned projection is separate."""
    return np.array([box.cx, box.cy, box.w, box.h, box.w * box.h],
                    dtype=np.float64)


def _contains(outer, inner):
    # ties count as containment: measure-zero but must still classify
    return (outer.x0 <= inner.x0 and inner.x1 <= outer.x1
            and outer.y0 <= inner.y0 and inner.y1 <= outer.y1)


def classify_edge(o_i, o_j):
    """Edge-type code for ordered pair (i, j); exactly one rule fires.

    Precedence: containment both ways, then overlap (iou > 0.5), then
    distance cutoff (d over the unit-image diagonal sqrt(2) above 0.5
    means no relation), then one of eight 45-degree compass buckets.
    """
    a, b = o_i.box, o_j.box
    if _contains(a, b):
        return 1
    if _contains(b, a):
        return 2
    m = iou(a, b)
    if m > 0.5:
        return 3
    dx = a.cx - b.cx
    dy = -(a.cy - b.cy)  # flip so "top" means visually above
    d = math.hypot(dx, dy)
    if d / math.sqrt(2.0) > 0.5:
        return 0
    if d == 0.0:
        # equal centers: angle undefined, fall back on overlap evidence
        return 3 if m > 0.0 else 0
    theta = math.degrees(math.atan2(dy, dx)) % 360.0
    return 4 + (int((theta + 22.5) // 45.0) % 8)


def build_graph(proposals):
    """Classify every ordered pair and collect raw spatial vectors."""
    k = len(proposals)
    if k < 2:
        raise SceneError(f"need at least 2 proposals, got {k}")
    dims = {p.visual_feature.shape[0] for p in proposals}
    if len(dims) != 1:
        raise SceneError(f"inconsistent visual feature dims: {sorted(dims)}")
    edges = np.zeros((k, k), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            if i != j:
                edges[i, j] = classify_edge(proposals[i], proposals[j])
    spatial = np.stack([spatial_feature(p.box) for p in proposals])
    return VisualGraph(proposals=list(proposals), edges=edges,
                       spatial_raw=spatial)
