"""Axis-aligned box arithmetic, class-wise NMS and min-cost bipartite assignment.

Boxes use corner form ``(x_min, y_min, x_max, y_max)`` in continuous pixel
coordinates, so area is ``(x_max - x_min) * (y_max - y_min)`` with no +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Box2D",
    "ScoredDetection",
    "Assignment",
    "iou",
    "giou",
    "nms",
    "hungarian_match",
    "box_pair_loss",
    "box_regression_loss",
    "boxes_to_array",
]


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"box must have strictly positive area, got {coords}")

    @classmethod
    def from_seq(cls, values: Iterable[float]) -> "Box2D":
        x0, y0, x1, y1 = (float(v) for v in values)
        return cls(x0, y0, x1, y1)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def within(self, width: float, height: float) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class ScoredDetection:
    """A class-labelled, confidence-scored box.

    ``image_id`` is only consulted by the evaluator; single-image callers can
    leave it empty.
    """

    box: Box2D
    category_id: int
    score: float
    image_id: str = ""

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...] = field(default_factory=tuple)
    total_cost: float = 0.0

    def __len__(self) -> int:
        return len(self.pairs)


def boxes_to_array(boxes: Sequence[Box2D] | np.ndarray) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def _intersection(a: Box2D, b: Box2D) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box2D, b: Box2D) -> float:
    inter = _intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def giou(a: Box2D, b: Box2D) -> float:
    """Generalized IoU: ``iou - (hull - union) / hull``, in (-1, 1]."""
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    hull = (max(a.x_max, b.x_max) - min(a.x_min, b.x_min)) * (
        max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    )
    return inter / union - (hull - union) / hull


def nms(
    dets: Sequence[ScoredDetection],
    iou_threshold: float = 0.5,
    confidence_threshold: float = 0.3,
) -> list[ScoredDetection]:
    """Class-wise greedy non-maximum suppression.

    Detections scoring below ``confidence_threshold`` are dropped first. The
    survivors are visited by descending score (ties: lower input index first);
    a detection is kept unless a previously kept detection of the same class
    overlaps it with IoU >= ``iou_threshold``.
    """
    if not (0.0 <= iou_threshold <= 1.0 and 0.0 <= confidence_threshold <= 1.0):
        raise ValueError("iou_threshold and confidence_threshold must lie in [0, 1]")
    order = sorted(
        (i for i, d in enumerate(dets) if d.score >= confidence_threshold),
        key=lambda i: (-dets[i].score, i),
    )
    kept_by_class: dict[int, list[ScoredDetection]] = {}
    kept: list[ScoredDetection] = []
    for i in order:
        det = dets[i]
        same_class = kept_by_class.setdefault(det.category_id, [])
        if any(iou(det.box, k.box) >= iou_threshold for k in same_class):
            continue
        same_class.append(det)
        kept.append(det)
    return kept


def hungarian_match(cost: np.ndarray | Sequence[Sequence[float]]) -> Assignment:
    """Minimum-cost assignment of size ``min(n_rows, n_cols)``.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^2 m) for an n x m matrix with n <= m (the matrix is transposed
    internally when it has more rows than columns).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.size == 0:
        return Assignment((), 0.0)
    if c.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost entries must be finite")

    transposed = c.shape[0] > c.shape[1]
    a = c.T if transposed else c
    n, m = a.shape

    # 1-based bookkeeping; column 0 is a virtual source.
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    pairs = []
    for j in range(1, m + 1):
        if owner[j]:
            r, col = int(owner[j]) - 1, j - 1
            pairs.append((col, r) if transposed else (r, col))
    pairs.sort()
    total = float(sum(c[r, col] for r, col in pairs))
    return Assignment(tuple(pairs), total)


def box_pair_loss(
    p: np.ndarray, t: np.ndarray, l1_weight: float, giou_weight: float
) -> tuple[float, np.ndarray]:
    """Loss ``l1_weight * |p - t|_1 + giou_weight * (1 - giou(p, t))`` and d/dp."""
    px0, py0, px1, py1 = p
    tx0, ty0, tx1, ty1 = t
    diff = p - t
    loss = l1_weight * float(np.abs(diff).sum())
    grad = l1_weight * np.sign(diff)

    area_p = (px1 - px0) * (py1 - py0)
    area_t = (tx1 - tx0) * (ty1 - ty0)
    d_area_p = np.array([-(py1 - py0), -(px1 - px0), py1 - py0, px1 - px0])

    iw = min(px1, tx1) - max(px0, tx0)
    ih = min(py1, ty1) - max(py0, ty0)
    if iw > 0 and ih > 0:
        inter = iw * ih
        d_iw = np.array([-float(px0 > tx0), 0.0, float(px1 < tx1), 0.0])
        d_ih = np.array([0.0, -float(py0 > ty0), 0.0, float(py1 < ty1)])
        d_inter = d_iw * ih + d_ih * iw
    else:
        inter = 0.0
        d_inter = np.zeros(4)

    union = area_p + area_t - inter
    d_union = d_area_p - d_inter

    hw = max(px1, tx1) - min(px0, tx0)
    hh = max(py1, ty1) - min(py0, ty0)
    hull = hw * hh
    d_hw = np.array([-float(px0 < tx0), 0.0, float(px1 > tx1), 0.0])
    d_hh = np.array([0.0, -float(py0 < ty0), 0.0, float(py1 > ty1)])
    d_hull = d_hw * hh + d_hh * hw

    # giou = inter/union - 1 + union/hull
    g = inter / union - 1.0 + union / hull
    d_g = (
        d_inter / union
        - inter * d_union / union**2
        + d_union / hull
        - union * d_hull / hull**2
    )
    loss += giou_weight * (1.0 - g)
    grad = grad - giou_weight * d_g
    return loss, grad


def box_regression_loss(
    predicted: Sequence[Box2D] | np.ndarray,
    target: Sequence[Box2D] | np.ndarray,
    matched: Assignment,
    l1_weight: float = 1.0,
    giou_weight: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Mean L1 + GIoU loss over matched (prediction, target) pairs.

    Returns the scalar loss and its gradient with respect to the predicted
    coordinates, shaped ``(len(predicted), 4)``; unmatched rows get zeros.
    """
    p = boxes_to_array(predicted)
    t = boxes_to_array(target)
    grad = np.zeros_like(p)
    if len(matched.pairs) == 0:
        return 0.0, grad
    total = 0.0
    for i, j in matched.pairs:
        loss_ij, g_ij = box_pair_loss(p[i], t[j], l1_weight, giou_weight)
        total += loss_ij
        grad[i] += g_ij
    k = len(matched.pairs)
    return total / k, grad / k
