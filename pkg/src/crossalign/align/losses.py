"""Contrastive, classification and set-prediction losses with analytic gradients.

Every loss works in float64, computes log-sum-exp with max subtraction and
returns ``(loss, grad)`` where ``grad`` is taken with respect to the *raw*
(pre-normalisation) anchor embeddings. Ground and text embeddings are
treated as frozen, so no gradient flows to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from crossalign.align.encoders import l2_normalize, normalize_backward
from crossalign.geometry import (
    Assignment,
    Box2D,
    box_pair_loss,
    box_regression_loss,
    boxes_to_array,
    hungarian_match,
)


def _logsumexp(z: np.ndarray, axis: int = -1, where: np.ndarray | None = None) -> np.ndarray:
    if where is None:
        m = z.max(axis=axis, keepdims=True)
        return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)
    masked = np.where(where, z, -np.inf)
    m = masked.max(axis=axis, keepdims=True)
    return (m + np.log(np.where(where, np.exp(masked - m), 0.0).sum(axis=axis, keepdims=True))).squeeze(axis)


def _softmax(z: np.ndarray, axis: int = -1, where: np.ndarray | None = None) -> np.ndarray:
    if where is None:
        e = np.exp(z - z.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)
    masked = np.where(where, z, -np.inf)
    e = np.where(where, np.exp(masked - masked.max(axis=axis, keepdims=True)), 0.0)
    return e / e.sum(axis=axis, keepdims=True)


def _prepare(anchors: np.ndarray, others: np.ndarray, normalize: bool):
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    others = np.atleast_2d(np.asarray(others, dtype=np.float64))
    if anchors.shape[1] != others.shape[1]:
        raise ValueError(f"embedding dimensions differ: {anchors.shape[1]} vs {others.shape[1]}")
    if normalize:
        return anchors, l2_normalize(anchors), l2_normalize(others)
    return anchors, anchors, others


def _finish(raw: np.ndarray, grad_unit: np.ndarray, normalize: bool) -> np.ndarray:
    return normalize_backward(raw, grad_unit) if normalize else grad_unit


def cross_view_loss(
    aerial: np.ndarray,
    ground: np.ndarray,
    rho: float = 0.07,
    normalize: bool = True,
    symmetric: bool = False,
) -> tuple[float, np.ndarray]:
    """InfoNCE between aerial anchors and their paired ground embeddings.

    Row ``i`` of ``aerial`` is the positive for row ``i`` of ``ground``; every
    other ground row in the batch is a negative. With ``symmetric=True`` the
    ground-anchored direction is averaged in as well.

    Returns:
        (loss, dL/d aerial) with the gradient shaped like ``aerial``.
    """
    if not rho > 0:
        raise ValueError(f"temperature rho must be positive, got {rho}")
    raw, a, g = _prepare(aerial, ground, normalize)
    n = a.shape[0]
    if g.shape[0] != n or n < 1:
        raise ValueError("aerial and ground batches must have equal, non-zero length")
    z = a @ g.T / rho
    diag = np.arange(n)
    loss = float(np.mean(_logsumexp(z, axis=1) - z[diag, diag]))
    dz = _softmax(z, axis=1)
    dz[diag, diag] -= 1.0
    if symmetric:
        loss_col = float(np.mean(_logsumexp(z, axis=0) - z[diag, diag]))
        dz_col = _softmax(z, axis=0)
        dz_col[diag, diag] -= 1.0
        loss = 0.5 * (loss + loss_col)
        dz = 0.5 * (dz + dz_col)
    grad_a = dz @ g / (n * rho)
    return loss, _finish(raw, grad_a, normalize)


def mil_nce_loss(
    aerial: np.ndarray,
    texts: np.ndarray,
    positive_mask: np.ndarray,
    sigma: float = 0.07,
    normalize: bool = True,
) -> tuple[float, np.ndarray]:
    """Multi-instance NCE between aerial anchors and bags of text embeddings.

    ``positive_mask[i, m]`` marks text ``m`` as a positive for anchor ``i``.
    The numerator sums over the positives; the denominator sums over every
    text candidate in the batch, positives included.
    """
    if not sigma > 0:
        raise ValueError(f"temperature sigma must be positive, got {sigma}")
    raw, a, t = _prepare(aerial, texts, normalize)
    mask = np.asarray(positive_mask, dtype=bool)
    if mask.shape != (a.shape[0], t.shape[0]):
        raise ValueError(f"positive mask shape {mask.shape} != ({a.shape[0]}, {t.shape[0]})")
    if not mask.any(axis=1).all():
        raise ValueError("every anchor needs at least one positive text among the candidates")
    n = a.shape[0]
    z = a @ t.T / sigma
    loss = float(np.mean(_logsumexp(z, axis=1) - _logsumexp(z, axis=1, where=mask)))
    dz = _softmax(z, axis=1) - _softmax(z, axis=1, where=mask)
    grad_a = dz @ t / (n * sigma)
    return loss, _finish(raw, grad_a, normalize)


def class_prototypes(texts: np.ndarray, bag_index: Sequence[int], n_classes: int, normalize: bool = True) -> np.ndarray:
    """Mean text embedding of each class bag (rows optionally unit-normalised first)."""
    t = l2_normalize(texts) if normalize else np.asarray(texts, dtype=np.float64)
    bag_index = np.asarray(bag_index)
    protos = np.zeros((n_classes, t.shape[1]))
    for c in range(n_classes):
        members = t[bag_index == c]
        if len(members) == 0:
            raise ValueError(f"class {c} has no text embeddings")
        protos[c] = members.mean(axis=0)
    return protos


def classification_loss(
    regions: np.ndarray,
    prototypes: np.ndarray,
    labels: Sequence[int],
    temperature: float = 0.07,
    normalize: bool = True,
) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over region-prototype similarities."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    raw, r, p = _prepare(regions, prototypes, normalize)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != r.shape[0]:
        raise ValueError("one label per region is required")
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[0]):
        raise ValueError(f"labels must index one of {p.shape[0]} classes")
    n = r.shape[0]
    z = r @ p.T / temperature
    rows = np.arange(n)
    loss = float(np.mean(_logsumexp(z, axis=1) - z[rows, labels]))
    dz = _softmax(z, axis=1)
    dz[rows, labels] -= 1.0
    grad_r = dz @ p / (n * temperature)
    return loss, _finish(raw, grad_r, normalize)


@dataclass
class DetectionLoss:
    loss: float
    box_loss: float
    class_loss: float
    assignment: Assignment
    grad_boxes: np.ndarray
    grad_scores: np.ndarray


def _detection_cost(pb, ps, tb, tc, class_weight, l1_weight, giou_weight) -> np.ndarray:
    cost = np.zeros((len(pb), len(tb)))
    for i in range(len(pb)):
        for j in range(len(tb)):
            box_cost, _ = box_pair_loss(pb[i], tb[j], l1_weight, giou_weight)
            cost[i, j] = box_cost - class_weight * ps[i, tc[j]]
    return cost


def detection_set_loss(
    pred_boxes: Sequence[Box2D] | np.ndarray,
    pred_scores: np.ndarray,
    target_boxes: Sequence[Box2D] | np.ndarray,
    target_classes: Sequence[int],
    class_weight: float = 1.0,
    l1_weight: float = 1.0,
    giou_weight: float = 1.0,
    eps: float = 1e-12,
) -> DetectionLoss:
    """Set-prediction loss with Hungarian matching.

    ``pred_scores`` holds one probability vector per prediction over
    ``C + 1`` entries, the last being "no object". The matching cost is
    ``l1 + giou term - class_weight * p(target class)``. The loss is the mean
    box regression loss over matched pairs plus ``class_weight`` times the
    mean negative log-probability of each prediction's assigned label
    (target class if matched, no-object otherwise).
    """
    pb = boxes_to_array(pred_boxes)
    tb = boxes_to_array(target_boxes)
    tc = np.asarray(target_classes, dtype=np.int64).reshape(-1)
    ps = np.asarray(pred_scores, dtype=np.float64)
    ps = ps.reshape(len(pb), ps.shape[-1] if ps.ndim else -1)
    no_object = ps.shape[1] - 1
    if len(tc) != len(tb):
        raise ValueError("one class per target box is required")
    if tc.size and (tc.min() < 0 or tc.max() >= no_object):
        raise ValueError("target classes must index the non-background score columns")

    if len(pb) and len(tb):
        match = hungarian_match(_detection_cost(pb, ps, tb, tc, class_weight, l1_weight, giou_weight))
    else:
        match = Assignment()
    box_loss, grad_boxes = box_regression_loss(pb, tb, match, l1_weight, giou_weight)

    grad_scores = np.zeros_like(ps)
    class_loss = 0.0
    if len(pb):
        labels = np.full(len(pb), no_object)
        for i, j in match.pairs:
            labels[i] = tc[j]
        rows = np.arange(len(pb))
        picked = np.maximum(ps[rows, labels], eps)
        class_loss = float(-np.log(picked).mean())
        grad_scores[rows, labels] = np.where(ps[rows, labels] > eps, -1.0 / picked, 0.0) / len(pb)
    return DetectionLoss(
        loss=box_loss + class_weight * class_loss,
        box_loss=box_loss,
        class_loss=class_loss,
        assignment=match,
        grad_boxes=grad_boxes,
        grad_scores=class_weight * grad_scores,
    )


@dataclass
class LossConfig:
    rho: float = 0.07
    sigma: float = 0.07
    cls_temperature: float = 0.07
    lambda_ag: float = 1.0
    lambda_at: float = 1.0
    lambda_cls: float = 1.0
    lambda_box: float = 1.0
    normalize: bool = True
    symmetric: bool = False

    def __post_init__(self) -> None:
        for name in ("rho", "sigma", "cls_temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lambda_ag", "lambda_at", "lambda_cls", "lambda_box"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class AlignmentBatch:
    """One contrastive batch.

    ``text_bag[m]`` is the bag id of candidate text ``m``; ``positive_bags[i]``
    lists the bag ids counted as positives for aerial sample ``i``.
    """

    aerial: np.ndarray
    ground: np.ndarray
    texts: np.ndarray
    text_bag: np.ndarray
    positive_bags: list[tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.aerial = np.atleast_2d(np.asarray(self.aerial, dtype=np.float64))
        self.ground = np.atleast_2d(np.asarray(self.ground, dtype=np.float64))
        self.texts = np.atleast_2d(np.asarray(self.texts, dtype=np.float64))
        self.text_bag = np.asarray(self.text_bag, dtype=np.int64).reshape(-1)
        if len(self.aerial) < 1 or len(self.aerial) != len(self.ground):
            raise ValueError("aerial and ground lists must have equal length N >= 1")
        if len(self.text_bag) != len(self.texts):
            raise ValueError("text_bag needs one bag id per text embedding")
        if len(self.positive_bags) != len(self.aerial):
            raise ValueError("positive_bags needs one entry per aerial sample")
        self.positive_bags = [tuple(int(k) for k in np.atleast_1d(p)) for p in self.positive_bags]
        present = set(self.text_bag.tolist())
        for i, bags in enumerate(self.positive_bags):
            if not bags or not set(bags) <= present:
                raise ValueError(f"sample {i}: positive bags {bags} not among the candidate bags")

    def positive_mask(self) -> np.ndarray:
        return np.array([np.isin(self.text_bag, bags) for bags in self.positive_bags], dtype=bool)


@dataclass
class DetectionInputs:
    regions: np.ndarray
    region_labels: np.ndarray
    prototypes: np.ndarray
    pred_boxes: np.ndarray
    pred_scores: np.ndarray
    target_boxes: np.ndarray
    target_classes: np.ndarray


def total_loss(
    batch: AlignmentBatch, detection: DetectionInputs | None, config: LossConfig
) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Weighted sum of the four training losses.

    Returns ``(total, components, grads)``; ``grads`` has entries ``aerial``,
    ``regions``, ``boxes`` and ``scores`` (the latter three only when
    ``detection`` is given). Terms with zero weight are not evaluated.
    """
    c = config
    comps = {"ag": 0.0, "at": 0.0, "cls": 0.0, "box": 0.0}
    grads: dict[str, np.ndarray] = {"aerial": np.zeros_like(batch.aerial)}
    if c.lambda_ag:
        comps["ag"], g = cross_view_loss(batch.aerial, batch.ground, c.rho, c.normalize, c.symmetric)
        grads["aerial"] = grads["aerial"] + c.lambda_ag * g
    if c.lambda_at:
        comps["at"], g = mil_nce_loss(batch.aerial, batch.texts, batch.positive_mask(), c.sigma, c.normalize)
        grads["aerial"] = grads["aerial"] + c.lambda_at * g
    if detection is not None:
        grads["regions"] = np.zeros_like(np.atleast_2d(detection.regions), dtype=np.float64)
        grads["boxes"] = np.zeros_like(boxes_to_array(detection.pred_boxes))
        grads["scores"] = np.zeros_like(np.asarray(detection.pred_scores, dtype=np.float64))
        if c.lambda_cls:
            comps["cls"], g = classification_loss(
                detection.regions, detection.prototypes, detection.region_labels, c.cls_temperature, c.normalize
            )
            grads["regions"] = c.lambda_cls * g
        if c.lambda_box:
            det = detection_set_loss(
                detection.pred_boxes, detection.pred_scores, detection.target_boxes, detection.target_classes
            )
            comps["box"] = det.loss
            grads["boxes"] = c.lambda_box * det.grad_boxes
            grads["scores"] = c.lambda_box * det.grad_scores
    total = c.lambda_ag * comps["ag"] + c.lambda_at * comps["at"] + c.lambda_cls * comps["cls"] + c.lambda_box * comps["box"]
    return total, comps, grads
