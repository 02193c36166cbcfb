"""Minibatch training of the aerial encoder against frozen ground/text embeddings."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from crossalign.align.encoders import EncoderParams, encode, encode_backward, init_encoder
from crossalign.align.losses import (
    LossConfig,
    class_prototypes,
    classification_loss,
    cross_view_loss,
    mil_nce_loss,
)
from crossalign.align.optim import AdamState, adam_step
from crossalign.corrgen import CorrespondenceRecord, DatasetFormatError, FORMAT_VERSION
from crossalign.vocab import TextBag, normalize_variant

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "crossalign/checkpoint"
FEATURE_FORMAT = "crossalign/features"
TRACE_COLUMNS = ("step", "epoch", "L_AG", "L_AT", "L_cls", "L_box", "total")
_TRAIN_STREAM = 4
_INIT_STREAM = 5


class TrainingDiverged(RuntimeError):
    pass


class EmbeddingProvider(Protocol):
    def aerial_features(self, record: CorrespondenceRecord) -> np.ndarray: ...

    def ground_features(self, record: CorrespondenceRecord) -> np.ndarray: ...

    def text_features(self, bag: TextBag, variant: str) -> np.ndarray: ...


class FeatureTableProvider:
    """Looks features up in precomputed tables.

    Aerial and ground vectors are keyed by ``pair_id`` when present, else by
    image id; text vectors by the normalised variant string.
    """

    def __init__(
        self,
        aerial: Mapping[str, np.ndarray],
        ground: Mapping[str, np.ndarray],
        text: Mapping[str, np.ndarray],
    ) -> None:
        self.aerial, self.ground = dict(aerial), dict(ground)
        self.text = {normalize_variant(k): v for k, v in text.items()}

    @classmethod
    def from_files(cls, aerial: str | Path, ground: str | Path, text: str | Path) -> "FeatureTableProvider":
        return cls(read_features(aerial), read_features(ground), read_features(text))

    @staticmethod
    def _get(table: Mapping[str, np.ndarray], keys: Sequence[str], what: str) -> np.ndarray:
        for k in keys:
            if k in table:
                return np.asarray(table[k], dtype=np.float64)
        raise KeyError(f"no {what} features for any of {list(keys)}")

    def aerial_features(self, record: CorrespondenceRecord) -> np.ndarray:
        return self._get(self.aerial, (record.pair_id, record.aerial_image), "aerial")

    def ground_features(self, record: CorrespondenceRecord) -> np.ndarray:
        return self._get(self.ground, (record.pair_id, record.ground_image), "ground")

    def text_features(self, bag: TextBag, variant: str) -> np.ndarray:
        return self._get(self.text, (normalize_variant(variant),), "text")


def write_features(table: Mapping[str, np.ndarray], path: str | Path, kind: str = "aerial") -> None:
    vecs = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in table.items()}
    dims = {v.size for v in vecs.values()}
    if len(dims) > 1:
        raise ValueError(f"feature vectors have mixed lengths {sorted(dims)}")
    header = {"format": FEATURE_FORMAT, "version": FORMAT_VERSION, "kind": kind, "dim": dims.pop() if dims else 0}
    lines = [json.dumps(header)]
    lines += [json.dumps({"key": k, "vector": v.tolist()}) for k, v in sorted(vecs.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_features(path: str | Path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        header = json.loads(lines[0]) if lines else None
    except json.JSONDecodeError:
        header = None
    if not isinstance(header, dict) or header.get("format") != FEATURE_FORMAT or header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(path, 1, f"expected a version-{FORMAT_VERSION} {FEATURE_FORMAT!r} header")
    dim = int(header.get("dim", 0))
    out = {}
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            vec = np.asarray(obj["vector"], dtype=np.float64)
            if vec.shape != (dim,) or not np.all(np.isfinite(vec)):
                raise ValueError(f"expected {dim} finite values")
            out[str(obj["key"])] = vec
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, no, f"bad feature line: {exc}") from None
    return out


@dataclass
class TrainingData:
    """Dense arrays gathered from the aligned dataset and text bags."""

    pair_ids: list[str]
    aerial: np.ndarray
    ground: np.ndarray
    labels: np.ndarray
    class_ids: list[int]
    texts: np.ndarray
    text_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.pair_ids)


def build_training_data(
    records: Sequence[CorrespondenceRecord], bags: Sequence[TextBag], provider: EmbeddingProvider
) -> TrainingData:
    if not records:
        raise ValueError("the aligned dataset is empty")
    by_cat = {b.category_id: b for b in bags}
    missing = sorted({r.category_id for r in records} - set(by_cat))
    if missing:
        raise ValueError(f"categories {missing} have no text bag")
    class_ids = sorted(by_cat)
    index = {c: i for i, c in enumerate(class_ids)}
    texts, text_labels = [], []
    for c in class_ids:
        for v in by_cat[c].variants:
            texts.append(provider.text_features(by_cat[c], v))
            text_labels.append(index[c])
    return TrainingData(
        pair_ids=[r.pair_id for r in records],
        aerial=np.array([provider.aerial_features(r) for r in records]),
        ground=np.array([provider.ground_features(r) for r in records]),
        labels=np.array([index[r.category_id] for r in records]),
        class_ids=class_ids,
        texts=np.array(texts),
        text_labels=np.array(text_labels),
    )


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    encoder: str = "linear"
    hidden: int | None = None
    dim: int = 16
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        if isinstance(self.loss, Mapping):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 0 or self.batch_size < 1 or self.dim < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and dim >= 1 are required")
        if self.lr < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid optimizer settings")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainState:
    aerial: EncoderParams
    ground: EncoderParams
    text: EncoderParams
    optimizer: AdamState = field(default_factory=AdamState)
    epoch: int = 0


@dataclass
class TrainResult:
    state: TrainState
    trace: list[dict[str, float]]

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.trace:
            by_epoch.setdefault(int(row["epoch"]), []).append(row["total"])
        # fsum: the mean must not depend on the order batches were visited
        return [math.fsum(v) / len(v) for _, v in sorted(by_epoch.items())]


def _frozen(d_in: int, d: int, seed: int) -> EncoderParams:
    if d_in == d:
        p = init_encoder("linear", d, d, identity=True)
    else:
        p = init_encoder("linear", d_in, d, seed=np.random.default_rng([seed, _INIT_STREAM, 1]))
    p.trainable = False
    return p


def initial_state(data: TrainingData, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng([config.seed, _INIT_STREAM, 0])
    aerial = init_encoder(config.encoder, data.aerial.shape[1], config.dim, config.hidden, seed=rng)
    return TrainState(
        aerial=aerial,
        ground=_frozen(data.ground.shape[1], config.dim, config.seed),
        text=_frozen(data.texts.shape[1], config.dim, config.seed + 1),
    )


def batch_losses(
    params: EncoderParams,
    aerial_x: np.ndarray,
    ground_emb: np.ndarray,
    labels: np.ndarray,
    text_emb: np.ndarray,
    text_labels: np.ndarray,
    loss: LossConfig,
) -> tuple[dict[str, float], float, dict[str, np.ndarray]]:
    """Loss components, weighted total and aerial-encoder gradients for one batch."""
    emb = encode(params, aerial_x)
    grad_emb = np.zeros_like(emb)
    comps = {"L_AG": 0.0, "L_AT": 0.0, "L_cls": 0.0, "L_box": 0.0}
    if loss.lambda_ag:
        comps["L_AG"], g = cross_view_loss(emb, ground_emb, loss.rho, loss.normalize, loss.symmetric)
        grad_emb += loss.lambda_ag * g
    if loss.lambda_at:
        present = np.isin(text_labels, labels)
        cand, cand_labels = text_emb[present], text_labels[present]
        mask = cand_labels[None, :] == labels[:, None]
        comps["L_AT"], g = mil_nce_loss(emb, cand, mask, loss.sigma, loss.normalize)
        grad_emb += loss.lambda_at * g
    if loss.lambda_cls:
        protos = class_prototypes(text_emb, text_labels, int(text_labels.max()) + 1, loss.normalize)
        comps["L_cls"], g = classification_loss(emb, protos, labels, loss.cls_temperature, loss.normalize)
        grad_emb += loss.lambda_cls * g
    total = loss.lambda_ag * comps["L_AG"] + loss.lambda_at * comps["L_AT"] + loss.lambda_cls * comps["L_cls"]
    return comps, total, encode_backward(params, aerial_x, grad_emb)


def train(
    data: TrainingData,
    config: TrainConfig,
    state: TrainState | None = None,
) -> TrainResult:
    """Run epochs ``state.epoch + 1 .. config.epochs``.

    The data are split into batches once per run (generator keyed on
    ``(seed, 0)``); epoch ``e`` visits those batches in an order drawn from a
    generator keyed on ``(seed, e)``. Batch composition therefore never
    changes, so at ``lr = 0`` every epoch reports the same mean loss, and
    resuming from a checkpoint reproduces an uninterrupted run exactly.
    Only the aerial encoder is updated. The box term is reported as 0:
    the toy encoders have no box head.
    """
    if len(data) == 0:
        raise ValueError("the aligned dataset is empty")
    state = initial_state(data, config) if state is None else state
    ground_emb = encode(state.ground, data.ground)
    text_emb = encode(state.text, data.texts)
    params, opt = state.aerial, state.optimizer
    trace: list[dict[str, float]] = []
    n = len(data)
    shuffled = np.random.default_rng([config.seed, _TRAIN_STREAM, 0]).permutation(n)
    batches = [shuffled[s : s + config.batch_size] for s in range(0, n, config.batch_size)]
    for epoch in range(state.epoch + 1, config.epochs + 1):
        for b in np.random.default_rng([config.seed, _TRAIN_STREAM, epoch]).permutation(len(batches)):
            idx = batches[b]
            comps, total, grads = batch_losses(
                params, data.aerial[idx], ground_emb[idx], data.labels[idx], text_emb, data.text_labels, config.loss
            )
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss {total} at epoch {epoch}, batch {b} "
                    f"(pairs {data.pair_ids[idx[0]]} .. {data.pair_ids[idx[-1]]})"
                )
            new_arrays, opt = adam_step(params.arrays, grads, opt, config.lr, config.beta1, config.beta2, config.eps)
            params = EncoderParams(params.kind, new_arrays, params.trainable)
            trace.append({"step": opt.step, "epoch": epoch, **comps, "total": total})
        logger.info("epoch %d mean loss %.6f", epoch, math.fsum(r["total"] for r in trace if r["epoch"] == epoch) / len(batches))
    final = TrainState(params, state.ground, state.text, opt, max(state.epoch, config.epochs))
    return TrainResult(final, trace)


def write_trace(trace: Sequence[Mapping[str, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([int(row["step"]), int(row["epoch"])] + [repr(float(row[c])) for c in TRACE_COLUMNS[2:]])


def read_trace(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"step": int(r["step"]), "epoch": int(r["epoch"]), **{c: float(r[c]) for c in TRACE_COLUMNS[2:]}}
        for r in rows
    ]


def _enc_json(p: EncoderParams) -> dict:
    return {
        "kind": p.kind,
        "trainable": p.trainable,
        "shapes": {k: list(v.shape) for k, v in sorted(p.arrays.items())},
        "arrays": {k: v.tolist() for k, v in sorted(p.arrays.items())},
    }


def _enc_from_json(obj: Mapping) -> EncoderParams:
    arrays = {k: np.asarray(v, dtype=np.float64).reshape(obj["shapes"][k]) for k, v in obj["arrays"].items()}
    return EncoderParams(obj["kind"], arrays, bool(obj["trainable"]))


def save_checkpoint(state: TrainState, config: TrainConfig, path: str | Path) -> None:
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "seed": config.seed,
        "config_hash": config.digest(),
        "config": asdict(config),
        "epoch": state.epoch,
        "encoder": _enc_json(state.aerial),
        "ground_encoder": _enc_json(state.ground),
        "text_encoder": _enc_json(state.text),
        "optimizer": {
            "step": state.optimizer.step,
            "m": {k: v.tolist() for k, v in sorted(state.optimizer.m.items())},
            "v": {k: v.tolist() for k, v in sorted(state.optimizer.v.items())},
        },
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[TrainState, dict]:
    """Returns the training state and the stored config dictionary."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.lineno, f"invalid checkpoint JSON: {exc.msg}") from None
    if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(path, 1, "not a version-1 checkpoint")
    aerial = _enc_from_json(obj["encoder"])
    opt = obj["optimizer"]
    shapes = {k: v.shape for k, v in aerial.arrays.items()}
    state = TrainState(
        aerial=aerial,
        ground=_enc_from_json(obj["ground_encoder"]),
        text=_enc_from_json(obj["text_encoder"]),
        optimizer=AdamState(
            int(opt["step"]),
            {k: np.asarray(v, dtype=np.float64).reshape(shapes[k]) for k, v in opt["m"].items()},
            {k: np.asarray(v, dtype=np.float64).reshape(shapes[k]) for k, v in opt["v"].items()},
        ),
        epoch=int(obj["epoch"]),
    )
    return state, obj["config"]
