"""Toy encoders standing in for the vision/text backbones."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("linear", "mlp")


@dataclass
class EncoderParams:
    """Weights of a linear or one-hidden-layer tanh MLP encoder.

    ``linear`` holds ``W`` (d, d_in) and ``b`` (d,); ``mlp`` holds ``W1``
    (hidden, d_in), ``b1``, ``W2`` (d, hidden) and ``b2``.
    """

    kind: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: bool = True

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {KINDS}")
        need = ("W", "b") if self.kind == "linear" else ("W1", "b1", "W2", "b2")
        missing = [k for k in need if k not in self.arrays]
        if missing:
            raise ValueError(f"{self.kind} encoder missing arrays {missing}")
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in self.arrays.items()}
        for k, v in self.arrays.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"encoder array {k} has non-finite entries")
        if self.kind == "linear":
            W, b = self.arrays["W"], self.arrays["b"]
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"inconsistent linear shapes W{W.shape} b{b.shape}")
        else:
            W1, b1, W2, b2 = (self.arrays[k] for k in need)
            if (
                W1.ndim != 2
                or W2.ndim != 2
                or b1.shape != (W1.shape[0],)
                or W2.shape[1] != W1.shape[0]
                or b2.shape != (W2.shape[0],)
            ):
                raise ValueError("inconsistent MLP shapes")

    @property
    def d_in(self) -> int:
        return self.arrays["W" if self.kind == "linear" else "W1"].shape[1]

    @property
    def d_out(self) -> int:
        return self.arrays["W" if self.kind == "linear" else "W2"].shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.kind, {k: v.copy() for k, v in self.arrays.items()}, self.trainable)


def init_encoder(
    kind: str,
    d_in: int,
    d: int,
    hidden: int | None = None,
    seed: int | np.random.Generator = 0,
    identity: bool = False,
) -> EncoderParams:
    """Seeded uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.

    ``identity=True`` gives ``W = I`` and zero bias (linear, ``d_in == d`` only).
    """
    if identity:
        if kind != "linear" or d_in != d:
            raise ValueError("identity initialisation needs a square linear encoder")
        return EncoderParams("linear", {"W": np.eye(d), "b": np.zeros(d)})
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if kind == "linear":
        lim = 1.0 / np.sqrt(d_in)
        return EncoderParams(
            "linear", {"W": rng.uniform(-lim, lim, (d, d_in)), "b": rng.uniform(-lim, lim, d)}
        )
    if kind == "mlp":
        hidden = hidden or d
        l1, l2 = 1.0 / np.sqrt(d_in), 1.0 / np.sqrt(hidden)
        return EncoderParams(
            "mlp",
            {
                "W1": rng.uniform(-l1, l1, (hidden, d_in)),
                "b1": rng.uniform(-l1, l1, hidden),
                "W2": rng.uniform(-l2, l2, (d, hidden)),
                "b2": rng.uniform(-l2, l2, d),
            },
        )
    raise ValueError(f"unknown encoder kind {kind!r}")


def encode(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Map a feature vector (or a batch of rows) into the embedding space."""
    return _forward(params, x)[0]


def _forward(params: EncoderParams, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_in:
        raise ValueError(f"input dimension {x.shape[-1]} does not match encoder d_in {params.d_in}")
    a = params.arrays
    if params.kind == "linear":
        return x @ a["W"].T + a["b"], None
    hidden = np.tanh(x @ a["W1"].T + a["b1"])
    return hidden @ a["W2"].T + a["b2"], hidden


def encode_backward(params: EncoderParams, x: np.ndarray, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/d(output) for a batch ``x`` of shape (n, d_in)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    grad_out = np.atleast_2d(grad_out)
    a = params.arrays
    if params.kind == "linear":
        return {"W": grad_out.T @ x, "b": grad_out.sum(axis=0)}
    _, hidden = _forward(params, x)
    d_hidden = (grad_out @ a["W2"]) * (1.0 - hidden**2)
    return {
        "W1": d_hidden.T @ x,
        "b1": d_hidden.sum(axis=0),
        "W2": grad_out.T @ hidden,
        "b2": grad_out.sum(axis=0),
    }


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale to unit Euclidean norm (row-wise for 2-D input)."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalise a zero vector")
    return v / norm


def normalize_backward(v: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull dL/d(v/|v|) back to dL/dv."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norm
    return (grad_unit - u * np.sum(u * grad_unit, axis=-1, keepdims=True)) / norm
