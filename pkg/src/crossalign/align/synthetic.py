"""Synthetic cross-view world with a known ground truth.

Every object instance has a latent ``z`` in R^dim made of its class latent
plus an instance-specific offset. The aerial view sees ``D @ z + noise`` for a
fixed random distortion ``D``. Correspondences are category-level by default:
the ground side of a pair is a *different* instance of the same class, as
when an aerial box is paired with whatever ground image shows that category.
Text variants are the class latent shifted by a per-class offset (the
text-image modality gap) plus per-variant noise, so text is a coarser
supervisor than ground imagery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossalign.corrgen import CorrespondenceRecord
from crossalign.geometry import Box2D
from crossalign.vocab import TextBag

_FRAME = (64.0, 64.0)


@dataclass
class SyntheticSplit:
    aerial: np.ndarray
    ground: np.ndarray
    labels: np.ndarray


class SyntheticWorld:
    def __init__(
        self,
        n_classes: int = 8,
        dim: int = 16,
        noise: float = 0.1,
        instance_spread: float = 0.6,
        text_noise: float = 1.0,
        text_offset: float = 1.0,
        variants_per_class: int = 6,
        pairing: str = "category",
        seed: int = 0,
    ) -> None:
        if pairing not in ("category", "instance"):
            raise ValueError(f"pairing must be 'category' or 'instance', got {pairing!r}")
        self.n_classes, self.dim, self.noise = n_classes, dim, noise
        self.instance_spread, self.text_noise, self.text_offset = instance_spread, text_noise, text_offset
        self.variants_per_class, self.pairing = variants_per_class, pairing
        self.seed = seed
        rng = np.random.default_rng([seed, 0])
        lat = rng.normal(size=(n_classes, dim))
        self.class_latents = lat / np.linalg.norm(lat, axis=1, keepdims=True)
        q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
        q = q * np.sign(np.diag(r))
        self.distortion = q * rng.uniform(0.5, 1.5, size=dim)
        shift = text_offset * rng.normal(size=(n_classes, 1, dim)) / np.sqrt(dim)
        jitter = text_noise * rng.normal(size=(n_classes, variants_per_class, dim)) / np.sqrt(dim)
        self.text_latents = self.class_latents[:, None, :] + shift + jitter

    def sample(self, n: int, stream: int) -> SyntheticSplit:
        """``n`` pairs with balanced labels from an independent random stream."""
        rng = np.random.default_rng([self.seed, 1, stream])
        labels = np.arange(n) % self.n_classes
        z = self.class_latents[labels] + self.instance_spread * rng.normal(size=(n, self.dim)) / np.sqrt(self.dim)
        aerial = z @ self.distortion.T + self.noise * rng.normal(size=(n, self.dim))
        if self.pairing == "instance":
            ground = z
        else:
            ground = self.class_latents[labels] + self.instance_spread * rng.normal(size=(n, self.dim)) / np.sqrt(self.dim)
        return SyntheticSplit(aerial=aerial, ground=ground, labels=labels)

    def ground_prototypes(self) -> np.ndarray:
        """Ground-view class centres: the retrieval gallery for aerial queries."""
        return self.class_latents.copy()

    def bags(self) -> list[TextBag]:
        return [
            TextBag(c, f"class {c}", tuple([f"class {c}"] + [f"class {c} variant {k}" for k in range(1, self.variants_per_class)]))
            for c in range(self.n_classes)
        ]

    def dataset(self, n: int, stream: int = 0) -> tuple[list[CorrespondenceRecord], list[TextBag], "SyntheticProvider"]:
        """Correspondence records, text bags and a provider serving their features."""
        split = self.sample(n, stream)
        box = Box2D(8.0, 8.0, 24.0, 24.0)
        records = [
            CorrespondenceRecord(
                pair_id=f"synthetic-s{stream:02d}-{i:06d}",
                category_id=int(split.labels[i]),
                aerial_image=f"aerial-{stream:02d}-{i:06d}",
                aerial_size=_FRAME,
                aerial_box=box,
                ground_image=f"ground-{stream:02d}-{i:06d}",
                ground_size=_FRAME,
                ground_box=box,
                provenance="direct",
            )
            for i in range(n)
        ]
        return records, self.bags(), SyntheticProvider(self, records, split)


class SyntheticProvider:
    def __init__(self, world: SyntheticWorld, records: list[CorrespondenceRecord], split: SyntheticSplit) -> None:
        self.world = world
        self._row = {r.pair_id: i for i, r in enumerate(records)}
        self.split = split

    def aerial_features(self, record: CorrespondenceRecord) -> np.ndarray:
        return self.split.aerial[self._row[record.pair_id]]

    def ground_features(self, record: CorrespondenceRecord) -> np.ndarray:
        return self.split.ground[self._row[record.pair_id]]

    def text_features(self, bag: TextBag, variant: str) -> np.ndarray:
        k = list(bag.variants).index(variant)
        return self.world.text_latents[bag.category_id, k]
