"""Balanced genuine/impostor pair sampling.

A pair couples a visible-side sample with a polarimetric-side sample.
Label 0 marks genuine pairs (same identity), 1 impostor pairs. Batches
carry equal counts of both, the balancing used during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PairBatch:
    vis_images: np.ndarray       # (B, 1, H, W) visible-side inputs (and their targets)
    pol_images: np.ndarray       # (B, 3, H, W) polarimetric-side inputs
    pol_targets: np.ndarray      # (B, 1, H, W) ground-truth visible of the polar-side sample
    labels: np.ndarray           # (B,) 0 genuine / 1 impostor
    vis_attrs: np.ndarray        # (B, T)
    pol_attrs: np.ndarray        # (B, T)
    vis_identities: np.ndarray   # (B,)
    pol_identities: np.ndarray   # (B,)

    def __len__(self) -> int:
        return self.labels.shape[0]


def sample_balanced_pairs(split: list, batch_size: int, rng: np.random.Generator) -> PairBatch:
    """Draw batch_size/2 genuine and batch_size/2 impostor pairs from `split`.

    Identities are drawn uniformly; impostor partners are uniform over the
    other identities. Genuine pairs occupy the first half of the batch.
    """
    if batch_size % 2:
        raise ValueError(f"batch_size must be even, got {batch_size}")
    if not split:
        raise ValueError("cannot sample pairs from an empty split")
    by_identity: dict[int, list] = {}
    for s in split:
        by_identity.setdefault(s.identity, []).append(s)
    identities = sorted(by_identity)
    if len(identities) < 2:
        raise ValueError("pair sampling needs at least 2 identities in the split")

    def pick(identity: int):
        group = by_identity[identity]
        return group[rng.integers(len(group))]

    vis_side, pol_side, labels = [], [], []
    for _ in range(batch_size // 2):
        ident = identities[rng.integers(len(identities))]
        vis_side.append(pick(ident))
        pol_side.append(pick(ident))
        labels.append(0)
    for _ in range(batch_size // 2):
        vis_ident = identities[rng.integers(len(identities))]
        others = [i for i in identities if i != vis_ident]
        pol_ident = others[rng.integers(len(others))]
        vis_side.append(pick(vis_ident))
        pol_side.append(pick(pol_ident))
        labels.append(1)

    return PairBatch(
        vis_images=np.stack([s.visible for s in vis_side]),
        pol_images=np.stack([s.polar for s in pol_side]),
        pol_targets=np.stack([s.visible for s in pol_side]),
        labels=np.asarray(labels, dtype=np.int64),
        vis_attrs=np.stack([s.attributes for s in vis_side]).astype(np.float32),
        pol_attrs=np.stack([s.attributes for s in pol_side]).astype(np.float32),
        vis_identities=np.asarray([s.identity for s in vis_side], dtype=np.int64),
        pol_identities=np.asarray([s.identity for s in pol_side], dtype=np.int64),
    )
