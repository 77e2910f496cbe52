"""Loss terms for the coupled translation networks.

Six generator-side terms feed the weighted total:

    total = coupling + w_recon * recon + w_gan * gan
            + w_attr * attr + w_perc * perc + w_attr_perc * attr_perc

plus the discriminator's own objective. Conventions baked in here:

* The contrastive hinge acts on the *squared* embedding distance:
  genuine pairs pay d^2/2, impostor pairs pay max(0, m - d^2)/2.
* Image reconstruction terms are per-element means (not raw sums), so the
  weights are image-size invariant; set `reduction="sum"` for the literal
  summed form.
* GAN terms are evaluated on logits in the softplus form, which equals the
  -log sigmoid expressions exactly but cannot overflow, and the generator
  term is non-saturating (-log D(fake) rather than log(1 - D(fake))).
* Attribute cross-entropy is one independent sigmoid/BCE per attribute,
  summed over attributes and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from polvis.autograd import ShapeError, Tensor

TERMS = ("coupling", "recon", "gan", "attr", "perc", "attr_perc")


@dataclass
class LossWeights:
    recon: float = 1.0       # ground-truth reconstruction terms
    gan: float = 1.0         # adversarial terms, generator side
    attr: float = 1.0        # bottleneck attribute heads
    perc: float = 0.5        # frozen-feature perceptual term (pol branch only)
    attr_perc: float = 0.5   # frozen attribute-predictor term
    margin: float = 1.0      # contrastive margin on squared distance

    def __post_init__(self):
        for name in ("recon", "gan", "attr", "perc", "attr_perc", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name!r} must be nonnegative")


def contrastive_pair_loss(z1: Tensor, z2: Tensor, impostor: int, margin: float) -> Tensor:
    """One pair: genuine (impostor=0) pays d^2/2, impostor max(0, m - d^2)/2."""
    if z1.shape != z2.shape:
        raise ShapeError(f"embedding shapes differ: {z1.shape} vs {z2.shape}")
    if margin <= 0:
        raise ValueError(f"contrastive margin must be positive, got {margin}")
    if impostor not in (0, 1):
        raise ValueError(f"pair label must be 0 (genuine) or 1 (impostor), got {impostor}")
    diff = z1 - z2
    sq_dist = (diff * diff).sum()
    if impostor:
        return (margin - sq_dist).relu() * 0.5
    return sq_dist * 0.5


def coupling_loss(z1: Tensor, z2: Tensor, labels: np.ndarray, margin: float) -> Tensor:
    """Mean contrastive loss over a batch of embedding pairs.

    z1, z2: (N, d) embeddings from the two branches; labels: (N,) in {0,1}
    with 1 marking impostor pairs. The mean over the sampled batch is the
    minibatch estimator of the all-pairs average.
    """
    if z1.shape != z2.shape:
        raise ShapeError(f"embedding shapes differ: {z1.shape} vs {z2.shape}")
    if z1.ndim != 2:
        raise ShapeError(f"expected (N, d) embeddings, got {z1.shape}")
    n = z1.shape[0]
    if n == 0:
        raise ValueError("coupling_loss over an empty batch")
    labels = np.asarray(labels, dtype=z1.dtype)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if margin <= 0:
        raise ValueError(f"contrastive margin must be positive, got {margin}")
    diff = z1 - z2
    sq_dist = (diff * diff).sum(axis=1)
    genuine = sq_dist * 0.5
    impostor = ((-sq_dist) + margin).relu() * 0.5
    lab = Tensor(labels)
    per_pair = genuine * (1.0 - lab) + impostor * lab
    return per_pair.mean()


def attribute_loss(attr_logits: Tensor, attr_labels: np.ndarray) -> Tensor:
    """Sum over attributes of binary cross-entropy on sigmoid logits, batch-averaged.

    Uses softplus(x) - x*y, the stable identity for -[y log s(x) + (1-y) log(1-s(x))].
    """
    logits = attr_logits if attr_logits.ndim == 2 else attr_logits.reshape(1, -1)
    labels = np.asarray(attr_labels, dtype=logits.dtype)
    if labels.ndim == 1:
        labels = labels.reshape(1, -1)
    if labels.shape != logits.shape:
        raise ShapeError(f"attribute labels shape {labels.shape} does not match logits {logits.shape}")
    bce = logits.softplus() - logits * Tensor(labels)
    return bce.sum(axis=1).mean()


def discriminator_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Patch-mean of -[log s(real) + log(1 - s(fake))], evaluated stably on logits."""
    if real_logits.shape != fake_logits.shape:
        raise ShapeError(f"real/fake logit maps differ: {real_logits.shape} vs {fake_logits.shape}")
    return ((-real_logits).softplus() + fake_logits.softplus()).mean()


def generator_adversarial_loss(fake_logits: Tensor) -> Tensor:
    """Non-saturating generator objective: patch-mean of -log s(fake)."""
    return (-fake_logits).softplus().mean()


def reconstruction_loss(synth: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
    """Squared error between a synthesized image and its ground truth."""
    if synth.shape != target.shape:
        raise ShapeError(f"image shapes differ: {synth.shape} vs {target.shape}")
    diff = synth - target
    sq = diff * diff
    if reduction == "mean":
        return sq.mean()
    if reduction == "sum":
        return sq.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def perceptual_loss(synth: Tensor, target: Tensor, feature_net) -> Tensor:
    """Mean absolute difference between frozen feature maps of synth and target.

    Gradients reach `synth` only: the feature net must be frozen and the
    target enters detached.
    """
    if feature_net is None:
        raise ValueError("perceptual loss needs an initialized feature network")
    if not feature_net.frozen:
        raise ValueError("feature network must be frozen for the perceptual loss")
    if synth.shape != target.shape:
        raise ShapeError(f"image shapes differ: {synth.shape} vs {target.shape}")
    feat_synth = feature_net(synth)
    feat_target = feature_net(target.detach())
    return (feat_synth - feat_target).abs().mean()


def perceptual_attribute_loss(synth_vis: Tensor, synth_pol: Tensor,
                              target_vis: Tensor, target_pol: Tensor, predictor) -> Tensor:
    """Squared distance between predicted attribute probabilities of each
    synthesis and of its own ground-truth image, both branches summed."""
    if predictor is None:
        raise ValueError("perceptual attribute loss needs an initialized attribute predictor")
    if not predictor.frozen:
        raise ValueError("attribute predictor must be frozen for the perceptual attribute loss")

    def branch(synth: Tensor, target: Tensor) -> Tensor:
        diff = predictor(synth) - predictor(target.detach())
        return (diff * diff).sum(axis=1).mean()

    return branch(synth_vis, target_vis) + branch(synth_pol, target_pol)


def total_loss(terms: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """Weighted sum of whichever terms are present (coupling has implicit weight 1)."""
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    scale = {"coupling": 1.0, "recon": weights.recon, "gan": weights.gan,
             "attr": weights.attr, "perc": weights.perc, "attr_perc": weights.attr_perc}
    total = None
    for name in TERMS:
        if name not in terms:
            continue
        piece = terms[name] * scale[name]
        total = piece if total is None else total + piece
    if total is None:
        raise ValueError("total_loss needs at least one term")
    return total
