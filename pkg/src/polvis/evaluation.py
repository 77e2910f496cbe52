"""Testing-phase synthesis, matching, and metrics.

Only the polarimetric-branch generator runs at test time: it synthesizes
a visible image from each probe triple, and identification picks the
gallery identity at minimum Euclidean pixel distance. An identity with
several gallery images scores by its closest image; ranking ties break by
ascending identity label. Verification sweeps a threshold over all
probe-gallery pair distances (same identity = genuine), and attribute
prediction is reported for four scenarios:

    1. predictor A on visible images
    2. A applied to raw polarimetric input (the S0 channel, since A is
       single-channel)
    3. a copy of A fine-tuned on polarimetric S0, then evaluated
    4. the polarimetric generator's own attribute heads

All metric computations are pure functions of their inputs.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from polvis.autograd import Tensor
from polvis.config import DataConfig, ModelConfig, TrainConfig
from polvis.data.dog import preprocess_dataset
from polvis.data.synth import Dataset, PairedSample
from polvis.networks import AttributePredictor, GeneratorNet
from polvis.training import fit_predictor


@dataclass
class MetricReport:
    rank_rates: np.ndarray            # (K,) rank-k identification rates
    cmc: np.ndarray                   # alias of rank_rates, the CMC curve
    roc_points: np.ndarray            # (M, 2) of (fpr, tpr)
    auc: float
    attr_accuracies: dict             # scenario name -> (T,) per-attribute accuracy
    metadata: dict = field(default_factory=dict)


def synthesize_probe(g_pol: GeneratorNet, probe: np.ndarray, seed: int = 0):
    """Run the polarimetric generator on one probe triple (3, H, W).

    Returns (visible (1, H, W), embedding (d,), attribute probabilities (T,)),
    all numpy. Deterministic for a fixed seed.
    """
    if probe.ndim != 3 or probe.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) polarimetric probe, got {probe.shape}")
    synth, z, logits = g_pol.forward(Tensor(probe[None]), mode="eval", seed=seed)
    probs = logits.sigmoid()
    return synth.data[0], z.data[0], probs.data[0]


def match_gallery(synth: np.ndarray, gallery: list) -> list:
    """Rank gallery identities by distance to a synthesized probe.

    `gallery` is a list of (identity, image) with images shaped like
    `synth`. An identity's distance is the minimum over its images; the
    returned list of (identity, distance) is sorted by ascending distance,
    ties broken by ascending identity.
    """
    if not gallery:
        raise ValueError("cannot match against an empty gallery")
    best: dict[int, float] = {}
    for identity, image in gallery:
        if image.shape != synth.shape:
            raise ValueError(f"gallery image shape {image.shape} does not match probe {synth.shape}")
        d = float(np.linalg.norm((image.astype(np.float64) - synth.astype(np.float64)).ravel()))
        if identity not in best or d < best[identity]:
            best[identity] = d
    return sorted(best.items(), key=lambda kv: (kv[1], kv[0]))


def cmc_and_rank(ranked_ids: list, true_ids: list, k_max: int) -> np.ndarray:
    """Rank-k identification rates for k = 1..k_max (the CMC curve).

    `ranked_ids[i]` is probe i's identity list, best first.
    """
    if not ranked_ids:
        raise ValueError("no matches to score")
    if len(ranked_ids) != len(true_ids):
        raise ValueError("ranked list and truth list lengths differ")
    n_identities = len(ranked_ids[0])
    if k_max > n_identities:
        raise ValueError(f"k_max {k_max} exceeds gallery identity count {n_identities}")
    hits = np.zeros(k_max, dtype=np.float64)
    for ranking, truth in zip(ranked_ids, true_ids):
        try:
            rank = ranking.index(truth) + 1
        except ValueError:
            continue  # absent identity never scores a hit
        if rank <= k_max:
            hits[rank - 1] += 1
    return np.cumsum(hits) / len(ranked_ids)


def verification_roc(genuine: np.ndarray, impostor: np.ndarray) -> tuple[np.ndarray, float]:
    """ROC points and AUC from genuine / impostor distance lists.

    Sweeps the threshold over every distinct distance; a pair verifies
    when its distance is <= the threshold. Points start at (0, 0), end at
    (1, 1); AUC is the trapezoid integral over FPR.
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("verification needs nonempty genuine and impostor distance lists")
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    points = [(0.0, 0.0)]
    for t in thresholds:
        tpr = float(np.mean(genuine <= t))
        fpr = float(np.mean(impostor <= t))
        points.append((fpr, tpr))
    pts = np.asarray(points)
    auc = float(np.trapezoid(pts[:, 1], pts[:, 0]))
    return pts, auc


def default_synthesizer(g_pol: GeneratorNet, seed: int) -> Callable[[PairedSample], np.ndarray]:
    return lambda sample: synthesize_probe(g_pol, sample.polar, seed)[0]


def identification_metrics(dataset: Dataset, synth_fn: Callable[[PairedSample], np.ndarray],
                           k_max: Optional[int] = None):
    """Synthesize every test probe, match against the test-visible gallery.

    Returns (cmc, roc_points, auc). Gallery/probes are derived from the
    disjoint test identities: all test visible images form the gallery and
    every test polar triple is a probe.
    """
    test = dataset.test_samples()
    if not test:
        raise ValueError("dataset has no test samples")
    gallery = [(s.identity, s.visible) for s in test]
    n_identities = len({i for i, _ in gallery})
    k = k_max or n_identities
    ranked, truths = [], []
    genuine, impostor = [], []
    for probe in test:
        synth = synth_fn(probe)
        for identity, image in gallery:
            d = float(np.linalg.norm((image.astype(np.float64) - synth.astype(np.float64)).ravel()))
            (genuine if identity == probe.identity else impostor).append(d)
        ranking = match_gallery(synth, gallery)
        ranked.append([identity for identity, _ in ranking])
        truths.append(probe.identity)
    cmc = cmc_and_rank(ranked, truths, k)
    roc_points, auc = verification_roc(np.asarray(genuine), np.asarray(impostor))
    return cmc, roc_points, auc


def _predictor_accuracy(probs: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return ((probs > 0.5).astype(np.uint8) == truth).mean(axis=0)


def attribute_scenarios(g_pol: GeneratorNet, predictor: AttributePredictor, dataset: Dataset,
                        model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int = 0,
                        scenarios=(1, 2, 3, 4)) -> dict:
    """Per-attribute accuracies for the four prediction scenarios on the test split."""
    test = dataset.test_samples()
    if not test:
        raise ValueError("dataset has no test samples")
    truth = np.stack([s.attributes for s in test])
    vis = np.stack([s.visible for s in test])
    pol_s0 = np.stack([s.polar[0:1] for s in test])
    out: dict[str, np.ndarray] = {}

    if 1 in scenarios:
        out["visible_predictor"] = _predictor_accuracy(predictor(Tensor(vis)).data, truth)
    if 2 in scenarios:
        out["polar_predictor"] = _predictor_accuracy(predictor(Tensor(pol_s0)).data, truth)
    if 3 in scenarios:
        tuned = copy.deepcopy(predictor)
        tuned.unfreeze()
        train_split = dataset.train_samples()
        images = np.stack([s.polar[0:1] for s in train_split])
        labels = np.stack([s.attributes for s in train_split]).astype(np.float32)
        rng = np.random.Generator(np.random.PCG64(seed))
        fit_predictor(tuned, images, labels, epochs=train_cfg.pretrain_epochs,
                      lr=train_cfg.pretrain_lr, batch=train_cfg.pretrain_batch, rng=rng)
        tuned.freeze()
        out["polar_finetuned_predictor"] = _predictor_accuracy(tuned(Tensor(pol_s0)).data, truth)
    if 4 in scenarios:
        probs = np.stack([synthesize_probe(g_pol, s.polar, seed)[2] for s in test])
        out["polar_generator_heads"] = _predictor_accuracy(probs, truth)
    return out


def export_embeddings(g_vis: GeneratorNet, g_pol: GeneratorNet, dataset: Dataset,
                      path: str | Path, seed: int = 0) -> int:
    """Write (identity, modality, z...) rows for every test sample, both branches.

    Returns the number of rows written (2x the test sample count).
    """
    test = dataset.test_samples()
    if not test:
        raise ValueError("dataset has no test samples")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = g_vis.embed_dim
    rows = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["identity", "modality"] + [f"z{i}" for i in range(dim)])
        for sample in test:
            _, z_vis, _ = g_vis.forward(Tensor(sample.visible[None]), mode="eval", seed=seed)
            writer.writerow([sample.identity, "vis"] + [repr(float(v)) for v in z_vis.data[0]])
            rows += 1
        for sample in test:
            _, z_pol, _ = g_pol.forward(Tensor(sample.polar[None]), mode="eval", seed=seed)
            writer.writerow([sample.identity, "pol"] + [repr(float(v)) for v in z_pol.data[0]])
            rows += 1
    return rows


def evaluate_checkpoint(state, dataset: Dataset, data_cfg: DataConfig, seed: int = 0,
                        scenarios=(1, 2, 3, 4), with_attributes: bool = True) -> MetricReport:
    """Full metric report for a trained state on a raw (unpreprocessed) dataset."""
    prepared = preprocess_dataset(dataset, data_cfg)
    cmc, roc_points, auc = identification_metrics(prepared, default_synthesizer(state.g_pol, seed))
    attrs = {}
    if with_attributes:
        attrs = attribute_scenarios(state.g_pol, state.predictor, prepared, state.model_cfg,
                                    state.train_cfg, seed=seed, scenarios=scenarios)
    return MetricReport(
        rank_rates=cmc,
        cmc=cmc,
        roc_points=roc_points,
        auc=auc,
        attr_accuracies=attrs,
        metadata={"step": state.step, "seed": seed},
    )


def write_metric_report(report: MetricReport, out_dir: str | Path, attribute_names: list) -> dict:
    """Emit cmc.csv / roc.csv / attrs.csv / summary.txt; names embed step and seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"step{report.metadata.get('step', 0):06d}_seed{report.metadata.get('seed', 0)}"
    paths = {}

    cmc_path = out_dir / f"cmc_{tag}.csv"
    with open(cmc_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "rate"])
        for k, rate in enumerate(report.cmc, start=1):
            writer.writerow([k, repr(float(rate))])
    paths["cmc"] = cmc_path

    roc_path = out_dir / f"roc_{tag}.csv"
    with open(roc_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in report.roc_points:
            writer.writerow([repr(float(fpr)), repr(float(tpr))])
    paths["roc"] = roc_path

    if report.attr_accuracies:
        attrs_path = out_dir / f"attrs_{tag}.csv"
        with open(attrs_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scenario", "attribute", "accuracy"])
            for scenario, accs in report.attr_accuracies.items():
                for name, acc in zip(attribute_names, accs):
                    writer.writerow([scenario, name, repr(float(acc))])
        paths["attrs"] = attrs_path

    summary_path = out_dir / f"summary_{tag}.txt"
    lines = [
        f"rank-1: {report.cmc[0]:.4f}",
        f"auc: {report.auc:.4f}",
    ]
    for scenario, accs in report.attr_accuracies.items():
        lines.append(f"attr mean accuracy [{scenario}]: {float(np.mean(accs)):.4f}")
    summary_path.write_text("\n".join(lines) + "\n")
    paths["summary"] = summary_path
    return paths
