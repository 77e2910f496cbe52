"""Attribute-predictor pretraining, the coupled training loop, checkpoints.

One step = one discriminator update per branch on (real | condition) vs
(detached fake | condition), then one joint generator update minimizing
the weighted total of whichever loss terms the ablation preset activates.
Both branches update on the same balanced batch every step, since the
coupling term ties them into one objective.

Checkpoints capture parameters, optimizer moments, RNG stream states and
the config snapshot, so save -> load -> resume replays the exact loss
trace (fixed thread count).
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from polvis import rng as rng_mod
from polvis.autograd import Adam, NumericsError, Tensor
from polvis.checkpoint import load_tensor_table, save_tensor_table
from polvis.config import DataConfig, ModelConfig, TrainConfig, to_dict
from polvis.data.dog import preprocess_dataset
from polvis.data.pairs import PairBatch, sample_balanced_pairs
from polvis.data.synth import Dataset
from polvis.losses import (
    LossWeights,
    TERMS,
    attribute_loss,
    coupling_loss,
    discriminator_loss,
    generator_adversarial_loss,
    perceptual_attribute_loss,
    perceptual_loss,
    reconstruction_loss,
    total_loss,
)
from polvis.networks import (
    AttributePredictor,
    DiscriminatorNet,
    FeatureNet,
    build_coupled_generators,
)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class PretrainReport:
    epoch_losses: list
    holdout_accuracy: np.ndarray  # (T,) per-attribute, on held-out identities

    @property
    def mean_accuracy(self) -> float:
        return float(self.holdout_accuracy.mean())


@dataclass
class TrainingState:
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    g_vis: object
    g_pol: object
    d_vis: DiscriminatorNet
    d_pol: DiscriminatorNet
    feature_net: FeatureNet
    predictor: AttributePredictor
    opt_g_vis: Adam
    opt_g_pol: Adam
    opt_d_vis: Adam
    opt_d_pol: Adam
    dropout_rng: np.random.Generator
    sampler_rng: np.random.Generator
    step: int = 0


@dataclass
class TrainResult:
    checkpoint_path: Path
    losses_path: Path
    history: list
    pretrain: Optional[PretrainReport]
    state: TrainingState


def build_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainingState:
    """Construct all networks and optimizers for a fresh run of `train_cfg.seed`."""
    init = rng_mod.stream(train_cfg.seed, "init")
    g_vis, g_pol = build_coupled_generators(model_cfg, init)
    d_vis = DiscriminatorNet(1, 1, model_cfg, init)
    d_pol = DiscriminatorNet(3, 1, model_cfg, init)
    feature_net = FeatureNet(1, model_cfg, init)
    predictor = AttributePredictor(1, model_cfg, rng_mod.stream(train_cfg.seed, "pretrain"))

    def adam(net):
        return Adam(net.parameters(), train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)

    return TrainingState(
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        g_vis=g_vis,
        g_pol=g_pol,
        d_vis=d_vis,
        d_pol=d_pol,
        feature_net=feature_net,
        predictor=predictor,
        opt_g_vis=adam(g_vis),
        opt_g_pol=adam(g_pol),
        opt_d_vis=adam(d_vis),
        opt_d_pol=adam(d_pol),
        dropout_rng=rng_mod.stream(train_cfg.seed, "dropout"),
        sampler_rng=rng_mod.stream(train_cfg.seed, "sampler"),
    )


def fit_predictor(predictor: AttributePredictor, images: np.ndarray, labels: np.ndarray,
                  epochs: int, lr: float, batch: int, rng: np.random.Generator,
                  shift_augment: int = 2) -> list:
    """Minibatch BCE fitting of an attribute predictor; returns epoch mean losses.

    Uses standard Adam momenta (0.9 / 0.999). Position jitter of up to
    `shift_augment` px stops the flatten head from memorizing absolute
    pixel locations on small datasets.
    """
    opt = Adam(predictor.parameters(), lr=lr, beta1=0.9, beta2=0.999)
    n = len(images)
    batch = min(batch, n)
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            imgs = images[idx]
            if shift_augment:
                shifts = rng.integers(-shift_augment, shift_augment + 1, size=(len(idx), 2))
                imgs = np.stack([np.roll(im, tuple(sh), axis=(1, 2)) for im, sh in zip(imgs, shifts)])
            loss = attribute_loss(predictor.logits(Tensor(imgs)), labels[idx])
            loss.backward()
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
    return epoch_losses


def pretrain_attribute_predictor(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                                 predictor: AttributePredictor = None) -> tuple[AttributePredictor, PretrainReport]:
    """Train the attribute predictor on train-split visible images, then freeze it.

    Runs separately from (and before) the coupled loop, on its own RNG
    stream. Held-out accuracy is measured on the disjoint test identities
    at threshold 0.5.
    """
    train = dataset.train_samples()
    test = dataset.test_samples()
    if not train:
        raise ValueError("pretraining needs a nonempty train split")
    rng = rng_mod.stream(train_cfg.seed, "pretrain")
    if predictor is None:
        predictor = AttributePredictor(1, model_cfg, rng)
    predictor.unfreeze()
    images = np.stack([s.visible for s in train])
    labels = np.stack([s.attributes for s in train]).astype(np.float32)
    epoch_losses = fit_predictor(predictor, images, labels, epochs=train_cfg.pretrain_epochs,
                                 lr=train_cfg.pretrain_lr, batch=train_cfg.pretrain_batch, rng=rng)
    predictor.freeze()
    eval_samples = test if test else train
    probs = predictor(Tensor(np.stack([s.visible for s in eval_samples]))).data
    truth = np.stack([s.attributes for s in eval_samples])
    accuracy = ((probs > 0.5).astype(np.uint8) == truth).mean(axis=0)
    return predictor, PretrainReport(epoch_losses=epoch_losses, holdout_accuracy=accuracy)


def _named_term(name: str, fn):
    try:
        return fn()
    except NumericsError as exc:
        raise TrainingError(f"loss term {name!r} produced a non-finite value at training time") from exc


def _clip_gradients(params, max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale


def train_step(state: TrainingState, batch: PairBatch) -> dict:
    """One optimization step; returns every individual loss value."""
    cfg = state.train_cfg
    active = cfg.active_terms()
    weights = cfg.weights
    record: dict[str, float] = {}

    vis_cond = Tensor(batch.vis_images)
    vis_real = Tensor(batch.vis_images)
    pol_cond = Tensor(batch.pol_images)
    pol_real = Tensor(batch.pol_targets)

    synth_vis, z_vis, logits_vis = state.g_vis.forward(vis_cond, mode="train", rng=state.dropout_rng)
    synth_pol, z_pol, logits_pol = state.g_pol.forward(pol_cond, mode="train", rng=state.dropout_rng)

    if "gan" in active:
        for tag, disc, opt, cond, real, fake in (
            ("d_vis", state.d_vis, state.opt_d_vis, vis_cond, vis_real, synth_vis),
            ("d_pol", state.d_pol, state.opt_d_pol, pol_cond, pol_real, synth_pol),
        ):
            d_loss = _named_term(tag, lambda: discriminator_loss(disc(cond, real), disc(cond, fake.detach())))
            d_loss.backward()
            _clip_gradients(disc.parameters(), cfg.grad_clip)
            opt.step()
            opt.zero_grad()
            record[tag] = d_loss.item()

    terms: dict[str, Tensor] = {}
    if "coupling" in active:
        terms["coupling"] = _named_term(
            "coupling", lambda: coupling_loss(z_vis, z_pol, batch.labels, weights.margin)
        )
    if "recon" in active:
        terms["recon"] = _named_term(
            "recon",
            lambda: reconstruction_loss(synth_vis, vis_real, cfg.recon_reduction)
            + reconstruction_loss(synth_pol, pol_real, cfg.recon_reduction),
        )
    if "gan" in active:
        terms["gan"] = _named_term(
            "gan",
            lambda: generator_adversarial_loss(state.d_vis(vis_cond, synth_vis))
            + generator_adversarial_loss(state.d_pol(pol_cond, synth_pol)),
        )
    if "attr" in active:
        terms["attr"] = _named_term(
            "attr",
            lambda: attribute_loss(logits_vis, batch.vis_attrs) + attribute_loss(logits_pol, batch.pol_attrs),
        )
    if "perc" in active:
        terms["perc"] = _named_term("perc", lambda: perceptual_loss(synth_pol, pol_real, state.feature_net))
    if "attr_perc" in active:
        terms["attr_perc"] = _named_term(
            "attr_perc",
            lambda: perceptual_attribute_loss(synth_vis, synth_pol, vis_real, pol_real, state.predictor),
        )

    total = _named_term("total", lambda: total_loss(terms, weights))
    total.backward()
    for net, opt in ((state.g_vis, state.opt_g_vis), (state.g_pol, state.opt_g_pol)):
        _clip_gradients(net.parameters(), cfg.grad_clip)
        opt.step()
        opt.zero_grad()
    # adversarial terms push gradients into the discriminators too; discard them
    state.opt_d_vis.zero_grad()
    state.opt_d_pol.zero_grad()

    for name, term in terms.items():
        record[name] = term.item()
    record["total"] = total.item()
    state.step += 1
    record["step"] = state.step
    return record


def _loss_columns(cfg: TrainConfig) -> list:
    cols = ["step"] + [t for t in TERMS if t in cfg.active_terms()] + ["total"]
    if "gan" in cfg.active_terms():
        cols += ["d_vis", "d_pol"]
    return cols


def write_loss_history(path: Path, history: list, cfg: TrainConfig) -> None:
    cols = _loss_columns(cfg)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cols)
        for record in history:
            writer.writerow([record["step"]] + [repr(record[c]) for c in cols[1:]])


def save_checkpoint(path: str | Path, state: TrainingState) -> None:
    arrays: dict[str, np.ndarray] = {}
    for prefix, net in (("gvis", state.g_vis), ("gpol", state.g_pol), ("dvis", state.d_vis),
                        ("dpol", state.d_pol), ("feat", state.feature_net), ("attr", state.predictor)):
        for name, p in net.named_parameters():
            arrays[f"{prefix}/{name}"] = p.data
    for prefix, opt in (("opt_gvis", state.opt_g_vis), ("opt_gpol", state.opt_g_pol),
                        ("opt_dvis", state.opt_d_vis), ("opt_dpol", state.opt_d_pol)):
        for name, arr in opt.state_arrays().items():
            arrays[f"{prefix}/{name}"] = arr
    meta = {
        "kind": "training",
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "model": to_dict(state.model_cfg),
        "train": to_dict(state.train_cfg),
        "rng": {
            "dropout": rng_mod.generator_state(state.dropout_rng),
            "sampler": rng_mod.generator_state(state.sampler_rng),
        },
        "predictor_frozen": state.predictor.frozen,
    }
    save_tensor_table(path, arrays, meta)


def load_checkpoint(path: str | Path) -> TrainingState:
    """Rebuild a full training state (networks, optimizers, RNG) from disk."""
    arrays, meta = load_tensor_table(path)
    if meta.get("kind") != "training":
        raise TrainingError(f"{path}: not a training checkpoint (kind={meta.get('kind')!r})")
    model_cfg = ModelConfig(**meta["model"])
    train_meta = dict(meta["train"])
    train_meta["weights"] = LossWeights(**train_meta["weights"])
    train_cfg = TrainConfig(**train_meta)
    state = build_state(model_cfg, train_cfg)
    state.step = int(meta["step"])

    def section(prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}

    for prefix, net in (("gvis", state.g_vis), ("gpol", state.g_pol), ("dvis", state.d_vis),
                        ("dpol", state.d_pol), ("feat", state.feature_net), ("attr", state.predictor)):
        net.load_arrays(section(prefix))
    for prefix, opt in (("opt_gvis", state.opt_g_vis), ("opt_gpol", state.opt_g_pol),
                        ("opt_dvis", state.opt_d_vis), ("opt_dpol", state.opt_d_pol)):
        opt.load_state_arrays(section(prefix))
    state.dropout_rng = rng_mod.restore_generator(meta["rng"]["dropout"])
    state.sampler_rng = rng_mod.restore_generator(meta["rng"]["sampler"])
    if meta.get("predictor_frozen", False):
        state.predictor.freeze()
    return state


def save_predictor(path: str | Path, predictor: AttributePredictor, model_cfg: ModelConfig,
                   report: PretrainReport, seed: int) -> None:
    arrays = {f"attr/{name}": p.data for name, p in predictor.named_parameters()}
    meta = {
        "kind": "predictor",
        "version": CHECKPOINT_VERSION,
        "model": to_dict(model_cfg),
        "seed": seed,
        "holdout_accuracy": [float(a) for a in report.holdout_accuracy],
        "epoch_losses": [float(x) for x in report.epoch_losses],
    }
    save_tensor_table(path, arrays, meta)


def load_predictor(path: str | Path) -> tuple[AttributePredictor, ModelConfig, dict]:
    arrays, meta = load_tensor_table(path)
    if meta.get("kind") != "predictor":
        raise TrainingError(f"{path}: not an attribute-predictor checkpoint (kind={meta.get('kind')!r})")
    model_cfg = ModelConfig(**meta["model"])
    predictor = AttributePredictor(1, model_cfg, np.random.Generator(np.random.PCG64(0)))
    predictor.load_arrays({k.split("/", 1)[1]: v for k, v in arrays.items()})
    predictor.freeze()
    return predictor, model_cfg, meta


def train(dataset: Dataset, model_cfg: ModelConfig, data_cfg: DataConfig, train_cfg: TrainConfig,
          out_dir: str | Path, predictor: AttributePredictor = None,
          resume_from: str | Path = None) -> TrainResult:
    """Full training run: optional predictor pretraining, then the step loop.

    Writes `losses.csv`, periodic checkpoints when `checkpoint_every` > 0,
    and `final.agck` into `out_dir`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prepared = preprocess_dataset(dataset, data_cfg)
    train_split = prepared.train_samples()
    identities = {s.identity for s in train_split}
    if len(identities) < 2:
        raise ValueError(f"training needs at least 2 train identities, got {len(identities)}")

    pretrain_report = None
    if resume_from is not None:
        state = load_checkpoint(resume_from)
    else:
        state = build_state(model_cfg, train_cfg)
        needs_predictor = "attr_perc" in train_cfg.active_terms() or train_cfg.feature_net_from_predictor
        if predictor is not None:
            state.predictor = predictor
            state.predictor.freeze()
        elif needs_predictor:
            state.predictor, pretrain_report = pretrain_attribute_predictor(
                prepared, model_cfg, train_cfg, predictor=state.predictor
            )
        else:
            state.predictor.freeze()
        if train_cfg.feature_net_from_predictor:
            state.feature_net.copy_trunk_from(state.predictor)

    history: list[dict] = []
    cfg = state.train_cfg
    while state.step < cfg.steps:
        batch = sample_balanced_pairs(train_split, cfg.batch_size, state.sampler_rng)
        record = train_step(state, batch)
        history.append(record)
        if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 and state.step < cfg.steps:
            save_checkpoint(out_dir / f"step{state.step:06d}.agck", state)

    final_path = out_dir / "final.agck"
    save_checkpoint(final_path, state)
    losses_path = out_dir / "losses.csv"
    write_loss_history(losses_path, history, cfg)
    return TrainResult(checkpoint_path=final_path, losses_path=losses_path, history=history,
                       pretrain=pretrain_report, state=state)
