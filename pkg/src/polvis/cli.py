"""Command-line entry point.

Subcommands: gen-data, pretrain-attr, train, eval, predict-attrs,
export-embeddings. Global flags: --seed, --config, --out, --threads.
Precedence: defaults < --config file < explicit flags. Every command
writes a resolved-config snapshot (config_snapshot.json) next to its
outputs, exits 0 on success, and prints a one-line machine-parseable
`error: <kind>: <detail>` on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from polvis import config as config_mod
from polvis.config import DataConfig, ModelConfig, TrainConfig
from polvis.data import (
    ATTRIBUTE_NAMES,
    DatasetFormatError,
    generate_synthetic_dataset,
    load_dataset,
    preprocess_dataset,
    save_dataset,
)
from polvis.evaluation import (
    evaluate_checkpoint,
    export_embeddings,
    synthesize_probe,
    write_metric_report,
)
from polvis.training import (
    TrainingError,
    load_checkpoint,
    load_predictor,
    pretrain_attribute_predictor,
    save_predictor,
    train,
)


class CliError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


def _limit_threads(n):
    if n is None:
        return
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=n)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polvis",
        description="Polarimetric-thermal-to-visible face matching: data, training, evaluation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="root seed for all named RNG streams")
        p.add_argument("--config", type=Path, default=None, help="JSON config file (model/data/train sections)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=None, help="bound for internal BLAS parallelism")

    p = sub.add_parser("gen-data", help="generate and save a synthetic paired-modality dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--identities", type=int, default=20, help="number of identities")
    p.add_argument("--per-id", type=int, default=6, help="samples per identity")
    p.add_argument("--size", type=int, default=64, help="square image size (power of two >= 32)")
    p.add_argument("--degradation", type=float, default=0.0, help="capture-distance degradation knob")
    p.add_argument("--train-fraction", type=float, default=0.7, help="fraction of identities in the train split")
    p.add_argument("--name", default="dataset.agcd", help="output dataset file name")

    p = sub.add_parser("pretrain-attr", help="pretrain the attribute predictor on visible images",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset file from gen-data")
    p.add_argument("--epochs", type=int, default=None, help="override pretraining epochs")
    p.add_argument("--name", default="predictor.agck", help="output checkpoint file name")

    p = sub.add_parser("train", help="run coupled training",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset file from gen-data")
    p.add_argument("--ablation", choices=sorted(config_mod.ABLATION_PRESETS), default=None,
                   help="loss-term preset (default full)")
    p.add_argument("--steps", type=int, default=None, help="override training steps")
    p.add_argument("--batch-size", type=int, default=None, help="override batch size")
    p.add_argument("--lr", type=float, default=None, help="override learning rate")
    p.add_argument("--checkpoint-every", type=int, default=None, help="periodic checkpoint cadence (0 = final only)")
    p.add_argument("--attr-predictor", type=Path, default=None,
                   help="reuse a pretrained predictor checkpoint instead of pretraining")
    p.add_argument("--resume", type=Path, default=None, help="resume from a training checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint: CMC, ROC, attribute scenarios",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="training checkpoint (.agck)")
    p.add_argument("--data", type=Path, required=True, help="dataset file from gen-data")
    p.add_argument("--skip-attrs", action="store_true", help="skip the attribute-prediction scenarios")

    p = sub.add_parser("predict-attrs", help="predict attribute probabilities from polarimetric probes",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="training checkpoint (.agck)")
    p.add_argument("--data", type=Path, required=True, help="dataset file from gen-data")
    p.add_argument("--index", type=int, default=None, help="single test-sample index (default: all)")

    p = sub.add_parser("export-embeddings", help="export test-split embeddings from both branches",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="training checkpoint (.agck)")
    p.add_argument("--data", type=Path, required=True, help="dataset file from gen-data")
    return parser


def _file_cfg(args) -> dict:
    if args.config is None:
        return {}
    if not args.config.exists():
        raise CliError("config-not-found", str(args.config))
    return config_mod.load_config_file(args.config)


def _load_data(path: Path):
    if not path.exists():
        raise CliError("dataset-not-found", str(path))
    return load_dataset(path)


def _snapshot(out_dir: Path, **sections) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.write_snapshot(out_dir / "config_snapshot.json", **sections)


def _cmd_gen_data(args) -> int:
    file_cfg = _file_cfg(args)
    data_cfg = config_mod.resolve(DataConfig, file_cfg, "data", {
        "n_identities": args.identities,
        "samples_per_identity": args.per_id,
        "image_size": args.size,
        "degradation": args.degradation,
        "train_fraction": args.train_fraction,
    })
    ds = generate_synthetic_dataset(
        data_cfg.n_identities, data_cfg.samples_per_identity,
        height=data_cfg.image_size, width=data_cfg.image_size,
        seed=args.seed, degradation=data_cfg.degradation,
        train_fraction=data_cfg.train_fraction,
    )
    out_path = args.out / args.name
    save_dataset(ds, out_path)
    _snapshot(args.out, data=data_cfg)
    print(f"wrote {out_path} ({ds.manifest.n_identities} identities, {ds.manifest.n_samples} samples)")
    return 0


def _cmd_pretrain_attr(args) -> int:
    file_cfg = _file_cfg(args)
    ds = _load_data(args.data)
    model_cfg = config_mod.resolve(ModelConfig, file_cfg, "model", {"image_size": ds.manifest.height})
    data_cfg = config_mod.resolve(DataConfig, file_cfg, "data", {"image_size": ds.manifest.height})
    train_cfg = config_mod.resolve(TrainConfig, file_cfg, "train", {
        "seed": args.seed, "pretrain_epochs": args.epochs,
    })
    prepared = preprocess_dataset(ds, data_cfg)
    predictor, report = pretrain_attribute_predictor(prepared, model_cfg, train_cfg)
    out_path = args.out / args.name
    save_predictor(out_path, predictor, model_cfg, report, args.seed)
    _snapshot(args.out, model=model_cfg, data=data_cfg, train=train_cfg)
    for name, acc in zip(ATTRIBUTE_NAMES, report.holdout_accuracy):
        print(f"{name}: {acc:.3f}")
    print(f"mean held-out accuracy: {report.mean_accuracy:.4f}")
    print(f"wrote {out_path}")
    return 0


def _cmd_train(args) -> int:
    file_cfg = _file_cfg(args)
    ds = _load_data(args.data)
    model_cfg = config_mod.resolve(ModelConfig, file_cfg, "model", {"image_size": ds.manifest.height})
    data_cfg = config_mod.resolve(DataConfig, file_cfg, "data", {"image_size": ds.manifest.height})
    train_cfg = config_mod.resolve(TrainConfig, file_cfg, "train", {
        "seed": args.seed, "ablation": args.ablation, "steps": args.steps,
        "batch_size": args.batch_size, "lr": args.lr, "checkpoint_every": args.checkpoint_every,
    })
    predictor = None
    if args.attr_predictor is not None:
        if not args.attr_predictor.exists():
            raise CliError("checkpoint-not-found", str(args.attr_predictor))
        predictor, pred_cfg, _ = load_predictor(args.attr_predictor)
        if pred_cfg.image_size != model_cfg.image_size:
            raise CliError("config-mismatch",
                           f"predictor trained at {pred_cfg.image_size}px, run configured for {model_cfg.image_size}px")
    if args.resume is not None and not args.resume.exists():
        raise CliError("checkpoint-not-found", str(args.resume))
    result = train(ds, model_cfg, data_cfg, train_cfg, args.out, predictor=predictor, resume_from=args.resume)
    _snapshot(args.out, model=model_cfg, data=data_cfg, train=train_cfg)
    final = result.history[-1] if result.history else {}
    terms = ", ".join(f"{k}={v:.4f}" for k, v in final.items() if k != "step")
    print(f"finished step {result.state.step}: {terms}")
    print(f"wrote {result.checkpoint_path} and {result.losses_path}")
    return 0


def _load_state(path: Path):
    if not path.exists():
        raise CliError("checkpoint-not-found", str(path))
    return load_checkpoint(path)


def _check_dims(state, ds) -> None:
    if state.model_cfg.image_size != ds.manifest.height:
        raise CliError("config-mismatch",
                       f"checkpoint trained at {state.model_cfg.image_size}px, dataset is {ds.manifest.height}px")


def _cmd_eval(args) -> int:
    file_cfg = _file_cfg(args)
    state = _load_state(args.checkpoint)
    ds = _load_data(args.data)
    _check_dims(state, ds)
    data_cfg = config_mod.resolve(DataConfig, file_cfg, "data", {"image_size": ds.manifest.height})
    report = evaluate_checkpoint(state, ds, data_cfg, seed=args.seed, with_attributes=not args.skip_attrs)
    paths = write_metric_report(report, args.out, list(ds.manifest.attribute_names))
    _snapshot(args.out, model=state.model_cfg, data=data_cfg, train=state.train_cfg)
    print(f"rank-1: {report.cmc[0]:.4f}  auc: {report.auc:.4f}")
    for kind, path in paths.items():
        print(f"wrote {path}")
    return 0


def _cmd_predict_attrs(args) -> int:
    file_cfg = _file_cfg(args)
    state = _load_state(args.checkpoint)
    ds = _load_data(args.data)
    _check_dims(state, ds)
    data_cfg = config_mod.resolve(DataConfig, file_cfg, "data", {"image_size": ds.manifest.height})
    prepared = preprocess_dataset(ds, data_cfg)
    test = prepared.test_samples()
    if args.index is not None:
        if not 0 <= args.index < len(test):
            raise CliError("bad-index", f"test-sample index {args.index} out of range [0, {len(test)})")
        test = [test[args.index]]
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / f"attr_probs_seed{args.seed}.csv"
    import csv as csv_mod

    with open(out_path, "w", newline="") as f:
        writer = csv_mod.writer(f)
        writer.writerow(["index", "identity"] + list(ds.manifest.attribute_names))
        for idx, sample in enumerate(test):
            _, _, probs = synthesize_probe(state.g_pol, sample.polar, args.seed)
            writer.writerow([idx, sample.identity] + [repr(float(p)) for p in probs])
            shown = " ".join(f"{p:.3f}" for p in probs)
            print(f"sample {idx} (identity {sample.identity}): {shown}")
    _snapshot(args.out, model=state.model_cfg, data=data_cfg)
    print(f"wrote {out_path}")
    return 0


def _cmd_export_embeddings(args) -> int:
    file_cfg = _file_cfg(args)
    state = _load_state(args.checkpoint)
    ds = _load_data(args.data)
    _check_dims(state, ds)
    data_cfg = config_mod.resolve(DataConfig, file_cfg, "data", {"image_size": ds.manifest.height})
    prepared = preprocess_dataset(ds, data_cfg)
    out_path = args.out / f"embeddings_step{state.step:06d}_seed{args.seed}.csv"
    rows = export_embeddings(state.g_vis, state.g_pol, prepared, out_path, seed=args.seed)
    _snapshot(args.out, model=state.model_cfg, data=data_cfg)
    print(f"wrote {out_path} ({rows} rows)")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain-attr": _cmd_pretrain_attr,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict-attrs": _cmd_predict_attrs,
    "export-embeddings": _cmd_export_embeddings,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _limit_threads(args.threads)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc.detail}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file-not-found: {exc}", file=sys.stderr)
        return 1
    except DatasetFormatError as exc:
        print(f"error: dataset-format: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"error: training: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid-value: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
