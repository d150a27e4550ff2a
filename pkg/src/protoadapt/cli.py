"""Command-line front end: generate / train / evaluate / export-features /
permute-labels.

Every run writes its outputs plus a resolved-config copy into the output
directory (flag, then config [output] dir, then $PROTOADAPT_OUT, then
./runs), and prints one summary line.  Exit codes: 0 ok, 1 runtime
failure, 2 bad flags or config.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import network as N
from . import pipeline as P
from . import report as R
from .config import ConfigError

ENV_OUT = "PROTOADAPT_OUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoadapt",
                                     description="Few-shot domain adaptation for "
                                                 "1-D vibration fault diagnosis")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic source/target signals + manifests")
    gen.add_argument("--config", help="run config file ([data] section is used)")
    gen.add_argument("--out", help="output directory")

    tr = sub.add_parser("train", help="train a model and evaluate on the target remainder")
    tr.add_argument("--config", help="run config file")
    tr.add_argument("--variant", choices=list(P.VARIANTS), help="override [train] variant")
    tr.add_argument("--n-shot", type=int, help="override [train] n_shot")
    tr.add_argument("--seed", type=int, help="override [train] seed")
    tr.add_argument("--epochs", type=int, help="override [train] epochs")
    tr.add_argument("--fine-tune-epochs", type=int, help="override [train] fine_tune_epochs")
    tr.add_argument("--batch-size", type=int, help="override [train] batch_size")
    tr.add_argument("--out", help="output directory")

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    ev.add_argument("--model", required=True, help="checkpoint file")
    ev.add_argument("--test", required=True, help="test manifest")
    ev.add_argument("--out", help="output directory")

    ex = sub.add_parser("export-features", help="export features/projections/prototypes as CSV")
    ex.add_argument("--model", required=True, help="checkpoint file (prototypical head)")
    ex.add_argument("--data", required=True, action="append",
                    help="manifest to export (repeatable)")
    ex.add_argument("--out", help="output directory")

    pm = sub.add_parser("permute-labels", help="rewrite a manifest under a label bijection")
    pm.add_argument("--manifest", required=True, help="input manifest")
    pm.add_argument("--permutation", required=True,
                    help="comma list; label k becomes the k-th entry")
    pm.add_argument("--classes", type=int, help="label-space size (default: max label + 1)")
    pm.add_argument("--out-manifest", required=True, help="path for the rewritten manifest")
    return parser


def _output_dir(flag: str | None, cfg_dir: Path | None) -> Path:
    out = flag or cfg_dir or os.environ.get(ENV_OUT) or "runs"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_datasets(cfg: C.RunConfig) -> tuple[D.Dataset, D.Dataset]:
    if cfg.data.kind == "synthetic":
        source = D.synth_generate(cfg.data.synth, cfg.data.per_class_source, D.SOURCE)
        target = D.synth_generate(cfg.data.synth, cfg.data.per_class_target, D.TARGET)
    else:
        source = D.load_manifest(cfg.data.source_manifest, cfg.data.classes)
        target = D.load_manifest(cfg.data.target_manifest,
                                 cfg.data.classes or source.class_count)
    return source, target


def _cmd_generate(args) -> int:
    cfg = C.load_run_config(args.config)
    if cfg.data.kind != "synthetic":
        raise ConfigError("generate needs [data] kind = synthetic")
    out = _output_dir(args.out, cfg.output_dir)
    spec = cfg.data.synth
    manifests = {}
    for domain, per_class in ((D.SOURCE, cfg.data.per_class_source),
                              (D.TARGET, cfg.data.per_class_target)):
        length = D.WINDOW + (per_class - 1) * D.STEP
        rows = []
        for k in range(spec.class_count):
            fname = f"{domain}_class{k}.f64"
            D.save_signal_f64(out / fname, D.synth_signal(spec, k, domain, length).samples)
            rows.append((fname, k, domain))
        manifest = out / f"{domain}_manifest.txt"
        D.write_manifest(manifest, rows)
        manifests[domain] = manifest
    C.write_resolved(out / "resolved.ini", C.resolved_sections(cfg, out))
    print(f"generated classes={spec.class_count} source={manifests[D.SOURCE]} "
          f"target={manifests[D.TARGET]}")
    return 0


def _cmd_train(args) -> int:
    overrides = {
        "train.variant": args.variant,
        "train.n_shot": args.n_shot,
        "train.seed": args.seed,
        "train.epochs": args.epochs,
        "train.fine_tune_epochs": args.fine_tune_epochs,
        "train.batch_size": args.batch_size,
    }
    cfg = C.load_run_config(args.config, overrides)
    out = _output_dir(args.out, cfg.output_dir)
    source, target = _load_datasets(cfg)
    log = P.TrainingLog()
    started = time.perf_counter()
    model, rep, few, _remainder = P.run_experiment(source, target, cfg.train, log)
    elapsed = time.perf_counter() - started

    N.save_checkpoint(model, out / "model.ckpt", optimizer_state=log.optimizer_state)
    t = cfg.train
    metrics = R.report_metrics(rep, {
        "variant": t.variant, "n_shot": t.n_shot, "seed": t.seed,
        "epochs": t.epochs, "fine_tune_epochs": t.fine_tune_epochs,
        "batch_size": t.batch_size,
        "final_train_loss": log.epoch_total[-1] if log.epoch_total else float("nan"),
    })
    R.write_metrics(out / "metrics.txt", metrics)
    R.write_confusion_csv(out / "confusion.csv", rep.confusion)
    R.save_confusion_figure(rep.confusion, out / "confusion.png")
    if log.epoch_total:
        R.save_loss_curves(log, out / "loss_curve.png")
    C.write_resolved(out / "resolved.ini", C.resolved_sections(cfg, out))
    print(f"variant={t.variant} n_shot={t.n_shot} seed={t.seed} accuracy={rep.accuracy:.4f}")
    print(f"wrote {out} in {elapsed:.1f}s", file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    model, _ = N.load_checkpoint(args.model)
    test = D.load_manifest(args.test, model.class_count)
    out = _output_dir(args.out, None)
    rep = P.evaluate(model, test)
    variant = P.FPM if model.head == N.PROTOTYPICAL else "traditional"
    R.write_metrics(out / "metrics.txt", R.report_metrics(rep, {
        "variant": variant, "model": str(args.model), "test": str(args.test)}))
    R.write_confusion_csv(out / "confusion.csv", rep.confusion)
    R.save_confusion_figure(rep.confusion, out / "confusion.png")
    C.write_resolved(out / "resolved.ini", {"evaluate": {
        "model": str(args.model), "test": str(args.test), "dir": str(out)}})
    print(f"variant={variant} n_shot=- seed=- accuracy={rep.accuracy:.4f}")
    return 0


def _cmd_export(args) -> int:
    model, _ = N.load_checkpoint(args.model)
    datasets = [D.load_manifest(m, model.class_count) for m in args.data]
    out = _output_dir(args.out, None)
    features_path, proto_path = P.export_features(model, datasets, out / "features.csv")
    projections, labels = [], []
    for dataset in datasets:
        feats = []
        for start in range(0, len(dataset), P.EVAL_BATCH):
            chunk = dataset.values_matrix()[start:start + P.EVAL_BATCH]
            f = N.extract_features(model, chunk)
            feats.append(N.project_to_prototype_space(model, f).data)
        projections.append(np.concatenate(feats))
        labels.append(dataset.labels_array())
    R.save_projection_figure(np.concatenate(projections), np.concatenate(labels),
                             model.prototypes.data, out / "projection.png")
    C.write_resolved(out / "resolved.ini", {"export-features": {
        "model": str(args.model), "data": ";".join(args.data), "dir": str(out)}})
    print(f"exported {features_path} and {proto_path}")
    return 0


def _cmd_permute(args) -> int:
    perm = [int(p) for p in args.permutation.split(",") if p.strip()]
    n = args.classes if args.classes is not None else (max(perm) + 1 if perm else 0)
    if sorted(perm) != list(range(n)):
        raise ConfigError(f"permutation must be a bijection on [0,{n})")
    src = Path(args.manifest)
    if not src.exists():
        raise ConfigError(f"manifest {src} does not exist")
    out_rows = []
    with open(src) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = [p.strip() for p in stripped.split(",")]
            if len(parts) != 3:
                raise ConfigError(f"{src}:{lineno}: expected 'file,label,domain'")
            try:
                label = int(parts[1])
            except ValueError:
                raise ConfigError(f"{src}:{lineno}: label {parts[1]!r} is not an integer") from None
            if not 0 <= label < n:
                raise ConfigError(f"{src}:{lineno}: label {label} outside [0,{n})")
            out_rows.append((parts[0], perm[label], parts[2]))
    if not out_rows:
        raise ConfigError(f"manifest {src} has no entries")
    dest = Path(args.out_manifest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    D.write_manifest(dest, out_rows)
    C.write_resolved(dest.with_suffix(dest.suffix + ".resolved.ini"), {"permute-labels": {
        "manifest": str(src), "permutation": ",".join(str(p) for p in perm),
        "classes": n, "out_manifest": str(dest)}})
    print(f"permuted {len(out_rows)} entries -> {dest}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "export-features": _cmd_export,
    "permute-labels": _cmd_permute,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        print(f"run 'protoadapt {args.command} --help' for usage", file=sys.stderr)
        return 2
    except Exception as err:   # runtime failure: diagnostic, exit 1
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
