"""Command-line surface.

Subcommands: ``split`` (materialize fold assignments), ``train`` (full
experiment -> checkpoints + report.json), ``eval`` (score a checkpoint or an
external prediction CSV), ``synth`` (generate a synthetic dataset), ``report``
(merge run reports into a comparison table), ``bench`` (kernel backends).

Every flag can come from a JSON config file via ``--config``; explicit flags
win. Exit codes: 0 ok, 2 config error, 3 data-integrity error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import backend
from .data_io import load_manifest, resolve_splits, stratified_kfold
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DataIntegrityError,
    FinderError,
    NumericDomainError,
    NumericFailure,
)
from .losses import RenyiParams
from .metrics import evaluate, export_embeddings, read_prediction_csv
from .models import Model, ModelConfig
from .synth import SynthSpec, write_dataset
from .training import TrainConfig, run_experiment

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def _merged(args: argparse.Namespace, file_cfg: dict, key: str, default=None):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return file_cfg.get(key, default)


def cmd_split(args) -> int:
    file_cfg = _load_config_file(args.config)
    manifest, banks = load_manifest(args.manifest)
    k = int(_merged(args, file_cfg, "k", 5))
    seed = _merged(args, file_cfg, "seed")
    if seed is None:
        raise ConfigError("split requires --seed")
    first = banks[manifest.representations[0].name]
    assignments = stratified_kfold(first.sample_ids, first.labels, k, int(seed))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for a in assignments:
        (out_dir / f"{a.name}.json").write_text(json.dumps(a.to_dict(), indent=2, sort_keys=True))
    print(f"wrote {len(assignments)} fold files to {out_dir}")
    return 0


def _model_config_from(args, file_cfg, manifest, view_names) -> ModelConfig:
    overrides = dict(file_cfg.get("model", {}))
    if args.model_config:
        overrides.update(json.loads(Path(args.model_config).read_text()))
    kind = args.kind or overrides.pop("kind", None)
    if kind is None:
        raise ConfigError("train requires --kind (fcn|cnn|finder|concat_fusion) or a model config file")
    dims = []
    for name in view_names:
        ref = next((r for r in manifest.representations if r.name == name), None)
        if ref is None:
            raise ConfigError(f"manifest has no representation named {name!r}")
        dims.append(ref.dim)
    overrides.pop("input_dims", None)
    overrides.pop("n_classes", None)
    return ModelConfig(kind=kind, input_dims=dims, n_classes=manifest.n_classes, **overrides)


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    if args.strict:
        backend.set_backend("numpy")
    manifest, banks = load_manifest(args.manifest)
    view_names = (args.views.split(",") if args.views
                  else file_cfg.get("views") or [r.name for r in manifest.representations])
    model_cfg = _model_config_from(args, file_cfg, manifest, view_names)

    train_kwargs = dict(file_cfg.get("train", {}))
    for key in ("lr", "epochs", "batch_size", "early_stop_patience", "early_stop_metric"):
        val = getattr(args, key, None)
        if val is not None:
            train_kwargs[key] = val
    renyi_kwargs = dict(train_kwargs.pop("renyi", {}))
    for key, dest in (("alpha", "alpha"), ("epsilon", "epsilon"), ("rd_lambda", "lam")):
        val = getattr(args, key, None)
        if val is not None:
            renyi_kwargs[dest] = val
    if "lambda" in renyi_kwargs:
        renyi_kwargs["lam"] = renyi_kwargs.pop("lambda")
    cfg = TrainConfig(seed=args.seed, renyi=RenyiParams(**renyi_kwargs), **train_kwargs)

    report = run_experiment(manifest, banks, model_cfg, cfg, args.out_dir, view_names)
    avg = report["averages"]
    print(f"{model_cfg.kind} on {manifest.dataset_name} [{'+'.join(view_names)}] "
          f"({report['parameter_count']} params): "
          f"accuracy {avg['accuracy']:.4f}, mean EER {avg['mean_eer']:.4f} "
          f"over {len(report['folds'])} fold(s)")
    print(f"report: {Path(args.out_dir) / 'report.json'}")
    return 0


def _write_eval_report(rep, class_names, out_path) -> None:
    out_path = Path(out_path)
    if out_path.suffix.lower() == ".csv":
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "class", "value"])
            writer.writerow(["accuracy", "", repr(rep.accuracy)])
            writer.writerow(["mean_eer", "", repr(rep.mean_eer)])
            for name, v in zip(class_names, rep.per_class_eer):
                writer.writerow(["eer", name, "" if math.isnan(v) else repr(float(v))])
    else:
        out_path.write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    manifest, banks = load_manifest(args.manifest)
    predictions = _merged(args, file_cfg, "predictions")
    if predictions:
        scores = read_prediction_csv(predictions, manifest.class_names)
    else:
        checkpoint = _merged(args, file_cfg, "checkpoint")
        if not checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        from .data_io import load_views
        model = Model.load(checkpoint)
        splits = resolve_splits(manifest, banks)
        split = splits[_merged(args, file_cfg, "fold", 0)]
        views_arg = _merged(args, file_cfg, "views")
        if isinstance(views_arg, str):
            views_arg = views_arg.split(",")
        view_names = views_arg or [r.name for r in manifest.representations]
        part = _merged(args, file_cfg, "part", "test")
        views, labels, ids = load_views(manifest, banks, split, part, view_names)
        from .training import _eval_scores
        scores = _eval_scores(model, views, labels, manifest.class_names)
        emb_path = _merged(args, file_cfg, "export_embeddings")
        if emb_path:
            export_embeddings(model, views, labels, ids, emb_path)
    rep = evaluate(scores)
    out = _merged(args, file_cfg, "out")
    if out:
        _write_eval_report(rep, manifest.class_names, out)
    print(f"accuracy {rep.accuracy:.4f}  mean EER {rep.mean_eer:.4f}")
    if rep.undefined_classes:
        print(f"warning: classes without test support excluded from EER mean: {rep.undefined_classes}")
    return 0


def cmd_synth(args) -> int:
    file_cfg = _load_config_file(args.config)
    spec_kwargs = dict(file_cfg.get("spec", {}))
    if args.spec:
        spec_kwargs.update(json.loads(Path(args.spec).read_text()))
    for key in ("n_classes", "n_per_class", "noise_scale", "informativeness", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            spec_kwargs[key] = val
    if args.view_dims:
        spec_kwargs["view_dims"] = [int(v) for v in args.view_dims.split(",")]
    spec = SynthSpec(**spec_kwargs)
    path = write_dataset(spec, args.out_dir, split=args.split, k=args.k)
    print(f"manifest: {path}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        doc = json.loads(Path(path).read_text())
        rows.append({
            "run": Path(path).parent.name or path,
            "dataset": doc["dataset_name"],
            "kind": doc["model_config"]["kind"],
            "views": "+".join(doc["views"]),
            "params": doc["parameter_count"],
            "accuracy": doc["averages"]["accuracy"],
            "mean_eer": doc["averages"]["mean_eer"],
            "folds": len(doc["folds"]),
        })
    rows.sort(key=lambda r: (-r["accuracy"], r["mean_eer"]))
    if args.format == "csv":
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    else:
        header = "| run | dataset | kind | views | params | accuracy | mean EER | folds |"
        print(header)
        print("|" + "---|" * 8)
        for r in rows:
            print(f"| {r['run']} | {r['dataset']} | {r['kind']} | {r['views']} "
                  f"| {r['params']} | {r['accuracy']:.4f} | {r['mean_eer']:.4f} | {r['folds']} |")
    return 0


def cmd_bench(args) -> int:
    from .bench import format_table, run_benchmark
    rows = run_benchmark(repeats=args.repeats)
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finder", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("split", help="materialize stratified k-fold assignments")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--config")
    sp.set_defaults(fn=cmd_split)

    tp = sub.add_parser("train", help="run a full experiment")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--kind", choices=["fcn", "cnn", "finder", "concat_fusion"])
    tp.add_argument("--views", help="comma-separated representation names")
    tp.add_argument("--model-config", help="JSON file with ModelConfig overrides")
    tp.add_argument("--seed", type=int, required=True)
    tp.add_argument("--lr", type=float)
    tp.add_argument("--epochs", type=int)
    tp.add_argument("--batch-size", dest="batch_size", type=int)
    tp.add_argument("--early-stop-patience", dest="early_stop_patience", type=int)
    tp.add_argument("--early-stop-metric", dest="early_stop_metric",
                    choices=["val_loss", "val_accuracy"])
    tp.add_argument("--alpha", type=float)
    tp.add_argument("--epsilon", type=float)
    tp.add_argument("--rd-lambda", dest="rd_lambda", type=float)
    tp.add_argument("--strict", action="store_true",
                    help="strict sequential mode (numpy backend, bit-exact)")
    tp.add_argument("--out-dir", required=True)
    tp.add_argument("--config")
    tp.set_defaults(fn=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint or a prediction CSV")
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--checkpoint")
    ep.add_argument("--predictions", help="external CSV: sample_id,label,p0..pC")
    ep.add_argument("--part", default=None, choices=["train", "val", "test"])
    ep.add_argument("--fold", type=int, default=None)
    ep.add_argument("--views")
    ep.add_argument("--export-embeddings", dest="export_embeddings",
                    help="also write penultimate features to this CSV")
    ep.add_argument("--out", help="write the EvalReport here (.json or .csv)")
    ep.add_argument("--config")
    ep.set_defaults(fn=cmd_eval)

    yp = sub.add_parser("synth", help="generate a synthetic multi-view dataset")
    yp.add_argument("--spec", help="JSON file with the generator spec")
    yp.add_argument("--n-classes", dest="n_classes", type=int)
    yp.add_argument("--n-per-class", dest="n_per_class", type=int)
    yp.add_argument("--view-dims", dest="view_dims", help="comma-separated dims")
    yp.add_argument("--noise-scale", dest="noise_scale", type=float)
    yp.add_argument("--informativeness", type=float)
    yp.add_argument("--seed", type=int)
    yp.add_argument("--split", default="kfold", choices=["kfold", "official"])
    yp.add_argument("--k", type=int, default=5)
    yp.add_argument("--out-dir", required=True)
    yp.add_argument("--config")
    yp.set_defaults(fn=cmd_synth)

    rp = sub.add_parser("report", help="merge run reports into a comparison table")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("--format", default="markdown", choices=["markdown", "csv"])
    rp.set_defaults(fn=cmd_report)

    bp = sub.add_parser("bench", help="compare numba and numpy kernel backends")
    bp.add_argument("--repeats", type=int, default=5)
    bp.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataIntegrityError, CheckpointFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, NumericDomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FinderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
