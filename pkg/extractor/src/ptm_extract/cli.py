"""CLI: ``extract`` (corpus TSV -> bank) and ``manifest`` (banks -> manifest JSON)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ExtractError
from .extract import ExtractorConfig, extract, read_corpus_tsv
from .manifest import build_manifest, read_bank_index, stratified_id_lists
from .ptms import MODEL_REGISTRY


def cmd_extract(args) -> int:
    corpus = read_corpus_tsv(args.corpus)
    config = ExtractorConfig(
        model_id=args.model,
        corpus=corpus,
        weights=args.weights,
        seed=args.seed,
        batch_size=args.batch_size,
        device=args.device,
        on_error=args.on_error,
        state_dict=args.state_dict,
    )
    summary = extract(config, args.out)
    print(f"{summary.model_id}: wrote {summary.n_written} rows of dim {summary.dim} "
          f"to {args.out}" + (f" ({len(summary.skipped)} skipped)" if summary.skipped else ""))
    return 0


def cmd_manifest(args) -> int:
    banks = args.banks.split(",")
    class_names = args.class_names.split(",")
    out_dir = Path(args.out_dir)
    if args.split == "kfold":
        policy = {"kind": "kfold", "k": args.k, "seed": args.seed}
    else:
        if args.train_ids and args.val_ids and args.test_ids:
            policy = {"kind": "official", "train_path": args.train_ids,
                      "val_path": args.val_ids, "test_path": args.test_ids}
        else:
            fractions = tuple(float(v) for v in args.fractions.split(","))
            if len(fractions) != 3:
                raise ExtractError("--fractions needs three comma-separated values")
            _, _, labels, ids = read_bank_index(banks[0])
            train, val, test = stratified_id_lists(ids, labels, fractions, args.seed)
            out_dir.mkdir(parents=True, exist_ok=True)
            for name, part in (("train", train), ("val", val), ("test", test)):
                (out_dir / f"{name}_ids.json").write_text(json.dumps(part))
            policy = {"kind": "official", "train_path": "train_ids.json",
                      "val_path": "val_ids.json", "test_path": "test_ids.json"}
    path = build_manifest(banks, class_names, policy, out_dir, dataset_name=args.dataset_name)
    print(f"manifest: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptm-extract", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ep = sub.add_parser("extract", help="embed a corpus through one speech model")
    ep.add_argument("--model", required=True, choices=sorted(MODEL_REGISTRY))
    ep.add_argument("--corpus", required=True,
                    help="TSV of audio_path<TAB>label<TAB>sample_id")
    ep.add_argument("--out", required=True, help="output bank path")
    ep.add_argument("--weights", default="pretrained", choices=["pretrained", "random"],
                    help="published checkpoints (needs network) or seeded random init")
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    ep.add_argument("--device", default="cpu")
    ep.add_argument("--on-error", dest="on_error", default="fail", choices=["fail", "skip"])
    ep.add_argument("--state-dict", dest="state_dict",
                    help="torch state_dict to load into the architecture")
    ep.set_defaults(fn=cmd_extract)

    mp = sub.add_parser("manifest", help="bind banks into a dataset manifest")
    mp.add_argument("--banks", required=True, help="comma-separated bank paths")
    mp.add_argument("--class-names", dest="class_names", required=True,
                    help="comma-separated class names, index order")
    mp.add_argument("--dataset-name", dest="dataset_name", default="extracted")
    mp.add_argument("--split", default="kfold", choices=["kfold", "official"])
    mp.add_argument("--k", type=int, default=5)
    mp.add_argument("--seed", type=int, default=0)
    mp.add_argument("--train-ids", dest="train_ids", help="official: JSON id list path")
    mp.add_argument("--val-ids", dest="val_ids")
    mp.add_argument("--test-ids", dest="test_ids")
    mp.add_argument("--fractions", default="0.7,0.1,0.2",
                    help="official without id lists: stratified train,val,test fractions")
    mp.add_argument("--out-dir", dest="out_dir", required=True)
    mp.set_defaults(fn=cmd_manifest)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
