"""Manifest builder: binds row-aligned banks into the trainer's JSON schema."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ExtractError

MANIFEST_SCHEMA = "finder-manifest/v1"
BANK_MAGIC = b"FNDRBANK"


def read_bank_index(path) -> tuple[str, int, list[int], list[str]]:
    """Parse (name, dim, labels, sample_ids) from a bank we or the trainer wrote."""
    raw = Path(path).read_bytes()
    if len(raw) < len(BANK_MAGIC) + 8 or raw[:8] != BANK_MAGIC:
        raise ExtractError(f"{path}: not a feature bank")
    payload, digest = raw[:-8], raw[-8:]
    if hashlib.sha256(payload).digest()[:8] != digest:
        raise ExtractError(f"{path}: checksum mismatch")
    pos = 8
    version, name_len = struct.unpack_from("<II", payload, pos)
    pos += 8
    if version != 1:
        raise ExtractError(f"{path}: unsupported bank version {version}")
    name = payload[pos:pos + name_len].decode("utf-8")
    pos += name_len
    n, dim = struct.unpack_from("<QI", payload, pos)
    pos += 12
    labels = np.frombuffer(payload, dtype="<u2", count=n, offset=pos).tolist()
    pos += 2 * n
    ids = []
    for _ in range(n):
        (sid_len,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        ids.append(payload[pos:pos + sid_len].decode("utf-8"))
        pos += sid_len
    return name, dim, labels, ids


def stratified_id_lists(ids: list[str], labels: list[int], fractions: tuple[float, float, float],
                        seed: int) -> tuple[list[str], list[str], list[str]]:
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in sorted(set(labels)):
        cls_ids = sorted(sid for sid, lab in zip(ids, labels) if lab == cls)
        rng.shuffle(cls_ids)
        n = len(cls_ids)
        n_train = max(1, int(fractions[0] * n))
        n_val = max(1, int(fractions[1] * n))
        train.extend(cls_ids[:n_train])
        val.extend(cls_ids[n_train:n_train + n_val])
        test.extend(cls_ids[n_train + n_val:])
    if not test:
        raise ExtractError("official split fractions leave no test samples")
    return sorted(train), sorted(val), sorted(test)


def build_manifest(bank_paths: list[str], class_names: list[str], split_policy: dict,
                   out_dir, dataset_name: str = "extracted") -> Path:
    """Validate bank alignment and write ``manifest.json`` into ``out_dir``.

    ``split_policy`` is either ``{"kind": "kfold", "k": int, "seed": int}`` or
    ``{"kind": "official", "train_path": ..., "val_path": ..., "test_path": ...}``
    with paths relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(class_names) < 2:
        raise ExtractError("need at least two class names")
    reps = []
    ref_ids: list[str] | None = None
    ref_labels: list[int] | None = None
    for bp in bank_paths:
        name, dim, labels, ids = read_bank_index(bp)
        if max(labels, default=0) >= len(class_names):
            raise ExtractError(
                f"{bp}: label {max(labels)} exceeds {len(class_names)} class names")
        if ref_ids is None:
            ref_ids, ref_labels = ids, labels
        else:
            if ids != ref_ids:
                first = next((i for i, (a, b) in enumerate(zip(ref_ids, ids)) if a != b),
                             min(len(ref_ids), len(ids)))
                divergent = ids[first] if first < len(ids) else "<row count>"
                raise AlignmentError(
                    f"{bp}: sample ids diverge from {bank_paths[0]} at row {first} "
                    f"({divergent!r})")
            if labels != ref_labels:
                bad = next(i for i, (a, b) in enumerate(zip(ref_labels, labels)) if a != b)
                raise AlignmentError(f"{bp}: label mismatch for id {ids[bad]!r}")
        rel = str(Path(bp).resolve().relative_to(out_dir.resolve())) \
            if Path(bp).resolve().is_relative_to(out_dir.resolve()) else str(Path(bp).resolve())
        reps.append({"name": name, "dim": dim, "bank_path": rel})

    kind = split_policy.get("kind")
    if kind == "kfold":
        policy = {"kind": "kfold", "k": int(split_policy["k"]), "seed": int(split_policy["seed"])}
    elif kind == "official":
        policy = {"kind": "official"}
        for key in ("train_path", "val_path", "test_path"):
            if key not in split_policy:
                raise ExtractError(f"official split policy missing {key!r}")
            policy[key] = split_policy[key]
    else:
        raise ExtractError(f"unknown split policy kind {kind!r}")

    doc = {
        "$schema": MANIFEST_SCHEMA,
        "dataset_name": dataset_name,
        "class_names": list(class_names),
        "representations": reps,
        "split_policy": policy,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
