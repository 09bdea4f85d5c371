"""Feature banks, dataset manifests, and split generation.

Bank binary layout (little-endian throughout):

    magic         8 bytes  b"FNDRBANK"
    version       u32
    name_len      u32, then UTF-8 representation name
    n             u64
    dim           u32
    labels        n * u16
    id table      n entries of (u32 len, UTF-8 bytes)
    features      n * dim * f32, row-major
    checksum      8 bytes: first 8 bytes of SHA-256 over everything before it

The manifest is a JSON document binding class names, per-view banks and the
split policy; all paths inside it are relative to the manifest's directory.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BankFormatError, ConfigError, DataIntegrityError

BANK_MAGIC = b"FNDRBANK"
BANK_VERSION = 1
MAX_LABEL = 0xFFFF
MANIFEST_SCHEMA = "finder-manifest/v1"


@dataclass
class FeatureBank:
    representation_name: str
    features: np.ndarray          # (n, dim) float32
    labels: np.ndarray            # (n,) integers
    sample_ids: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, _ = self.features.shape
        if self.labels.shape != (n,) or len(self.sample_ids) != n:
            raise DataIntegrityError(
                f"bank {self.representation_name!r}: {n} feature rows, "
                f"{self.labels.shape[0]} labels, {len(self.sample_ids)} ids")
        if n and (self.labels.min() < 0 or self.labels.max() > MAX_LABEL):
            raise DataIntegrityError(f"bank {self.representation_name!r}: labels outside u16 range")
        if len(set(self.sample_ids)) != n:
            raise DataIntegrityError(f"bank {self.representation_name!r}: duplicate sample ids")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def write_bank(bank: FeatureBank, path) -> None:
    buf = io.BytesIO()
    buf.write(BANK_MAGIC)
    buf.write(struct.pack("<I", BANK_VERSION))
    name = bank.representation_name.encode("utf-8")
    buf.write(struct.pack("<I", len(name)))
    buf.write(name)
    buf.write(struct.pack("<Q", bank.n))
    buf.write(struct.pack("<I", bank.dim))
    buf.write(bank.labels.astype("<u2").tobytes())
    for sid in bank.sample_ids:
        sb = sid.encode("utf-8")
        buf.write(struct.pack("<I", len(sb)))
        buf.write(sb)
    buf.write(np.ascontiguousarray(bank.features, dtype="<f4").tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest()[:8])


def read_bank(path) -> FeatureBank:
    """Parse and validate a bank file; every corruption mode raises BankFormatError."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise BankFormatError(f"{path}: {exc}") from exc
    if len(raw) < len(BANK_MAGIC) + 8:
        raise BankFormatError(f"{path}: file too short to be a bank")
    payload, digest = raw[:-8], raw[-8:]
    if payload[:len(BANK_MAGIC)] != BANK_MAGIC:
        raise BankFormatError(f"{path}: bad magic, not a feature bank")
    if hashlib.sha256(payload).digest()[:8] != digest:
        raise BankFormatError(f"{path}: checksum mismatch (corrupt or truncated)")

    view = memoryview(payload)
    pos = len(BANK_MAGIC)

    def take(n: int) -> memoryview:
        nonlocal pos
        if n < 0 or pos + n > len(view):
            raise BankFormatError(f"{path}: truncated bank body")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    version = struct.unpack("<I", take(4))[0]
    if version != BANK_VERSION:
        raise BankFormatError(f"{path}: unsupported bank version {version}")
    name_len = struct.unpack("<I", take(4))[0]
    try:
        name = bytes(take(name_len)).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BankFormatError(f"{path}: undecodable representation name") from exc
    n = struct.unpack("<Q", take(8))[0]
    dim = struct.unpack("<I", take(4))[0]
    # bound the claimed sizes by what the file can actually hold
    if n * max(dim, 1) * 4 > len(view) or n * 2 > len(view):
        raise BankFormatError(f"{path}: declared size n={n} dim={dim} exceeds file length")
    labels = np.frombuffer(take(2 * int(n)), dtype="<u2").astype(np.int64)
    sample_ids = []
    for _ in range(int(n)):
        sid_len = struct.unpack("<I", take(4))[0]
        try:
            sample_ids.append(bytes(take(sid_len)).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise BankFormatError(f"{path}: undecodable sample id") from exc
    feats = np.frombuffer(take(4 * int(n) * int(dim)), dtype="<f4").reshape(int(n), int(dim)).copy()
    if pos != len(view):
        raise BankFormatError(f"{path}: trailing garbage after feature matrix")
    try:
        return FeatureBank(name, feats, labels, sample_ids)
    except DataIntegrityError as exc:
        raise BankFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RepresentationRef:
    name: str
    dim: int
    bank_path: str


@dataclass
class DatasetManifest:
    dataset_name: str
    class_names: list[str]
    representations: list[RepresentationRef]
    split_policy: dict
    base_dir: Path = field(default_factory=Path)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def bank_path(self, ref: RepresentationRef) -> Path:
        return (self.base_dir / ref.bank_path).resolve()

    def to_dict(self) -> dict:
        return {
            "$schema": MANIFEST_SCHEMA,
            "dataset_name": self.dataset_name,
            "class_names": self.class_names,
            "representations": [
                {"name": r.name, "dim": r.dim, "bank_path": r.bank_path}
                for r in self.representations
            ],
            "split_policy": self.split_policy,
        }


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path, validate_banks: bool = True) -> tuple[DatasetManifest, dict[str, FeatureBank]]:
    """Load, validate, and (optionally) parse all referenced banks.

    Returns the manifest plus a name->bank map (empty when validate_banks is
    False). Validation checks dims against declarations, identical sample-id
    ordering across views, and label range against class_names.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataIntegrityError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("$schema") != MANIFEST_SCHEMA:
        raise DataIntegrityError(
            f"{path}: unsupported $schema {doc.get('$schema')!r}, expected {MANIFEST_SCHEMA!r}")
    try:
        manifest = DatasetManifest(
            dataset_name=doc["dataset_name"],
            class_names=list(doc["class_names"]),
            representations=[RepresentationRef(r["name"], int(r["dim"]), r["bank_path"])
                             for r in doc["representations"]],
            split_policy=dict(doc["split_policy"]),
            base_dir=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataIntegrityError(f"{path}: malformed manifest ({exc})") from exc
    if manifest.n_classes < 2:
        raise DataIntegrityError(f"{path}: need at least 2 classes")
    if not manifest.representations:
        raise DataIntegrityError(f"{path}: no representations listed")

    banks: dict[str, FeatureBank] = {}
    if validate_banks:
        ref_ids = None
        ref_labels = None
        for ref in manifest.representations:
            bank = read_bank(manifest.bank_path(ref))
            if bank.dim != ref.dim:
                raise DataIntegrityError(
                    f"{path}: representation {ref.name!r} declares dim {ref.dim} "
                    f"but bank has dim {bank.dim}")
            if bank.n and bank.labels.max() >= manifest.n_classes:
                raise DataIntegrityError(
                    f"{path}: bank {ref.name!r} has label {bank.labels.max()} "
                    f"but only {manifest.n_classes} classes are declared")
            if ref_ids is None:
                ref_ids, ref_labels = bank.sample_ids, bank.labels
            else:
                if bank.sample_ids != ref_ids:
                    first = next((i for i, (a, b) in enumerate(zip(ref_ids, bank.sample_ids)) if a != b),
                                 min(len(ref_ids), len(bank.sample_ids)))
                    raise DataIntegrityError(
                        f"{path}: bank {ref.name!r} sample ids diverge from first bank "
                        f"at row {first}")
                if not np.array_equal(bank.labels, ref_labels):
                    bad = int(np.flatnonzero(bank.labels != ref_labels)[0])
                    raise DataIntegrityError(
                        f"{path}: bank {ref.name!r} disagrees on label of id "
                        f"{ref_ids[bad]!r}")
            banks[ref.name] = bank
    return manifest, banks


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitAssignment:
    name: str
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]

    def to_dict(self) -> dict:
        return {"name": self.name, "train_ids": self.train_ids,
                "val_ids": self.val_ids, "test_ids": self.test_ids}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(d["name"], list(d["train_ids"]), list(d["val_ids"]), list(d["test_ids"]))


def stratified_kfold(sample_ids: list[str], labels: np.ndarray, k: int, seed: int,
                     val_fraction: float = 0.1) -> list[SplitAssignment]:
    """Deterministic stratified k-fold with a per-fold validation carve-out.

    Each sample lands in exactly one test fold; per-fold class counts differ
    from exact proportionality by at most one. Within each fold,
    ``val_fraction`` of the training portion (at least one sample per class)
    is held out for early stopping.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    order = np.argsort(np.asarray(sample_ids))  # canonical base order
    for i in order:
        by_class.setdefault(int(labels[i]), []).append(sample_ids[i])
    fold_test: list[list[str]] = [[] for _ in range(k)]
    class_rest: dict[int, list[list[str]]] = {}
    for cls in sorted(by_class):
        ids = by_class[cls]
        if len(ids) < k:
            raise ConfigError(
                f"class {cls} has only {len(ids)} samples, fewer than k={k}")
        ids = list(ids)
        rng.shuffle(ids)
        folds = [ids[f::k] for f in range(k)]
        class_rest[cls] = folds
        for f in range(k):
            fold_test[f].extend(folds[f])

    assignments = []
    for f in range(k):
        train, val = [], []
        for cls in sorted(class_rest):
            pool = [sid for g, chunk in enumerate(class_rest[cls]) if g != f for sid in chunk]
            rng2 = np.random.default_rng(seed + 1_000_003 * (f + 1) + cls)
            pool = list(pool)
            rng2.shuffle(pool)
            n_val = max(1, int(val_fraction * len(pool)))
            val.extend(pool[:n_val])
            train.extend(pool[n_val:])
        assignments.append(SplitAssignment(
            name=f"fold{f}",
            train_ids=sorted(train),
            val_ids=sorted(val),
            test_ids=sorted(fold_test[f]),
        ))
    return assignments


def official_split(manifest: DatasetManifest) -> SplitAssignment:
    """Read the three id-list files named by an 'official' split policy."""
    pol = manifest.split_policy
    parts = {}
    for key in ("train_path", "val_path", "test_path"):
        if key not in pol:
            raise DataIntegrityError(f"official split policy missing {key!r}")
        p = (manifest.base_dir / pol[key]).resolve()
        try:
            ids = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataIntegrityError(f"{p}: cannot read id list ({exc})") from exc
        if not isinstance(ids, list) or not all(isinstance(s, str) for s in ids):
            raise DataIntegrityError(f"{p}: expected a JSON list of sample ids")
        parts[key] = ids
    return SplitAssignment("official", parts["train_path"], parts["val_path"], parts["test_path"])


def resolve_splits(manifest: DatasetManifest, banks: dict[str, FeatureBank]) -> list[SplitAssignment]:
    pol = manifest.split_policy
    kind = pol.get("kind")
    if kind == "kfold":
        first = banks[manifest.representations[0].name]
        return stratified_kfold(first.sample_ids, first.labels,
                                int(pol["k"]), int(pol["seed"]))
    if kind == "official":
        return [official_split(manifest)]
    raise DataIntegrityError(f"unknown split policy kind {kind!r}")


def load_views(manifest: DatasetManifest, banks: dict[str, FeatureBank],
               split: SplitAssignment, part: str,
               view_names: list[str] | None = None):
    """Row-aligned matrices for one split part, in sorted-by-id order.

    Returns (views, labels, ids) where views is one float32 matrix per
    representation. Labels come from the first bank and are verified equal
    across all banks.
    """
    if part not in ("train", "val", "test"):
        raise ConfigError(f"part must be train/val/test, got {part!r}")
    ids = sorted(getattr(split, f"{part}_ids"))
    names = view_names or [r.name for r in manifest.representations]
    views = []
    labels_ref = None
    for name in names:
        if name not in banks:
            raise DataIntegrityError(f"manifest has no representation named {name!r}")
        bank = banks[name]
        index = {sid: i for i, sid in enumerate(bank.sample_ids)}
        rows = []
        for sid in ids:
            if sid not in index:
                raise DataIntegrityError(f"sample id {sid!r} missing from bank {name!r}")
            rows.append(index[sid])
        rows = np.array(rows, dtype=np.int64)
        views.append(bank.features[rows])
        labels = bank.labels[rows]
        if labels_ref is None:
            labels_ref = labels
        elif not np.array_equal(labels, labels_ref):
            bad = int(np.flatnonzero(labels != labels_ref)[0])
            raise DataIntegrityError(
                f"banks disagree on label of sample id {ids[bad]!r}")
    return views, labels_ref, ids
