"""Synthetic multi-view datasets with a controllable fusion advantage.

Each class carries two factor codes A = c mod m and B = c div m
(m = ceil(sqrt(n_classes))). View 0 expresses factor A, view 1 factor B, as
one-hot blocks scaled by the informativeness fraction rho; a shared whole-
class one-hot block is scaled by max(1 - rho, 0.02). At rho=1 each view is
(almost) blind to the other factor, so no single view can separate all
classes while the fused pair can - the desk-scale analogue of fusion beating
individual representations. The small floor keeps per-view class means
pairwise distinct.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import (
    DatasetManifest,
    FeatureBank,
    RepresentationRef,
    write_bank,
    write_manifest,
)
from .errors import ConfigError

DISTINCTNESS_FLOOR = 0.02


@dataclass
class SynthSpec:
    n_classes: int = 4
    n_per_class: int = 50
    view_dims: list[int] = field(default_factory=lambda: [64, 64])
    noise_scale: float = 0.3
    informativeness: float = 1.0      # rho: fraction of class signal that is view-exclusive
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_per_class < 1:
            raise ConfigError(f"n_per_class must be >= 1, got {self.n_per_class}")
        if not 1 <= len(self.view_dims) <= 2:
            raise ConfigError("view_dims must list one or two views")
        if self.noise_scale <= 0:
            raise ConfigError(f"noise scale must be > 0, got {self.noise_scale}")
        if not 0.0 <= self.informativeness <= 1.0:
            raise ConfigError(f"informativeness must be in [0,1], got {self.informativeness}")
        m = math.isqrt(self.n_classes - 1) + 1  # ceil(sqrt(C))
        needed = self.n_classes + m
        for d in self.view_dims:
            if d < needed:
                raise ConfigError(
                    f"view dim {d} too small; need >= n_classes + ceil(sqrt(n_classes)) = {needed}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def class_means(spec: SynthSpec) -> list[np.ndarray]:
    """Per-view (n_classes, dim) mean matrices."""
    c = spec.n_classes
    m = math.isqrt(c - 1) + 1
    shared_scale = max(1.0 - spec.informativeness, DISTINCTNESS_FLOOR) * spec.amplitude
    excl_scale = spec.informativeness * spec.amplitude
    means = []
    for v, dim in enumerate(spec.view_dims):
        mat = np.zeros((c, dim), dtype=np.float32)
        for cls in range(c):
            mat[cls, cls] = shared_scale
            factor = cls % m if v == 0 else cls // m
            mat[cls, c + factor] = excl_scale
        means.append(mat)
    return means


def generate(spec: SynthSpec) -> tuple[list[FeatureBank], np.ndarray]:
    """Deterministic banks (one per view) plus the label vector."""
    rng = np.random.default_rng(spec.seed)
    c, per = spec.n_classes, spec.n_per_class
    n = c * per
    labels = np.repeat(np.arange(c), per)
    sample_ids = [f"s{i:05d}" for i in range(n)]
    means = class_means(spec)
    banks = []
    for v, dim in enumerate(spec.view_dims):
        feats = means[v][labels] + spec.noise_scale * rng.standard_normal((n, dim)).astype(np.float32)
        banks.append(FeatureBank(f"synth_view{v}", feats.astype(np.float32), labels, list(sample_ids)))
    return banks, labels


def _stratified_single_split(sample_ids, labels, seed, fractions=(0.7, 0.1, 0.2)):
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in np.unique(labels):
        ids = sorted(sid for sid, lab in zip(sample_ids, labels) if lab == cls)
        rng.shuffle(ids)
        n = len(ids)
        n_train = max(1, int(fractions[0] * n))
        n_val = max(1, int(fractions[1] * n))
        train.extend(ids[:n_train])
        val.extend(ids[n_train:n_train + n_val])
        test.extend(ids[n_train + n_val:])
    return sorted(train), sorted(val), sorted(test)


def write_dataset(spec: SynthSpec, out_dir, split: str = "kfold", k: int = 5) -> Path:
    """Emit banks + manifest (+ id lists for an official-style split).

    Returns the manifest path. ``split`` is 'kfold' or 'official'.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    banks, labels = generate(spec)
    refs = []
    for bank in banks:
        fname = f"{bank.representation_name}.bank"
        write_bank(bank, out_dir / fname)
        refs.append(RepresentationRef(bank.representation_name, bank.dim, fname))

    if split == "kfold":
        policy = {"kind": "kfold", "k": k, "seed": spec.seed}
    elif split == "official":
        train, val, test = _stratified_single_split(banks[0].sample_ids, labels, spec.seed)
        for name, ids in (("train", train), ("val", val), ("test", test)):
            (out_dir / f"{name}_ids.json").write_text(json.dumps(ids))
        policy = {"kind": "official", "train_path": "train_ids.json",
                  "val_path": "val_ids.json", "test_path": "test_ids.json"}
    else:
        raise ConfigError(f"split must be 'kfold' or 'official', got {split!r}")

    manifest = DatasetManifest(
        dataset_name=f"synth_c{spec.n_classes}_rho{spec.informativeness:g}",
        class_names=[f"src{c}" for c in range(spec.n_classes)],
        representations=refs,
        split_policy=policy,
        base_dir=out_dir,
    )
    path = out_dir / "manifest.json"
    write_manifest(manifest, path)
    return path
