"""Adam training loop, early stopping, fold orchestration, run reports.

``run_experiment`` is the top-level entry: it resolves the manifest's split
policy (stratified k-fold or a fixed official split), trains one model per
fold with a derived seed, evaluates accuracy and one-vs-all EER on the test
portion, saves per-fold checkpoints, and writes a canonical ``report.json``.
The canonical report is deterministic byte-for-byte for a fixed seed and
backend; wall-clock timings go to a ``timing.json`` sidecar.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import backend
from .autodiff import Tensor
from .data_io import DatasetManifest, FeatureBank, load_views, resolve_splits
from .errors import ConfigError, ContractError, NumericDomainError, NumericFailure
from .losses import RenyiParams, combined_loss
from .metrics import ScoreSet, evaluate
from .models import Model, ModelConfig

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    seed: int
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 32
    early_stop_patience: int = 5
    early_stop_metric: str = "val_loss"      # or "val_accuracy"
    renyi: RenyiParams = field(default_factory=RenyiParams)
    shuffle: bool = True

    def __post_init__(self):
        if isinstance(self.renyi, dict):
            self.renyi = RenyiParams(**self.renyi)
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ConfigError("epochs, batch_size and early_stop_patience must be >= 1")
        if self.early_stop_metric not in ("val_loss", "val_accuracy"):
            raise ConfigError(f"early_stop_metric must be val_loss or val_accuracy, "
                              f"got {self.early_stop_metric!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["renyi"] = {"alpha": self.renyi.alpha, "epsilon": self.renyi.epsilon,
                      "lambda": self.renyi.lam}
        return d


class AdamState:
    """First/second moment buffers for one parameter set."""

    def __init__(self, params: dict[str, Tensor],
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update; parameters absent from ``grads`` are
    left untouched (no update, no moment decay)."""
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tensor.data.shape:
            raise ContractError(f"adam_step: gradient shape {g.shape} vs parameter "
                                f"{name!r} shape {tensor.data.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        tensor.assign_(tensor.data - update)


@dataclass
class FoldRecord:
    name: str
    accuracy: float
    mean_eer: float
    per_class_eer: list[float | None]
    undefined_classes: list[int]
    best_epoch: int
    epochs_run: int
    parameter_count: int
    loss_curve: list[dict]            # per epoch: total/ce/rd train means + val metric
    checkpoint: str

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _model_loss(model: Model, views: list[Tensor], labels: np.ndarray, cfg: TrainConfig,
                rng: np.random.Generator | None):
    out = model.forward(views, rng=rng)
    if model.config.kind == "finder":
        return combined_loss(out.probs, labels, out.projections[0], out.projections[1],
                             cfg.renyi, model.config.rd_normalization), out
    # fcn / cnn / concat_fusion train on cross-entropy only
    return combined_loss(out.probs, labels, None, None, cfg.renyi), out


def _eval_scores(model: Model, views: list[np.ndarray], labels: np.ndarray,
                 class_names: list[str], batch_size: int = 256) -> ScoreSet:
    model.eval()
    chunks = []
    for start in range(0, len(labels), batch_size):
        ts = [Tensor(v[start:start + batch_size]) for v in views]
        chunks.append(model.forward(ts).probs.data)
    return ScoreSet(np.concatenate(chunks, axis=0), labels, class_names)


def train_fold(model_cfg: ModelConfig, train_views, train_labels, val_views, val_labels,
               cfg: TrainConfig, class_names: list[str], fold_name: str = "fold0",
               build_seed: int | None = None) -> tuple[Model, list[dict], int, int]:
    """Train one model; returns (best model, loss curve, best_epoch, epochs_run)."""
    if len(train_labels) == 0:
        raise ConfigError("empty training set")
    if len(val_labels) == 0:
        raise ConfigError("early stopping needs a non-empty validation set")
    seed = cfg.seed if build_seed is None else build_seed
    model = Model.build(model_cfg, seed=seed)
    adam = AdamState(model.params)
    rng = np.random.default_rng(seed)
    shuffle_rng, dropout_rng = rng.spawn(2)

    n = len(train_labels)
    best_metric = None
    best_epoch = 0
    best_snapshot = None
    bad_epochs = 0
    curve: list[dict] = []
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        model.train()
        order = np.arange(n)
        if cfg.shuffle:
            shuffle_rng.shuffle(order)
        sums = {"total": 0.0, "ce": 0.0, "rd": 0.0}
        for batch_no, idx in enumerate(_batches(n, cfg.batch_size, order)):
            views_t = [Tensor(v[idx]) for v in train_views]
            for p in model.params.values():
                p.zero_grad()
            try:
                with ad.Tape() as tape:
                    breakdown, _ = _model_loss(model, views_t, train_labels[idx], cfg, dropout_rng)
            except NumericDomainError as exc:
                raise NumericFailure(
                    f"numeric domain failure at epoch {epoch}, batch {batch_no}: {exc}") from exc
            if not np.isfinite(breakdown.total):
                raise NumericFailure(
                    f"non-finite loss {breakdown.total} at epoch {epoch}, batch {batch_no}")
            assert abs(breakdown.total
                       - (breakdown.lam * breakdown.ce + (1 - breakdown.lam) * breakdown.rd)) <= 1e-6
            ad.backward(breakdown.tensor, tape)
            grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
            adam_step(model.params, grads, adam, cfg.lr)
            w = len(idx)
            sums["total"] += breakdown.total * w
            sums["ce"] += breakdown.ce * w
            sums["rd"] += breakdown.rd * w

        # validation for early stopping
        val_scores = _eval_scores(model, val_views, val_labels, class_names)
        try:
            val_bd, _ = _model_loss(model, [Tensor(v) for v in val_views], val_labels, cfg, None)
        except NumericDomainError as exc:
            raise NumericFailure(
                f"numeric domain failure in validation at epoch {epoch}, batch n/a: {exc}") from exc
        if not np.isfinite(val_bd.total):
            raise NumericFailure(f"non-finite validation loss at epoch {epoch}, batch n/a")
        val_acc = float(np.mean(np.argmax(val_scores.probs, axis=1) == val_scores.labels))
        metric = val_bd.total if cfg.early_stop_metric == "val_loss" else -val_acc

        curve.append({
            "epoch": epoch,
            "train_total": sums["total"] / n,
            "train_ce": sums["ce"] / n,
            "train_rd": sums["rd"] / n,
            "val_loss": val_bd.total,
            "val_accuracy": val_acc,
        })

        if best_metric is None or metric < best_metric:
            best_metric = metric
            best_epoch = epoch
            best_snapshot = model.state_snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.early_stop_patience:
                break

    model.restore_snapshot(best_snapshot)
    model.eval()
    return model, curve, best_epoch, epochs_run


def config_hash(model_cfg: ModelConfig, cfg: TrainConfig) -> str:
    blob = json.dumps({"model": model_cfg.to_dict(), "train": cfg.to_dict()},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(manifest: DatasetManifest, banks: dict[str, FeatureBank],
                   model_cfg: ModelConfig, cfg: TrainConfig, out_dir,
                   view_names: list[str] | None = None) -> dict:
    """Train/evaluate across all folds of the manifest's split policy.

    Writes ``report.json`` (canonical, deterministic), ``timing.json``
    (wall-clock sidecar) and one checkpoint per fold into ``out_dir``;
    returns the report dict. On failure a ``report.partial.json`` with the
    folds completed so far is flushed before the error propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = view_names or [r.name for r in manifest.representations]
    dims = []
    for name in names:
        ref = next((r for r in manifest.representations if r.name == name), None)
        if ref is None:
            raise ConfigError(f"manifest has no representation named {name!r}")
        dims.append(ref.dim)
    if list(model_cfg.input_dims) != dims:
        raise ConfigError(
            f"model input_dims {model_cfg.input_dims} do not match selected views {dims}")
    splits = resolve_splits(manifest, banks)

    t0 = time.monotonic()
    folds: list[FoldRecord] = []
    try:
        for fold_index, split in enumerate(splits):
            fold_seed = cfg.seed + fold_index
            tr_views, tr_labels, _ = load_views(manifest, banks, split, "train", names)
            va_views, va_labels, _ = load_views(manifest, banks, split, "val", names)
            te_views, te_labels, _ = load_views(manifest, banks, split, "test", names)
            model, curve, best_epoch, epochs_run = train_fold(
                model_cfg, tr_views, tr_labels, va_views, va_labels, cfg,
                manifest.class_names, fold_name=split.name, build_seed=fold_seed)
            scores = _eval_scores(model, te_views, te_labels, manifest.class_names)
            report = evaluate(scores)
            ckpt_name = f"{split.name}.ckpt"
            model.save(out_dir / ckpt_name)
            folds.append(FoldRecord(
                name=split.name,
                accuracy=report.accuracy,
                mean_eer=report.mean_eer,
                per_class_eer=[None if np.isnan(v) else float(v) for v in report.per_class_eer],
                undefined_classes=report.undefined_classes,
                best_epoch=best_epoch,
                epochs_run=epochs_run,
                parameter_count=model.count_parameters(),
                loss_curve=curve,
                checkpoint=ckpt_name,
            ))
    except Exception as exc:
        partial = {
            "failed": True,
            "error": f"{type(exc).__name__}: {exc}",
            "folds": [f.to_dict() for f in folds],
        }
        (out_dir / "report.partial.json").write_text(json.dumps(partial, indent=2, sort_keys=True))
        raise
    wall_clock = time.monotonic() - t0

    report = {
        "dataset_name": manifest.dataset_name,
        "class_names": manifest.class_names,
        "views": names,
        "model_config": model_cfg.to_dict(),
        "train_config": cfg.to_dict(),
        "seed": cfg.seed,
        "config_hash": config_hash(model_cfg, cfg),
        "backend": backend.backend_name(),
        "rd_normalization": model_cfg.rd_normalization,
        "incomplete_batch_policy": "kept",
        "parameter_count": folds[0].parameter_count if folds else 0,
        "folds": [f.to_dict() for f in folds],
        "averages": {
            "accuracy": float(np.mean([f.accuracy for f in folds])),
            "mean_eer": float(np.mean([f.mean_eer for f in folds])),
        },
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out_dir / "timing.json").write_text(
        json.dumps({"wall_clock_seconds": wall_clock}, indent=2) + "\n")
    return report
