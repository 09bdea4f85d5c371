"""Training objectives: cross-entropy, the divergence alignment term, and
their weighted combination ``total = lam * ce + (1 - lam) * rd``.

The alignment term between branch projections e_a, e_b of width D is

    (1 / (alpha - 1)) * log( sum_i (e_a[i] + eps)^alpha * (e_b[i] + eps)^(1 - alpha) )

averaged over the batch. Raw projections can be negative, where the
fractional powers are undefined, so inputs are first stabilized by one of
two modes: ``relu_eps`` clamps negatives to zero before adding eps (minimal
change, value can be negative and is not a true divergence), or ``softmax``
row-normalizes both sides first (restores distribution semantics:
self-divergence 0 and non-negativity at eps=0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, NumericDomainError, ShapeMismatchError


@dataclass(frozen=True)
class RenyiParams:
    alpha: float = 2.0
    epsilon: float = 0.1
    lam: float = 0.4

    def __post_init__(self):
        if self.alpha <= 1.0:
            raise ConfigError(f"alpha must be > 1 (formula pole at 1), got {self.alpha}")
        # epsilon 0 is allowed for analysis; training defaults keep it positive
        if self.epsilon < 0.0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0,1], got {self.lam}")


@dataclass
class LossBreakdown:
    total: float
    ce: float
    rd: float
    lam: float
    tensor: Tensor  # scalar node to call backward on

    def as_dict(self) -> dict:
        return {"total": self.total, "ce": self.ce, "rd": self.rd, "lambda": self.lam}


CE_CLAMP = 1e-12  # guards log(0) on saturated softmax rows


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log(probs[i, label_i] + clamp)."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ContractError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]")
    picked = ad.gather_rows(probs, labels)
    return ad.mul_scalar(ad.mean_(ad.log(ad.add_scalar(picked, CE_CLAMP))), -1.0)


def _stabilize(e: Tensor, normalization: str) -> Tensor:
    if normalization == "relu_eps":
        return ad.relu(e)
    if normalization == "softmax":
        return ad.softmax(e)
    raise ConfigError(f"unknown normalization {normalization!r}; expected 'relu_eps' or 'softmax'")


def renyi_divergence(e_a: Tensor, e_b: Tensor, params: RenyiParams,
                     normalization: str = "relu_eps") -> Tensor:
    """Order-alpha divergence between stabilized projections, batch-averaged.

    Accepts (batch, D) pairs or single (D,) vectors. Asymmetric in its
    arguments by construction.
    """
    if e_a.shape != e_b.shape:
        raise ShapeMismatchError("renyi_divergence", e_a.shape, e_b.shape)
    single = e_a.data.ndim == 1
    if single:
        e_a = ad.reshape(e_a, (1, e_a.shape[0]))
        e_b = ad.reshape(e_b, (1, e_b.shape[0]))
    a = ad.add_scalar(_stabilize(e_a, normalization), params.epsilon)
    b = ad.add_scalar(_stabilize(e_b, normalization), params.epsilon)
    for name, t in (("e_a", a), ("e_b", b)):
        flat = t.data.reshape(-1)
        bad = np.flatnonzero(~(flat > 0))
        if bad.size:  # unreachable for epsilon > 0; internal invariant
            raise NumericDomainError(f"renyi_divergence {name} base", int(bad[0]), float(flat[bad[0]]))
    alpha = params.alpha
    terms = ad.mul(ad.power(a, alpha), ad.power(b, 1.0 - alpha))
    per_row = ad.mul_scalar(ad.log(ad.sum_(terms, axis=1)), 1.0 / (alpha - 1.0))
    return ad.mean_(per_row)


def combined_loss(probs: Tensor, labels: np.ndarray,
                  proj_a: Tensor | None, proj_b: Tensor | None,
                  params: RenyiParams, normalization: str = "relu_eps") -> LossBreakdown:
    """Weighted objective. Without projections (plain fcn/cnn) the divergence
    term is absent and the breakdown reports lam=1, rd=0."""
    ce = cross_entropy(probs, labels)
    if proj_a is None or proj_b is None:
        return LossBreakdown(total=float(ce.data), ce=float(ce.data), rd=0.0,
                             lam=1.0, tensor=ce)
    rd = renyi_divergence(proj_a, proj_b, params, normalization)
    total = ad.add(ad.mul_scalar(ce, params.lam), ad.mul_scalar(rd, 1.0 - params.lam))
    return LossBreakdown(total=float(total.data), ce=float(ce.data),
                         rd=float(rd.data), lam=params.lam, tensor=total)
