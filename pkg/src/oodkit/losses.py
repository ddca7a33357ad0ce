"""The three training losses and their weighted combination.

All three operate on a mixed batch of ID and fake-outlier samples:

  * ``ce_loss``      -- (K+1)-way cross entropy over every sample;
  * ``ci_loss``      -- anchor-alignment contrast: pulls each ID sample's
    projected embedding toward its class anchor against all K anchors
    (fake outliers excluded, denominator includes the positive);
  * ``sc_loss``      -- supervised contrast over all projected embeddings,
    fake outliers acting as one shared class.

Similarities are plain dot products because projected rows and anchors are
unit-norm. Each loss is an average of -log probabilities, hence >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .anchors import AnchorSet
from .autodiff import Tensor
from .errors import ConfigError, ContractViolation, DomainError


@dataclass
class LossWeights:
    lambda1: float = 1.0   # weight of the anchor-alignment contrast
    lambda2: float = 1.0   # weight of the supervised contrast
    tau: float = 0.1       # anchor-contrast temperature
    tau_prime: float = 0.1  # supervised-contrast temperature
    sc_include_self: bool = False  # contrast set includes the sample itself

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"loss weights must be >= 0, got {self.lambda1}, {self.lambda2}")
        if self.tau <= 0 or self.tau_prime <= 0:
            raise ConfigError(f"temperatures must be > 0, got {self.tau}, {self.tau_prime}")


@dataclass
class BatchView:
    """Model outputs plus labels for one mixed batch (S = n_id + n_fake)."""

    logits: Tensor      # [S, K+1]
    projected: Tensor   # [S, d], unit rows
    labels: np.ndarray  # [S], 1-based; K+1 marks fake outliers
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        s = self.labels.shape[0]
        if self.logits.shape != (s, self.n_classes + 1):
            raise DomainError(f"logits shape {self.logits.shape} != ({s}, {self.n_classes + 1})")
        if self.projected.shape[0] != s:
            raise DomainError(f"projected rows {self.projected.shape[0]} != {s} labels")
        if s and (self.labels.min() < 1 or self.labels.max() > self.n_classes + 1):
            raise DomainError(
                f"labels must lie in [1, {self.n_classes + 1}], got "
                f"[{self.labels.min()}, {self.labels.max()}]")

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def id_mask(self) -> np.ndarray:
        return self.labels <= self.n_classes


def _one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], width))
    out[np.arange(labels.shape[0]), labels - 1] = 1.0
    return out


def ce_loss(batch: BatchView) -> Tensor:
    """Mean (K+1)-way cross entropy over all samples, via the logsumexp shift."""
    onehot = Tensor(_one_hot(batch.labels, batch.n_classes + 1))
    per_sample = ad.logsumexp(batch.logits, axis=-1) - ad.sum_(batch.logits * onehot, axis=-1)
    return ad.mean(per_sample)


def ci_loss(batch: BatchView, anchors: AnchorSet, tau: float) -> Tensor:
    """Anchor-alignment contrast averaged over the batch's ID samples.

    A batch with no ID samples contributes 0 (empty-sum convention guarding
    the otherwise-undefined 1/N prefactor).
    """
    if len(anchors) != batch.n_classes:
        raise ConfigError(f"{len(anchors)} anchors for {batch.n_classes} classes")
    if anchors.dim != batch.projected.shape[1]:
        raise ConfigError(f"anchor dim {anchors.dim} != projected dim {batch.projected.shape[1]}")
    id_idx = np.flatnonzero(batch.id_mask)
    if id_idx.size == 0:
        return Tensor(0.0)
    z_id = ad.take_rows(batch.projected, id_idx)
    sims = (z_id @ Tensor(anchors.matrix().T)) * (1.0 / tau)
    onehot = Tensor(_one_hot(batch.labels[id_idx], batch.n_classes))
    per_sample = ad.logsumexp(sims, axis=-1) - ad.sum_(sims * onehot, axis=-1)
    return ad.mean(per_sample)


def sc_loss(batch: BatchView, tau_prime: float, include_self: bool = False) -> Tensor:
    """Supervised contrast over all projected embeddings (ID and fake).

    For each sample i, positives are the other batch members sharing its
    label and the contrast set is everyone else in the batch; samples with
    no positive contribute 0. ``include_self`` switches to the literal
    reading where i itself joins its own contrast and positive sets.
    """
    s = batch.size
    if s < 2:
        raise ContractViolation(f"supervised contrast needs a batch of >= 2, got {s}")
    sim = (batch.projected @ ad.transpose(batch.projected)) * (1.0 / tau_prime)

    eye = np.eye(s)
    contrast_mask = np.ones((s, s)) if include_self else 1.0 - eye
    label_eq = (batch.labels[:, None] == batch.labels[None, :]).astype(np.float64)
    positive_mask = label_eq * contrast_mask

    # per-row max over the contrast set; a constant shift is gradient-transparent.
    # Masked-out entries get a shift that drives exp to an exact 0 underflow,
    # so no inf*0 can appear even at extreme temperatures.
    shift = np.where(contrast_mask > 0, sim.data, -np.inf).max(axis=1)
    shift_mat = np.where(contrast_mask > 0, shift[:, None], sim.data + 800.0)
    shifted = sim - Tensor(shift_mat)
    denom = ad.sum_(ad.exp(shifted) * Tensor(contrast_mask), axis=-1)
    log_denom = ad.log(denom) + Tensor(shift)

    counts = positive_mask.sum(axis=1)
    active = counts > 0
    inv_counts = np.where(active, 1.0 / np.where(active, counts, 1.0), 0.0)
    pos_sum = ad.sum_(sim * Tensor(positive_mask), axis=-1)
    per_sample = pos_sum * Tensor(inv_counts) - log_denom * Tensor(active.astype(np.float64))
    return ad.neg(ad.mean(per_sample))


@dataclass
class LossParts:
    ce: float
    ci: float
    sc: float
    total: float


def total_loss(batch: BatchView, anchors: AnchorSet | None, weights: LossWeights
               ) -> tuple[Tensor, LossParts]:
    """ce + lambda1*ci + lambda2*sc, with the per-component values for logging.

    Components with zero weight are skipped entirely (their logged value is
    0), so the CE-only configuration needs no anchor set. Preconditions of
    the active components propagate.
    """
    total = ce_loss(batch)
    parts = [float(total.data), 0.0, 0.0]
    if weights.lambda1 != 0.0:
        if anchors is None:
            raise ConfigError("anchor-alignment loss is enabled but no anchors were given")
        ci = ci_loss(batch, anchors, weights.tau)
        parts[1] = float(ci.data)
        total = total + ci * weights.lambda1
    if weights.lambda2 != 0.0:
        sc = sc_loss(batch, weights.tau_prime, weights.sc_include_self)
        parts[2] = float(sc.data)
        total = total + sc * weights.lambda2
    return total, LossParts(parts[0], parts[1], parts[2], float(total.data))
