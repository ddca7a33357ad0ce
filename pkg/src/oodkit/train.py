"""SGD training loop: momentum + weight decay, warmup/step-decay schedule,
jointly shuffled ID / fake-outlier batches.

The loop is single-threaded and fully seeded so that two runs with the same
config produce bitwise-identical parameters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import AnchorSet
from .autodiff import Tape, Tensor
from .data import Dataset
from .errors import ConfigError, DimensionError, NumericalError
from .jigsaw import augment_inputs
from .losses import BatchView, LossWeights, total_loss
from .model import OodClassifier
from .seeding import rng_for


@dataclass
class WarmupConfig:
    enabled_iff_batch_gt: int = 256
    start_lr: float = 0.01
    epochs: int = 10


@dataclass
class DecayConfig:
    factor: float = 10.0
    milestones: tuple[int, ...] = (20,)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr_init: float = 0.05
    warmup: WarmupConfig = field(default_factory=WarmupConfig)
    decay: DecayConfig = field(default_factory=DecayConfig)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    augment_noise_sigma: float = 0.0
    augment_hflip_prob: float = 0.0

    def __post_init__(self):
        if self.lr_init <= 0 or self.warmup.start_lr <= 0 or self.decay.factor <= 0:
            raise ConfigError("learning rates must stay strictly positive")
        ms = tuple(self.decay.milestones)
        if any(m2 <= m1 for m1, m2 in zip(ms, ms[1:])) or any(m >= self.epochs for m in ms):
            raise ConfigError(
                f"milestones must be strictly increasing and < epochs, got {ms} for "
                f"{self.epochs} epochs")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (pairs are needed), got {self.batch_size}")

    # flat key-value form used by the CLI config file
    def to_flat(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr_init": self.lr_init,
            "warmup_batch_threshold": self.warmup.enabled_iff_batch_gt,
            "warmup_start_lr": self.warmup.start_lr, "warmup_epochs": self.warmup.epochs,
            "decay_factor": self.decay.factor,
            "decay_milestones": list(self.decay.milestones),
            "momentum": self.momentum, "weight_decay": self.weight_decay,
            "lambda1": self.loss_weights.lambda1, "lambda2": self.loss_weights.lambda2,
            "tau": self.loss_weights.tau, "tau_prime": self.loss_weights.tau_prime,
            "sc_include_self": self.loss_weights.sc_include_self,
            "seed": self.seed,
            "augment_noise_sigma": self.augment_noise_sigma,
            "augment_hflip_prob": self.augment_hflip_prob,
        }

    @classmethod
    def from_flat(cls, doc: dict) -> "TrainConfig":
        base = cls().to_flat()
        unknown = set(doc) - set(base)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base.update(doc)
        return cls(
            epochs=int(base["epochs"]), batch_size=int(base["batch_size"]),
            lr_init=float(base["lr_init"]),
            warmup=WarmupConfig(int(base["warmup_batch_threshold"]),
                                float(base["warmup_start_lr"]), int(base["warmup_epochs"])),
            decay=DecayConfig(float(base["decay_factor"]),
                              tuple(int(m) for m in base["decay_milestones"])),
            momentum=float(base["momentum"]), weight_decay=float(base["weight_decay"]),
            loss_weights=LossWeights(float(base["lambda1"]), float(base["lambda2"]),
                                     float(base["tau"]), float(base["tau_prime"]),
                                     bool(base["sc_include_self"])),
            seed=int(base["seed"]),
            augment_noise_sigma=float(base["augment_noise_sigma"]),
            augment_hflip_prob=float(base["augment_hflip_prob"]),
        )


def lr_at(config: TrainConfig, epoch: int, step_in_epoch: int, steps_per_epoch: int) -> float:
    """Linear per-step warmup (only when the batch size exceeds the threshold),
    then piecewise-constant decay by ``factor`` at each milestone epoch."""
    w = config.warmup
    if config.batch_size > w.enabled_iff_batch_gt and epoch < w.epochs:
        frac = (epoch * steps_per_epoch + step_in_epoch) / (w.epochs * steps_per_epoch)
        return w.start_lr + (config.lr_init - w.start_lr) * frac
    drops = sum(1 for m in config.decay.milestones if epoch >= m)
    return config.lr_init / config.decay.factor ** drops


def sgd_step(params: list[Tensor], grads: list[np.ndarray | None],
             velocity: list[np.ndarray], lr: float, momentum: float,
             weight_decay: float) -> None:
    """v <- momentum*v + (grad + wd*param); param <- param - lr*v (in place).

    Parameters whose grad is None are skipped entirely (they took no part in
    the loss this step).
    """
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            continue
        if g.shape != p.data.shape or v.shape != p.data.shape:
            raise DimensionError(
                f"sgd_step: param {p.name or '?'} shapes disagree: "
                f"param {p.data.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v += g + weight_decay * p.data
        p.data -= lr * v


def make_batches(n_id: int, n_fake: int, batch_size: int,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of batch index sets over the joint ID+fake pool.

    Uniform shuffle of all n_id + n_fake indices, chunked; the last short
    batch is kept, so every sample appears exactly once per epoch.
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    total = n_id + n_fake
    if total == 0:
        raise ConfigError("no training samples")
    perm = rng.permutation(total)
    return [perm[i:i + batch_size] for i in range(0, total, batch_size)]


@dataclass
class EpochMetrics:
    epoch: int
    ce: float
    ci: float
    sc: float
    total: float
    id_train_accuracy: float


@dataclass
class FitResult:
    model: OodClassifier
    metrics: list[EpochMetrics]


def write_metrics_csv(metrics: list[EpochMetrics], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "ce", "ci", "sc", "total", "acc"])
        for m in metrics:
            w.writerow([m.epoch, repr(m.ce), repr(m.ci), repr(m.sc), repr(m.total),
                        repr(m.id_train_accuracy)])


def fit(model: OodClassifier, id_train: Dataset, fake: Dataset | None,
        anchors: AnchorSet | None, config: TrainConfig) -> FitResult:
    """Train the model in place; returns it with per-epoch loss/accuracy logs.

    A trailing single-sample batch (possible when the pool size is 1 mod
    batch_size) has no pairs, so the supervised-contrast term is dropped for
    that batch only.
    """
    if id_train.input_dim != model.dims.input_dim:
        raise DimensionError(f"data dim {id_train.input_dim} != model input {model.dims.input_dim}")
    if id_train.n_classes != model.dims.n_classes:
        raise ConfigError(f"data has {id_train.n_classes} classes, model expects "
                          f"{model.dims.n_classes}")
    if fake is not None and len(fake) == 0:
        fake = None
    if fake is not None and (fake.input_dim != id_train.input_dim
                             or fake.n_classes != id_train.n_classes):
        raise ConfigError("fake set metadata does not match the ID training set")
    if anchors is not None and anchors.dim != model.dims.embed_dim:
        raise ConfigError(f"anchor dim {anchors.dim} != model embed dim {model.dims.embed_dim}")

    n_id = len(id_train)
    n_fake = 0 if fake is None else len(fake)
    x_all = id_train.inputs() if fake is None else \
        np.concatenate([id_train.inputs(), fake.inputs()])
    y_all = id_train.labels() if fake is None else \
        np.concatenate([id_train.labels(), fake.labels()])

    shuffle_rng = rng_for(config.seed, "shuffle")
    augment_rng = rng_for(config.seed, "augment")
    augment_on = config.augment_noise_sigma > 0 or config.augment_hflip_prob > 0

    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    steps_per_epoch = (n_id + n_fake + config.batch_size - 1) // config.batch_size
    model.train()

    history: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        sums = np.zeros(4)  # ce, ci, sc, total weighted by batch size
        id_seen = 0
        id_correct = 0
        for step, idx in enumerate(make_batches(n_id, n_fake, config.batch_size, shuffle_rng)):
            xb = x_all[idx]
            if augment_on and id_train.grid is not None:
                xb = augment_inputs(xb, id_train.grid, augment_rng,
                                    config.augment_noise_sigma, config.augment_hflip_prob)
            yb = y_all[idx]
            weights = config.loss_weights
            if idx.size < 2 and weights.lambda2 != 0.0:
                weights = replace(weights, lambda2=0.0)
            with Tape() as tape:
                _, logits, projected = model.forward(xb)
                batch = BatchView(logits, projected, yb, model.dims.n_classes)
                loss, parts = total_loss(batch, anchors, weights)
            if not np.isfinite(loss.data):
                culprit = tape.first_nonfinite()
                where = f"op {culprit[0]} (shape {culprit[1].shape})" if culprit else "loss"
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} step {step}; first non-finite: {where}")
            model.zero_grads()
            loss.backward()
            sgd_step(params, [p.grad for p in params], velocity,
                     lr_at(config, epoch, step, steps_per_epoch),
                     config.momentum, config.weight_decay)

            sums += idx.size * np.array([parts.ce, parts.ci, parts.sc, parts.total])
            ids = yb <= model.dims.n_classes
            if ids.any():
                preds = np.argmax(logits.data[ids], axis=1) + 1
                id_correct += int((preds == yb[ids]).sum())
                id_seen += int(ids.sum())
        means = sums / (n_id + n_fake)
        history.append(EpochMetrics(epoch, means[0], means[1], means[2], means[3],
                                    id_correct / max(id_seen, 1)))
    return FitResult(model, history)
