"""Encoder / projector / classifier-head model and its checkpoint format.

The encoder is a plain MLP (ReLU after every affine layer), the projector
is Linear-BN-ReLU-Linear with hidden width twice its input and a final
l2-normalization, and the head is affine with K+1 outputs (K ID classes
plus one fake-outlier class). Logits depend only on the encoder output;
the projector is a separate branch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractViolation, DimensionError, FormatError

CHECKPOINT_VERSION = 1


@dataclass
class ModelDims:
    input_dim: int
    feature_dim: int
    embed_dim: int
    n_classes: int
    hidden: tuple[int, ...] = (256, 256)

    def validate(self) -> None:
        dims = [self.input_dim, self.feature_dim, self.embed_dim, self.n_classes, *self.hidden]
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"all model dimensions must be >= 1, got {self}")


@dataclass
class BatchNormState:
    """Running statistics for one batch-normalized layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, width: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(width), np.ones(width), momentum, eps)


def batchnorm_forward(x: Tensor, state: BatchNormState, mode: str,
                      gamma: Tensor, beta: Tensor) -> Tensor:
    """Batch normalization over axis 0 with learnable scale/shift.

    Training mode normalizes with batch statistics (biased variance) and
    updates the running stats in place (unbiased variance, torch-style);
    inference mode normalizes with the running stats only.
    """
    if x.data.ndim != 2 or x.shape[1] != state.running_mean.shape[0]:
        raise DimensionError(
            f"batchnorm: input shape {x.shape} does not match width {state.running_mean.shape[0]}")
    if mode == "train":
        b = x.shape[0]
        if b < 2:
            raise ContractViolation("batchnorm in training mode needs a batch of at least 2")
        mu = ad.mean(x, axis=0)
        centered = x - mu
        var = ad.mean(centered * centered, axis=0)
        xhat = centered * (var + state.eps) ** -0.5
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu.data
        state.running_var = (1.0 - m) * state.running_var + m * var.data * b / (b - 1)
    elif mode == "eval":
        scale = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - Tensor(state.running_mean)) * Tensor(scale)
    else:
        raise ConfigError(f"unknown batchnorm mode {mode!r}")
    return xhat * gamma + beta


class OodClassifier:
    """The three trainable parts: encoder f, projector g, head h.

    ``forward`` returns (features, logits, projected): penultimate features
    feed both the head and the projector; projected rows are unit-norm so
    cosine similarity reduces to a dot product.
    """

    def __init__(self, dims: ModelDims, params: dict[str, Tensor], bn: BatchNormState):
        self.dims = dims
        self.params = params
        self.bn = bn
        self.mode = "train"

    @classmethod
    def init(cls, dims: ModelDims, seed: int) -> "OodClassifier":
        """Fan-in-scaled normal init (variance 2/fan_in before ReLU), zero biases."""
        dims.validate()
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        params: dict[str, Tensor] = {}

        def affine(name: str, fan_in: int, fan_out: int, relu_next: bool) -> None:
            std = np.sqrt((2.0 if relu_next else 1.0) / fan_in)
            params[f"{name}.w"] = Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)),
                                         requires_grad=True, name=f"{name}.w")
            params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

        widths = [dims.input_dim, *dims.hidden, dims.feature_dim]
        for i in range(len(widths) - 1):
            affine(f"enc{i}", widths[i], widths[i + 1], relu_next=True)
        proj_hidden = 2 * dims.feature_dim
        affine("proj1", dims.feature_dim, proj_hidden, relu_next=True)
        params["bn.gamma"] = Tensor(np.ones(proj_hidden), requires_grad=True, name="bn.gamma")
        params["bn.beta"] = Tensor(np.zeros(proj_hidden), requires_grad=True, name="bn.beta")
        affine("proj2", proj_hidden, dims.embed_dim, relu_next=False)
        affine("head", dims.feature_dim, dims.n_classes + 1, relu_next=False)
        return cls(dims, params, BatchNormState.fresh(proj_hidden))

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def zero_grads(self) -> None:
        ad.zero_grads(self.parameters())

    def train(self) -> "OodClassifier":
        self.mode = "train"
        return self

    def eval(self) -> "OodClassifier":
        self.mode = "eval"
        return self

    @property
    def n_encoder_layers(self) -> int:
        return len(self.dims.hidden) + 1

    def forward(self, batch) -> tuple[Tensor, Tensor, Tensor]:
        """(features [B,F], logits [B,K+1], projected [B,d]) for a [B,D] batch."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.data.ndim != 2 or x.shape[1] != self.dims.input_dim:
            raise DimensionError(
                f"forward: batch shape {x.shape} does not match input_dim {self.dims.input_dim}")
        h = x
        for i in range(self.n_encoder_layers):
            h = ad.relu(h @ self.params[f"enc{i}.w"] + self.params[f"enc{i}.b"])
        features = h
        logits = features @ self.params["head.w"] + self.params["head.b"]
        p = features @ self.params["proj1.w"] + self.params["proj1.b"]
        p = batchnorm_forward(p, self.bn, self.mode, self.params["bn.gamma"], self.params["bn.beta"])
        p = ad.relu(p)
        p = p @ self.params["proj2.w"] + self.params["proj2.b"]
        projected = ad.l2_normalize(p)
        return features, logits, projected


def save_checkpoint(model: OodClassifier, path: str) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "checkpoint",
        "dims": {
            "input_dim": model.dims.input_dim,
            "feature_dim": model.dims.feature_dim,
            "embed_dim": model.dims.embed_dim,
            "n_classes": model.dims.n_classes,
            "hidden": list(model.dims.hidden),
        },
        "bn": {
            "momentum": model.bn.momentum,
            "eps": model.bn.eps,
            "running_mean": model.bn.running_mean.tolist(),
            "running_var": model.bn.running_var.tolist(),
        },
        "params": {
            name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
            for name, t in sorted(model.params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_checkpoint(path: str) -> OodClassifier:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint {path}: invalid JSON ({e})") from e
    if doc.get("kind") != "checkpoint" or doc.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint {path}: unsupported kind/version "
                          f"{doc.get('kind')!r}/{doc.get('format_version')!r}")
    d = doc["dims"]
    dims = ModelDims(d["input_dim"], d["feature_dim"], d["embed_dim"], d["n_classes"],
                     tuple(d["hidden"]))
    params = {}
    for name, rec in doc["params"].items():
        arr = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        params[name] = Tensor(arr, requires_grad=True, name=name)
    bn_doc = doc["bn"]
    bn = BatchNormState(np.asarray(bn_doc["running_mean"], dtype=np.float64),
                        np.asarray(bn_doc["running_var"], dtype=np.float64),
                        bn_doc["momentum"], bn_doc["eps"])
    return OodClassifier(dims, params, bn)
