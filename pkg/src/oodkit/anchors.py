"""Per-class semantic anchor vectors: file format, synthesis, similarity.

Anchors are frozen unit vectors consumed during training; this module never
computes text embeddings itself. The file schema is shared with the
standalone exporter tool, so floats are written with 17 significant digits
to survive any compliant JSON reader.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

ANCHOR_VERSION = 1
UNIT_TOL = 1e-9


@dataclass
class AnchorEntry:
    class_name: str
    description: str
    vector: np.ndarray


@dataclass
class AnchorSet:
    """K unit-norm anchor vectors; entry order matches label order 1..K."""

    dim: int
    entries: list[AnchorEntry]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise FormatError(f"an anchor set needs at least 2 classes, got {len(self.entries)}")
        names = [e.class_name for e in self.entries]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise FormatError(f"duplicate anchor class names: {sorted(dupes)}")
        for e in self.entries:
            if e.vector.shape != (self.dim,):
                raise FormatError(
                    f"anchor {e.class_name!r}: vector has dim {e.vector.size}, expected {self.dim}")
            if abs(np.linalg.norm(e.vector) - 1.0) > UNIT_TOL:
                raise FormatError(f"anchor {e.class_name!r}: vector is not unit norm")

    def __len__(self) -> int:
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        """[K, dim] matrix of anchors in entry order."""
        return np.stack([e.vector for e in self.entries])

    @property
    def class_names(self) -> list[str]:
        return [e.class_name for e in self.entries]


def cosine_sim(z: np.ndarray, mu: np.ndarray) -> float:
    """Dot product of unit vectors, clamped to [-1, 1] against rounding."""
    return float(np.clip(np.dot(np.asarray(z), np.asarray(mu)), -1.0, 1.0))


def synth_anchors(n_classes: int, dim: int, rng: np.random.Generator,
                  mode: str = "random_unit",
                  class_names: list[str] | None = None) -> AnchorSet:
    """Deterministic synthetic anchors: iid Gaussian directions, optionally
    Gram-Schmidt orthonormalized (requires dim >= n_classes)."""
    if class_names is None:
        class_names = [f"class-{k}" for k in range(1, n_classes + 1)]
    if len(class_names) != n_classes:
        raise DomainError(f"{len(class_names)} names for {n_classes} classes")
    if mode == "random_unit":
        vecs = rng.normal(size=(n_classes, dim))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    elif mode == "orthonormal":
        if dim < n_classes:
            raise DomainError(f"orthonormal mode needs dim >= n_classes ({dim} < {n_classes})")
        vecs = np.empty((n_classes, dim))
        for k in range(n_classes):
            while True:
                v = rng.normal(size=dim)
                for j in range(k):  # modified Gram-Schmidt
                    v -= np.dot(v, vecs[j]) * vecs[j]
                norm = np.linalg.norm(v)
                if norm > 1e-10:
                    break
            vecs[k] = v / norm
    else:
        raise DomainError(f"unknown anchor mode {mode!r}")
    entries = [AnchorEntry(name, f"synthetic anchor for {name}", vecs[k])
               for k, name in enumerate(class_names)]
    return AnchorSet(dim, entries)


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def save_anchors(anchors: AnchorSet, path: str) -> None:
    """Write the anchor file with 17-significant-digit floats."""
    entry_docs = []
    for e in anchors.entries:
        if not np.all(np.isfinite(e.vector)):
            raise FormatError(f"anchor {e.class_name!r}: non-finite vector component")
        vec = "[" + ", ".join(_fmt17(v) for v in e.vector) + "]"
        entry_docs.append('{"class_name": %s, "description": %s, "vector": %s}'
                          % (json.dumps(e.class_name), json.dumps(e.description), vec))
    text = '{"format_version": %d, "dim": %d, "anchors": [%s]}' \
        % (ANCHOR_VERSION, anchors.dim, ", ".join(entry_docs))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_anchors(path: str) -> AnchorSet:
    """Load and validate an anchor file; vectors are re-normalized to unit
    norm on load (tolerating exporter rounding), order preserved."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"anchors {path}: invalid JSON ({e})") from e
    if doc.get("format_version") != ANCHOR_VERSION:
        raise FormatError(f"anchors {path}: unsupported format_version "
                          f"{doc.get('format_version')!r}")
    dim = doc.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise FormatError(f"anchors {path}: bad dim {dim!r}")
    entries = []
    for rec in doc.get("anchors", []):
        name = rec.get("class_name")
        vec = np.asarray(rec.get("vector", []), dtype=np.float64)
        if vec.shape != (dim,):
            raise FormatError(f"anchors {path}: entry {name!r} has dim {vec.size}, expected {dim}")
        norm = np.linalg.norm(vec)
        if norm == 0.0 or not np.isfinite(norm):
            raise FormatError(f"anchors {path}: entry {name!r} has a zero or non-finite vector")
        entries.append(AnchorEntry(name, rec.get("description", ""), vec / norm))
    return AnchorSet(dim, entries)
