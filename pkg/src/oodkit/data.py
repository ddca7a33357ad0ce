"""Dataset containers, their JSON file format, and the synthetic benchmark.

The toy benchmark encodes class identity purely in the spatial arrangement
of per-patch intensity levels: every class is one permutation of a shared
level palette, so all class prototypes have equal norm (hence linearly
separable) and any non-identity patch permutation moves a sample off its
class's arrangement. Held-out permutations of the same palette serve as
the real OOD test set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, FormatError

DATASET_VERSION = 1

ORIGIN_ID_TRAIN = "id_train"
ORIGIN_ID_TEST = "id_test"
ORIGIN_FAKE = "fake_ood"
ORIGIN_REAL_OOD = "real_ood_test"
ORIGINS = (ORIGIN_ID_TRAIN, ORIGIN_ID_TEST, ORIGIN_FAKE, ORIGIN_REAL_OOD)


@dataclass
class ImageGrid:
    """H x W x C image with patch-grid metadata, pixels flat in (row, col, channel) order."""

    height: int
    width: int
    channels: int
    pixels: np.ndarray
    grid_rows: int = 4
    grid_cols: int = 4

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).ravel()
        if self.pixels.size != self.height * self.width * self.channels:
            raise DimensionError(
                f"pixel count {self.pixels.size} != {self.height}x{self.width}x{self.channels}")
        if self.height % self.grid_rows or self.width % self.grid_cols:
            raise DimensionError(
                f"grid {self.grid_rows}x{self.grid_cols} does not divide "
                f"image {self.height}x{self.width}; center-crop first")

    def as_array(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width, self.channels)

    @property
    def n_patches(self) -> int:
        return self.grid_rows * self.grid_cols


def center_crop_to_grid(height: int, width: int, channels: int, pixels: np.ndarray,
                        grid_rows: int, grid_cols: int) -> ImageGrid:
    """Crop to the largest grid-divisible size (no interpolation)."""
    new_h = (height // grid_rows) * grid_rows
    new_w = (width // grid_cols) * grid_cols
    if new_h == 0 or new_w == 0:
        raise DimensionError(f"image {height}x{width} too small for grid {grid_rows}x{grid_cols}")
    arr = np.asarray(pixels, dtype=np.float64).reshape(height, width, channels)
    top = (height - new_h) // 2
    left = (width - new_w) // 2
    cropped = arr[top:top + new_h, left:left + new_w, :]
    return ImageGrid(new_h, new_w, channels, cropped.ravel(), grid_rows, grid_cols)


@dataclass
class GridMeta:
    rows: int
    cols: int
    height: int
    width: int
    channels: int


@dataclass
class LabeledSample:
    input: np.ndarray
    label: int | None  # 1-based; K+1 marks fake OOD; None for real OOD test data
    origin: str


@dataclass
class Dataset:
    """An ordered sample collection plus the metadata needed downstream."""

    n_classes: int
    input_dim: int
    samples: list[LabeledSample]
    grid: GridMeta | None = None
    class_names: list[str] | None = None

    def __post_init__(self):
        k = self.n_classes
        for i, s in enumerate(self.samples):
            if s.origin not in ORIGINS:
                raise FormatError(f"sample {i}: unknown origin {s.origin!r}")
            if (s.label == k + 1) != (s.origin == ORIGIN_FAKE):
                raise FormatError(
                    f"sample {i}: label {s.label} inconsistent with origin {s.origin!r} "
                    f"(label {k + 1} is reserved for fake outliers)")
            if s.origin == ORIGIN_REAL_OOD and s.label is not None:
                raise FormatError(f"sample {i}: real OOD test data carries no training label")
            if s.origin in (ORIGIN_ID_TRAIN, ORIGIN_ID_TEST) and not (1 <= (s.label or 0) <= k):
                raise FormatError(f"sample {i}: ID label {s.label} outside [1, {k}]")
            if s.input.size != self.input_dim:
                raise DimensionError(f"sample {i}: input size {s.input.size} != {self.input_dim}")

    def __len__(self) -> int:
        return len(self.samples)

    def inputs(self) -> np.ndarray:
        return np.stack([s.input for s in self.samples]) if self.samples else \
            np.zeros((0, self.input_dim))

    def labels(self) -> np.ndarray:
        return np.array([0 if s.label is None else s.label for s in self.samples], dtype=np.int64)

    def images(self) -> list[ImageGrid]:
        if self.grid is None:
            raise DomainError("dataset carries no grid metadata; cannot view samples as images")
        g = self.grid
        return [ImageGrid(g.height, g.width, g.channels, s.input, g.rows, g.cols)
                for s in self.samples]


def save_dataset(ds: Dataset, path: str) -> None:
    doc = {
        "format_version": DATASET_VERSION,
        "kind": "dataset",
        "n_classes": ds.n_classes,
        "input_dim": ds.input_dim,
        "grid": None if ds.grid is None else {
            "rows": ds.grid.rows, "cols": ds.grid.cols,
            "height": ds.grid.height, "width": ds.grid.width, "channels": ds.grid.channels,
        },
        "class_names": ds.class_names,
        "samples": [
            {"input": s.input.tolist(), "label": s.label, "origin": s.origin}
            for s in ds.samples
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_dataset(path: str) -> Dataset:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"dataset {path}: invalid JSON ({e})") from e
    if doc.get("kind") != "dataset" or doc.get("format_version") != DATASET_VERSION:
        raise FormatError(f"dataset {path}: unsupported kind/version "
                          f"{doc.get('kind')!r}/{doc.get('format_version')!r}")
    grid = None
    if doc.get("grid") is not None:
        g = doc["grid"]
        grid = GridMeta(g["rows"], g["cols"], g["height"], g["width"], g["channels"])
    samples = [LabeledSample(np.asarray(rec["input"], dtype=np.float64),
                             rec["label"], rec["origin"])
               for rec in doc["samples"]]
    return Dataset(doc["n_classes"], doc["input_dim"], samples, grid,
                   doc.get("class_names"))


# ---------------------------------------------------------------------------
# synthetic arrangement benchmark
# ---------------------------------------------------------------------------


@dataclass
class ToyConfig:
    n_classes: int = 4
    n_train_per_class: int = 50
    n_test_per_class: int = 50
    n_ood_test: int = 200
    n_ood_arrangements: int = 4
    grid_rows: int = 2
    grid_cols: int = 2
    patch_px: int = 4
    noise_sigma: float = 0.1


def _sample_distinct_perms(rng: np.random.Generator, n_patches: int, count: int) -> list[tuple]:
    if math.factorial(n_patches) < count:
        raise DomainError(
            f"requested {count} distinct arrangements but only {math.factorial(n_patches)} "
            f"exist for {n_patches} patches")
    seen: set[tuple] = set()
    out: list[tuple] = []
    while len(out) < count:
        p = tuple(int(v) for v in rng.permutation(n_patches))
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def arrangement_image(perm: tuple, palette: np.ndarray, cfg: ToyConfig,
                      rng: np.random.Generator) -> ImageGrid:
    """One noisy sample of the arrangement ``perm`` (pixels clamped to [0,1])."""
    h = cfg.grid_rows * cfg.patch_px
    w = cfg.grid_cols * cfg.patch_px
    arr = np.empty((h, w, 1))
    for pos, level_idx in enumerate(perm):
        r, c = divmod(pos, cfg.grid_cols)
        patch = palette[level_idx] + rng.normal(0.0, cfg.noise_sigma, (cfg.patch_px, cfg.patch_px, 1))
        arr[r * cfg.patch_px:(r + 1) * cfg.patch_px,
            c * cfg.patch_px:(c + 1) * cfg.patch_px, :] = patch
    np.clip(arr, 0.0, 1.0, out=arr)
    return ImageGrid(h, w, 1, arr.ravel(), cfg.grid_rows, cfg.grid_cols)


def toy_palette(n_patches: int) -> np.ndarray:
    return np.linspace(0.1, 0.9, n_patches)


def make_toy_benchmark(cfg: ToyConfig, rng: np.random.Generator
                       ) -> tuple[Dataset, Dataset, Dataset]:
    """(id_train, id_test, real_ood_test) datasets of arrangement classes.

    ID classes use the first ``n_classes`` sampled arrangements; the OOD test
    set uses the remaining ones, disjoint from every ID arrangement.
    """
    if cfg.n_classes < 2:
        raise DomainError(f"need at least 2 classes, got {cfg.n_classes}")
    n_patches = cfg.grid_rows * cfg.grid_cols
    palette = toy_palette(n_patches)
    perms = _sample_distinct_perms(rng, n_patches, cfg.n_classes + cfg.n_ood_arrangements)
    id_perms, ood_perms = perms[:cfg.n_classes], perms[cfg.n_classes:]
    class_names = ["layout-" + "-".join(str(i) for i in p) for p in id_perms]

    h = cfg.grid_rows * cfg.patch_px
    w = cfg.grid_cols * cfg.patch_px
    grid = GridMeta(cfg.grid_rows, cfg.grid_cols, h, w, 1)
    dim = h * w

    def draw(perm, label, origin):
        img = arrangement_image(perm, palette, cfg, rng)
        return LabeledSample(img.pixels, label, origin)

    train = [draw(p, k + 1, ORIGIN_ID_TRAIN)
             for k, p in enumerate(id_perms) for _ in range(cfg.n_train_per_class)]
    test = [draw(p, k + 1, ORIGIN_ID_TEST)
            for k, p in enumerate(id_perms) for _ in range(cfg.n_test_per_class)]
    ood = [draw(ood_perms[i % len(ood_perms)], None, ORIGIN_REAL_OOD)
           for i in range(cfg.n_ood_test)]

    return (Dataset(cfg.n_classes, dim, train, grid, class_names),
            Dataset(cfg.n_classes, dim, test, grid, class_names),
            Dataset(cfg.n_classes, dim, ood, grid, class_names))
