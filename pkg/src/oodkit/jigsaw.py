"""Fake-outlier synthesis: jigsaw patch shuffling of ID images.

Patches are permuted by a uniformly sampled non-identity permutation
(rejection sampling keeps the draw uniform over the remaining
permutations), so the output always differs from the input while
preserving the multiset of patch contents exactly.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, GridMeta, ImageGrid, LabeledSample, ORIGIN_FAKE
from .errors import ContractViolation, DomainError


def apply_patch_permutation(img: ImageGrid, perm: np.ndarray) -> ImageGrid:
    """Rearrange patches: output grid position i receives input patch perm[i]."""
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(img.n_patches)):
        raise DomainError(f"not a permutation of {img.n_patches} patches: {perm.tolist()}")
    arr = img.as_array()
    ph = img.height // img.grid_rows
    pw = img.width // img.grid_cols

    def patch(p: int) -> np.ndarray:
        r, c = divmod(p, img.grid_cols)
        return arr[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw, :]

    out = np.empty_like(arr)
    for pos in range(img.n_patches):
        r, c = divmod(pos, img.grid_cols)
        out[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw, :] = patch(int(perm[pos]))
    return ImageGrid(img.height, img.width, img.channels, out.ravel(),
                     img.grid_rows, img.grid_cols)


def sample_nonidentity_perm(n_patches: int, rng: np.random.Generator) -> np.ndarray:
    if n_patches < 2:
        raise ContractViolation("a 1x1 grid admits no non-identity permutation")
    identity = np.arange(n_patches)
    while True:
        perm = rng.permutation(n_patches)
        if not np.array_equal(perm, identity):
            return perm


def jigsaw_transform(img: ImageGrid, rng: np.random.Generator) -> ImageGrid:
    """Shuffle the image's patches by a random non-identity permutation."""
    return apply_patch_permutation(img, sample_nonidentity_perm(img.n_patches, rng))


def generate_fake_set(id_set: Dataset, per_image: int, rng: np.random.Generator) -> Dataset:
    """``per_image`` jigsaw fakes per ID image, all labeled K+1.

    Generation is offline: the returned dataset is fixed before training.
    Permutations are drawn independently per fake.
    """
    if per_image < 1:
        raise DomainError(f"per_image must be >= 1, got {per_image}")
    if len(id_set) == 0:
        raise DomainError("cannot generate fakes from an empty ID set")
    fake_label = id_set.n_classes + 1
    samples = []
    for img in id_set.images():
        for _ in range(per_image):
            shuffled = jigsaw_transform(img, rng)
            samples.append(LabeledSample(shuffled.pixels, fake_label, ORIGIN_FAKE))
    return Dataset(id_set.n_classes, id_set.input_dim, samples, id_set.grid,
                   id_set.class_names)


def augment_inputs(x: np.ndarray, grid: GridMeta, rng: np.random.Generator,
                   noise_sigma: float = 0.0, hflip_prob: float = 0.0) -> np.ndarray:
    """Reduced train-time augmentation: additive Gaussian noise + horizontal flip.

    Applied identically to ID and fake samples. Disabled by default because
    the arrangement benchmark encodes class identity in patch positions,
    which a horizontal flip would destroy.
    """
    if noise_sigma <= 0.0 and hflip_prob <= 0.0:
        return x
    out = x.reshape(-1, grid.height, grid.width, grid.channels).copy()
    if hflip_prob > 0.0:
        flips = rng.random(out.shape[0]) < hflip_prob
        out[flips] = out[flips, :, ::-1, :]
    if noise_sigma > 0.0:
        out += rng.normal(0.0, noise_sigma, out.shape)
    np.clip(out, 0.0, 1.0, out=out)
    return out.reshape(x.shape)
