"""Text encoders producing unit-norm vectors.

Two families:

* ``hash-<dim>``: a deterministic character-n-gram hashing encoder. No
  model download, no heavyweight deps; useful offline and in CI. Not
  semantically meaningful, but stable across platforms and runs.
* anything else is treated as a sentence-transformers model id and loaded
  lazily (requires the ``embed`` extra and a local model or hub access).
  The default, ``sentence-transformers/all-mpnet-base-v2``, produces the
  768-wide output the anchor pipeline was designed around.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

DEFAULT_MODEL = "sentence-transformers/all-mpnet-base-v2"

_HASH_PATTERN = re.compile(r"^hash-(\d+)$")


class EncoderError(Exception):
    pass


class HashingEncoder:
    """Character 3-gram hashing into a fixed-width signed-count vector."""

    def __init__(self, dim: int):
        if dim < 2:
            raise EncoderError(f"hashing encoder needs dim >= 2, got {dim}")
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        cleaned = " ".join(text.lower().split())
        if not cleaned:
            raise EncoderError("cannot embed an empty description")
        padded = f"  {cleaned}  "
        vec = np.zeros(self.dim)
        for i in range(len(padded) - 2):
            digest = hashlib.sha256(padded[i:i + 3].encode("utf-8")).digest()
            h = int.from_bytes(digest[:8], "big")
            vec[h % self.dim] += 1.0 if digest[8] & 1 else -1.0
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise EncoderError("hashing produced a zero vector (degenerate text)")
        return vec / norm


class SentenceTransformerEncoder:
    def __init__(self, model_id: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise EncoderError(
                "sentence-transformers is not installed; install the 'embed' extra "
                "or use a hash-<dim> model") from e
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as e:
            raise EncoderError(f"could not load embedding model {model_id!r}: {e}") from e
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, text: str) -> np.ndarray:
        vec = np.asarray(
            self._model.encode([text], normalize_embeddings=True,
                               show_progress_bar=False)[0],
            dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0 or not np.all(np.isfinite(vec)):
            raise EncoderError("model returned a zero or non-finite embedding")
        return vec / norm


def get_encoder(model_id: str):
    m = _HASH_PATTERN.match(model_id)
    if m:
        return HashingEncoder(int(m.group(1)))
    return SentenceTransformerEncoder(model_id)
