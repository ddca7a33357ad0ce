"""Turn a class-description file into a conforming anchor file.

Input: UTF-8 JSONL, one ``{"class_name": ..., "description": ...}`` object
per line (descriptions authored offline, e.g. from a chat model's answer
to "Please describe the <class name>"). Output: the anchor JSON schema
consumed by oodkit, floats at 17 significant digits, written atomically.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .encoders import EncoderError, get_encoder

ANCHOR_FORMAT_VERSION = 1


class DescriptionError(Exception):
    pass


@dataclass
class ClassDescription:
    class_name: str
    description: str


def load_descriptions(path: str) -> list[ClassDescription]:
    """Parse and validate the JSONL description file.

    Validation (unique, non-empty names; non-empty descriptions) happens
    up front, before any embedding work.
    """
    entries: list[ClassDescription] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DescriptionError(f"{path}:{lineno}: invalid JSON ({e})") from e
            name = rec.get("class_name")
            desc = rec.get("description")
            if not isinstance(name, str) or not name.strip():
                raise DescriptionError(f"{path}:{lineno}: missing or empty class_name")
            if not isinstance(desc, str) or not desc.strip():
                raise DescriptionError(f"{path}:{lineno}: missing or empty description")
            entries.append(ClassDescription(name.strip(), desc.strip()))
    if not entries:
        raise DescriptionError(f"{path}: no class descriptions found")
    names = [e.class_name for e in entries]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DescriptionError(f"{path}: duplicate class names: {dupes}")
    return entries


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def write_anchor_file(entries: list[tuple[ClassDescription, np.ndarray]],
                      dim: int, out_path: str) -> None:
    """Write the anchor schema atomically (temp file + rename)."""
    docs = []
    for cd, vec in entries:
        if vec.shape != (dim,):
            raise DescriptionError(
                f"class {cd.class_name!r}: vector dim {vec.size} != {dim}")
        if not np.all(np.isfinite(vec)):
            raise DescriptionError(f"class {cd.class_name!r}: non-finite vector")
        values = "[" + ", ".join(_fmt17(v) for v in vec) + "]"
        docs.append('{"class_name": %s, "description": %s, "vector": %s}'
                    % (json.dumps(cd.class_name), json.dumps(cd.description), values))
    text = '{"format_version": %d, "dim": %d, "anchors": [%s]}' \
        % (ANCHOR_FORMAT_VERSION, dim, ", ".join(docs))
    directory = os.path.dirname(os.path.abspath(out_path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_anchors(descriptions_path: str, model_id: str, out_path: str) -> int:
    """Embed every class description and write the anchor file.

    Returns the embedding dimension. Aborts naming the class on any
    per-class embedding failure; nothing is written unless every class
    embeds at a consistent dimension.
    """
    descriptions = load_descriptions(descriptions_path)
    encoder = get_encoder(model_id)
    embedded: list[tuple[ClassDescription, np.ndarray]] = []
    dim: int | None = None
    for cd in descriptions:
        try:
            vec = encoder.encode(cd.description)
        except EncoderError:
            raise
        except Exception as e:
            raise EncoderError(f"embedding failed for class {cd.class_name!r}: {e}") from e
        if dim is None:
            dim = int(vec.size)
        elif vec.size != dim:
            raise DescriptionError(
                f"class {cd.class_name!r}: embedding dim {vec.size} != {dim}")
        embedded.append((cd, vec / np.linalg.norm(vec)))
    write_anchor_file(embedded, dim, out_path)
    return dim
