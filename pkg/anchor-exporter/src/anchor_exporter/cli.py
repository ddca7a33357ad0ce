"""export-anchors: class descriptions (JSONL) -> unit-norm anchor file."""

from __future__ import annotations

import argparse
import sys

from .encoders import DEFAULT_MODEL, EncoderError
from .exporter import DescriptionError, export_anchors


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="export-anchors", description=__doc__)
    ap.add_argument("--descriptions", required=True,
                    help="JSONL file, one {class_name, description} per line")
    ap.add_argument("--model", default=DEFAULT_MODEL,
                    help=f"sentence-transformers id, or hash-<dim> for the offline "
                         f"hashing encoder (default: {DEFAULT_MODEL})")
    ap.add_argument("--out", required=True, help="anchor file to write")
    args = ap.parse_args(argv)
    try:
        dim = export_anchors(args.descriptions, args.model, args.out)
    except FileNotFoundError as e:
        print(f"export-anchors: missing file: {e.filename}", file=sys.stderr)
        return 1
    except DescriptionError as e:
        print(f"export-anchors: {e}", file=sys.stderr)
        return 2
    except EncoderError as e:
        print(f"export-anchors: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} (dim {dim}, model {args.model})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
