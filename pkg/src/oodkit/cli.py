"""Pipeline CLI: dataset synthesis, fake generation, anchors, training,
scoring, evaluation, and the component on/off ablation runner.

Exit codes: 0 ok, 1 usage/config, 2 file format or schema, 3 numerical
failure. All randomness flows from one --seed through named substreams, so
every stage is reproducible byte-for-byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time

from .anchors import load_anchors, save_anchors, synth_anchors
from .data import Dataset, ToyConfig, load_dataset, make_toy_benchmark, save_dataset
from .errors import (ConfigError, ContractViolation, DimensionError, DomainError,
                     FormatError, NumericalError)
from .jigsaw import generate_fake_set
from .losses import LossWeights
from .metrics import (auroc, evaluate_benchmark, fpr_at_tpr, report_table,
                      write_report_csv)
from .model import ModelDims, OodClassifier, load_checkpoint, save_checkpoint
from .scores import SCORE_NAMES, ScoreParams, compute_scores, fit_id_stats
from .seeding import rng_for
from .train import TrainConfig, fit, write_metrics_csv

STATS_SCORES = ("react", "mahalanobis", "knn")

ABLATION_ROWS = (  # (fake, ci, sc) in the fixed lattice order
    (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().replace("×", "x").split("x")
        return int(r), int(c)
    except ValueError:
        raise ConfigError(f"grid must look like RxC, got {text!r}") from None


def _parse_hidden(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"hidden layout must be comma-separated ints, got {text!r}") from None


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _append_manifest(args, stage: str, seed, inputs: list[str], outputs: list[str],
                     t0: float) -> None:
    if not getattr(args, "manifest", None):
        return
    rec = {
        "stage": stage,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
        "wall_clock_s": round(time.monotonic() - t0, 3),
    }
    with open(args.manifest, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_toy(args) -> int:
    t0 = time.monotonic()
    rows, cols = _parse_grid(args.grid)
    cfg = ToyConfig(n_classes=args.k, n_train_per_class=args.n_train_per_class,
                    n_test_per_class=args.n_test_per_class, n_ood_test=args.n_ood_test,
                    n_ood_arrangements=args.n_ood_arrangements,
                    grid_rows=rows, grid_cols=cols, patch_px=args.patch_px,
                    noise_sigma=args.noise_sigma)
    train_ds, test_ds, ood_ds = make_toy_benchmark(cfg, rng_for(_seed(args), "toy"))
    save_dataset(train_ds, args.out_train)
    save_dataset(test_ds, args.out_id_test)
    save_dataset(ood_ds, args.out_ood_test)
    _say(args, f"wrote {len(train_ds)} train / {len(test_ds)} id-test / "
               f"{len(ood_ds)} ood-test samples (K={cfg.n_classes}, grid {rows}x{cols})")
    _append_manifest(args, "make-toy", _seed(args), [],
                     [args.out_train, args.out_id_test, args.out_ood_test], t0)
    return 0


def cmd_gen_fake(args) -> int:
    t0 = time.monotonic()
    ds = load_dataset(getattr(args, "in"))
    if args.grid is not None:
        rows, cols = _parse_grid(args.grid)
        if ds.grid is None:
            raise FormatError("input dataset has no grid metadata to re-grid")
        if ds.grid.height % rows or ds.grid.width % cols:
            raise ConfigError(f"grid {rows}x{cols} does not divide "
                              f"{ds.grid.height}x{ds.grid.width} images")
        ds.grid.rows, ds.grid.cols = rows, cols
    fake = generate_fake_set(ds, args.per_image, rng_for(_seed(args), "fake"))
    save_dataset(fake, args.out)
    _say(args, f"wrote {len(fake)} fake outliers ({args.per_image} per ID image)")
    _append_manifest(args, "gen-fake", _seed(args), [getattr(args, "in")], [args.out], t0)
    return 0


def cmd_make_anchors(args) -> int:
    t0 = time.monotonic()
    names = None
    inputs = []
    if args.data:
        ds = load_dataset(args.data)
        names = ds.class_names
        k = ds.n_classes
        inputs.append(args.data)
    elif args.k:
        k = args.k
    else:
        raise ConfigError("make-anchors needs --data or --k")
    anchors = synth_anchors(k, args.dim, rng_for(_seed(args), "anchors"),
                            mode=args.mode, class_names=names)
    save_anchors(anchors, args.out)
    _say(args, f"wrote {len(anchors)} {args.mode} anchors of dim {args.dim}")
    _append_manifest(args, "make-anchors", _seed(args), inputs, [args.out], t0)
    return 0


def _build_model(args, data: Dataset, embed_dim: int, init_seed: int) -> OodClassifier:
    dims = ModelDims(input_dim=data.input_dim, feature_dim=args.feature_dim,
                     embed_dim=embed_dim, n_classes=data.n_classes,
                     hidden=_parse_hidden(args.hidden))
    return OodClassifier.init(dims, init_seed)


def _load_train_config(args) -> TrainConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise FormatError(f"config {args.config}: invalid JSON ({e})") from e
        cfg = TrainConfig.from_flat(doc)
    else:
        cfg = TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    t0 = time.monotonic()
    data = load_dataset(args.data)
    fake = load_dataset(args.fake) if args.fake else None
    anchors = load_anchors(args.anchors) if args.anchors else None
    cfg = _load_train_config(args)
    if anchors is None and cfg.loss_weights.lambda1 != 0.0:
        raise ConfigError("lambda1 > 0 requires --anchors (or set lambda1 to 0)")

    embed_dim = anchors.dim if anchors is not None else args.embed_dim
    init_seed = int(rng_for(cfg.seed, "init").integers(0, 2**63))
    model = _build_model(args, data, embed_dim, init_seed)
    result = fit(model, data, fake, anchors, cfg)
    save_checkpoint(model, args.out)
    outputs = [args.out]
    if args.metrics:
        write_metrics_csv(result.metrics, args.metrics)
        outputs.append(args.metrics)
    last = result.metrics[-1]
    _say(args, f"trained {cfg.epochs} epochs; final total loss {last.total:.4f}, "
               f"ID train accuracy {last.id_train_accuracy:.3f}")
    _append_manifest(args, "train", cfg.seed,
                     [p for p in (args.data, args.fake, args.anchors, args.config) if p],
                     outputs, t0)
    return 0


def _score_params(args) -> ScoreParams:
    return ScoreParams(react_p=args.react_p, knn_k=args.knn_k,
                       energy_temperature=args.energy_t)


def _fit_stats_if_needed(args, model, score: str):
    if score not in STATS_SCORES:
        return None
    if not args.train_data:
        raise ConfigError(f"score {score!r} requires --train-data to fit ID statistics")
    return fit_id_stats(model, load_dataset(args.train_data), p=args.react_p)


def cmd_score(args) -> int:
    t0 = time.monotonic()
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    stats = _fit_stats_if_needed(args, model, args.score)
    values = compute_scores(model, data.inputs(), args.score, stats, _score_params(args))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "origin", "score"])
        for i, (s, v) in enumerate(zip(data.samples, values)):
            w.writerow([i, s.origin, repr(float(v))])
    _say(args, f"scored {len(values)} samples with {args.score}")
    _append_manifest(args, "score", _seed(args),
                     [p for p in (args.checkpoint, args.data, args.train_data) if p],
                     [args.out], t0)
    return 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    model = load_checkpoint(args.checkpoint)
    id_test = load_dataset(args.id_test)
    stats = _fit_stats_if_needed(args, model, args.score)
    ood_sets = [(os.path.basename(path), load_dataset(path)) for path in args.ood]
    reports = evaluate_benchmark(model, stats, id_test, ood_sets, args.score,
                                 _score_params(args))
    write_report_csv(reports, args.report)
    _say(args, report_table(reports))
    _append_manifest(args, "eval", _seed(args),
                     [p for p in (args.checkpoint, args.id_test, args.train_data) if p]
                     + list(args.ood),
                     [args.report], t0)
    return 0


def cmd_ablate(args) -> int:
    t0 = time.monotonic()
    data = load_dataset(args.data)
    fake = load_dataset(args.fake)
    anchors = load_anchors(args.anchors)
    id_test = load_dataset(args.id_test)
    ood_test = load_dataset(args.ood_test)
    base_cfg = _load_train_config(args)

    results = []  # (row, [auroc...], [fpr...])
    for row in ABLATION_ROWS:
        use_fake, use_ci, use_sc = row
        aurocs, fprs = [], []
        for s in range(args.seeds):
            cfg = TrainConfig.from_flat(base_cfg.to_flat())
            cfg.seed = base_cfg.seed + s
            cfg.loss_weights = LossWeights(
                lambda1=base_cfg.loss_weights.lambda1 if use_ci else 0.0,
                lambda2=base_cfg.loss_weights.lambda2 if use_sc else 0.0,
                tau=base_cfg.loss_weights.tau, tau_prime=base_cfg.loss_weights.tau_prime,
                sc_include_self=base_cfg.loss_weights.sc_include_self)
            init_seed = int(rng_for(cfg.seed, "init").integers(0, 2**63))
            model = _build_model(args, data, anchors.dim, init_seed)
            fit(model, data, fake if use_fake else None,
                anchors if use_ci else None, cfg)
            stats = fit_id_stats(model, data, p=args.react_p)
            id_scores = compute_scores(model, id_test.inputs(), "react", stats)
            ood_scores = compute_scores(model, ood_test.inputs(), "react", stats)
            aurocs.append(auroc(id_scores, ood_scores))
            fprs.append(fpr_at_tpr(id_scores, ood_scores))
        results.append((row, aurocs, fprs))
        mark = lambda v: "yes" if v else "no"
        _say(args, f"fake={mark(use_fake):3s} ci={mark(use_ci):3s} sc={mark(use_sc):3s}  "
                   f"auroc {statistics.mean(aurocs):.4f}  fpr95 {statistics.mean(fprs):.4f}")

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fake_ood", "ci_loss", "sc_loss",
                    "auroc_mean", "auroc_sd", "fpr95_mean", "fpr95_sd"])
        for row, aurocs, fprs in results:
            sd = (lambda xs: statistics.stdev(xs) if len(xs) > 1 else 0.0)
            w.writerow([*row, repr(statistics.mean(aurocs)), repr(sd(aurocs)),
                        repr(statistics.mean(fprs)), repr(sd(fprs))])
    _append_manifest(args, "ablate", base_cfg.seed,
                     [args.data, args.fake, args.anchors, args.id_test, args.ood_test]
                     + ([args.config] if args.config else []),
                     [args.out], t0)
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_model_flags(p) -> None:
    p.add_argument("--feature-dim", type=int, default=128)
    p.add_argument("--hidden", default="256,256",
                   help="comma-separated encoder hidden widths ('' for none)")


def _add_score_flags(p) -> None:
    p.add_argument("--react-p", type=float, default=0.9,
                   help="activation-clip percentile for react (also used to fit stats)")
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--energy-t", type=float, default=1.0)
    p.add_argument("--train-data", default=None,
                   help="ID training set for fitting score statistics")


def build_parser() -> _Parser:
    parser = _Parser(prog="oodkit", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    parser.add_argument("--config", default=None, help="flat JSON training config")
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--manifest", default=None,
                        help="append a stage record (digests, seed, timing) to this JSONL file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seed_flag(p):
        # SUPPRESS keeps the global --seed value when the per-command flag
        # is absent (a plain default would clobber it)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                       help="override the global seed for this command")

    p = sub.add_parser("make-toy", help="synthesize the arrangement benchmark")
    seed_flag(p)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n-train-per-class", type=int, default=50)
    p.add_argument("--n-test-per-class", type=int, default=50)
    p.add_argument("--n-ood-test", type=int, default=200)
    p.add_argument("--n-ood-arrangements", type=int, default=4)
    p.add_argument("--grid", default="2x2")
    p.add_argument("--patch-px", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-id-test", required=True)
    p.add_argument("--out-ood-test", required=True)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("gen-fake", help="jigsaw fake outliers from an ID dataset")
    seed_flag(p)
    p.add_argument("--grid", default=None, help="override the dataset's patch grid (RxC)")
    p.add_argument("--per-image", type=int, default=1)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_fake)

    p = sub.add_parser("make-anchors", help="synthesize per-class anchor vectors")
    seed_flag(p)
    p.add_argument("--data", default=None, help="dataset supplying K and class names")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--mode", choices=("random_unit", "orthonormal"), default="orthonormal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_anchors)

    p = sub.add_parser("train", help="train the encoder/projector/head")
    seed_flag(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fake", default=None)
    p.add_argument("--anchors", default=None)
    p.add_argument("--embed-dim", type=int, default=16,
                   help="projector output dim when no anchors are given")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None, help="per-epoch loss/accuracy CSV")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a dataset with a post-hoc OOD score")
    seed_flag(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--score", choices=SCORE_NAMES, default="react")
    p.add_argument("--out", required=True)
    _add_score_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC/FPR95 report over one or more OOD sets")
    seed_flag(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--id-test", required=True)
    p.add_argument("--ood", action="append", required=True)
    p.add_argument("--score", choices=SCORE_NAMES, default="react")
    p.add_argument("--report", required=True)
    _add_score_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="8-row on/off lattice over {fake, ci, sc}")
    seed_flag(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--id-test", required=True)
    p.add_argument("--ood-test", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--react-p", type=float, default=0.9)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except FormatError as e:
        print(f"oodkit: format error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"oodkit: numerical failure: {e}", file=sys.stderr)
        return 3
    except (ConfigError, DomainError, DimensionError, ContractViolation) as e:
        print(f"oodkit: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"oodkit: missing file: {e.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
