"""Command-line interface.

Subcommands:
  generate         write a synthetic long-tailed feature file (optionally a
                   matched balanced test file from the same mixture)
  fit              fit a classifier from a feature file, write classifier JSON
  eval             score a classifier JSON on a feature file, with optional
                   test-time prior/kappa adjustment
  compare          run the full multi-method experiment from a JSON config
  dump-embeddings  re-encode a feature file as CSV for external tooling

Exit codes: 0 success, 1 validation error (bad flags or parameter domains),
2 I/O error (missing, malformed, or truncated files).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .baselines import TrainConfig, linear_from_json, linear_to_json, predict_linear, train
from .classifier import (
    AdjustmentPolicy,
    ClassPriors,
    adjust,
    fit,
    from_json,
    predict,
    to_json,
)
from .datagen import (
    FeatureFileError,
    LongTailSpec,
    generate,
    read_features,
    sample_dataset,
    write_features,
)
from .harness import ExperimentConfig, emit_report, run_experiment, split_accuracy
from .priors import build_etf
from .vmf import substream

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; the contract reserves 2 for I/O.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(_fail(message))


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spherebayes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic long-tailed feature file")
    gen.add_argument("--classes", type=int, default=20)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--head-size", type=int, default=500)
    gen.add_argument("--gamma", type=float, default=100.0)
    gen.add_argument("--kappa-range", default="5,50", help="log-uniform range 'lo,hi'")
    gen.add_argument("--center-mode", choices=("etf", "random"), default="random")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="feature file path (.csv for CSV)")
    gen.add_argument("--test-out", help="also write a balanced test file from the same mixture")
    gen.add_argument("--test-per-class", type=int, default=200)

    fit_p = sub.add_parser("fit", help="fit a classifier from a feature file")
    fit_p.add_argument("--model", choices=("bape", "softmax", "logit_adjusted"), default="bape")
    fit_p.add_argument("--alpha-hat", type=float, default=0.0)
    fit_p.add_argument("--beta-hat", type=float, default=0.0)
    fit_p.add_argument("--estimation", choices=("approx", "exact"), default="approx")
    fit_p.add_argument("--eta", type=float, default=1.0, help="gradient scale of the logit_adjusted loss")
    fit_p.add_argument("--lr", type=float, default=0.5)
    fit_p.add_argument("--epochs", type=int, default=30)
    fit_p.add_argument("--batch-size", type=int, default=64)
    fit_p.add_argument("--weight-decay", type=float, default=0.0)
    fit_p.add_argument("--temperature", type=float, default=1.0)
    fit_p.add_argument("--normalize", action="store_true", help="renormalize features to the sphere")
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.add_argument("--train", required=True, help="training feature file")
    fit_p.add_argument("--out", required=True, help="classifier JSON path")

    ev = sub.add_parser("eval", help="score a classifier JSON on a feature file")
    ev.add_argument("--classifier", required=True, help="classifier JSON path")
    ev.add_argument("--data", required=True, help="evaluation feature file")
    ev.add_argument(
        "--adjust-priors",
        help="replace priors before scoring: uniform | file:<json> | imbalance:<gamma>",
    )
    ev.add_argument(
        "--kappa-mode",
        default="keep",
        help="concentration policy when adjusting: keep | shared-mean | fixed:<v>",
    )
    ev.add_argument("--split-counts-from", help="feature file whose class counts define many/medium/few splits")
    ev.add_argument("--out", help="write the score JSON here instead of stdout")

    cmp_p = sub.add_parser("compare", help="run the multi-method experiment from a config")
    cmp_p.add_argument("--config", required=True, help="ExperimentConfig JSON path")
    cmp_p.add_argument("--format", choices=("json", "csv"), default="json")
    cmp_p.add_argument("--out", help="report path (stdout when omitted)")

    dump = sub.add_parser("dump-embeddings", help="re-encode a feature file as CSV")
    dump.add_argument("--data", required=True, help="input feature file")
    dump.add_argument("--out", required=True, help="output CSV path")
    return parser


def _parse_kappa_range(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'lo,hi', got {text!r}")
    return float(parts[0]), float(parts[1])


def _cmd_generate(args) -> int:
    spec = LongTailSpec(args.classes, args.head_size, args.gamma)
    train_ds, truth = generate(
        spec, args.dim, _parse_kappa_range(args.kappa_range), args.center_mode, args.seed
    )
    write_features(args.out, train_ds)
    if args.test_out:
        counts = np.full(args.classes, args.test_per_class)
        write_features(args.test_out, sample_dataset(truth, counts, args.seed, stream=3))
    return 0


def _cmd_fit(args) -> int:
    ds = read_features(args.train)
    if args.model == "bape":
        frame = None
        if args.beta_hat > 0.0:
            frame_seed = int(substream(args.seed, 4).integers(2**63 - 1))
            frame = build_etf(ds.n_classes, ds.dim, frame_seed).vectors
        clf = fit(
            np.asarray(ds.features, dtype=float),
            ds.labels,
            ds.n_classes,
            alpha_hat=args.alpha_hat,
            beta_hat=args.beta_hat,
            prior_directions=frame,
            mode=args.estimation,
            on_degenerate="exclude",
        )
        text = to_json(clf)
    else:
        clf = train(
            ds.features,
            ds.labels,
            TrainConfig(
                lr=args.lr,
                epochs=args.epochs,
                batch_size=args.batch_size,
                weight_decay=args.weight_decay,
                mode=args.model,
                temperature=args.temperature,
                rng_seed=args.seed,
                normalize=args.normalize,
                grad_scale=args.eta if args.model == "logit_adjusted" else 1.0,
            ),
        )
        text = linear_to_json(clf)
    with open(args.out, "w") as fh:
        fh.write(text + "\n")
    return 0


def _parse_adjustment(args, n_classes: int) -> AdjustmentPolicy | None:
    mode_text = args.kappa_mode
    if mode_text == "keep" and not args.adjust_priors:
        return None
    if mode_text == "shared-mean":
        kappa_mode, fixed = "shared_mean", None
    elif mode_text.startswith("fixed:"):
        kappa_mode, fixed = "fixed", float(mode_text.split(":", 1)[1])
    elif mode_text == "keep":
        kappa_mode, fixed = "keep", None
    else:
        raise ValueError(f"unknown kappa mode {mode_text!r}")
    target = ClassPriors.uniform(n_classes)
    spec = args.adjust_priors or "uniform"
    if spec == "uniform":
        pass
    elif spec.startswith("file:"):
        with open(spec.split(":", 1)[1]) as fh:
            target = ClassPriors(np.asarray(json.load(fh), dtype=float))
    elif spec.startswith("imbalance:"):
        gamma = float(spec.split(":", 1)[1])
        if gamma < 1.0:
            raise ValueError(f"imbalance factor must be >= 1, got {gamma}")
        weights = gamma ** (-np.arange(n_classes) / (n_classes - 1))
        target = ClassPriors(weights / weights.sum())
    else:
        raise ValueError(f"unknown prior adjustment {spec!r}")
    return AdjustmentPolicy(target_priors=target, kappa_mode=kappa_mode, fixed_kappa=fixed)


def _cmd_eval(args) -> int:
    with open(args.classifier) as fh:
        text = fh.read()
    ds = read_features(args.data)
    doc = json.loads(text)
    if "classes" in doc:
        clf = from_json(text)
        policy = _parse_adjustment(args, clf.n_classes)
        if policy is not None:
            clf = adjust(clf, policy)
        preds = predict(clf, np.asarray(ds.features, dtype=float))
    else:
        if args.adjust_priors or args.kappa_mode != "keep":
            raise ValueError("adjustment flags only apply to bape classifier documents")
        preds = predict_linear(linear_from_json(text), np.asarray(ds.features, dtype=float))
    counts = ds.class_counts
    if args.split_counts_from:
        counts = read_features(args.split_counts_from).class_counts
    result = split_accuracy(preds, ds.labels, counts)
    text_out = json.dumps(result, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text_out)
    else:
        print(text_out, end="")
    return 0


def _cmd_compare(args) -> int:
    with open(args.config) as fh:
        config = ExperimentConfig.from_json(fh.read())
    report = emit_report(run_experiment(config), fmt=args.format, path=args.out)
    if not args.out:
        print(report, end="")
    return 0


def _cmd_dump(args) -> int:
    ds = read_features(args.data)
    if not args.out.endswith(".csv"):
        raise ValueError("dump-embeddings writes CSV; --out must end in .csv")
    write_features(args.out, ds)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "dump-embeddings": _cmd_dump,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (FeatureFileError, OSError) as exc:
        return _fail(str(exc), code=2)
    except (ValueError, KeyError, RuntimeError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
