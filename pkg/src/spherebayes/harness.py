"""Experiment runner: fit every method on a shared dataset, score split accuracies.

One experiment = a long-tailed training set and a balanced test set drawn
from the same mixture, per seed. Methods:

  bape            explicit Bayes classifier fitted by conjugate MAP
  bape+adjust     same parameters with test-time prior/kappa substitution
  softmax         gradient-trained linear baseline, plain cross-entropy
  logit_adjusted  gradient-trained baseline with prior-shifted training loss;
                  its gradients are scaled by eta, the weight of this loss
                  term inside the joint objective (eta=0 freezes it at init)
  ensemble        argmax of the averaged log-posteriors of bape and the
                  logit_adjusted baseline (a naive combination rule)
  oracle          the true-parameter Bayes rule (generated data only)

Accuracy is reported overall and over class-frequency splits: many-shot
(train count > 100), medium-shot (20..100), few-shot (< 20).

Optionally the prior directions m0 receive full-batch gradient steps on the
bape training loss before the final fit (the explicit-classifier half of the
joint objective; feature extraction is fixed here, so that is the only place
its gradient can flow).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import logsumexp

from .baselines import LinearClassifier, TrainConfig, minority_collapse_metric, predict_linear, train
from .classifier import (
    AdjustmentPolicy,
    BayesClassifier,
    ClassPriors,
    adjust,
    fit,
    log_posterior,
    predict,
)
from .datagen import (
    Dataset,
    LongTailSpec,
    generate,
    oracle_accuracy,
    read_features,
    sample_dataset,
)
from .estimation import ClassStats, map_estimate, posterior, scale_prior, update_stats
from .priors import EtfFrame, build_etf, grad_step_m0
from .special import mean_resultant_ratio
from .vmf import substream

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "ReportRow",
    "ExperimentError",
    "split_accuracy",
    "run_experiment",
    "emit_report",
    "m0_loss_gradients",
]

METHODS = ("bape", "bape+adjust", "softmax", "logit_adjusted", "ensemble", "oracle")

_REPORT_FIELDS = (
    "method",
    "seed",
    "acc_all",
    "acc_many",
    "acc_medium",
    "acc_few",
    "oracle_accuracy",
    "minority_collapse",
    "wall_time",
)


class ExperimentError(RuntimeError):
    """A module error, annotated with the method and seed it occurred under."""


@dataclass(frozen=True)
class ReportRow:
    """One method on one seed. Split accuracies are None when the split is empty;
    minority_collapse is None for methods without weight directions (oracle,
    ensemble) or when fewer than two tail classes exist."""

    method: str
    seed: int
    acc_all: float
    acc_many: float | None
    acc_medium: float | None
    acc_few: float | None
    oracle_accuracy: float | None
    minority_collapse: float | None
    wall_time: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in _REPORT_FIELDS}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one `run_experiment` call needs; JSON-loadable for the CLI.

    Data comes either from the generator (n_classes/dim/head_size/gamma/
    kappa_range/center_mode, balanced test of test_per_class per class) or
    from feature files (train_file + test_file; the oracle method is then
    unavailable). eta weighs the logit_adjusted loss inside the joint
    objective. m0_steps > 0 turns on gradient refinement of the prior
    directions (requires beta_hat > 0 to have any effect).
    """

    seeds: tuple[int, ...] = (0,)
    methods: tuple[str, ...] = METHODS
    # generated data source
    n_classes: int = 20
    dim: int = 32
    head_size: int = 500
    gamma: float = 100.0
    kappa_range: tuple[float, float] = (5.0, 50.0)
    center_mode: str = "random"
    test_per_class: int = 200
    # file data source (overrides the generator when set)
    train_file: str | None = None
    test_file: str | None = None
    # explicit-classifier settings
    alpha_hat: float = 0.0
    beta_hat: float = 0.0
    estimation: str = "approx"
    kappa_mode: str = "keep"
    fixed_kappa: float | None = None
    m0_steps: int = 0
    m0_lr: float = 0.1
    # baseline settings
    eta: float = 1.0
    lr: float = 0.5
    epochs: int = 30
    batch_size: int = 64
    weight_decay: float = 0.0
    temperature: float = 1.0
    normalize: bool = False
    # split thresholds: few < thresholds[0] <= medium <= thresholds[1] < many
    thresholds: tuple[int, int] = (20, 100)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "kappa_range", tuple(self.kappa_range))
        object.__setattr__(self, "thresholds", tuple(self.thresholds))
        if not self.seeds:
            raise ValueError("seeds list must not be empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if not self.methods:
            raise ValueError("methods list must not be empty")
        if self.eta < 0.0 or not np.isfinite(self.eta):
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if len(self.thresholds) != 2 or not 0 < self.thresholds[0] <= self.thresholds[1]:
            raise ValueError(f"thresholds must be an ordered pair, got {self.thresholds}")
        if (self.train_file is None) != (self.test_file is None):
            raise ValueError("train_file and test_file must be given together")
        if self.train_file is not None and "oracle" in self.methods:
            raise ValueError("the oracle method needs generated data (no ground truth in files)")
        if self.estimation not in ("approx", "exact"):
            raise ValueError(f"unknown estimation mode {self.estimation!r}")
        if self.m0_steps < 0:
            raise ValueError("m0_steps must be >= 0")
        if self.test_per_class < 1:
            raise ValueError("test_per_class must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def split_accuracy(predictions, labels, class_counts, thresholds=(20, 100)) -> dict:
    """Accuracy overall and per class-frequency split.

    class_counts are the TRAINING counts that define the splits; labels and
    predictions belong to the evaluation set. Splits with no evaluation
    samples are reported as None.
    """
    lo, hi = thresholds
    if not 0 < lo <= hi:
        raise ValueError(f"thresholds must be an ordered pair, got {thresholds}")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    class_counts = np.asarray(class_counts)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must align")
    counts = class_counts[labels]
    hit = predictions == labels
    out = {"all": float(hit.mean())}
    for name, mask in (
        ("many", counts > hi),
        ("medium", (counts >= lo) & (counts <= hi)),
        ("few", counts < lo),
    ):
        out[name] = float(hit[mask].mean()) if mask.any() else None
    return out


def _tail_collapse(weights: np.ndarray, train_counts, threshold: int) -> float | None:
    tail = np.flatnonzero(np.asarray(train_counts) < threshold)
    if tail.size < 2:
        return None
    return minority_collapse_metric(LinearClassifier(weights, np.zeros(len(weights))), tail)


def _ratio_deriv(p: int, kappa: float) -> float:
    """d A_p / d kappa; the kappa=0 limit is 1/p."""
    if kappa == 0.0:
        return 1.0 / p
    a = mean_resultant_ratio(p, kappa)
    return 1.0 - a * a - (p - 1) * a / kappa


def m0_loss_gradients(
    frame: EtfFrame,
    stats: list[ClassStats],
    alpha_hat: float,
    beta_hat: float,
    priors: ClassPriors,
    features: np.ndarray,
    labels: np.ndarray,
    mode: str = "approx",
) -> np.ndarray:
    """Gradient of the mean bape training loss with respect to each prior direction.

    The chain runs m0 -> (beta, m) -> (kappa, mu) -> logits. With v =
    beta0*m0 + resultant: d beta/d v = m, d m/d v = (I - m m^T)/beta, and the
    logit of class k moves by (m_k.T z - A_p(kappa_k)) dkappa/dbeta against
    beta and by kappa_k z against m_k. Returned gradients live in the ambient
    space; the renormalization in the update step kills radial components.
    """
    k, p = frame.vectors.shape
    alphas = np.empty(k)
    betas = np.empty(k)
    ms = np.empty((k, p))
    kappas = np.empty(k)
    dk_db = np.empty(k)
    beta0 = np.empty(k)
    for j in range(k):
        prior = scale_prior(alpha_hat, beta_hat, frame.vectors[j], stats[j].count)
        post = posterior(prior, stats[j])
        alphas[j], betas[j], ms[j] = post.alpha, post.beta, post.m
        beta0[j] = prior.beta0
        r = post.beta / post.alpha
        if mode == "approx":
            kappas[j] = p * r / (1.0 - r * r)
            dk_db[j] = p * alphas[j] * (alphas[j] ** 2 + betas[j] ** 2) / (alphas[j] ** 2 - betas[j] ** 2) ** 2
        else:
            kappas[j] = map_estimate(post, mode="exact").kappa
            dk_db[j] = 1.0 / (alphas[j] * _ratio_deriv(p, kappas[j]))

    clf = BayesClassifier(mus=ms, kappas=kappas, priors=priors)
    z = np.asarray(features, dtype=float)
    probs = np.exp(log_posterior(clf, z))
    probs[np.arange(len(labels)), labels] -= 1.0  # d loss / d logit_k
    dots = z @ ms.T
    a_vals = np.array([mean_resultant_ratio(p, kp) for kp in kappas])
    grads = np.zeros((k, p))
    for j in range(k):
        w = probs[:, j]
        # beta route: scalar per sample times the fixed direction m_j.
        beta_coef = float(w @ (dots[:, j] - a_vals[j])) * dk_db[j]
        # m route: kappa_j * (I - m m^T) z / beta_j.
        zsum = w @ z
        tangent = (zsum - (zsum @ ms[j]) * ms[j]) * (kappas[j] / betas[j])
        grads[j] = (beta_coef * ms[j] + tangent) * (beta0[j] / len(labels))
    return grads


def _fit_bape(train: Dataset, config: ExperimentConfig, seed: int) -> BayesClassifier:
    feats = np.asarray(train.features, dtype=float)
    k = train.n_classes
    frame = None
    if config.beta_hat > 0.0:
        # Prior frame seeded independently of the data-generating streams.
        frame_seed = int(substream(seed, 4).integers(2**63 - 1))
        frame = build_etf(k, train.dim, frame_seed)
        if config.m0_steps > 0:
            stats = [
                update_stats(ClassStats.empty(train.dim), feats[train.labels == j])
                for j in range(k)
            ]
            priors = ClassPriors.from_counts(train.class_counts)
            for _ in range(config.m0_steps):
                g = m0_loss_gradients(
                    frame,
                    stats,
                    config.alpha_hat,
                    config.beta_hat,
                    priors,
                    feats,
                    train.labels,
                    mode=config.estimation,
                )
                frame = grad_step_m0(frame, g, config.m0_lr)
    return fit(
        feats,
        train.labels,
        k,
        alpha_hat=config.alpha_hat,
        beta_hat=config.beta_hat,
        prior_directions=frame.vectors if frame is not None else None,
        mode=config.estimation,
        on_degenerate="exclude",
    )


def _load_data(config: ExperimentConfig, seed: int):
    if config.train_file is not None:
        return read_features(config.train_file), read_features(config.test_file), None
    spec = LongTailSpec(config.n_classes, config.head_size, config.gamma)
    train_ds, truth = generate(
        spec, config.dim, config.kappa_range, config.center_mode, seed
    )
    test_counts = np.full(config.n_classes, config.test_per_class)
    test_ds = sample_dataset(truth, test_counts, seed, stream=3)
    return train_ds, test_ds, truth


def run_experiment(config: ExperimentConfig) -> list[ReportRow]:
    """All configured methods on all seeds; rows sorted by (method, seed)."""
    rows = []
    for seed in config.seeds:
        rows.extend(_run_seed(config, seed))
    rows.sort(key=lambda r: (r.method, r.seed))
    return rows


def _run_seed(config: ExperimentConfig, seed: int) -> list[ReportRow]:
    train_ds, test_ds, truth = _load_data(config, seed)
    test_z = np.asarray(test_ds.features, dtype=float)
    train_counts = train_ds.class_counts
    oracle_acc = oracle_accuracy(truth, test_ds) if truth is not None else None

    def score(predictions, collapse, started) -> dict:
        acc = split_accuracy(predictions, test_ds.labels, train_counts, config.thresholds)
        return {
            "acc_all": acc["all"],
            "acc_many": acc["many"],
            "acc_medium": acc["medium"],
            "acc_few": acc["few"],
            "oracle_accuracy": oracle_acc,
            "minority_collapse": collapse,
            "wall_time": time.perf_counter() - started,
        }

    cache: dict[str, object] = {}

    def bape_clf() -> BayesClassifier:
        if "bape" not in cache:
            cache["bape"] = _fit_bape(train_ds, config, seed)
        return cache["bape"]

    def la_clf() -> LinearClassifier:
        if "la" not in cache:
            cache["la"] = train(
                train_ds.features,
                train_ds.labels,
                TrainConfig(
                    lr=config.lr,
                    epochs=config.epochs,
                    batch_size=config.batch_size,
                    weight_decay=config.weight_decay,
                    mode="logit_adjusted",
                    temperature=config.temperature,
                    rng_seed=seed,
                    normalize=config.normalize,
                    grad_scale=config.eta,
                ),
            )
        return cache["la"]

    rows = []
    for method in config.methods:
        started = time.perf_counter()
        try:
            if method == "bape":
                clf = bape_clf()
                preds = predict(clf, test_z)
                collapse = _tail_collapse(
                    clf.mus, train_counts, config.thresholds[0]
                )
            elif method == "bape+adjust":
                clf = adjust(
                    bape_clf(),
                    AdjustmentPolicy(
                        target_priors=ClassPriors.uniform(train_ds.n_classes),
                        kappa_mode=config.kappa_mode,
                        fixed_kappa=config.fixed_kappa,
                    ),
                )
                preds = predict(clf, test_z)
                collapse = _tail_collapse(clf.mus, train_counts, config.thresholds[0])
            elif method == "softmax":
                clf = train(
                    train_ds.features,
                    train_ds.labels,
                    TrainConfig(
                        lr=config.lr,
                        epochs=config.epochs,
                        batch_size=config.batch_size,
                        weight_decay=config.weight_decay,
                        mode="softmax",
                        temperature=config.temperature,
                        rng_seed=seed,
                        normalize=config.normalize,
                    ),
                )
                cache["softmax"] = clf
                preds = predict_linear(clf, test_z)
                collapse = _tail_collapse(clf.W, train_counts, config.thresholds[0])
            elif method == "logit_adjusted":
                clf = la_clf()
                preds = predict_linear(clf, test_z)
                collapse = _tail_collapse(clf.W, train_counts, config.thresholds[0])
            elif method == "ensemble":
                lin = la_clf()
                s = (test_z @ lin.W.T + lin.b) / config.temperature
                lp_lin = s - logsumexp(s, axis=1, keepdims=True)
                lp = 0.5 * (log_posterior(bape_clf(), test_z) + lp_lin)
                preds = np.argmax(lp, axis=1)
                collapse = None
            elif method == "oracle":
                clf = truth.classifier(ClassPriors.from_counts(test_ds.class_counts))
                preds = predict(clf, test_z)
                collapse = None
            else:  # unreachable: config validated
                raise ValueError(f"unknown method {method!r}")
        except Exception as exc:
            raise ExperimentError(f"method {method!r}, seed {seed}: {exc}") from exc
        rows.append(ReportRow(method=method, seed=seed, **score(preds, collapse, started)))
    return rows


def emit_report(rows: list[ReportRow], fmt: str = "json", path=None) -> str:
    """Render rows as JSON (array of objects) or CSV; write to path if given.

    Floats keep full precision (shortest round-trip decimal form); absent
    values are null in JSON and empty cells in CSV.
    """
    if fmt == "json":
        text = json.dumps([r.as_dict() for r in rows], indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_REPORT_FIELDS)
        for r in rows:
            d = r.as_dict()
            writer.writerow(["" if d[f] is None else repr(d[f]) if isinstance(d[f], float) else d[f] for f in _REPORT_FIELDS])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
