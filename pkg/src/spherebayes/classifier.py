"""Explicit Bayes classifier over unit-sphere features with vMF class conditionals.

Class y scores input z with the logit

    s_y = ln pi_y - ln C_p(kappa_y) + kappa_y * mu_y.T z,

so the posterior is the softmax of s and prediction is its argmax: a linear
classifier whose weights are explicit distribution parameters. Because the
parameters are explicit, test-time distribution shift is handled by editing
them (swap the priors, optionally re-pool the concentrations) instead of
retraining; see `adjust`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .estimation import (
    ClassStats,
    DegeneratePosteriorError,
    map_estimate,
    posterior,
    scale_prior,
    update_stats,
)
from .special import log_vmf_normalizer
from .vmf import as_unit_vector

__all__ = [
    "ClassPriors",
    "BayesClassifier",
    "AdjustmentPolicy",
    "NotFittedError",
    "log_posterior",
    "predict",
    "bape_loss",
    "bape_loss_grad_z",
    "chain_through_normalization",
    "adjust",
    "kappa_report",
    "fit",
    "to_json",
    "from_json",
]


class NotFittedError(RuntimeError):
    """The classifier carries no training counts (built directly or deserialized)."""


@dataclass(frozen=True)
class ClassPriors:
    """Class prior probabilities: positive entries summing to 1.

    Zero entries are allowed only via `allow_zero=True`, the escape hatch used
    for degenerate classes that were excluded at fit time (they carry no
    posterior mass by construction).
    """

    pi: np.ndarray
    allow_zero: bool = False

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1 or pi.shape[0] < 2:
            raise ValueError(f"priors must be a vector of length >= 2, got shape {pi.shape}")
        if not np.all(np.isfinite(pi)):
            raise ValueError("priors contain non-finite entries")
        floor = 0.0 if self.allow_zero else np.finfo(float).tiny
        if np.any(pi < floor):
            raise ValueError("priors must be strictly positive")
        if abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError(f"priors sum to {pi.sum()!r}, expected 1")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassPriors":
        return cls(np.full(int(n_classes), 1.0 / int(n_classes)))

    @classmethod
    def from_counts(cls, counts) -> "ClassPriors":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValueError("counts must have positive total")
        return cls(counts / total, allow_zero=bool(np.any(counts == 0)))

    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pi)


@dataclass(frozen=True)
class AdjustmentPolicy:
    """Test-time parameter edit: new priors and a concentration policy.

    kappa_mode is one of "keep" (leave each class's kappa alone),
    "shared_mean" (replace every kappa with the unweighted mean of the fitted
    ones), or "fixed" (set all to `fixed_kappa`).
    """

    target_priors: ClassPriors | None = None
    kappa_mode: str = "keep"
    fixed_kappa: float | None = None

    def __post_init__(self):
        if self.kappa_mode not in ("keep", "shared_mean", "fixed"):
            raise ValueError(f"unknown kappa_mode {self.kappa_mode!r}")
        if self.kappa_mode == "fixed":
            if self.fixed_kappa is None or not self.fixed_kappa > 0.0:
                raise ValueError("fixed kappa_mode requires fixed_kappa > 0")
        elif self.fixed_kappa is not None:
            raise ValueError(f"fixed_kappa is only meaningful with kappa_mode='fixed'")


@dataclass(frozen=True)
class BayesClassifier:
    """Per-class vMF parameters plus class priors; immutable after construction.

    `counts` holds per-class training sample counts when the classifier was
    fitted from data; it is None for hand-built or deserialized instances.
    `excluded` lists classes that were degenerate at fit time (no samples, no
    prior): they keep placeholder parameters and never receive posterior mass.
    """

    mus: np.ndarray
    kappas: np.ndarray
    priors: ClassPriors
    counts: np.ndarray | None = None
    excluded: tuple[int, ...] = ()
    _log_norm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mus = as_unit_vector(self.mus)
        if mus.ndim != 2:
            raise ValueError("mus must be a (K, p) array")
        k, p = mus.shape
        if k < 2:
            raise ValueError(f"need at least 2 classes, got {k}")
        kappas = np.asarray(self.kappas, dtype=float)
        if kappas.shape != (k,) or np.any(~np.isfinite(kappas)) or np.any(kappas < 0):
            raise ValueError("kappas must be K finite values >= 0")
        if self.priors.pi.shape[0] != k:
            raise ValueError("priors length does not match class count")
        excluded = tuple(sorted(int(i) for i in self.excluded))
        if any(i < 0 or i >= k for i in excluded):
            raise ValueError("excluded class index out of range")
        if any(self.priors.pi[i] != 0.0 for i in excluded):
            raise ValueError("excluded classes must carry zero prior mass")
        counts = self.counts
        if counts is not None:
            counts = np.asarray(counts, dtype=int)
            if counts.shape != (k,) or np.any(counts < 0):
                raise ValueError("counts must be K integers >= 0")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "excluded", excluded)
        object.__setattr__(
            self, "_log_norm", np.array([log_vmf_normalizer(p, kp) for kp in kappas])
        )

    @property
    def n_classes(self) -> int:
        return self.mus.shape[0]

    @property
    def dim(self) -> int:
        return self.mus.shape[1]

    def _logits(self, z: np.ndarray) -> np.ndarray:
        return self.priors.log() - self._log_norm + (z @ self.mus.T) * self.kappas


def log_posterior(clf: BayesClassifier, z) -> np.ndarray:
    """Log class posterior(s): log-softmax of the per-class logits.

    Accepts one unit vector (returns shape (K,)) or a batch (n, p) (returns
    (n, K)). Rows exponentiate to probability vectors summing to 1.
    """
    z = as_unit_vector(z, dim=clf.dim)
    s = clf._logits(z)
    return s - logsumexp(s, axis=-1, keepdims=True)


def predict(clf: BayesClassifier, z) -> int | np.ndarray:
    """Most probable class; ties break to the lowest index."""
    z = as_unit_vector(z, dim=clf.dim)
    idx = np.argmax(clf._logits(z), axis=-1)
    return int(idx) if idx.ndim == 0 else idx


def _check_labels(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return y


def bape_loss(clf: BayesClassifier, z, y) -> float | np.ndarray:
    """Negative log posterior of the true class; scalar or per-sample batch."""
    y = _check_labels(y, clf.n_classes)
    lp = log_posterior(clf, z)
    if lp.ndim == 1:
        return float(-lp[int(y)])
    return -lp[np.arange(lp.shape[0]), y]


def bape_loss_grad_z(clf: BayesClassifier, z, y) -> np.ndarray:
    """Gradient of bape_loss with respect to z (single input).

    Returns -(kappa_y mu_y - sum_k p(k|z) kappa_k mu_k), the raw gradient in
    the embedding space. If z is produced by normalizing some vector v, chain
    through `chain_through_normalization` before applying it to v.
    """
    z = as_unit_vector(z, dim=clf.dim)
    if z.ndim != 1:
        raise ValueError("gradient is defined for a single input vector")
    y = int(_check_labels(y, clf.n_classes))
    probs = np.exp(log_posterior(clf, z))
    weighted = (probs * clf.kappas) @ clf.mus
    return -(clf.kappas[y] * clf.mus[y] - weighted)


def chain_through_normalization(v, grad_z) -> np.ndarray:
    """Convert a gradient in z = v/||v|| into a gradient in v.

    Multiplies by the Jacobian (I - z z^T)/||v||: the radial component dies
    (moving along v does not move z) and the rest rescales by 1/||v||.
    """
    v = np.asarray(v, dtype=float)
    grad_z = np.asarray(grad_z, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("normalization gradient undefined at the origin")
    z = v / norm
    return (grad_z - (grad_z @ z) * z) / norm


def adjust(clf: BayesClassifier, policy: AdjustmentPolicy) -> BayesClassifier:
    """New classifier with priors replaced and kappas re-pooled per policy.

    The input classifier is untouched. Classes excluded at fit time stay
    excluded (their parameters are unknown), keeping zero posterior mass even
    under the new priors.
    """
    target = policy.target_priors or ClassPriors.uniform(clf.n_classes)
    if target.pi.shape[0] != clf.n_classes:
        raise ValueError("target priors length does not match classifier")
    pi = target.pi
    if clf.excluded:
        pi = pi.copy()
        pi[list(clf.excluded)] = 0.0
        pi = pi / pi.sum()
    if policy.kappa_mode == "keep":
        kappas = clf.kappas
    elif policy.kappa_mode == "shared_mean":
        active = [i for i in range(clf.n_classes) if i not in clf.excluded]
        kappas = np.full(clf.n_classes, clf.kappas[active].mean())
    else:
        kappas = np.full(clf.n_classes, float(policy.fixed_kappa))
    return BayesClassifier(
        mus=clf.mus,
        kappas=kappas,
        priors=ClassPriors(pi, allow_zero=bool(clf.excluded)),
        counts=clf.counts,
        excluded=clf.excluded,
    )


def kappa_report(clf: BayesClassifier) -> list[dict]:
    """Per-class diagnostic rows: class, training count, kappa, ||mu||.

    Only defined for classifiers fitted from data (training counts present).
    """
    if clf.counts is None:
        raise NotFittedError("kappa_report needs a classifier fitted from data")
    return [
        {
            "class": i,
            "count": int(clf.counts[i]),
            "kappa": float(clf.kappas[i]),
            "mu_norm": float(np.linalg.norm(clf.mus[i])),
        }
        for i in range(clf.n_classes)
    ]


def fit(
    features,
    labels,
    n_classes: int,
    alpha_hat: float = 0.0,
    beta_hat: float = 0.0,
    prior_directions=None,
    mode: str = "approx",
    on_degenerate: str = "error",
) -> BayesClassifier:
    """Fit the Bayes classifier: accumulate per-class stats, take MAP estimates.

    Per-class priors scale with class size (alpha0 = alpha_hat*N_y, beta0 =
    beta_hat*N_y, direction from `prior_directions` row y, e.g. an EtfFrame).
    Class priors are the training frequencies. A class with no samples and no
    directional prior has no defined mean: with on_degenerate="error" (the
    default) fitting fails loudly, with "exclude" the class is dropped from
    the posterior (flagged in `excluded`) and the rest renormalized.
    """
    if on_degenerate not in ("error", "exclude"):
        raise ValueError(f"unknown on_degenerate {on_degenerate!r}")
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ValueError("features must be an (n, p) array")
    n, p = features.shape
    k = int(n_classes)
    labels = _check_labels(labels, k)
    if labels.shape != (n,):
        raise ValueError("labels length does not match features")
    if prior_directions is not None:
        prior_directions = as_unit_vector(prior_directions, dim=p)
        if prior_directions.shape[0] != k:
            raise ValueError("prior_directions must supply one row per class")
    elif beta_hat > 0.0:
        raise ValueError("beta_hat > 0 requires prior_directions")

    mus = np.zeros((k, p))
    mus[:, 0] = 1.0
    kappas = np.zeros(k)
    counts = np.zeros(k, dtype=int)
    excluded: list[int] = []
    for y in range(k):
        stats = update_stats(ClassStats.empty(p), features[labels == y])
        counts[y] = stats.count
        m0 = prior_directions[y] if prior_directions is not None else None
        prior = scale_prior(alpha_hat, beta_hat, m0, stats.count)
        try:
            params = map_estimate(posterior(prior, stats), mode=mode)
        except DegeneratePosteriorError:
            if on_degenerate == "error":
                raise DegeneratePosteriorError(
                    f"class {y} has no samples and no directional prior"
                ) from None
            excluded.append(y)
            continue
        mus[y] = params.mu
        kappas[y] = params.kappa
    return BayesClassifier(
        mus=mus,
        kappas=kappas,
        priors=ClassPriors.from_counts(counts),
        counts=counts,
        excluded=tuple(excluded),
    )


def to_json(clf: BayesClassifier) -> str:
    """Serialize as {p, K, priors, classes:[{kappa, mu}]} with full-precision floats.

    Floats use Python's shortest round-trip representation, which preserves
    every bit (at most 17 significant digits). Training counts are lifecycle
    data and are not serialized.
    """
    doc = {
        "p": clf.dim,
        "K": clf.n_classes,
        "priors": clf.priors.pi.tolist(),
        "classes": [
            {"kappa": float(clf.kappas[i]), "mu": clf.mus[i].tolist()}
            for i in range(clf.n_classes)
        ],
    }
    return json.dumps(doc, indent=2)


def from_json(text: str) -> BayesClassifier:
    """Inverse of to_json. Classes with zero prior are marked excluded."""
    doc = json.loads(text)
    try:
        p, k = int(doc["p"]), int(doc["K"])
        pi = np.asarray(doc["priors"], dtype=float)
        classes = doc["classes"]
        kappas = np.array([float(c["kappa"]) for c in classes])
        mus = np.array([np.asarray(c["mu"], dtype=float) for c in classes])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed classifier document: {exc}") from None
    if len(classes) != k or mus.shape != (k, p):
        raise ValueError("classifier document is inconsistent with its declared shape")
    excluded = tuple(int(i) for i in np.flatnonzero(pi == 0.0))
    for i in excluded:
        # Placeholder geometry for classes that carry no mass anyway.
        mus[i] = 0.0
        mus[i, 0] = 1.0
        kappas[i] = 0.0
    return BayesClassifier(
        mus=mus,
        kappas=kappas,
        priors=ClassPriors(pi, allow_zero=bool(excluded)),
        excluded=excluded,
    )
