"""Conjugate MAP estimation of vMF parameters from streaming per-class statistics.

A class is summarized by (count n, resultant vector s = sum of its unit
features). A conjugate prior with pseudo-count alpha0, pseudo-resultant
length beta0 and direction m0 combines with the statistics into a posterior

    alpha = alpha0 + n,    beta = ||beta0*m0 + s||,    m = (beta0*m0 + s)/beta,

and the MAP point estimate is mu = m together with the concentration kappa
solving A_p(kappa) = beta/alpha (exact mode) or its closed-form approximation
kappa = p*beta*alpha / (alpha^2 - beta^2) (approx mode, the default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .special import MAX_KAPPA, mean_resultant_ratio
from .vmf import VmfParams, as_unit_vector

__all__ = [
    "ClassStats",
    "PriorSpec",
    "PosteriorSpec",
    "DegeneratePosteriorError",
    "ConcentrationOverflowError",
    "update_stats",
    "posterior",
    "map_estimate",
    "scale_prior",
]

# beta/alpha at or above this is treated as "kappa unbounded".
_RESULTANT_RATIO_MAX = 1.0 - 1e-9


class DegeneratePosteriorError(ValueError):
    """The combined pseudo-resultant is the zero vector, so the mean direction is undefined."""


class ConcentrationOverflowError(ValueError):
    """beta/alpha is too close to 1 (or the implied kappa too large) to represent."""


@dataclass(frozen=True)
class ClassStats:
    """Streaming sufficient statistics of one class: sample count and resultant sum."""

    count: int
    resultant: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "count", int(self.count))
        r = np.asarray(self.resultant, dtype=float)
        if r.ndim != 1 or r.shape[0] < 2:
            raise ValueError(f"resultant must be a vector of dimension >= 2, got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("resultant has non-finite components")
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")
        norm = float(np.linalg.norm(r))
        # A sum of `count` unit vectors can be at most `count` long.
        if norm > self.count + 1e-6:
            raise ValueError(f"resultant norm {norm:.6g} exceeds count {self.count}")
        object.__setattr__(self, "resultant", r)

    @classmethod
    def empty(cls, dim: int) -> "ClassStats":
        return cls(0, np.zeros(int(dim)))

    @property
    def dim(self) -> int:
        return self.resultant.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """The running mean resultant/count (the online per-class mean)."""
        if self.count == 0:
            raise ValueError("mean of empty statistics is undefined")
        return self.resultant / self.count


def update_stats(stats: ClassStats, batch) -> ClassStats:
    """Fold a batch of unit vectors into the statistics; returns a new ClassStats."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim == 1:
        batch = batch[np.newaxis, :]
    if batch.shape[0] == 0:
        return stats
    batch = as_unit_vector(batch, dim=stats.dim)
    return ClassStats(stats.count + batch.shape[0], stats.resultant + batch.sum(axis=0))


@dataclass(frozen=True)
class PriorSpec:
    """Conjugate prior: alpha0 pseudo-observations with resultant beta0*m0.

    m0 may be omitted only when beta0 = 0 (the prior then carries no
    directional information at all).
    """

    alpha0: float
    beta0: float
    m0: np.ndarray | None = None

    def __post_init__(self):
        a, b = float(self.alpha0), float(self.beta0)
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ValueError("prior parameters must be finite")
        if a < 0.0 or b < 0.0:
            raise ValueError(f"prior parameters must be >= 0, got alpha0={a}, beta0={b}")
        # The resultant of alpha0 unit pseudo-observations cannot exceed alpha0.
        if b > a:
            raise ValueError(f"beta0={b} exceeds alpha0={a}")
        object.__setattr__(self, "alpha0", a)
        object.__setattr__(self, "beta0", b)
        if self.m0 is None:
            if b > 0.0:
                raise ValueError("m0 is required when beta0 > 0")
        else:
            object.__setattr__(self, "m0", as_unit_vector(self.m0))


@dataclass(frozen=True)
class PosteriorSpec:
    """Posterior pseudo-count alpha, pseudo-resultant length beta, direction m.

    m may be omitted only when beta = 0 (uniform: no preferred direction), in
    which case `dim` must be supplied explicitly.
    """

    alpha: float
    beta: float
    m: np.ndarray | None = None
    dim: int = 0

    def __post_init__(self):
        a, b = float(self.alpha), float(self.beta)
        if not (np.isfinite(a) and np.isfinite(b)) or b < 0.0:
            raise ValueError(f"invalid posterior parameters alpha={a}, beta={b}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        if self.m is None:
            if b > 0.0:
                raise ValueError("m is required when beta > 0")
            if self.dim < 2:
                raise ValueError("dim must be given (>= 2) when m is omitted")
            object.__setattr__(self, "dim", int(self.dim))
        else:
            m = as_unit_vector(self.m)
            object.__setattr__(self, "m", m)
            object.__setattr__(self, "dim", m.shape[0])


def posterior(prior: PriorSpec, stats: ClassStats) -> PosteriorSpec:
    """Combine prior and statistics: alpha = alpha0 + n, beta*m = beta0*m0 + resultant."""
    if prior.m0 is not None and prior.m0.shape[0] != stats.dim:
        raise ValueError(f"dimension mismatch: prior has {prior.m0.shape[0]}, stats {stats.dim}")
    v = stats.resultant.copy()
    if prior.beta0 > 0.0:
        v += prior.beta0 * prior.m0
    beta = float(np.linalg.norm(v))
    if beta == 0.0:
        raise DegeneratePosteriorError(
            "combined resultant is the zero vector; the mean direction is undefined"
        )
    return PosteriorSpec(prior.alpha0 + stats.count, beta, v / beta)


def _solve_concentration(p: int, r: float, hi: float) -> float:
    """Root of A_p(kappa) = r, bracketed by r(p-2)/(1-r^2) and the approx value."""
    lo = max(r * (p - 2) / (1.0 - r * r), 0.0)
    f = lambda k: mean_resultant_ratio(p, k) - r
    # The closed-form approximation overshoots the root, so [lo, hi] brackets it;
    # widen defensively in case of float slop at the endpoints.
    while f(hi) < 0.0:
        hi = min(hi * 2.0, MAX_KAPPA)
        if hi == MAX_KAPPA and f(hi) < 0.0:
            raise ConcentrationOverflowError(f"A_p(kappa)={r} has no root below {MAX_KAPPA:g}")
    while lo > 0.0 and f(lo) > 0.0:
        lo *= 0.5
        if lo < 1e-300:
            lo = 0.0
    root = float(brentq(f, lo, hi, xtol=1e-12, rtol=1e-14))
    if abs(mean_resultant_ratio(p, root) - r) > 1e-10:
        raise RuntimeError(f"concentration solve did not converge at p={p}, ratio={r}")
    return root


def map_estimate(post: PosteriorSpec, mode: str = "approx") -> VmfParams:
    """MAP vMF parameters from a posterior: mu = m, kappa from beta/alpha.

    mode "approx" uses kappa = p*beta*alpha/(alpha^2 - beta^2); mode "exact"
    solves A_p(kappa) = beta/alpha by bracketed root finding (residual below
    1e-10), started from the approx value. The approximation always lands at
    or above the exact root, badly so at small p.
    """
    if mode not in ("approx", "exact"):
        raise ValueError(f"unknown estimation mode {mode!r}")
    if post.alpha <= 0.0:
        raise ValueError(f"posterior pseudo-count must be positive, got {post.alpha}")
    p = post.dim
    r = post.beta / post.alpha
    if r >= _RESULTANT_RATIO_MAX:
        raise ConcentrationOverflowError(
            f"beta/alpha = {r} is too close to 1; concentration is unbounded"
        )
    if r == 0.0:
        # Uniform class: kappa = 0 and the direction never enters the density.
        mu = post.m if post.m is not None else np.eye(p)[0]
        return VmfParams(mu=mu, kappa=0.0)
    approx = p * r / (1.0 - r * r)
    if approx > MAX_KAPPA:
        raise ConcentrationOverflowError(
            f"implied concentration {approx:.3g} exceeds the supported maximum {MAX_KAPPA:g}"
        )
    kappa = approx if mode == "approx" else _solve_concentration(p, r, approx)
    return VmfParams(mu=post.m, kappa=kappa)


def scale_prior(alpha_hat: float, beta_hat: float, m0, class_count: float) -> PriorSpec:
    """Per-class prior scaled to class size: alpha0 = alpha_hat*N, beta0 = beta_hat*N.

    The per-sample rates must satisfy beta_hat <= alpha_hat (checked here, at
    configuration time) so the resulting PriorSpec invariant holds for any N.
    """
    a, b = float(alpha_hat), float(beta_hat)
    if not (np.isfinite(a) and np.isfinite(b)) or a < 0.0 or b < 0.0:
        raise ValueError(f"prior rates must be finite and >= 0, got {a}, {b}")
    if b > a:
        raise ValueError(f"beta_hat={b} exceeds alpha_hat={a}")
    n = float(class_count)
    if n < 0:
        raise ValueError(f"class count must be >= 0, got {class_count}")
    if b * n == 0.0:
        return PriorSpec(a * n, 0.0, as_unit_vector(m0) if m0 is not None else None)
    return PriorSpec(a * n, b * n, m0)
