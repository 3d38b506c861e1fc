"""The von Mises-Fisher distribution as a value type: log-density and sampling.

The density on the unit sphere S^(p-1) is

    f_p(z | mu, kappa) = exp(kappa * mu.T z) / C_p(kappa),

with mean direction mu and concentration kappa >= 0 (kappa = 0 is uniform).
The normalizer only ever appears through its log (see `special`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .special import MAX_KAPPA, log_vmf_normalizer

__all__ = ["UNIT_NORM_TOL", "as_unit_vector", "substream", "VmfParams", "log_density", "sample"]

# Vectors whose norm deviates from 1 by no more than this are silently
# renormalized (float drift); larger deviations are treated as caller bugs.
UNIT_NORM_TOL = 1e-6


def as_unit_vector(v, dim: int | None = None) -> np.ndarray:
    """Validate and renormalize a unit vector (or a batch, rows as vectors).

    Accepts norm deviations up to `UNIT_NORM_TOL` and rescales; anything
    further off the sphere raises ValueError, as does a dimension mismatch
    when `dim` is given.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim not in (1, 2):
        raise ValueError(f"expected a vector or a batch of vectors, got ndim={v.ndim}")
    if v.shape[-1] < 2:
        raise ValueError(f"unit vectors must have dimension >= 2, got {v.shape[-1]}")
    if dim is not None and v.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[-1]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("unit vector has non-finite components")
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"vector is off the unit sphere by {worst:.3e} (> {UNIT_NORM_TOL:.0e})")
    return v / norms[..., np.newaxis] if v.ndim == 2 else v / norms


def substream(seed: int, *key: int) -> np.random.Generator:
    """Named RNG stream: a PCG64 generator keyed by (seed, *key).

    This is the library-wide stream-splitting rule. Every consumer that needs
    independent randomness under one experiment seed derives its generator as
    substream(seed, tag...) -- e.g. one sub-stream per class when sampling a
    mixture -- which makes runs reproducible across machines and immune to
    reordering of the consumers.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class VmfParams:
    """Parameters of one vMF distribution: mean direction, concentration, dimension."""

    mu: np.ndarray
    kappa: float
    dim: int = field(default=0)

    def __post_init__(self):
        mu = as_unit_vector(self.mu)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "dim", int(self.dim) if self.dim else mu.shape[0])
        if self.dim != mu.shape[0]:
            raise ValueError(f"mu has dimension {mu.shape[0]}, declared dim={self.dim}")
        kappa = float(self.kappa)
        if not np.isfinite(kappa) or kappa < 0.0:
            raise ValueError(f"kappa must be finite and >= 0, got {kappa}")
        if kappa > MAX_KAPPA:
            raise ValueError(f"kappa={kappa:g} exceeds the supported maximum {MAX_KAPPA:g}")
        object.__setattr__(self, "kappa", kappa)


def log_density(params: VmfParams, z) -> float | np.ndarray:
    """log f_p(z | mu, kappa) = kappa * mu.T z - ln C_p(kappa).

    `z` may be a single unit vector or an (n, p) batch; the result is a
    scalar or an array of n values accordingly.
    """
    z = as_unit_vector(z, dim=params.dim)
    dots = z @ params.mu
    out = params.kappa * dots - log_vmf_normalizer(params.dim, params.kappa)
    return float(out) if np.isscalar(dots) or dots.ndim == 0 else out


def _sample_cosines(kappa: float, p: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n values of w = mu.T z by rejection from the marginal (Wood 1994)."""
    d = p - 1
    b = d / (np.sqrt(4.0 * kappa * kappa + d * d) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * np.log1p(-x0 * x0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(n - filled, 32)
        z = rng.beta(d / 2.0, d / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        ok = kappa * w + d * np.log1p(-x0 * w) - c >= np.log(u)
        take = min(int(ok.sum()), n - filled)
        out[filled:filled + take] = w[ok][:take]
        filled += take
    return out


def sample(params: VmfParams, n: int, rng: int | np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. samples, returned as an (n, p) array of unit rows.

    `rng` is either a Generator (e.g. from `substream`) or an integer seed.
    Fixed seeds give bitwise-identical streams. Sampling is Wood-style
    rejection for the cosine against mu, a uniform direction in the
    orthogonal complement, then a Householder reflection taking e_1 onto mu.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if not isinstance(rng, np.random.Generator):
        rng = substream(int(rng))
    p = params.dim
    if params.kappa == 0.0:
        g = rng.standard_normal((n, p))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    w = _sample_cosines(params.kappa, p, n, rng)
    v = rng.standard_normal((n, p - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = np.empty((n, p))
    x[:, 0] = w
    x[:, 1:] = np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, np.newaxis] * v
    # Reflect e_1 onto mu: H = I - 2 u u^T / (u^T u) with u = e_1 - mu.
    u = -params.mu.copy()
    u[0] += 1.0
    uu = float(u @ u)
    if uu > 1e-24:
        x -= (2.0 / uu) * np.outer(x @ u, u)
    return x / np.linalg.norm(x, axis=1, keepdims=True)
