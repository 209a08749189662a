"""f-divergence families, Legendre-Fenchel conjugates and likelihood recovery.

A family is plain data: the generator ``f`` with its derivative, the value
``f(1)``, and optionally a closed-form conjugate ``f*``.  Families without a
closed form fall back to :func:`conjugate_numeric`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import xlogy

from ._numerics import golden_section
from .errors import DomainError, StructuralError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FDivergence:
    """A convex generator ``f`` and everything the dual reduction needs from it.

    ``f_prime_range`` is the open/closed interval on which ``f_prime`` is
    invertible with inverse ``f_prime_inverse`` (the likelihood map).
    """

    name: str
    f: ArrayFn
    f_prime: ArrayFn
    f_at_one: float
    conjugate: Optional[ArrayFn] = None
    conjugate_prime: Optional[ArrayFn] = None
    f_prime_inverse: Optional[ArrayFn] = None
    f_prime_range: tuple = (-np.inf, np.inf)

    def conj(self, xi):
        """Conjugate value, closed form when available, numeric otherwise."""
        if self.conjugate is not None:
            return self.conjugate(np.asarray(xi, dtype=float))
        xi = np.asarray(xi, dtype=float)
        out = np.array([conjugate_numeric(self, v).value for v in xi.ravel()])
        return out.reshape(xi.shape)

    def conj_prime(self, xi):
        if self.conjugate_prime is not None:
            return self.conjugate_prime(np.asarray(xi, dtype=float))
        xi = np.asarray(xi, dtype=float)
        out = np.array([conjugate_numeric(self, v).maximizer for v in xi.ravel()])
        return out.reshape(xi.shape)


def _kl_f(x):
    x = np.asarray(x, dtype=float)
    return xlogy(x, x) - x


def _chi2_conj(xi):
    xi = np.asarray(xi, dtype=float)
    return np.where(xi >= -2.0, xi + 0.25 * xi * xi, -1.0)


def _burg_f(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, -np.log(np.where(x > 0, x, 1.0)), np.inf)


def _burg_conj(xi):
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(xi < 0, -1.0 - np.log(np.where(xi < 0, -xi, 1.0)), np.inf)


def _burg_conj_prime(xi):
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(xi < 0, -1.0 / np.where(xi < 0, xi, -1.0), np.inf)


KL = FDivergence(
    name="kl",
    f=_kl_f,
    f_prime=lambda x: np.log(np.asarray(x, dtype=float)),
    f_at_one=-1.0,
    conjugate=lambda xi: np.exp(np.asarray(xi, dtype=float)),
    conjugate_prime=lambda xi: np.exp(np.asarray(xi, dtype=float)),
    f_prime_inverse=lambda y: np.exp(np.asarray(y, dtype=float)),
)

CHI2 = FDivergence(
    name="chi2",
    f=lambda x: (np.asarray(x, dtype=float) - 1.0) ** 2,
    f_prime=lambda x: 2.0 * (np.asarray(x, dtype=float) - 1.0),
    f_at_one=0.0,
    conjugate=_chi2_conj,
    conjugate_prime=lambda xi: np.maximum(0.0, 1.0 + 0.5 * np.asarray(xi, dtype=float)),
    f_prime_inverse=lambda y: 1.0 + 0.5 * np.asarray(y, dtype=float),
    f_prime_range=(-2.0, np.inf),
)

BURG = FDivergence(
    name="burg",
    f=_burg_f,
    f_prime=lambda x: -1.0 / np.asarray(x, dtype=float),
    f_at_one=0.0,
    conjugate=_burg_conj,
    conjugate_prime=_burg_conj_prime,
    f_prime_inverse=lambda y: -1.0 / np.asarray(y, dtype=float),
    f_prime_range=(-np.inf, 0.0),
)

FAMILIES = {fam.name: fam for fam in (KL, CHI2, BURG)}


def get_family(name: str) -> FDivergence:
    try:
        return FAMILIES[name]
    except KeyError:
        raise KeyError(f"unknown divergence family {name!r}; known: {sorted(FAMILIES)}") from None


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability weights on an ordered, finite support."""

    support: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        n = support.shape[0]
        if self.weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(self.weights, dtype=float).copy()
        if weights.shape != (n,):
            raise StructuralError(f"{weights.shape[0]} weights for {n} support points")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        weights.setflags(write=False)
        support.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.weights.shape[0]


def f_divergence(fam: FDivergence, mt: DiscreteMeasure, m: DiscreteMeasure) -> float:
    """``sum_i m_i f(mt_i / m_i) - f(1)`` with ``0 f(0/0) = 0``."""
    if mt.support.shape != m.support.shape or not np.array_equal(mt.support, m.support):
        raise StructuralError("measures must share an identical support")
    return divergence_from_weights(fam, mt.weights, m.weights)


def divergence_from_weights(fam: FDivergence, q, w) -> float:
    """Same as :func:`f_divergence` on bare weight vectors over a common support."""
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    null = w == 0
    bad = np.flatnonzero(null & (q > 0))
    if bad.size:
        raise DomainError(
            f"not absolutely continuous: atom {bad[0]} has mass {q[bad[0]]} under a null base atom"
        )
    pos = ~null
    ratio = q[pos] / w[pos]
    return float(np.sum(w[pos] * fam.f(ratio)) - fam.f_at_one)


class ConjugateResult(NamedTuple):
    value: float
    maximizer: float
    at_boundary: bool


def conjugate_numeric(fam: FDivergence, xi: float, search_bounds=(0.0, 1e6)) -> ConjugateResult:
    """Numeric ``sup_x [x xi - f(x)]`` over ``search_bounds``.

    A 1024-point log-spaced scan locates the bracket, golden-section search
    narrows it to width 1e-10.  ``at_boundary`` flags a maximizer sitting on
    either end of the search interval, where the supremum may be truncated.
    Intended as a test oracle for closed-form conjugates.
    """
    lo, hi = map(float, search_bounds)
    if not lo < hi:
        raise DomainError("search_bounds must be an increasing interval")
    xi = float(xi)
    start = max(lo, 1e-12 * max(1.0, hi)) if lo <= 0 else lo
    grid = np.geomspace(start, hi, 1024) if start > 0 else np.linspace(lo, hi, 1024)
    if lo < start:
        grid = np.concatenate(([lo], grid))

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = grid * xi - fam.f(grid)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))

    def neg(x):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            v = x * xi - float(fam.f(np.array(x)))
        return -v if np.isfinite(v) else np.inf

    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid.size - 1)]
    x, fx = golden_section(neg, a, b, tol=1e-10)
    if -fx < vals[k]:
        x, fx = grid[k], -vals[k]
    width = 1e-9 * max(1.0, abs(hi - lo))
    at_boundary = bool(x - lo <= width or hi - x <= width)
    return ConjugateResult(value=-fx, maximizer=x, at_boundary=at_boundary)


def recover_likelihood(fam: FDivergence, losses, lam: float, mu: float) -> np.ndarray:
    """Worst-case likelihood ``L_i = (f')^{-1}((l_i - mu) / lam)``, unnormalized."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if fam.f_prime_inverse is None:
        raise DomainError(f"family {fam.name!r} has no inverse derivative")
    arg = (np.asarray(losses, dtype=float) - mu) / lam
    lo, hi = fam.f_prime_range
    bad = np.flatnonzero((arg < lo) | (arg > hi) | ~np.isfinite(arg))
    if bad.size:
        raise DomainError(
            f"argument {arg[bad[0]]} at atom {bad[0]} outside the invertibility range {fam.f_prime_range}"
        )
    return fam.f_prime_inverse(arg)
