"""Power-series (sieve) regression of outcomes on matching scores.

The same least-squares fit serves two purposes: as the conditional mean
used in the matching-discrepancy correction, and, with its residual
scale, as a normal-linear model for the conditional outcome CDF.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import DomainError

RANK_TOL = 1e-10
SIGMA_FLOOR = 1e-8


class SieveWarning(UserWarning):
    pass


@lru_cache(maxsize=None)
def power_exponents(dim, degree):
    """Exponent tuples of every monomial with total degree <= ``degree``.

    Ordered by degree, constant term first.
    """
    terms = []
    for deg in range(degree + 1):
        for combo in combinations_with_replacement(range(dim), deg):
            e = [0] * dim
            for c in combo:
                e[c] += 1
            terms.append(tuple(e))
    return tuple(terms)


def power_basis(S, exponents):
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    B = np.ones((S.shape[0], len(exponents)))
    for t, e in enumerate(exponents):
        for j, k in enumerate(e):
            if k:
                B[:, t] *= S[:, j] ** k
    return B


def _independent_columns(B):
    """Keep columns not (numerically) in the span of the preceding ones."""
    R = np.linalg.qr(B, mode="r")
    d = np.abs(np.diag(R))
    if d.size == 0 or d.max() == 0:
        return np.zeros(B.shape[1], bool)
    return d > RANK_TOL * d.max()


@dataclass(frozen=True, eq=False)
class SieveFit:
    """Least-squares fit of Y on a power basis of the matching scores.

    ``sigma`` is the residual scale sqrt(RSS / (sum of weights - rank)).
    """

    arm: Optional[int]
    degree: int
    exponents: tuple
    coefficients: np.ndarray
    sigma: float

    def basis(self, S):
        return power_basis(S, self.exponents)

    def predict(self, S):
        return self.basis(S) @ self.coefficients


def fit_sieve(S, Y, mask, degree, weights=None, arm=None):
    """Power-series least squares of ``Y`` on ``S`` over rows with ``mask``."""
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    mask = np.asarray(mask).astype(bool)
    w = np.ones(S.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    rows = mask & (w > 0)
    exps = power_exponents(S.shape[1], int(degree))
    if rows.sum() <= len(exps):
        raise DomainError(
            f"sieve fit needs more than {len(exps)} units, arm has {int(rows.sum())}")
    B = power_basis(S[rows], exps)
    sw = np.sqrt(w[rows])
    Bw = B * sw[:, None]
    keep = _independent_columns(Bw)
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} collinear sieve terms",
                      SieveWarning, stacklevel=2)
        exps = tuple(e for e, k in zip(exps, keep) if k)
        Bw = Bw[:, keep]
        B = B[:, keep]
    y = np.asarray(Y, dtype=float)[rows]
    coef, *_ = np.linalg.lstsq(Bw, y * sw, rcond=RANK_TOL)
    resid = y - B @ coef
    dof = w[rows].sum() - len(exps)
    sigma = float(np.sqrt(np.sum(w[rows] * resid ** 2) / dof)) if dof > 0 else 0.0
    return SieveFit(arm, int(degree), exps, coef, sigma)


def fit_sieve_mean(scoreset, dataset, arm, degree=2, weights=None):
    """Sieve estimate of E[Y | S_arm, A = arm] from the arm's units."""
    return fit_sieve(scoreset.for_arm(arm), dataset.Y, dataset.A == arm,
                     degree, weights, arm)


def boxcox(y, lam):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("Box-Cox transform needs positive outcomes")
    return np.log(y) if lam == 0 else (y ** lam - 1) / lam


@dataclass(frozen=True, eq=False)
class CondCdfFit:
    """Normal-linear sieve model: F(q; S) = Phi((h(q) - m(S)) / sigma).

    ``h`` is the identity, or a Box-Cox map with fixed exponent ``boxcox_lambda``.
    """

    mean: SieveFit
    sigma: float
    boxcox_lambda: Optional[float] = None

    @property
    def arm(self):
        return self.mean.arm

    def transform(self, q):
        q = np.asarray(q, dtype=float)
        if self.boxcox_lambda is None:
            return q
        out = np.full(q.shape, -np.inf)
        pos = q > 0
        out[pos] = boxcox(q[pos], self.boxcox_lambda)
        return out

    def location(self, S):
        return self.mean.predict(S)

    def cdf(self, q, S):
        """F(q; S_i) for each row of S (q scalar) or an (len(q), n) matrix."""
        loc = self.location(S)
        hq = self.transform(q)
        if np.ndim(hq) == 0:
            return ndtr((hq - loc) / self.sigma)
        return ndtr((hq[:, None] - loc[None, :]) / self.sigma)


def fit_conditional_cdf(scoreset, dataset, arm, degree=2, weights=None,
                        boxcox_lambda=None, S=None):
    """Fit the normal-linear sieve CDF model within ``arm``.

    ``S`` overrides the arm's matching matrix (used for treated-population
    estimands, which match on a single score set).
    """
    S = scoreset.for_arm(arm) if S is None else S
    Y = dataset.Y
    if boxcox_lambda is not None:
        Y = Y.copy()
        m = dataset.A == arm
        Y[m] = boxcox(dataset.Y[m], boxcox_lambda)
    mean = fit_sieve(S, Y, dataset.A == arm, degree, weights, arm)
    sigma = mean.sigma
    if not sigma > SIGMA_FLOOR:
        warnings.warn("zero residual variance in conditional CDF fit; "
                      f"flooring sigma at {SIGMA_FLOOR}", SieveWarning, stacklevel=2)
        sigma = SIGMA_FLOOR
    return CondCdfFit(mean, sigma, boxcox_lambda)
