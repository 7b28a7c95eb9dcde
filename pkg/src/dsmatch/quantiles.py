"""Quantile treatment effects from de-biased matched CDFs.

Every CDF estimator here (matched, its linear form, bootstrap replicates,
IPW and AIPW) is a :class:`MixtureCdf`: a weighted empirical step function
plus a weighted sum of normal CDFs from the normal-linear sieve model.
Quantiles are the smallest grid point whose running-maximum CDF reaches
``xi``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError
from .matching import MatchMap, match_both, match_group
from .means import PointEstimate
from .scores import ScoreSet
from .sieve import CondCdfFit, fit_conditional_cdf

GRID_EXTRA = 512
_PHI0 = 1.0 / np.sqrt(2 * np.pi)
_CHUNK = 64
# absorbs rounding in accumulated weights, e.g. 10 * 0.05 < 0.5
XI_TOL = 1e-12


class QuantileWarning(UserWarning):
    pass


def inversion_grid(y, extra=GRID_EXTRA):
    """Unique values of ``y`` plus ``extra`` equispaced points over
    [min - sd, max + sd]."""
    y = np.asarray(y, dtype=float)
    sd = float(np.std(y, ddof=1)) if y.size > 1 else 1.0
    sd = sd if sd > 0 else 1.0
    lin = np.linspace(y.min() - sd, y.max() + sd, extra)
    return np.unique(np.concatenate([y, lin]))


def invert_cdf(cdf, xi, grid):
    """Smallest grid point whose running-maximum CDF value is >= ``xi``.

    ``cdf`` is a vectorized callable or an array of values on ``grid``.
    When ``xi`` is never reached the largest grid point is returned with a
    :class:`QuantileWarning`.
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(cdf(grid) if callable(cdf) else cdf, dtype=float)
    hit = np.flatnonzero(np.maximum.accumulate(vals) >= xi - XI_TOL)
    if hit.size == 0:
        warnings.warn(f"CDF never reaches {xi} on the grid", QuantileWarning, stacklevel=2)
        return float(grid[-1])
    return float(grid[hit[0]])


@dataclass(eq=False)
class MixtureCdf:
    """F(q) = sum_i d_i 1(y_i <= q) + sum_i c_i Phi((h(q) - m_i) / sigma).

    ``transform`` is h (identity when None).
    """

    y: np.ndarray
    step_weights: np.ndarray
    locs: Optional[np.ndarray] = None
    coefs: Optional[np.ndarray] = None
    sigma: float = 1.0
    transform: Optional[Callable] = None

    def __post_init__(self):
        order = np.argsort(self.y, kind="stable")
        self._ys = np.asarray(self.y, dtype=float)[order]
        self._cum = np.concatenate([[0.0], np.cumsum(np.asarray(self.step_weights)[order])])
        if self.coefs is not None:
            keep = np.asarray(self.coefs) != 0
            self._locs = np.asarray(self.locs, dtype=float)[keep]
            self._coefs = np.asarray(self.coefs, dtype=float)[keep]
        else:
            self._locs = np.zeros(0)
            self._coefs = np.zeros(0)

    def step(self, q):
        return self._cum[np.searchsorted(self._ys, np.asarray(q, dtype=float), side="right")]

    def _h(self, q):
        q = np.asarray(q, dtype=float)
        return q if self.transform is None else self.transform(q)

    def smooth(self, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.zeros(q.shape)
        if self._coefs.size == 0:
            return out
        h = self._h(q)
        for s in range(0, q.size, _CHUNK):
            z = (h[s:s + _CHUNK, None] - self._locs[None, :]) / self.sigma
            out[s:s + _CHUNK] = ndtr(z) @ self._coefs
        return out

    def __call__(self, q):
        scalar = np.ndim(q) == 0
        out = self.step(np.atleast_1d(q)) + self.smooth(q)
        return float(out[0]) if scalar else out

    def quantile(self, xi, grid, stride=16):
        """Same answer as ``invert_cdf(self, xi, grid)`` with far fewer
        kernel evaluations.

        The smooth part is evaluated exactly on a coarse sub-grid; between
        coarse points it is bounded with its Lipschitz constant, and only
        grid points whose upper bound reaches ``xi`` are evaluated exactly,
        in increasing order, until the first hit.
        """
        grid = np.asarray(grid, dtype=float)
        G = grid.size
        thr = xi - XI_TOL
        if self._coefs.size == 0 or self.transform is not None or G <= 4 * stride:
            return invert_cdf(self, xi, grid)
        step = self.step(grid)
        coarse = np.unique(np.concatenate([np.arange(0, G, stride), [G - 1]]))
        sm_coarse = self.smooth(grid[coarse])
        f_coarse = step[coarse] + sm_coarse
        lip = np.abs(self._coefs).sum() * _PHI0 / self.sigma

        # upper bound of the smooth part at every grid point
        blk = np.searchsorted(coarse, np.arange(G), side="right") - 1
        blk = np.minimum(blk, coarse.size - 2)
        left, right = coarse[blk], coarse[blk + 1]
        ub = np.minimum(sm_coarse[blk] + lip * (grid - grid[left]),
                        sm_coarse[blk + 1] + lip * (grid[right] - grid))
        ub[coarse] = sm_coarse
        upper = step + ub

        hit_coarse = np.flatnonzero(f_coarse >= thr)
        stop = coarse[hit_coarse[0]] if hit_coarse.size else G - 1
        cand = np.flatnonzero(upper[:stop] >= thr)
        cand = cand[~np.isin(cand, coarse)]
        for s in range(0, cand.size, _CHUNK):
            idx = cand[s:s + _CHUNK]
            vals = step[idx] + self.smooth(grid[idx])
            ok = np.flatnonzero(vals >= thr)
            if ok.size:
                return float(grid[idx[ok[0]]])
        if hit_coarse.size:
            return float(grid[stop])
        # never reached on the grid
        return invert_cdf(self, xi, grid)


@dataclass(frozen=True)
class CdfEvaluation:
    grid: np.ndarray
    initial: np.ndarray
    corrected: np.ndarray


def _cdf_locations(cdf_fit, S):
    return cdf_fit.location(S)


def matched_cdf_linear(dataset, S, mm: MatchMap, cdf_fit: CondCdfFit, weights=None):
    """Linear form of the de-biased matched CDF of Y(arm) as a :class:`MixtureCdf`.

    n^-1 sum_i w_i F(q; S_i) + n^-1 sum_{A_i = a} w_i (1 + K_i/M)[1(Y_i <= q) - F(q; S_i)]
    """
    n = dataset.n
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    d = np.zeros(n)
    d[mm.donor_indices] = 1.0 + mm.K[mm.donor_indices] / mm.M
    step_w = w * d / n
    coefs = w * (1.0 - d) / n
    return MixtureCdf(dataset.Y, step_w, _cdf_locations(cdf_fit, S), coefs,
                      cdf_fit.sigma, cdf_fit.transform if cdf_fit.boxcox_lambda is not None else None)


def matched_cdf_treated_linear(dataset, S, mm: MatchMap, cdf_fit: CondCdfFit, weights=None):
    """Linear form of the de-biased matched CDF of Y(0) among the treated."""
    n1 = dataset.n_treated
    A = dataset.A
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    kw = mm.K / mm.M * (A == 0)
    step_w = w * kw / n1
    coefs = w * (A - kw) / n1
    return MixtureCdf(dataset.Y, step_w, _cdf_locations(cdf_fit, S), coefs,
                      cdf_fit.sigma, cdf_fit.transform if cdf_fit.boxcox_lambda is not None else None)


def dsm_cdf(q, dataset, scoreset, match_maps, cdf_fits, M=1, arm=1):
    """Initial and de-biased matched CDF of Y(arm) at ``q`` (scalar or array).

    corrected(q) = initial(q) + n^-1 sum over queries of
    M^-1 sum_j {F(q; S_query) - F(q; S_j)}.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    n = dataset.n
    mm = match_maps[arm]
    fit = cdf_fits[arm]
    S = scoreset.for_arm(arm)
    d = np.zeros(n)
    d[mm.donor_indices] = 1.0 + mm.K[mm.donor_indices] / mm.M
    Y = dataset.Y
    initial = (d[None, :] * (Y[None, :] <= q[:, None])).sum(axis=1) / n
    F = fit.cdf(q, S)  # (len(q), n)
    disc = F[:, mm.query_indices] - F[:, mm.J].mean(axis=2)
    corrected = initial + disc.sum(axis=1) / n
    return CdfEvaluation(q, initial, corrected)


def _check_xi(xi):
    if not 0.0 < float(xi) < 1.0:
        raise ConfigError(f"xi must lie strictly inside (0, 1), got {xi}")


def cdf_fits_for(dataset, scoreset, degree=2, weights=None, boxcox_lambda=None):
    return (fit_conditional_cdf(scoreset, dataset, 0, degree, weights, boxcox_lambda),
            fit_conditional_cdf(scoreset, dataset, 1, degree, weights, boxcox_lambda))


def arm_grids(dataset):
    A, Y = dataset.A, dataset.Y
    return (inversion_grid(Y[A == 0]), inversion_grid(Y[A == 1]))


def dsm_qte(dataset, scoreset, xi, M=1, degree=2, match_maps=None, cdf_fits=None,
            grids=None, tag="dsm"):
    """De-biased double score matching estimate of the ``xi``-quantile effect."""
    _check_xi(xi)
    if match_maps is None:
        match_maps = match_both(scoreset, dataset.A, M)
    if cdf_fits is None:
        cdf_fits = cdf_fits_for(dataset, scoreset, degree)
    if grids is None:
        grids = arm_grids(dataset)
    q = []
    for a in (0, 1):
        F = matched_cdf_linear(dataset, scoreset.for_arm(a), match_maps[a], cdf_fits[a])
        q.append(F.quantile(xi, grids[a]))
    return PointEstimate(q[1] - q[0], tag, {"q0": q[0], "q1": q[1]})


def dsm_qte_initial(dataset, scoreset, xi, M=1, match_maps=None, grids=None):
    """Quantile effect from the uncorrected matched CDFs."""
    _check_xi(xi)
    if match_maps is None:
        match_maps = match_both(scoreset, dataset.A, M)
    if grids is None:
        grids = arm_grids(dataset)
    q = []
    for a in (0, 1):
        mm = match_maps[a]
        d = np.zeros(dataset.n)
        d[mm.donor_indices] = 1.0 + mm.K[mm.donor_indices] / mm.M
        F = MixtureCdf(dataset.Y, d / dataset.n)
        q.append(invert_cdf(F, xi, grids[a]))
    return PointEstimate(q[1] - q[0], "dsm-initial", {"q0": q[0], "q1": q[1]})


def treated_quantile(dataset, xi, weights=None, grid=None):
    """Quantile of the (weighted) treated-arm empirical CDF, n1 normalization."""
    A = dataset.A
    n1 = dataset.n_treated
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    F = MixtureCdf(dataset.Y, w * A / n1)
    if grid is None:
        grid = np.unique(dataset.Y[A == 1])
    return invert_cdf(F, xi, grid)


def dsm_qtt(dataset, scoreset_att, xi, M=1, degree=2, match_map=None, cdf_fit0=None,
            grid0=None, tag="dsm"):
    """De-biased matching estimate of the ``xi``-quantile effect on the treated."""
    _check_xi(xi)
    S = scoreset_att.S0 if isinstance(scoreset_att, ScoreSet) else np.asarray(scoreset_att)
    A = dataset.A
    mm = match_map if match_map is not None else match_group(S, A, 0, M)
    if cdf_fit0 is None:
        cdf_fit0 = fit_conditional_cdf(None, dataset, 0, degree, S=S)
    if grid0 is None:
        grid0 = inversion_grid(dataset.Y[A == 0])
    q1 = treated_quantile(dataset, xi)
    F0 = matched_cdf_treated_linear(dataset, S, mm, cdf_fit0)
    q0 = F0.quantile(xi, grid0)
    return PointEstimate(q1 - q0, tag, {"q0": q0, "q1": q1})


def _arm_propensity(ps, a):
    e = np.asarray(ps, dtype=float)
    return e if a == 1 else 1.0 - e


def naive_quantiles(dataset, xi):
    A, Y = dataset.A, dataset.Y
    q = []
    for a in (0, 1):
        ya = Y[A == a]
        F = MixtureCdf(ya, np.full(ya.size, 1.0 / ya.size))
        q.append(invert_cdf(F, xi, np.unique(ya)))
    return q


def comparator_quantiles(dataset, variant, xi, ps=None, cdf_models=None, M=1, degree=2,
                         scoreset=None, tag=None):
    """Comparator quantile-effect estimators.

    ``naive``: arm-wise sample quantiles.  ``ipw``: inverse-propensity
    weighted CDF (normalized by the weight sum).  ``aipw``: augmented form
    with outcome CDF models ``cdf_models = (fit0, fit1, S)`` where ``S`` is
    the regressor matrix for both fits.  ``psm``/``pgm``/``m.x`` reuse the
    matched CDF pipeline on the corresponding score set.
    """
    _check_xi(xi)
    tag = tag or variant
    A, Y, n = dataset.A, dataset.Y, dataset.n
    if variant == "naive":
        q0, q1 = naive_quantiles(dataset, xi)
    elif variant in ("ipw", "aipw"):
        if ps is None:
            raise ConfigError(f"{variant} needs fitted propensities")
        grids = arm_grids(dataset)
        q = []
        for a in (0, 1):
            w = (A == a) / _arm_propensity(ps, a)
            if variant == "ipw":
                F = MixtureCdf(Y, w / w.sum())
            else:
                if cdf_models is None:
                    raise ConfigError("aipw needs outcome CDF models")
                fit, S = cdf_models[a], cdf_models[2]
                F = MixtureCdf(Y, w / n, fit.location(S), (1.0 - w) / n, fit.sigma)
            q.append(F.quantile(xi, grids[a]))
        q0, q1 = q
    elif variant == "m.x":
        from .means import covariate_scoreset
        est = dsm_qte(dataset, covariate_scoreset(dataset), xi, M, 1, tag=tag)
        return est
    elif variant in ("psm", "pgm"):
        if scoreset is None:
            raise ConfigError(f"{variant} needs a fitted score set")
        return dsm_qte(dataset, scoreset, xi, M, degree, tag=tag)
    else:
        raise ConfigError(f"unknown quantile comparator {variant!r}")
    return PointEstimate(q1 - q0, tag, {"q0": q0, "q1": q1})


def outcome_cdf_models(dataset, design, degree=1):
    """Normal-linear outcome CDF models regressing Y on ``design`` columns per arm.

    ``design`` excludes the intercept; degree 1 gives the plain linear model.
    """
    S = np.asarray(design, dtype=float)
    f0 = fit_conditional_cdf(None, dataset, 0, degree, S=S)
    f1 = fit_conditional_cdf(None, dataset, 1, degree, S=S)
    return (f0, f1, S)
