"""Candidate propensity / prognostic score models and the matching scores.

Each propensity candidate is a logistic regression on some design matrix;
each prognostic candidate is a pair of linear regressions (one per arm) on
a shared design.  Fitted propensities enter the matching scores on the
logit scale, prognostic scores as fitted conditional means, and every
score column is standardized with full-sample constants.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit, logit

from .data import Dataset, numeric_columns, standardize_columns
from .dgp import z_transform
from .errors import ConfigError, DomainError, RankDeficiencyError

PS_CLIP = 1e-6
RANK_TOL = 1e-10
IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8

FEATURE_MAPS = ("raw", "paper-Z", "first-order-plus-squares-of-numeric")
_ALIASES = {
    "x": "raw",
    "z": "paper-Z",
    "paper_z": "paper-Z",
    "quadratic": "first-order-plus-squares-of-numeric",
    "squares": "first-order-plus-squares-of-numeric",
}


class ConvergenceWarning(UserWarning):
    pass


def canonical_feature_map(name):
    key = _ALIASES.get(str(name).lower(), name)
    if key not in FEATURE_MAPS:
        raise ConfigError(f"unknown feature_map {name!r}; choose from {FEATURE_MAPS}")
    return key


def build_design(dataset, feature_map):
    """Design matrix with a leading intercept column for ``feature_map``."""
    fm = canonical_feature_map(feature_map)
    X = dataset.X
    if fm == "raw":
        body = X
    elif fm == "paper-Z":
        body = z_transform(X)
    else:
        num = numeric_columns(X)
        body = np.column_stack([X] + [X[:, [j]] ** 2 for j in num])
    return np.column_stack([np.ones(X.shape[0]), body])


def _check_rank(design, weights, what):
    """Raise if the weighted design is rank deficient; name offending columns."""
    rows = weights > 0
    if not rows.any():
        raise DomainError(f"{what}: no rows with positive weight")
    Xw = design[rows] * np.sqrt(weights[rows])[:, None]
    if Xw.shape[0] < Xw.shape[1]:
        raise RankDeficiencyError(
            f"{what}: {Xw.shape[0]} weighted rows for {Xw.shape[1]} columns")
    _, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > RANK_TOL * d[0])) if d[0] > 0 else 0
    if rank < design.shape[1]:
        cols = sorted(int(c) for c in piv[rank:])
        raise RankDeficiencyError(
            f"{what}: design is rank deficient; collinear columns {cols}", cols)


def _wls(design, y, weights):
    sw = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=RANK_TOL)
    return coef


@dataclass(frozen=True)
class LogisticFit:
    alpha: np.ndarray
    converged: bool
    iterations: int

    def linear_predictor(self, design):
        return design @ self.alpha

    def propensity(self, design):
        return np.clip(expit(design @ self.alpha), PS_CLIP, 1 - PS_CLIP)


def fit_logistic(design, A, weights=None, start=None, max_iter=IRLS_MAX_ITER,
                 tol=IRLS_TOL, check_rank=True):
    """Weighted logistic regression by iteratively reweighted least squares.

    Converged when the largest coefficient change drops below ``tol``.  On
    non-convergence the last iterate is returned with ``converged=False``
    and a :class:`ConvergenceWarning`.
    """
    design = np.asarray(design, dtype=float)
    A = np.asarray(A, dtype=float)
    n, p = design.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if not w.sum() > 0:
        raise DomainError("weights must have a positive sum")
    if check_rank:
        _check_rank(design, w, "logistic fit")
    alpha = np.zeros(p) if start is None else np.array(start, dtype=float)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = design @ alpha
        mu = expit(eta)
        var = np.maximum(mu * (1 - mu), 1e-12)
        z = eta + (A - mu) / var
        new = _wls(design, z, w * var)
        step = np.max(np.abs(new - alpha))
        alpha = new
        if not np.all(np.isfinite(alpha)):
            break
        if step < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"logistic IRLS did not converge in {it} iterations",
                      ConvergenceWarning, stacklevel=2)
    return LogisticFit(alpha, converged, it)


@dataclass(frozen=True)
class LinearFit:
    beta: np.ndarray
    sigma: float

    def predict(self, design):
        return design @ self.beta


def fit_linear(design, Y, mask=None, weights=None, check_rank=True):
    """Weighted least squares of ``Y`` on ``design`` over rows where ``mask`` is 1.

    ``sigma`` is sqrt(weighted RSS / (sum of weights - number of columns)).
    """
    design = np.asarray(design, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, p = design.shape
    m = np.ones(n, bool) if mask is None else np.asarray(mask).astype(bool)
    if not m.any():
        raise DomainError("linear fit: mask selects no rows")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    w = np.where(m, w, 0.0)
    if check_rank:
        _check_rank(design, w, "linear fit")
    rows = w > 0
    beta = _wls(design[rows], Y[rows], w[rows])
    resid = Y[rows] - design[rows] @ beta
    dof = w.sum() - p
    sigma = float(np.sqrt(np.sum(w[rows] * resid ** 2) / dof)) if dof > 0 else 0.0
    return LinearFit(beta, sigma)


@dataclass(frozen=True)
class CandidateModelSpec:
    """One candidate model.

    ``kind`` is ``"propensity"`` or ``"prognostic"``; a prognostic spec
    stands for the pair of arm-0 and arm-1 regressions on the same design.
    """

    kind: str
    feature_map: str

    def __post_init__(self):
        if self.kind not in ("propensity", "prognostic"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "feature_map", canonical_feature_map(self.feature_map))


def specs_from_entries(entries):
    """Turn config entries ``{kind, arm, feature_map}`` into spec lists.

    Prognostic entries given per arm must come in matched pairs.
    Returns ``(ps_specs, pg_specs)``.
    """
    ps, pg = [], []
    pending = {0: [], 1: []}
    for e in entries:
        if e.kind == "propensity":
            ps.append(CandidateModelSpec("propensity", e.feature_map))
        elif e.kind == "prognostic":
            if e.arm is None:
                pg.append(CandidateModelSpec("prognostic", e.feature_map))
            elif e.arm in (0, 1):
                pending[e.arm].append(canonical_feature_map(e.feature_map))
            else:
                raise ConfigError(f"prognostic arm must be 0 or 1, got {e.arm!r}")
        else:
            raise ConfigError(f"unknown model kind {e.kind!r}")
    if pending[0] != pending[1]:
        raise ConfigError("prognostic models must be given for both arms with "
                          "the same feature maps in the same order")
    pg.extend(CandidateModelSpec("prognostic", fm) for fm in pending[0])
    return ps, pg


@dataclass(frozen=True)
class ScoreFits:
    """All fitted coefficients: theta = (alpha^1..J, beta_0^1..K, beta_1^1..K)."""

    logistic: tuple
    linear0: tuple
    linear1: tuple

    @property
    def converged(self):
        return all(f.converged for f in self.logistic)

    def flat(self):
        parts = [f.alpha for f in self.logistic]
        parts += [f.beta for f in self.linear0]
        parts += [f.beta for f in self.linear1]
        return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Per-arm matching matrices plus the fits that produced them.

    Columns of ``S0``/``S1``: J standardized logit-propensity columns, then
    K standardized prognostic columns (arm 0 / arm 1 respectively).
    """

    S0: np.ndarray
    S1: np.ndarray
    theta_hat: Optional[ScoreFits] = None
    standardization: tuple = ()
    propensity: Optional[np.ndarray] = None
    prognostic0: Optional[np.ndarray] = None
    prognostic1: Optional[np.ndarray] = None

    def for_arm(self, a):
        return self.S1 if a == 1 else self.S0

    @property
    def dim(self):
        return self.S0.shape[1]

    @classmethod
    def from_matrices(cls, V0, V1=None):
        """Standardize raw matching variables directly (no model fitting)."""
        V0 = np.asarray(V0, dtype=float)
        V0 = V0[:, None] if V0.ndim == 1 else V0
        S0, p0 = standardize_columns(V0)
        if V1 is None:
            return cls(S0, S0, standardization=(p0, p0))
        V1 = np.asarray(V1, dtype=float)
        V1 = V1[:, None] if V1.ndim == 1 else V1
        S1, p1 = standardize_columns(V1)
        return cls(S0, S1, standardization=(p0, p1))


def assemble_scores(e, g0, g1, fits=None):
    """Build the standardized per-arm matrices from fitted score columns.

    ``e`` holds (clipped) propensities, ``g0``/``g1`` prognostic means.
    """
    e = np.asarray(e, dtype=float).reshape(len(e), -1)
    g0 = np.asarray(g0, dtype=float).reshape(len(e), -1)
    g1 = np.asarray(g1, dtype=float).reshape(len(e), -1)
    V0 = np.column_stack([logit(e), g0])
    V1 = np.column_stack([logit(e), g1])
    S0, p0 = standardize_columns(V0)
    S1, p1 = standardize_columns(V1)
    return ScoreSet(S0, S1, fits, (p0, p1), e, g0, g1)


class CandidateModels:
    """Candidate specs bound to a dataset, with designs built once.

    Use :meth:`fit` (optionally weighted / warm-started) followed by
    :meth:`scores`; bootstrap replicates call both repeatedly.
    """

    def __init__(self, dataset: Dataset, ps_specs: Sequence[CandidateModelSpec],
                 pg_specs: Sequence[CandidateModelSpec]):
        ps_specs, pg_specs = list(ps_specs), list(pg_specs)
        if len(ps_specs) + len(pg_specs) < 1:
            raise ConfigError("need at least one candidate model")
        for s in ps_specs:
            if s.kind != "propensity":
                raise ConfigError("ps_specs must all be propensity models")
        for s in pg_specs:
            if s.kind != "prognostic":
                raise ConfigError("pg_specs must all be prognostic models")
        self.dataset = dataset
        self.ps_specs = ps_specs
        self.pg_specs = pg_specs
        cache = {}
        for s in ps_specs + pg_specs:
            if s.feature_map not in cache:
                cache[s.feature_map] = build_design(dataset, s.feature_map)
        self.ps_designs = [cache[s.feature_map] for s in ps_specs]
        self.pg_designs = [cache[s.feature_map] for s in pg_specs]

    @property
    def J(self):
        return len(self.ps_specs)

    @property
    def K(self):
        return len(self.pg_specs)

    def block_sizes(self):
        return ([d.shape[1] for d in self.ps_designs]
                + [d.shape[1] for d in self.pg_designs] * 2)

    def fit(self, weights=None, start: Optional[ScoreFits] = None, check_rank=True):
        ds = self.dataset
        w = np.ones(ds.n) if weights is None else np.asarray(weights, dtype=float)
        logistic = []
        for j, D in enumerate(self.ps_designs):
            init = None if start is None else start.logistic[j].alpha
            logistic.append(fit_logistic(D, ds.A, w, start=init, check_rank=check_rank))
        lin0 = tuple(fit_linear(D, ds.Y, ds.A == 0, w, check_rank) for D in self.pg_designs)
        lin1 = tuple(fit_linear(D, ds.Y, ds.A == 1, w, check_rank) for D in self.pg_designs)
        return ScoreFits(tuple(logistic), lin0, lin1)

    def raw_scores(self, fits: ScoreFits):
        """Unstandardized (logit e^j, mu_0^k, mu_1^k) columns."""
        n = self.dataset.n
        e = np.empty((n, self.J))
        for j, (D, f) in enumerate(zip(self.ps_designs, fits.logistic)):
            e[:, j] = f.propensity(D)
        g0 = np.empty((n, self.K))
        g1 = np.empty((n, self.K))
        for k, D in enumerate(self.pg_designs):
            g0[:, k] = fits.linear0[k].predict(D)
            g1[:, k] = fits.linear1[k].predict(D)
        return e, g0, g1

    def scores(self, fits: ScoreFits):
        e, g0, g1 = self.raw_scores(fits)
        return assemble_scores(e, g0, g1, fits)

    def unflatten(self, theta):
        theta = np.asarray(theta, dtype=float)
        sizes = self.block_sizes()
        if theta.shape != (sum(sizes),):
            raise ValueError(f"theta has length {theta.size}, expected {sum(sizes)}")
        blocks = np.split(theta, np.cumsum(sizes)[:-1]) if sizes else []
        J, K = self.J, self.K
        return (blocks[:J], blocks[J:J + K], blocks[J + K:])

    def estimating_equation(self, theta, weights=None):
        """n^{-1/2} sum_i w_i U_i(theta), stacked as (U1^1..J, U2^1..K, U3^1..K)."""
        ds = self.dataset
        w = np.ones(ds.n) if weights is None else np.asarray(weights, dtype=float)
        alphas, b0s, b1s = self.unflatten(theta)
        A = ds.A.astype(float)
        out = []
        for D, a in zip(self.ps_designs, alphas):
            out.append(D.T @ (w * (A - expit(D @ a))))
        for D, b in zip(self.pg_designs, b0s):
            out.append(D.T @ (w * (1 - A) * (ds.Y - D @ b)))
        for D, b in zip(self.pg_designs, b1s):
            out.append(D.T @ (w * A * (ds.Y - D @ b)))
        return np.concatenate(out) / np.sqrt(ds.n)


def stacked_estimating_equation(theta, dataset, specs, weights=None):
    """Evaluate the stacked score equation for the candidate ``specs``.

    ``theta`` is either a flat vector or a :class:`ScoreFits`.
    """
    ps = [s for s in specs if s.kind == "propensity"]
    pg = [s for s in specs if s.kind == "prognostic"]
    models = CandidateModels(dataset, ps, pg)
    if isinstance(theta, ScoreFits):
        theta = theta.flat()
    return models.estimating_equation(theta, weights)


def compute_scores(dataset, ps_specs, pg_specs, weights=None):
    """Fit every candidate model and return the standardized :class:`ScoreSet`."""
    models = CandidateModels(dataset, ps_specs, pg_specs)
    return models.scores(models.fit(weights))
