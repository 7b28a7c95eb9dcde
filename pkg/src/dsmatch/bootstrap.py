"""Weighted bootstrap with frozen match counts.

Each replicate draws unit weights, refits every candidate score model on
the weighted estimating equations, recomputes the scores, refits the
sieve models, and evaluates the estimator's linear form using the match
counts K from the *original* matching.  Units are never re-matched.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DSMError, NumericalError
from .matching import MatchMap
from .quantiles import matched_cdf_linear, matched_cdf_treated_linear, treated_quantile
from .scores import CandidateModels, ScoreFits, ScoreSet
from .sieve import CondCdfFit, SIGMA_FLOOR, fit_sieve

log = logging.getLogger(__name__)

Z_95 = 1.96
MAX_FAILURE_SHARE = 0.10
_WEIGHT_STREAM = 7


class ReplicateFailure(DSMError):
    """A bootstrap replicate could not be computed (e.g. refit diverged)."""


@dataclass(frozen=True, eq=False)
class WeightDraw:
    omega: np.ndarray
    scheme: str
    replicate_id: int


def weight_stream(seed, replicate_id):
    """Generator for one replicate, determined by ``(seed, replicate_id)`` only."""
    return np.random.default_rng([int(seed), _WEIGHT_STREAM, int(replicate_id)])


def draw_weights(n, scheme="exponential", rng=None, replicate_id=0):
    """Bootstrap weights with mean one.

    ``multinomial``: resampling counts (n draws over n equally likely
    cells).  ``exponential``: iid Exp(1).
    """
    if rng is None:
        rng = weight_stream(0, replicate_id)
    if scheme == "multinomial":
        omega = rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
    elif scheme == "exponential":
        omega = rng.standard_exponential(n)
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    omega.setflags(write=False)
    return WeightDraw(omega, scheme, int(replicate_id))


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    point: float
    se: float
    ci_low: float
    ci_high: float
    replicates: np.ndarray
    failures: int
    B: int
    scheme: str
    seed: int

    @property
    def unreliable(self):
        return self.failures > MAX_FAILURE_SHARE * self.B

    def covers(self, truth):
        return self.ci_low <= truth <= self.ci_high

    def to_dict(self, with_replicates=False):
        out = {
            "point": self.point, "se": self.se,
            "ci_low": self.ci_low, "ci_high": self.ci_high,
            "B": self.B, "scheme": self.scheme, "seed": self.seed,
            "failures": self.failures, "unreliable": self.unreliable,
        }
        if with_replicates:
            out["replicates"] = [float(v) for v in self.replicates]
        return out


def wald(point, replicates, failures, B, scheme, seed):
    reps = np.asarray(replicates, dtype=float)
    se = float(np.std(reps, ddof=1)) if reps.size >= 2 else float("nan")
    return BootstrapResult(float(point), se, point - Z_95 * se, point + Z_95 * se,
                           reps, int(failures), int(B), scheme, int(seed))


def bootstrap_variance(estimand, point, n, B=1000, scheme="exponential", seed=0):
    """Run ``B`` replicates of ``estimand(WeightDraw) -> float``.

    Replicate ``b`` uses weights from ``(seed, b)`` only, so the result does
    not depend on evaluation order.  Failed replicates (raising a package
    error) are counted and excluded.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    values, failures = [], 0
    for b in range(B):
        wd = draw_weights(n, scheme, weight_stream(seed, b), b)
        try:
            values.append(float(estimand(wd)))
        except DSMError as exc:
            failures += 1
            log.debug("replicate %d failed: %s", b, exc)
    res = wald(point, values, failures, B, scheme, seed)
    if res.unreliable:
        log.warning("%d of %d bootstrap replicates failed; inference unreliable",
                    failures, B)
    return res


# --- replicate formulas -----------------------------------------------------

def refit_scores(models: CandidateModels, omega, start: Optional[ScoreFits] = None):
    """Solve the weighted estimating equations and recompute the scores."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            fits = models.fit(omega, start=start, check_rank=False)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            raise ReplicateFailure(str(exc)) from exc
    if not fits.converged:
        raise ReplicateFailure("weighted logistic refit did not converge")
    try:
        return models.scores(fits)
    except NumericalError as exc:
        raise ReplicateFailure(str(exc)) from exc


def _weighted_sieve(S, dataset, arm, degree, omega, frozen=None):
    if frozen is not None:
        return frozen
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            return fit_sieve(S, dataset.Y, dataset.A == arm, degree, omega, arm)
        except (DSMError, np.linalg.LinAlgError) as exc:
            raise ReplicateFailure(str(exc)) from exc


def _as_cdf_fit(sieve):
    return CondCdfFit(sieve, max(sieve.sigma, SIGMA_FLOOR))


def ate_replicate(dataset, scores_star: ScoreSet, match_maps, omega, M=1, degree=2,
                  frozen_fits=None):
    """ATE replicate: linear form at the refitted scores with original K."""
    n = dataset.n
    A, Y = dataset.A, dataset.Y
    fr = frozen_fits or (None, None)
    f0 = _weighted_sieve(scores_star.S0, dataset, 0, degree, omega, fr[0]).predict(scores_star.S0)
    f1 = _weighted_sieve(scores_star.S1, dataset, 1, degree, omega, fr[1]).predict(scores_star.S1)
    K = np.where(A == 1, match_maps[1].K, match_maps[0].K)
    resid = Y - np.where(A == 1, f1, f0)
    return float(omega @ (f1 - f0) + omega @ ((2 * A - 1) * (1 + K / M) * resid)) / n


def qte_replicate(dataset, scores_star: ScoreSet, match_maps, omega, xis, grids,
                  M=1, degree=2, frozen_fits=None):
    """QTE replicates for each ``xi``: invert the weighted linear-form CDFs."""
    fr = frozen_fits or (None, None)
    out = {}
    q = {}
    for a in (0, 1):
        S = scores_star.for_arm(a)
        fit = _as_cdf_fit(_weighted_sieve(S, dataset, a, degree, omega, fr[a]))
        F = matched_cdf_linear(dataset, S, match_maps[a], fit, omega)
        q[a] = {xi: F.quantile(xi, grids[a]) for xi in xis}
    for xi in xis:
        out[xi] = q[1][xi] - q[0][xi]
    return out


def ate_qte_replicate(dataset, scores_star: ScoreSet, match_maps, omega, xis, grids,
                      M=1, degree=2):
    """ATE and QTE replicates sharing one weighted sieve fit per arm."""
    A, Y, n = dataset.A, dataset.Y, dataset.n
    fits = [_weighted_sieve(scores_star.for_arm(a), dataset, a, degree, omega)
            for a in (0, 1)]
    f0 = fits[0].predict(scores_star.S0)
    f1 = fits[1].predict(scores_star.S1)
    K = np.where(A == 1, match_maps[1].K, match_maps[0].K)
    resid = Y - np.where(A == 1, f1, f0)
    ate = float(omega @ (f1 - f0) + omega @ ((2 * A - 1) * (1 + K / M) * resid)) / n
    q = {}
    for a in (0, 1):
        S = scores_star.for_arm(a)
        F = matched_cdf_linear(dataset, S, match_maps[a], _as_cdf_fit(fits[a]), omega)
        q[a] = [F.quantile(xi, grids[a]) for xi in xis]
    return ate, {xi: q[1][k] - q[0][k] for k, xi in enumerate(xis)}


def att_replicate(dataset, S_star, match_map: MatchMap, omega, M=1, degree=2,
                  frozen_fits=None):
    """ATT replicate with n1 normalization and original control counts K."""
    A, Y = dataset.A, dataset.Y
    n1 = dataset.n_treated
    fr = frozen_fits or (None, None)
    f0 = _weighted_sieve(S_star, dataset, 0, degree, omega, fr[0]).predict(S_star)
    f1 = _weighted_sieve(S_star, dataset, 1, degree, omega, fr[1]).predict(S_star)
    kw = (A == 0) * match_map.K / match_map.M
    resid = Y - np.where(A == 1, f1, f0)
    return float(omega @ (A * (f1 - f0)) + omega @ ((A - kw) * resid)) / n1


def qtt_replicate(dataset, S_star, match_map: MatchMap, omega, xis, grid0, grid1=None,
                  degree=2, frozen_fit0=None):
    fit0 = _as_cdf_fit(_weighted_sieve(S_star, dataset, 0, degree, omega, frozen_fit0))
    F0 = matched_cdf_treated_linear(dataset, S_star, match_map, fit0, omega)
    out = {}
    for xi in xis:
        q1 = treated_quantile(dataset, xi, omega, grid1)
        out[xi] = q1 - F0.quantile(xi, grid0)
    return out


def bootstrap_replicate_ate(dataset, original_match_maps, weights, models, M=1, degree=2,
                            start=None, frozen_fits=None):
    omega = getattr(weights, "omega", weights)
    ss = refit_scores(models, omega, start)
    return ate_replicate(dataset, ss, original_match_maps, omega, M, degree, frozen_fits)


def bootstrap_replicate_qte(dataset, original_match_maps, weights, models, xi, grids,
                            M=1, degree=2, start=None, frozen_fits=None):
    omega = getattr(weights, "omega", weights)
    ss = refit_scores(models, omega, start)
    return qte_replicate(dataset, ss, original_match_maps, omega, [xi], grids, M,
                         degree, frozen_fits)[xi]


def bootstrap_replicate_att(dataset, original_match_map, weights, models, M=1, degree=2,
                            start=None, frozen_fits=None):
    omega = getattr(weights, "omega", weights)
    ss = refit_scores(models, omega, start)
    return att_replicate(dataset, ss.S0, original_match_map, omega, M, degree, frozen_fits)


def bootstrap_replicate_qtt(dataset, original_match_map, weights, models, xi, grid0,
                            degree=2, start=None, frozen_fit0=None):
    omega = getattr(weights, "omega", weights)
    ss = refit_scores(models, omega, start)
    return qtt_replicate(dataset, ss.S0, original_match_map, omega, [xi], grid0,
                         degree=degree, frozen_fit0=frozen_fit0)[xi]
