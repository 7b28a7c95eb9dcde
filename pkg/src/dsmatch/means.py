"""Average treatment effects: double score matching and comparators.

The de-biased matching estimator imputes Y(a) for units of the other arm
from M donors matched on that arm's score matrix, then removes the
matching discrepancy estimated with a sieve fit of E[Y | S_a, A = a].
It equals, exactly, the linear form

    n^-1 sum_i [mu1(S1_i) - mu0(S0_i)]
      + n^-1 sum_i (2A_i - 1)(1 + K_i / M)(Y_i - mu_{A_i}(S_{A_i, i}))

which is also what the bootstrap perturbs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import ConfigError, NumericalError
from .matching import MatchMap, match_both, match_group
from .scores import ScoreSet
from .sieve import fit_sieve, fit_sieve_mean

IDENTITY_TOL = 1e-8


@dataclass(frozen=True)
class PointEstimate:
    value: float
    estimator_tag: str = ""
    components: dict = field(default_factory=dict)


def _donor_weights(mm: MatchMap, n):
    """Implicit weight 1 + K_i / M on the donor arm, 0 elsewhere."""
    w = np.zeros(n)
    w[mm.donor_indices] = 1.0 + mm.K[mm.donor_indices] / mm.M
    return w


def _discrepancy(mm: MatchMap, fitted):
    """sum over queries of M^-1 sum_j {f(S_query) - f(S_j)}, ``fitted`` per unit."""
    return float(np.sum(fitted[mm.query_indices] - fitted[mm.J].mean(axis=1)))


def dsm_ate_initial(dataset, scoreset, M=1, match_maps=None):
    """Plain double score matching estimate (no discrepancy correction).

    The imputation form and the implicit-weight form are both computed and
    must agree.
    """
    n = dataset.n
    mm0, mm1 = match_maps if match_maps is not None else match_both(scoreset, dataset.A, M)
    Y = dataset.Y
    mu = {}
    for a, mm in ((0, mm0), (1, mm1)):
        weighted = float(_donor_weights(mm, n) @ Y) / n
        imputed = np.where(dataset.A == a, Y, 0.0)
        imputed[mm.query_indices] = Y[mm.J].mean(axis=1)
        direct = float(imputed.sum()) / n
        if abs(weighted - direct) > IDENTITY_TOL * max(1.0, np.abs(Y).max()):
            raise NumericalError("imputation and weighting forms disagree")
        mu[a] = weighted
    return PointEstimate(mu[1] - mu[0], "dsm-initial",
                         {"mu0": mu[0], "mu1": mu[1]})


def sieve_fits_for(dataset, scoreset, degree=2, weights=None):
    return (fit_sieve_mean(scoreset, dataset, 0, degree, weights),
            fit_sieve_mean(scoreset, dataset, 1, degree, weights))


def dsm_ate_bias_correction(dataset, scoreset, match_maps, sieve_fits, M=1):
    """Estimated matching-discrepancy term (already scaled by n^-1/2).

    Treated queries (imputing Y(0) on S0) enter with a plus sign, control
    queries (imputing Y(1) on S1) with a minus sign.
    """
    mm0, mm1 = match_maps
    f0 = sieve_fits[0].predict(scoreset.S0)
    f1 = sieve_fits[1].predict(scoreset.S1)
    return (_discrepancy(mm0, f0) - _discrepancy(mm1, f1)) / dataset.n


def dsm_ate_linear_form(dataset, scoreset, match_maps, sieve_fits, M=1):
    n = dataset.n
    mm0, mm1 = match_maps
    f0 = sieve_fits[0].predict(scoreset.S0)
    f1 = sieve_fits[1].predict(scoreset.S1)
    A = dataset.A
    K = np.where(A == 1, mm1.K, mm0.K)
    resid = dataset.Y - np.where(A == 1, f1, f0)
    return float(np.sum(f1 - f0) + np.sum((2 * A - 1) * (1 + K / M) * resid)) / n


def dsm_ate(dataset, scoreset, M=1, degree=2, match_maps=None, sieve_fits=None,
            tag="dsm"):
    """De-biased double score matching estimate of the ATE."""
    if match_maps is None:
        match_maps = match_both(scoreset, dataset.A, M)
    if sieve_fits is None:
        sieve_fits = sieve_fits_for(dataset, scoreset, degree)
    init = dsm_ate_initial(dataset, scoreset, M, match_maps)
    bc = dsm_ate_bias_correction(dataset, scoreset, match_maps, sieve_fits, M)
    value = init.value - bc
    lin = dsm_ate_linear_form(dataset, scoreset, match_maps, sieve_fits, M)
    scale = max(1.0, float(np.abs(dataset.Y).max()))
    if abs(value - lin) > IDENTITY_TOL * scale:
        raise NumericalError(
            f"de-biased estimate {value!r} differs from its linear form {lin!r}")
    return PointEstimate(value, tag, {"initial": init.value, "bias_correction": bc})


def _att_fits(S, dataset, degree, weights=None):
    A = dataset.A
    return (fit_sieve(S, dataset.Y, A == 0, degree, weights, 0),
            fit_sieve(S, dataset.Y, A == 1, degree, weights, 1))


def _att_matrix(scoreset_att):
    return scoreset_att.S0 if isinstance(scoreset_att, ScoreSet) else np.asarray(scoreset_att)


def dsm_att(dataset, scoreset_att, M=1, degree=2, match_map=None, sieve_fit0=None,
            tag="dsm"):
    """De-biased matching estimate of the effect on the treated.

    Treated units are matched to controls on ``S`` (the arm-0 double
    score: logit propensity columns and control-arm prognostic columns).
    """
    S = _att_matrix(scoreset_att)
    A = dataset.A
    Y = dataset.Y
    mm = match_map if match_map is not None else match_group(S, A, 0, M)
    n1 = dataset.n_treated
    treated = mm.query_indices
    init = float(np.sum(Y[treated] - Y[mm.J].mean(axis=1))) / n1
    if sieve_fit0 is None:
        sieve_fit0 = fit_sieve(S, Y, A == 0, degree, None, 0)
    bc = _discrepancy(mm, sieve_fit0.predict(S)) / n1
    value = init - bc
    return PointEstimate(value, tag, {"initial": init, "bias_correction": bc})


def comparator_naive(dataset):
    Y, A = dataset.Y, dataset.A
    return PointEstimate(float(Y[A == 1].mean() - Y[A == 0].mean()), "naive")


def comparator_ipw(dataset, ps, tag="ipw"):
    """Horvitz-Thompson IPW with (clipped) fitted propensities, unnormalized."""
    e = np.asarray(ps, dtype=float)
    Y, A = dataset.Y, dataset.A
    val = np.mean(A * Y / e - (1 - A) * Y / (1 - e))
    return PointEstimate(float(val), tag)


def comparator_aipw(dataset, ps, mu0, mu1, tag="aipw"):
    """Augmented IPW with outcome-regression predictions ``mu0``, ``mu1``."""
    e = np.asarray(ps, dtype=float)
    Y, A = dataset.Y, dataset.A
    val = np.mean(mu1 - mu0 + A * (Y - mu1) / e - (1 - A) * (Y - mu0) / (1 - e))
    return PointEstimate(float(val), tag)


def covariate_scoreset(dataset):
    """Standardized covariates as the matching variable for both arms."""
    return ScoreSet.from_matrices(dataset.X)


def comparator_single_score_matching(dataset, variant, scoreset=None, M=1, degree=2,
                                     tag=None):
    """PSM / PGM / covariate matching through the double score pipeline.

    ``psm`` expects a score set built from one propensity model only and
    ``pgm`` one from a single prognostic model; ``m.x`` matches on the
    standardized covariates with a linear regression correction.
    """
    if variant == "m.x":
        return dsm_ate(dataset, covariate_scoreset(dataset), M, 1, tag=tag or "m.x")
    if variant not in ("psm", "pgm"):
        raise ConfigError(f"unknown matching variant {variant!r}")
    if scoreset is None:
        raise ConfigError(f"{variant} needs a fitted score set")
    fits = scoreset.theta_hat
    if fits is not None:
        J, K = len(fits.logistic), len(fits.linear0)
        if variant == "psm" and (J, K) != (1, 0):
            raise ConfigError("psm needs exactly one propensity model and no prognostic model")
        if variant == "pgm" and (J, K) != (0, 1):
            raise ConfigError("pgm needs exactly one prognostic model and no propensity model")
    return dsm_ate(dataset, scoreset, M, degree, tag=tag or variant)
