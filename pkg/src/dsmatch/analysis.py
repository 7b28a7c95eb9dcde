"""CSV workflow: point estimates with bootstrap inference, and balance tables."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .bootstrap import (bootstrap_replicate_ate, bootstrap_replicate_att,
                        bootstrap_replicate_qtt, bootstrap_replicate_qte,
                        bootstrap_variance)
from .data import Dataset, SchemaConfig
from .errors import ConfigError
from .matching import match_both, match_group
from .means import dsm_ate, dsm_att
from .quantiles import arm_grids, cdf_fits_for, dsm_qte, dsm_qtt, inversion_grid
from .scores import CandidateModels, specs_from_entries
from .sieve import fit_conditional_cdf, fit_sieve

log = logging.getLogger(__name__)

REPORT_FORMAT = "dsmatch-estimate/1"
BALANCE_FORMAT = "dsmatch-balance/1"
QUANTILE_ESTIMANDS = ("QTE", "QTT")


def _entries_for(cfg: SchemaConfig):
    """Model entries, with control-only prognostic models paired for ATT-only runs.

    Effects on the treated never use the treated-arm prognostic fit, so a
    config listing only arm-0 prognostic models is accepted for them.
    """
    entries = list(cfg.models)
    treated_only = set(cfg.estimand) <= {"ATT", "QTT"}
    arms = {e.arm for e in entries if e.kind == "prognostic"}
    if treated_only and arms == {0}:
        entries += [replace(e, arm=1) for e in entries
                    if e.kind == "prognostic" and e.arm == 0]
    if not any(e.kind in ("propensity", "prognostic") for e in entries):
        raise ConfigError("at least one candidate model is required")
    return entries


def candidate_models(dataset: Dataset, cfg: SchemaConfig):
    ps, pg = specs_from_entries(_entries_for(cfg))
    return CandidateModels(dataset, ps, pg)


def estimator_tag(models):
    return f"dsm-J{models.J}K{models.K}"


@dataclass(frozen=True)
class _Fitted:
    models: CandidateModels
    fits: object
    scores: object


def _fit(dataset, cfg):
    models = candidate_models(dataset, cfg)
    fits = models.fit()
    if not fits.converged:
        warnings.warn("a propensity model fit did not converge", stacklevel=3)
    return _Fitted(models, fits, models.scores(fits))


def _row(estimand, xi, tag, point, boot, with_replicates):
    row = {"estimand": estimand, "xi": xi, "estimator_tag": tag,
           "components": point.components}
    row.update(boot.to_dict(with_replicates))
    return row


def estimate(dataset: Dataset, cfg: SchemaConfig, seed=None, with_replicates=False):
    """Run every requested estimand with weighted-bootstrap Wald inference.

    Returns a JSON-ready report that echoes the config (including the
    effective seed) so the job can be re-run exactly.
    """
    bcfg = cfg.bootstrap
    if seed is not None:
        bcfg = replace(bcfg, seed=int(seed))
        cfg = replace(cfg, bootstrap=bcfg)
    if any(e in QUANTILE_ESTIMANDS for e in cfg.estimand) and not cfg.xi:
        raise ConfigError("quantile estimands need a non-empty xi list")
    M, deg = cfg.M, cfg.sieve_degree
    B, scheme, s = bcfg.replicates, bcfg.weight_scheme, bcfg.seed
    fitted = _fit(dataset, cfg)
    models, fits, ss = fitted.models, fitted.fits, fitted.scores
    tag = estimator_tag(models)
    n = dataset.n
    rows = []

    if {"ATE", "QTE"} & set(cfg.estimand):
        mm = match_both(ss, dataset.A, M)
        cdf = cdf_fits_for(dataset, ss, deg)
        frozen = None if bcfg.refit_sieve else (cdf[0].mean, cdf[1].mean)
        grids = arm_grids(dataset)
        if "ATE" in cfg.estimand:
            pt = dsm_ate(dataset, ss, M, deg, mm, (cdf[0].mean, cdf[1].mean), tag)
            res = bootstrap_variance(
                lambda w: bootstrap_replicate_ate(dataset, mm, w, models, M, deg, fits, frozen),
                pt.value, n, B, scheme, s)
            rows.append(_row("ATE", None, tag, pt, res, with_replicates))
        if "QTE" in cfg.estimand:
            for xi in cfg.xi:
                pt = dsm_qte(dataset, ss, xi, M, deg, mm, cdf, grids, tag)
                res = bootstrap_variance(
                    lambda w, xi=xi: bootstrap_replicate_qte(
                        dataset, mm, w, models, xi, grids, M, deg, fits, frozen),
                    pt.value, n, B, scheme, s)
                rows.append(_row("QTE", xi, tag, pt, res, with_replicates))

    if {"ATT", "QTT"} & set(cfg.estimand):
        S = ss.S0
        mm0 = match_group(S, dataset.A, 0, M)
        cdf0 = fit_conditional_cdf(None, dataset, 0, deg, S=S)
        if "ATT" in cfg.estimand:
            pt = dsm_att(dataset, S, M, deg, mm0, cdf0.mean, tag)
            frozen = None
            if not bcfg.refit_sieve:
                frozen = (cdf0.mean, fit_sieve(S, dataset.Y, dataset.A == 1, deg, None, 1))
            res = bootstrap_variance(
                lambda w: bootstrap_replicate_att(dataset, mm0, w, models, M, deg, fits, frozen),
                pt.value, n, B, scheme, s)
            rows.append(_row("ATT", None, tag, pt, res, with_replicates))
        if "QTT" in cfg.estimand:
            grid0 = inversion_grid(dataset.Y[dataset.A == 0])
            frozen0 = None if bcfg.refit_sieve else cdf0.mean
            for xi in cfg.xi:
                pt = dsm_qtt(dataset, S, xi, M, deg, mm0, cdf0, grid0, tag)
                res = bootstrap_variance(
                    lambda w, xi=xi: bootstrap_replicate_qtt(
                        dataset, mm0, w, models, xi, grid0, deg, fits, frozen0),
                    pt.value, n, B, scheme, s)
                rows.append(_row("QTT", xi, tag, pt, res, with_replicates))

    for r in rows:
        if r["unreliable"]:
            log.warning("%s: more than 10%% of bootstrap replicates failed", r["estimand"])
    return {
        "format": REPORT_FORMAT,
        "version": __version__,
        "seed": bcfg.seed,
        "config": cfg.to_dict(),
        "data": {"n": n, "n_treated": dataset.n_treated, "n_control": n - dataset.n_treated},
        "results": rows,
    }


def balance_table(dataset: Dataset, cfg: SchemaConfig):
    """Covariate means by arm before and after matching treated units to controls.

    After matching, each control counts K_i / M times.  Standardized
    differences divide by the covariate's sd over the whole original sample.
    """
    fitted = _fit(dataset, cfg)
    S = fitted.scores.S0
    mm = match_group(S, dataset.A, 0, cfg.M)
    return balance_from_counts(dataset, mm.K / mm.M)


def balance_from_counts(dataset: Dataset, control_weights):
    X, A = dataset.X, dataset.A
    t = A == 1
    c = ~t
    sd = X.std(axis=0, ddof=1)
    w = np.asarray(control_weights, dtype=float)[c]
    mt = X[t].mean(axis=0)
    before_c = X[c].mean(axis=0)
    after_c = w @ X[c] / w.sum()
    rows = []
    with np.errstate(divide="ignore", invalid="ignore"):
        d_before = np.where(sd > 0, (mt - before_c) / sd, 0.0)
        d_after = np.where(sd > 0, (mt - after_c) / sd, 0.0)
    for j, name in enumerate(dataset.covariate_names or [f"x{j}" for j in range(X.shape[1])]):
        rows.append({
            "covariate": name,
            "treated_mean": float(mt[j]),
            "control_mean_before": float(before_c[j]),
            "std_diff_before": float(d_before[j]),
            "control_mean_after": float(after_c[j]),
            "std_diff_after": float(d_after[j]),
        })
    return {"format": BALANCE_FORMAT, "n": dataset.n, "n_treated": dataset.n_treated,
            "rows": rows}


def format_balance(table):
    cols = ["covariate", "treated_mean", "control_mean_before", "std_diff_before",
            "control_mean_after", "std_diff_after"]
    lines = [cols]
    for r in table["rows"]:
        lines.append([r["covariate"]] + [f"{r[c]:.2f}" for c in cols[1:]])
    widths = [max(len(l[i]) for l in lines) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(l, widths)) for l in lines)
