"""Repeated-sampling study over a grid of estimators.

Estimator tags are ``<method><d1 d2 d3 d4>`` where the digits switch on
(left to right) the correct propensity model (logistic on Z), the
misspecified one (logistic on X), the correct prognostic model (linear
on Z) and the misspecified one (linear on X).  ``naive`` and ``m.x``
take no digits.
"""

from __future__ import annotations

import logging
import math
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import bootstrap as bt
from .dgp import TrueEstimands, generate_scenario, true_estimands
from .errors import ConfigError, DSMError
from .matching import match_both
from .means import (comparator_aipw, comparator_ipw, comparator_naive,
                    covariate_scoreset, dsm_ate)
from .quantiles import (arm_grids, comparator_quantiles, dsm_qte,
                        outcome_cdf_models)
from .scores import CandidateModels, CandidateModelSpec, assemble_scores
from .sieve import fit_conditional_cdf

log = logging.getLogger(__name__)

PS_MAPS = ("paper-Z", "raw")
PG_MAPS = ("paper-Z", "raw")
METHODS = ("dsm", "psm", "pgm", "ipw", "aipw")
_TAG = re.compile(r"^(dsm|psm|pgm|ipw|aipw)([01]{4})$")
_DATA_STREAM = 1
_BOOT_STREAM = 2


@dataclass(frozen=True)
class EstimatorTag:
    method: str
    ps: tuple = ()
    pg: tuple = ()

    @property
    def name(self):
        if self.method in ("naive", "m.x"):
            return self.method
        digits = ["0"] * 4
        for j in self.ps:
            digits[j] = "1"
        for k in self.pg:
            digits[2 + k] = "1"
        return self.method + "".join(digits)


def parse_tag(tag):
    """Validate an estimator tag and return an :class:`EstimatorTag`."""
    if tag in ("naive", "m.x"):
        return EstimatorTag(tag)
    m = _TAG.match(str(tag))
    if not m:
        raise ConfigError(f"invalid estimator tag {tag!r}")
    method, digits = m.groups()
    ps = tuple(j for j in (0, 1) if digits[j] == "1")
    pg = tuple(k for k in (0, 1) if digits[2 + k] == "1")
    ok = {
        "dsm": len(ps) + len(pg) >= 1,
        "psm": len(ps) == 1 and not pg,
        "pgm": len(pg) == 1 and not ps,
        "ipw": len(ps) == 1 and not pg,
        "aipw": len(ps) == 1 and len(pg) == 1,
    }[method]
    if not ok:
        raise ConfigError(f"model digits in {tag!r} do not fit method {method!r}")
    return EstimatorTag(method, ps, pg)


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 1000
    replications: int = 100
    seed: int = 0
    estimators: tuple = ("dsm1010", "dsm0110", "dsm1001", "dsm0101", "dsm1111")
    xi: tuple = (0.75,)
    M: int = 1
    sieve_degree: int = 2
    bootstrap: bool = False
    bootstrap_replicates: int = 500
    weight_scheme: str = "exponential"
    oracle_draws: int = 10_000_000
    threads: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.n < 50:
            raise ConfigError("n must be >= 50")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))
        for t in self.estimators:
            parse_tag(t)
        if any(not 0 < x < 1 for x in self.xi):
            raise ConfigError("xi values must lie in (0, 1)")
        if self.bootstrap and self.bootstrap_replicates < 2:
            raise ConfigError("bootstrap_replicates must be >= 2")
        if self.weight_scheme not in ("exponential", "multinomial"):
            raise ConfigError(f"unknown weight scheme {self.weight_scheme!r}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        d["xi"] = list(self.xi)
        return d


def _bank(dataset):
    ps = [CandidateModelSpec("propensity", fm) for fm in PS_MAPS]
    pg = [CandidateModelSpec("prognostic", fm) for fm in PG_MAPS]
    return CandidateModels(dataset, ps, pg)


def _tag_scores(tag, e, g0, g1):
    return assemble_scores(e[:, list(tag.ps)], g0[:, list(tag.pg)], g1[:, list(tag.pg)])


def _tag_converged(tag, fits):
    return all(fits.logistic[j].converged for j in tag.ps)


def _replication(cfg: ScenarioConfig, rep: int):
    """Estimates (and optionally CIs) for every tag on one simulated sample."""
    rng = np.random.default_rng([cfg.seed, _DATA_STREAM, rep])
    scen = generate_scenario(cfg.n, rng)
    ds = scen.dataset
    tags = [parse_tag(t) for t in cfg.estimators]
    bank = _bank(ds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fits = bank.fit()
    e, g0, g1 = bank.raw_scores(fits)
    grids = arm_grids(ds)
    out = {}
    state = {}
    for tag in tags:
        res = {"ate": None, "qte": {}, "ate_ci": None, "qte_ci": {}, "error": None}
        out[tag.name] = res
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _point_estimates(tag, ds, e, g0, g1, fits, grids, cfg, res, state)
        except (DSMError, np.linalg.LinAlgError) as exc:
            res["error"] = str(exc)
            log.info("rep %d, %s failed: %s", rep, tag.name, exc)
    if cfg.bootstrap:
        _bootstrap_all(cfg, rep, ds, bank, fits, grids, tags, out, state)
    return out


def _point_estimates(tag, ds, e, g0, g1, fits, grids, cfg, res, state):
    M, deg, xis = cfg.M, cfg.sieve_degree, cfg.xi
    m = tag.method
    if m == "naive":
        res["ate"] = comparator_naive(ds).value
        for xi in xis:
            res["qte"][xi] = comparator_quantiles(ds, "naive", xi).value
    elif m == "m.x":
        ss = covariate_scoreset(ds)
        mm = match_both(ss, ds.A, M)
        res["ate"] = dsm_ate(ds, ss, M, 1, mm).value
        cdf = (fit_conditional_cdf(ss, ds, 0, 1), fit_conditional_cdf(ss, ds, 1, 1))
        for xi in xis:
            res["qte"][xi] = dsm_qte(ds, ss, xi, M, 1, mm, cdf, grids).value
    elif m in ("ipw", "aipw"):
        j = tag.ps[0]
        ps = e[:, j]
        if m == "ipw":
            res["ate"] = comparator_ipw(ds, ps).value
            for xi in xis:
                res["qte"][xi] = comparator_quantiles(ds, "ipw", xi, ps=ps).value
        else:
            k = tag.pg[0]
            res["ate"] = comparator_aipw(ds, ps, g0[:, k], g1[:, k]).value
            design = _bank(ds).pg_designs[k][:, 1:]
            models = outcome_cdf_models(ds, design)
            for xi in xis:
                res["qte"][xi] = comparator_quantiles(
                    ds, "aipw", xi, ps=ps, cdf_models=models).value
    else:
        # dsm / psm / pgm all run through the double score pipeline
        ss = _tag_scores(tag, e, g0, g1)
        mm = match_both(ss, ds.A, M)
        cdf = (fit_conditional_cdf(ss, ds, 0, deg), fit_conditional_cdf(ss, ds, 1, deg))
        sieve = (cdf[0].mean, cdf[1].mean)
        res["ate"] = dsm_ate(ds, ss, M, deg, mm, sieve, tag=tag.name).value
        for xi in xis:
            res["qte"][xi] = dsm_qte(ds, ss, xi, M, deg, mm, cdf, grids).value
        state[tag.name] = mm


def _bootstrap_all(cfg, rep, ds, bank, fits, grids, tags, out, state):
    """Frozen-K weighted bootstrap for the matching-based tags.

    All tags share each weight draw and each refit of the model bank.
    """
    boot_tags = [t for t in tags if t.name in state and out[t.name]["error"] is None]
    if not boot_tags:
        return
    reps = {t.name: ([], {xi: [] for xi in cfg.xi}) for t in boot_tags}
    fails = {t.name: 0 for t in boot_tags}
    for b in range(cfg.bootstrap_replicates):
        rng = np.random.default_rng([cfg.seed, _BOOT_STREAM, rep, b])
        omega = bt.draw_weights(ds.n, cfg.weight_scheme, rng, b).omega
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fstar = bank.fit(omega, start=fits, check_rank=False)
            e, g0, g1 = bank.raw_scores(fstar)
        except (DSMError, np.linalg.LinAlgError):
            for t in boot_tags:
                fails[t.name] += 1
            continue
        for t in boot_tags:
            if not _tag_converged(t, fstar):
                fails[t.name] += 1
                continue
            try:
                ss = _tag_scores(t, e, g0, g1)
                ate, qte = bt.ate_qte_replicate(ds, ss, state[t.name], omega, cfg.xi,
                                                grids, cfg.M, cfg.sieve_degree)
            except (DSMError, np.linalg.LinAlgError):
                fails[t.name] += 1
                continue
            reps[t.name][0].append(ate)
            for xi in cfg.xi:
                reps[t.name][1][xi].append(qte[xi])
    B = cfg.bootstrap_replicates
    for t in boot_tags:
        res = out[t.name]
        r = bt.wald(res["ate"], reps[t.name][0], fails[t.name], B, cfg.weight_scheme, cfg.seed)
        res["ate_ci"] = (r.ci_low, r.ci_high, r.se)
        for xi in cfg.xi:
            r = bt.wald(res["qte"][xi], reps[t.name][1][xi], fails[t.name], B,
                        cfg.weight_scheme, cfg.seed)
            res["qte_ci"][xi] = (r.ci_low, r.ci_high, r.se)
        res["boot_failures"] = fails[t.name]


def _replication_job(args):
    cfg, rep = args
    return _replication(cfg, rep)


def _summary(errors):
    err = np.asarray([v for v in errors if v is not None and math.isfinite(v)])
    if err.size == 0:
        return {"count": 0}
    q75, q25 = np.percentile(err, [75, 25])
    sd = float(err.std(ddof=1)) if err.size > 1 else 0.0
    return {
        "count": int(err.size),
        "mean": float(err.mean()),
        "sd": sd,
        "mc_se": sd / math.sqrt(err.size),
        "median": float(np.median(err)),
        "iqr": float(q75 - q25),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
    }


def coverage_triple(hits):
    """Coverage in percent with the band p +/- 1.96 sqrt(p(1-p)/R)."""
    h = np.asarray(hits, dtype=float)
    R = h.size
    if R == 0:
        return None
    p = float(h.mean())
    half = 1.96 * math.sqrt(p * (1 - p) / R)
    return (100 * p, 100 * (p - half), 100 * (p + half))


def format_coverage(triple):
    if triple is None:
        return "n/a"
    p, lo, hi = triple
    return f"{p:.1f} ({lo:.1f}, {hi:.1f})"


@dataclass
class MCReport:
    config: dict
    truth: dict
    errors: dict
    summary: dict
    coverage: dict
    failures: dict

    def to_dict(self):
        return asdict(self)

    def table(self):
        """Human-readable layout: one row per tag, QTE columns then ATE."""
        xis = self.config["xi"]
        head = ["estimator"]
        for xi in xis:
            head += [f"QTE({xi:g}) bias", f"QTE({xi:g}) sd"]
        head += ["ATE bias", "ATE sd"]
        has_cov = any(self.coverage.values())
        if has_cov:
            head += [f"QTE({xi:g}) coverage" for xi in xis] + ["ATE coverage"]
        rows = [head]
        for tag in self.config["estimators"]:
            s = self.summary.get(tag, {})
            row = [tag]
            for xi in xis:
                q = s.get(f"qte:{xi}", {})
                row += [_fmt(q.get("mean")), _fmt(q.get("sd"))]
            a = s.get("ate", {})
            row += [_fmt(a.get("mean")), _fmt(a.get("sd"))]
            if has_cov:
                c = self.coverage.get(tag, {})
                row += [format_coverage(c.get(f"qte:{xi}")) for xi in xis]
                row += [format_coverage(c.get("ate"))]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def run_monte_carlo(cfg: ScenarioConfig, truth: Optional[TrueEstimands] = None,
                    progress=None):
    """Run ``cfg.replications`` replications; return an :class:`MCReport`.

    Each replication's randomness depends only on (seed, replication id),
    so the report is identical for any ``threads`` setting.
    """
    if truth is None:
        truth = true_estimands(cfg.xi, cfg.oracle_draws)
    jobs = [(cfg, r) for r in range(cfg.replications)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = []
            for i, res in enumerate(pool.map(_replication_job, jobs, chunksize=1)):
                results.append(res)
                if progress:
                    progress(i + 1, cfg.replications)
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_replication_job(job))
            if progress:
                progress(i + 1, cfg.replications)
    return _collect(cfg, truth, results)


def _collect(cfg, truth, results):
    errors, summary, coverage, failures = {}, {}, {}, {}
    keys = ["ate"] + [f"qte:{xi}" for xi in cfg.xi]
    true_val = {"ate": truth.ate, **{f"qte:{xi}": truth.qte[xi] for xi in cfg.xi}}
    for tag in cfg.estimators:
        errs = {k: [] for k in keys}
        hits = {k: [] for k in keys}
        nfail = 0
        for res in results:
            r = res[tag]
            if r["error"] is not None:
                nfail += 1
                continue
            vals = {"ate": r["ate"], **{f"qte:{xi}": r["qte"][xi] for xi in cfg.xi}}
            cis = {"ate": r["ate_ci"], **{f"qte:{xi}": r["qte_ci"].get(xi) for xi in cfg.xi}}
            for k in keys:
                errs[k].append(vals[k] - true_val[k])
                ci = cis[k]
                if ci is not None and math.isfinite(ci[2]):
                    hits[k].append(ci[0] <= true_val[k] <= ci[1])
        errors[tag] = errs
        summary[tag] = {k: _summary(v) for k, v in errs.items()}
        coverage[tag] = {k: coverage_triple(v) for k, v in hits.items() if v}
        failures[tag] = nfail
    return MCReport(cfg.to_dict(), {"ate": truth.ate,
                                    "qte": {str(k): v for k, v in truth.qte.items()}},
                    errors, summary, coverage, failures)
