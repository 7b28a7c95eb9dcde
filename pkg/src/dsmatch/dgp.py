"""Simulation data-generating process with nonlinear confounding.

Ten covariates are drawn iid Uniform[1 - sqrt(3), 1 + sqrt(3)] (mean 1,
variance 1) and pushed through ten nonlinear maps.  The transformed
covariates ``Z`` are rescaled with *population* constants so every
coordinate has mean 1 and variance 1; outcome and treatment models are
linear / logit-linear in ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import expit

from .data import Dataset
from .errors import DataError

HALF_WIDTH = np.sqrt(3.0)
LOW, HIGH = 1.0 - HALF_WIDTH, 1.0 + HALF_WIDTH
N_COVARIATES = 10

OUTCOME_COEF = np.array([1, 1, 1, 1, 1, -1, -1, -1, -1, -1]) / 2.0
TREATMENT_COEF = np.array([1, 1, 1, 1, 1, -1, -1, -1, -1, -1]) / 4.0
SD_NOISE_CONTROL = 2.0
SD_NOISE_TREATED = 1.0


def raw_z(X):
    """The ten nonlinear maps, before population rescaling."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_COVARIATES:
        raise DataError(f"z_transform needs {N_COVARIATES} columns, got shape {X.shape}")
    Z = np.empty_like(X)
    Z[:, 0] = np.exp(X[:, 0] / 2)
    Z[:, 1] = np.exp(X[:, 1] / 3)
    Z[:, 2] = np.log((X[:, 2] + 1) ** 2)
    Z[:, 3] = np.log((X[:, 3] + 1) ** 2)
    Z[:, 4] = X[:, 4] > 0.5
    Z[:, 5] = X[:, 5] > 0.75
    Z[:, 6] = np.sin(X[:, 6] - X[:, 7])
    Z[:, 7] = np.cos(X[:, 6] + X[:, 7])
    Z[:, 8] = np.sin(X[:, 8])
    Z[:, 9] = np.cos(X[:, 9])
    return Z


def _uniform_moments(g):
    dens = 1.0 / (HIGH - LOW)
    m1 = integrate.quad(lambda x: g(x) * dens, LOW, HIGH, epsabs=1e-13, epsrel=1e-13)[0]
    m2 = integrate.quad(lambda x: g(x) ** 2 * dens, LOW, HIGH, epsabs=1e-13, epsrel=1e-13)[0]
    return m1, m2


def _triangular_moments(g, center):
    # density of the sum/difference of two independent uniforms
    w = 2 * HALF_WIDTH

    def dens(t):
        return (w - abs(t - center)) / w ** 2

    lo, hi = center - w, center + w
    m1 = integrate.quad(lambda t: g(t) * dens(t), lo, hi, points=[center],
                        epsabs=1e-13, epsrel=1e-13)[0]
    m2 = integrate.quad(lambda t: g(t) ** 2 * dens(t), lo, hi, points=[center],
                        epsabs=1e-13, epsrel=1e-13)[0]
    return m1, m2


@lru_cache(maxsize=None)
def z_population_constants():
    """Population mean and sd of each raw Z coordinate, by quadrature."""
    moments = [
        _uniform_moments(lambda x: np.exp(x / 2)),
        _uniform_moments(lambda x: np.exp(x / 3)),
        _uniform_moments(lambda x: np.log((x + 1) ** 2)),
        _uniform_moments(lambda x: np.log((x + 1) ** 2)),
    ]
    for cut in (0.5, 0.75):
        p = (HIGH - cut) / (HIGH - LOW)
        moments.append((p, p))
    moments.append(_triangular_moments(np.sin, 0.0))
    moments.append(_triangular_moments(np.cos, 2.0))
    moments.append(_uniform_moments(np.sin))
    moments.append(_uniform_moments(np.cos))
    means = np.array([m for m, _ in moments])
    sds = np.sqrt(np.array([m2 - m * m for m, m2 in moments]))
    means.setflags(write=False)
    sds.setflags(write=False)
    return means, sds


def z_transform(X):
    """Nonlinear maps followed by the fixed rescaling to mean 1, variance 1."""
    means, sds = z_population_constants()
    return (raw_z(X) - means) / sds + 1.0


@dataclass
class Scenario:
    dataset: Dataset
    Z: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    propensity: np.ndarray


def draw_covariates(n, rng):
    return rng.uniform(LOW, HIGH, size=(n, N_COVARIATES))


def generate_scenario(n, rng):
    """One sample of size ``n`` from the DGP, using generator ``rng``."""
    X = draw_covariates(n, rng)
    Z = z_transform(X)
    e = expit(Z @ TREATMENT_COEF)
    A = (rng.uniform(size=n) < e).astype(np.int8)
    base = Z @ OUTCOME_COEF
    Y0 = base + SD_NOISE_CONTROL * rng.standard_normal(n)
    Y1 = base + SD_NOISE_TREATED * rng.standard_normal(n)
    Y = np.where(A == 1, Y1, Y0)
    names = tuple(f"x{j + 1}" for j in range(N_COVARIATES))
    return Scenario(Dataset(X, A, Y, names), Z, Y0, Y1, e)


@dataclass(frozen=True)
class TrueEstimands:
    ate: float
    qte: dict = field(default_factory=dict)
    z_means: np.ndarray = None
    z_sds: np.ndarray = None


def true_estimands(xi=(0.75,), oracle_draws=10_000_000, seed=20240101,
                   chunk=1_000_000):
    """Truth for the DGP: ATE is 0 by construction, QTEs by oracle Monte Carlo.

    The QTE at each ``xi`` is the difference of the marginal quantiles of
    Y(1) and Y(0) computed from ``oracle_draws`` simulated units.
    """
    if oracle_draws < 1_000_000:
        raise ValueError("oracle_draws must be at least 10**6")
    rng = np.random.default_rng(seed)
    y0 = np.empty(oracle_draws)
    y1 = np.empty(oracle_draws)
    for start in range(0, oracle_draws, chunk):
        stop = min(start + chunk, oracle_draws)
        m = stop - start
        base = z_transform(draw_covariates(m, rng)) @ OUTCOME_COEF
        y0[start:stop] = base + SD_NOISE_CONTROL * rng.standard_normal(m)
        y1[start:stop] = base + SD_NOISE_TREATED * rng.standard_normal(m)
    xi = tuple(float(x) for x in xi)
    q1 = np.quantile(y1, xi)
    q0 = np.quantile(y0, xi)
    means, sds = z_population_constants()
    return TrueEstimands(0.0, {x: float(a - b) for x, a, b in zip(xi, q1, q0)},
                         means, sds)
