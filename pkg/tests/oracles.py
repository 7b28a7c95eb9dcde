"""Independent reference implementations used by the tests.

These are written from the estimator definitions with plain loops and
dense linear algebra, sharing no code with the package beyond the data
containers.
"""

import numpy as np
from scipy.special import expit, ndtr


def brute_force_match(S, A, arm, M):
    """O(n^2) M-NN with replacement; ties go to the lower unit index."""
    S = np.asarray(S, dtype=float).reshape(len(A), -1)
    donors = [i for i in range(len(A)) if A[i] == arm]
    queries = [i for i in range(len(A)) if A[i] == 1 - arm]
    J = []
    for q in queries:
        d = [(float(np.sum((S[j] - S[q]) ** 2)), j) for j in donors]
        d.sort()
        J.append([j for _, j in d[:M]])
    K = np.zeros(len(A), dtype=int)
    for row in J:
        for j in row:
            K[j] += 1
    return np.array(queries), np.array(J, dtype=int).reshape(len(queries), M), K


def newton_logistic(D, A, w=None, iters=200):
    D = np.asarray(D, float)
    w = np.ones(len(A)) if w is None else np.asarray(w, float)
    b = np.zeros(D.shape[1])
    for _ in range(iters):
        p = expit(D @ b)
        g = D.T @ (w * (A - p))
        H = (D * (w * p * (1 - p))[:, None]).T @ D
        step = np.linalg.solve(H, g)
        b = b + step
        if np.max(np.abs(step)) < 1e-13:
            break
    return b


def normal_equations(D, y, w=None):
    w = np.ones(len(y)) if w is None else np.asarray(w, float)
    return np.linalg.solve((D * w[:, None]).T @ D, (D * w[:, None]).T @ y)


def debiased_ate_loops(Y, A, S0, S1, J0, q0, J1, q1, f0, f1):
    """Impute each unit's missing potential outcome by the match mean plus
    the fitted discrepancy; average the contrasts."""
    n = len(Y)
    y0 = np.array(Y, dtype=float)
    y1 = np.array(Y, dtype=float)
    for r, i in enumerate(q0):  # treated units, donors are controls
        y0[i] = np.mean([Y[j] + f0(S0[i]) - f0(S0[j]) for j in J0[r]])
    for r, i in enumerate(q1):
        y1[i] = np.mean([Y[j] + f1(S1[i]) - f1(S1[j]) for j in J1[r]])
    return float(np.sum(y1 - y0) / n)


def debiased_cdf_loops(q, Y, A, arm, S, J, queries, F):
    """Matched CDF of Y(arm) at ``q`` with the conditional-CDF correction.

    ``F(q, s)`` is the fitted conditional CDF at one score vector.
    """
    n = len(Y)
    total = 0.0
    for i in range(n):
        if A[i] == arm:
            total += float(Y[i] <= q)
    for r, i in enumerate(queries):
        total += np.mean([float(Y[j] <= q) + F(q, S[i]) - F(q, S[j]) for j in J[r]])
    return total / n


def bisection_quantile(F, xi, lo, hi, tol=1e-12):
    """Smallest q with F(q) >= xi for a continuous nondecreasing F."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if F(mid) >= xi:
            hi = mid
        else:
            lo = mid
    return hi


def normal_mixture_cdf(locs, sigma, weights):
    locs = np.asarray(locs, float)
    weights = np.asarray(weights, float)
    return lambda q: float(np.sum(weights * ndtr((q - locs) / sigma)))
