"""Exact M-nearest-neighbour matching with replacement.

Candidates come from a kd-tree; the final choice is made on squared
Euclidean distances recomputed in one fixed order, with ties broken
toward the lower unit index.  When the tree's candidate list could hide
an equidistant donor, the query falls back to a full scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, DomainError

_EXTRA = 4
# relative slack between kd-tree and recomputed distances
_TIE_SLACK = 1e-9


def _sq_dists(points, q):
    d = points - q
    return np.einsum("ij,ij->i", d, d)


def _select(d2, idx, M):
    order = np.lexsort((idx, d2))[:M]
    return idx[order], d2[order]


class NeighborIndex:
    """Immutable exact nearest-neighbour index over ``points``.

    Query results are positions into ``points`` (0-based).
    """

    def __init__(self, points):
        P = np.array(points, dtype=float, copy=True)
        if P.ndim == 1:
            P = P[:, None]
        if P.shape[0] == 0:
            raise DataError("cannot index an empty point set")
        if not np.all(np.isfinite(P)):
            raise DataError("points contain NaN or infinite coordinates")
        P.setflags(write=False)
        self.points = P
        self._tree = cKDTree(P)

    def __len__(self):
        return self.points.shape[0]

    def query(self, queries, M):
        """Indices (len(queries) x M) of the M nearest points, lower index on ties."""
        Q = np.asarray(queries, dtype=float)
        if Q.ndim == 1:
            Q = Q[:, None] if self.points.shape[1] == 1 else Q[None, :]
        if not np.all(np.isfinite(Q)):
            raise DataError("queries contain NaN or infinite coordinates")
        npts = len(self)
        if M > npts:
            raise DomainError(f"asked for {M} neighbours among {npts} points")
        k = min(M + _EXTRA, npts)
        _, cand = self._tree.query(Q, k=k)
        cand = np.asarray(cand).reshape(Q.shape[0], k)
        P = self.points
        diff = P[cand] - Q[:, None, :]
        d2 = np.einsum("rkj,rkj->rk", diff, diff)
        order = np.lexsort((cand, d2), axis=-1)[:, :M]
        out = np.take_along_axis(cand, order, axis=1)
        if k < npts:
            # every point outside the candidate list is at least as far as
            # the farthest candidate; unless that is clearly beyond the M-th
            # distance, a tie could be hiding outside the list
            limit = np.take_along_axis(d2, order[:, -1:], axis=1)[:, 0]
            unsafe = d2.max(axis=1) <= limit * (1 + _TIE_SLACK) + 1e-300
            all_idx = np.arange(npts)
            for r in np.flatnonzero(unsafe):
                out[r], _ = _select(_sq_dists(P, Q[r]), all_idx, M)
        return out


@dataclass(frozen=True, eq=False)
class MatchMap:
    """Matches used to impute Y(arm) for the units of the other arm.

    ``J[r]`` lists the M donor unit indices for query unit
    ``query_indices[r]``; ``K[i]`` counts how often unit ``i`` is a donor
    (zero for non-donors), indexed over all n units.
    """

    arm: int
    M: int
    query_indices: np.ndarray
    donor_indices: np.ndarray
    J: np.ndarray
    K: np.ndarray

    @property
    def n_queries(self):
        return self.query_indices.shape[0]


def _freeze(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def match_group(scores, A, arm, M=1, queries=None):
    """Match every unit with ``A == 1 - arm`` to M donors with ``A == arm``.

    ``queries`` optionally restricts the query set (unit indices, all of
    which must be in arm ``1 - arm``).
    """
    S = np.asarray(scores, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    A = np.asarray(A)
    M = int(M)
    if M < 1:
        raise DomainError("M must be >= 1")
    donors = np.flatnonzero(A == arm)
    if queries is None:
        queries = np.flatnonzero(A == 1 - arm)
    else:
        queries = np.asarray(queries, dtype=np.intp)
        if np.any(A[queries] != 1 - arm):
            raise DomainError("query units must belong to the opposite arm")
    if donors.size < M:
        raise DomainError(
            f"arm {arm} has {donors.size} units, fewer than M={M} matches")
    index = NeighborIndex(S[donors])
    pos = index.query(S[queries], M)
    J = donors[pos]
    K = np.bincount(J.ravel(), minlength=A.shape[0])
    return MatchMap(int(arm), M, _freeze(queries), _freeze(donors),
                    _freeze(J), _freeze(K))


def match_both(scoreset, A, M=1):
    """Match maps for imputing Y(0) (on S0) and Y(1) (on S1): ``(mm0, mm1)``."""
    return (match_group(scoreset.S0, A, 0, M), match_group(scoreset.S1, A, 1, M))
