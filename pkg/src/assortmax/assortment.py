"""Expected revenue and cardinality-constrained assortment optimization under MNL."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .choice import InvalidInputError

BRUTE_FORCE_MAX_N = 20
PLAN_EXACT_MAX_N = 12


@dataclass(frozen=True)
class AssortmentSolution:
    S: tuple[int, ...]
    value: float
    gap: Optional[float] = None
    degenerate: bool = False
    exact: bool = True


def _row(x, n=None, name="vector"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or (n is not None and x.shape[0] != n):
        raise InvalidInputError(f"{name} must be a length-{n} vector")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return x


def expected_revenue(S: Sequence[int], w, theta_row) -> float:
    """F(S; w, theta) = sum_j p_j(S) w_j, zero for the empty set."""
    w = np.asarray(w, dtype=float)
    theta_row = np.asarray(theta_row, dtype=float)
    S = list(S)
    if not S:
        return 0.0
    if min(S) < 0 or max(S) >= w.shape[0]:
        raise InvalidInputError(f"assortment {S} has ids outside [0, {w.shape[0]})")
    x = theta_row[S]
    shift = max(0.0, float(x.max()))
    e = np.exp(x - shift)
    return float(e @ w[S] / (np.exp(-shift) + e.sum()))


def _top_set(score: np.ndarray, K: int) -> np.ndarray:
    # stable sort on -score keeps lower ids first among equal scores
    order = np.argsort(-score, kind="stable")[:K]
    return np.sort(order[score[order] > 0])


def optimal_assortment(w, theta_row, K: int) -> AssortmentSolution:
    """Revenue-maximizing assortment of at most K items.

    Bisection on the revenue level z: the best set for level z is the top-K
    items by ``exp(theta_j) * (w_j - z)`` among positive scores, and the
    optimum is >= z exactly when that set earns >= z. The final set is then
    polished by the fixed-point update z <- F(A(z)), which is monotone and
    terminates at the exact optimum.
    """
    w = _row(w, name="w")
    n = w.shape[0]
    theta_row = _row(theta_row, n, "theta_row")
    if np.any(w < 0):
        raise InvalidInputError("revenues must be nonnegative")
    if not 1 <= K <= n:
        raise InvalidInputError(f"need 1 <= K <= n, got K={K}, n={n}")
    wmax = float(w.max())
    if wmax <= 0:
        return AssortmentSolution(S=(), value=0.0, degenerate=True)

    v = np.exp(theta_row - theta_row.max())
    outside = np.exp(-theta_row.max())  # outside-option weight on the same scale as v

    def value(A):
        if A.size == 0:
            return 0.0
        return float((v[A] @ w[A]) / (outside + v[A].sum()))

    best_A = _top_set(v * w, K)
    best = value(best_A)
    lo, hi = best, wmax
    tol = 1e-10 * max(1.0, wmax)
    while hi - lo > tol:
        z = 0.5 * (lo + hi)
        A = _top_set(v * (w - z), K)
        fa = value(A)
        if fa >= z:
            lo = max(z, fa)
            if fa > best:
                best, best_A = fa, A
        else:
            hi = z
    for _ in range(n + 1):
        A = _top_set(v * (w - best), K)
        fa = value(A)
        if fa <= best * (1 + 1e-15):
            break
        best, best_A = fa, A
    S = tuple(int(j) for j in best_A)
    return AssortmentSolution(S=S, value=expected_revenue(S, w, theta_row))


def _enumerate(n, K):
    for k in range(0, K + 1):
        yield from combinations(range(n), k)


def brute_force_assortment(w, theta_row, K: int) -> AssortmentSolution:
    """Exact maximizer by enumeration; ties go to the lexicographically smallest set."""
    w = _row(w, name="w")
    n = w.shape[0]
    theta_row = _row(theta_row, n, "theta_row")
    if n > BRUTE_FORCE_MAX_N:
        raise InvalidInputError(f"n={n} too large to enumerate (limit {BRUTE_FORCE_MAX_N})")
    if not 1 <= K <= n:
        raise InvalidInputError(f"need 1 <= K <= n, got K={K}, n={n}")
    vals = {S: expected_revenue(S, w, theta_row) for S in _enumerate(n, K)}
    top = max(vals.values())
    S = min(S for S, f in vals.items() if f >= top - 1e-12)
    return AssortmentSolution(S=S, value=vals[S], degenerate=top <= 0)


def optimality_gap(w, theta_row, K: int) -> float:
    """Revenue gap between the optimum and the best non-optimal set (inf if none)."""
    w = _row(w, name="w")
    n = w.shape[0]
    theta_row = _row(theta_row, n, "theta_row")
    if n > BRUTE_FORCE_MAX_N:
        raise InvalidInputError(f"n={n} too large to enumerate (limit {BRUTE_FORCE_MAX_N})")
    vals = np.array([expected_revenue(S, w, theta_row) for S in _enumerate(n, K)])
    top = vals.max()
    rest = vals[vals < top - 1e-12]
    return float(top - rest.max()) if rest.size else float("inf")


def population_revenue(S: Sequence[int], W, theta, mu) -> float:
    """mu-weighted expected revenue of one assortment offered to every type."""
    W = np.asarray(W, dtype=float)
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if W.ndim != 2 or W.shape != theta.shape or mu.shape != (W.shape[0],):
        raise InvalidInputError("W, theta must be m x n and mu length m")
    S = list(S)
    if not S:
        return 0.0
    if min(S) < 0 or max(S) >= W.shape[1]:
        raise InvalidInputError("assortment ids out of range")
    x = theta[:, S]
    shift = np.maximum(0.0, x.max(axis=1))
    e = np.exp(x - shift[:, None])
    per_type = (e * W[:, S]).sum(axis=1) / (np.exp(-shift) + e.sum(axis=1))
    return float(mu @ per_type)


def plan_assortment(W, theta, mu, K: int, exact: Optional[bool] = None) -> AssortmentSolution:
    """One assortment for a population whose type is unknown at offer time.

    Exact enumeration when ``n <= 12`` (or ``exact=True``); otherwise the best
    of the revenue-ordered prefixes and the per-type optimal sets.
    """
    W = np.asarray(W, dtype=float)
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if W.ndim != 2 or W.shape != theta.shape or mu.shape != (W.shape[0],):
        raise InvalidInputError("W, theta must be m x n and mu length m")
    m, n = W.shape
    if not 1 <= K <= n:
        raise InvalidInputError(f"need 1 <= K <= n, got K={K}, n={n}")
    if exact is None:
        exact = n <= PLAN_EXACT_MAX_N
    if exact:
        if n > BRUTE_FORCE_MAX_N:
            raise InvalidInputError(f"n={n} too large to enumerate")
        best_S, best = (), 0.0
        for S in _enumerate(n, K):
            f = population_revenue(S, W, theta, mu)
            if f > best + 1e-12:
                best_S, best = S, f
        return AssortmentSolution(S=best_S, value=best, exact=True, degenerate=best <= 0)

    e = np.exp(np.minimum(theta, 700.0))
    score = mu @ (e * W / (1.0 + e))
    order = np.argsort(-score, kind="stable")
    candidates = [tuple(sorted(int(j) for j in order[:k])) for k in range(1, K + 1)]
    for i in range(m):
        S = optimal_assortment(W[i], theta[i], K).S
        if S:
            candidates.append(S)
    best_S, best = (), 0.0
    for S in candidates:
        f = population_revenue(S, W, theta, mu)
        if f > best + 1e-12 or (abs(f - best) <= 1e-12 and best_S and S < best_S):
            best_S, best = S, f
    return AssortmentSolution(S=best_S, value=best, exact=False, degenerate=best <= 0)
