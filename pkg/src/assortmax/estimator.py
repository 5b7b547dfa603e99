"""Low-rank preference estimation.

Nuclear-norm regularized maximum likelihood solved in factored form
``Theta = U V^T`` by gradient descent with backtracking, plus the unstructured
baselines (per-type MLE, pooled MLE), the type-frequency estimate and recovery
diagnostics.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .choice import InvalidInputError, ObservationLog, _logit_terms, nll_gradient

DENSE_SVD_MAX_DIM = 2000


@dataclass
class FgdConfig:
    """Factored gradient descent settings.

    ``lam`` is the nuclear-norm weight; ``beta_dec`` shrinks the step during
    backtracking and ``tol`` is the relative-decrease stopping threshold.
    """

    r_tilde: int
    lam: float
    beta_dec: float = 0.8
    tol: float = 1e-10
    max_outer_iters: int = 500
    max_linesearch_iters: int = 60
    clamp_alpha: Optional[float] = None

    def validate(self, m: int, n: int):
        if not 1 <= self.r_tilde <= min(m, n):
            raise InvalidInputError(f"r_tilde={self.r_tilde} outside [1, min(m, n)={min(m, n)}]")
        if self.lam < 0:
            raise InvalidInputError("lam must be >= 0")
        if not 0 < self.beta_dec < 1:
            raise InvalidInputError("beta_dec must lie in (0, 1)")
        if self.tol <= 0:
            raise InvalidInputError("tol must be > 0")
        if self.max_outer_iters < 1 or self.max_linesearch_iters < 1:
            raise InvalidInputError("iteration caps must be >= 1")


@dataclass
class FactorPair:
    U: np.ndarray
    V: np.ndarray
    objective: float = float("nan")

    @property
    def theta(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass
class Estimate:
    theta_hat: np.ndarray
    mu_hat: np.ndarray
    provenance: str
    diagnostics: dict = field(default_factory=dict)
    factors: Optional[FactorPair] = None


def practical_lambda(K: int, m: int, n: int, N: int, d_rule: str = "m+n") -> float:
    """lam = (1/8) sqrt(K d log d / (m n N)) with d = m + n or max(m, n)."""
    if N < 1:
        raise InvalidInputError("need at least one observation")
    if d_rule == "m+n":
        d = m + n
    elif d_rule == "max":
        d = max(m, n)
    else:
        raise InvalidInputError(f"unknown d rule {d_rule!r}")
    return float(np.sqrt(K * d * np.log(d) / (m * n * N)) / 8.0)


# -- factored objective ---------------------------------------------------------

def _check_factors(U, V, log: ObservationLog):
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise InvalidInputError(f"factor shapes {U.shape}, {V.shape} do not conform")
    if len(log) == 0:
        raise InvalidInputError("observation log is empty")
    log.check_ids(U.shape[0], V.shape[0])
    return U, V


class _Design:
    """Index structure of a log reused across objective/gradient evaluations."""

    def __init__(self, log: ObservationLog, m: int, n: int):
        items = log.items
        self.N = len(log)
        self.mask = items >= 0
        self.padded = not self.mask.all()
        self.it = np.where(self.mask, items, 0)
        self.types = log.types.copy()
        pos = log.chosen_pos
        self.rows = np.flatnonzero(pos >= 0)
        self.cols = pos[self.rows]
        # CSR pattern of grad L: one stored entry per (observation, offered item);
        # duplicates are kept and summed by the sparse products
        flat_types = np.broadcast_to(self.types[:, None], items.shape)[self.mask]
        self.order = np.argsort(flat_types, kind="stable")
        self.indices = self.it[self.mask][self.order]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(flat_types, minlength=m))])
        self.shape = (m, n)

    def sparse(self, G):
        vals = (G[self.mask] if self.padded else G.ravel())[self.order]
        return sparse.csr_matrix((vals, self.indices, self.indptr), shape=self.shape)


def _design(log: ObservationLog, m: int, n: int) -> _Design:
    cached = getattr(log, "_design_cache", None)
    if cached is not None and cached[0] == (len(log), m, n):
        return cached[1]
    d = _Design(log, m, n)
    log._design_cache = ((len(log), m, n), d)
    return d


def _factored_pass(U, V, log: ObservationLog, need_grad: bool):
    m, n = U.shape[0], V.shape[0]
    d = _design(log, m, n)
    logits = np.einsum("tr,tkr->tk", U[d.types], V[d.it])
    lse, P = _logit_terms(logits, d.mask if d.padded else None)
    loss = (lse.sum() - logits[d.rows, d.cols].sum()) / d.N
    if not need_grad:
        return loss, None, None
    P[d.rows, d.cols] -= 1.0
    P /= d.N
    M = d.sparse(P)
    return loss, np.asarray(M @ V), np.asarray(M.T @ U)


def factored_objective(U, V, lam: float, log: ObservationLog) -> float:
    """L(U V^T) + (lam/2)(||U||_F^2 + ||V||_F^2), without forming U V^T."""
    U, V = _check_factors(U, V, log)
    loss, _, _ = _factored_pass(U, V, log, need_grad=False)
    return float(loss + 0.5 * lam * (np.sum(U * U) + np.sum(V * V)))


def factored_gradients(U, V, lam: float, log: ObservationLog):
    """Gradients of :func:`factored_objective` with respect to U and V."""
    U, V = _check_factors(U, V, log)
    _, gU, gV = _factored_pass(U, V, log, need_grad=True)
    return gU + lam * U, gV + lam * V


# -- initialization -------------------------------------------------------------

def _top_svd(A, r: int):
    m, n = A.shape
    if min(m, n) <= DENSE_SVD_MAX_DIM:
        dense = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
        u, s, vt = np.linalg.svd(dense, full_matrices=False)
        return u[:, :r], s[:r], vt[:r].T
    from sklearn.utils.extmath import randomized_svd

    u, s, vt = randomized_svd(A, r, n_oversamples=10, n_iter=2, random_state=0)
    return u, s, vt.T


def _gamma(log: ObservationLog, lam: float, n: int) -> float:
    """||grad L(0) - grad L(e1 e1^T) - lam e1 e1^T||_F.

    Only observations of type 0 offering item 0 see the probe, so the
    difference is evaluated on that sub-log with a single-row matrix.
    """
    sel = (log.types == 0) & np.any(log.items == 0, axis=1)
    if not sel.any():
        return float(lam)
    sub = log.select(sel)
    probe = np.zeros((1, n))
    g0 = nll_gradient(probe, sub)
    probe[0, 0] = 1.0
    g1 = nll_gradient(probe, sub)
    diff = (len(sub) / len(log)) * (g0 - g1)
    diff[0, 0] -= lam
    return float(np.linalg.norm(diff))


def fgd_initialize(log: ObservationLog, lam: float, r_tilde: int, m: int, n: int) -> FactorPair:
    """Spectral start from the top singular pairs of -grad L(0), scaled by 1/sqrt(gamma).

    Singular vectors are sign-normalized so each left vector's largest-magnitude
    entry is positive.
    """
    if len(log) == 0:
        raise InvalidInputError("observation log is empty")
    log.check_ids(m, n)
    # read-only broadcast view keeps the zero matrix O(1) in memory
    G = -nll_gradient(np.broadcast_to(0.0, (m, n)), log, as_sparse=True)
    u, s, v = _top_svd(G, r_tilde)
    if u.shape[1] < r_tilde:  # min(m, n) < r_tilde cannot happen after validation
        raise InvalidInputError("r_tilde exceeds matrix rank capacity")
    for k in range(r_tilde):
        idx = int(np.argmax(np.abs(u[:, k])))
        if u[idx, k] < 0:
            u[:, k] *= -1
            v[:, k] *= -1
    gamma = _gamma(log, lam, n)
    if gamma <= 0 or not np.isfinite(gamma):
        warnings.warn("degenerate initialization scale; using gamma = 1", RuntimeWarning)
        gamma = 1.0
    root = np.sqrt(np.maximum(s, 0.0) / gamma)
    U0, V0 = u * root, v * root
    return FactorPair(U0, V0, factored_objective(U0, V0, lam, log))


# -- solver ---------------------------------------------------------------------

def fgd_solve(log: ObservationLog, config: FgdConfig, m: int, n: int,
              warm_start: Optional[FactorPair] = None) -> Estimate:
    """Minimize L(U V^T) + (lam/2)(||U||^2 + ||V||^2) by backtracking gradient descent.

    Each outer iteration restarts the step at 1 and shrinks it by ``beta_dec``
    until the objective does not increase. Stops when the relative decrease
    falls to ``tol``, at ``max_outer_iters``, or when the line search cannot
    find a non-increasing step (status ``stationary``).
    """
    config.validate(m, n)
    if len(log) == 0:
        raise InvalidInputError("observation log is empty")
    log.check_ids(m, n)
    start = time.perf_counter()
    lam = config.lam
    if warm_start is None:
        init = fgd_initialize(log, lam, config.r_tilde, m, n)
        U, V = init.U, init.V
    else:
        U, V = np.array(warm_start.U, dtype=float), np.array(warm_start.V, dtype=float)
        if U.shape != (m, config.r_tilde) or V.shape != (n, config.r_tilde):
            raise InvalidInputError("warm start factors have the wrong shape")

    def objective(U, V):
        loss, _, _ = _factored_pass(U, V, log, need_grad=False)
        return loss + 0.5 * lam * (np.sum(U * U) + np.sum(V * V))

    f = objective(U, V)
    history = [f]
    status = "max_iters"
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        _, gU, gV = _factored_pass(U, V, log, need_grad=True)
        gU += lam * U
        gV += lam * V
        eta = 1.0
        for _ in range(config.max_linesearch_iters):
            U2, V2 = U - eta * gU, V - eta * gV
            f2 = objective(U2, V2)
            if f2 <= f:
                break
            eta *= config.beta_dec
        else:
            status = "stationary"
            break
        U, V = U2, V2
        rel = (f - f2) / f2
        f = f2
        history.append(f)
        if rel <= config.tol:
            status = "converged"
            break

    theta = U @ V.T
    if config.clamp_alpha is not None:
        bound = config.clamp_alpha / np.sqrt(m * n)
        theta = np.clip(theta, -bound, bound)
    mu_hat = estimate_mu(log, m)
    return Estimate(
        theta_hat=theta,
        mu_hat=mu_hat,
        provenance="fgd",
        diagnostics={
            "iterations": it,
            "objective": float(f),
            "status": status,
            "history": history,
            "wall_time": time.perf_counter() - start,
            "lam": lam,
        },
        factors=FactorPair(U, V, float(f)),
    )


# -- unstructured baselines -----------------------------------------------------

def _row_problem(items, pos, n, ridge):
    mask = items >= 0
    it = np.where(mask, items, 0)
    Ni = items.shape[0]
    rows = np.flatnonzero(pos >= 0)
    flat = it[mask]

    def value(theta):
        logits = theta[it]
        lse, P = _logit_terms(logits, mask)
        f = (lse.sum() - logits[rows, pos[rows]].sum()) / Ni + 0.5 * ridge * theta @ theta
        return f, P

    def grad(P, theta):
        G = P.copy()
        G[rows, pos[rows]] -= 1.0
        return np.bincount(flat, weights=G[mask], minlength=n) / Ni + ridge * theta

    def hessian(P):
        pm = np.where(mask, P, 0.0)
        outer = pm[:, :, None] * pm[:, None, :]
        idx = it[:, :, None] * n + it[:, None, :]
        H = -np.bincount(idx.ravel(), weights=outer.ravel(), minlength=n * n).reshape(n, n)
        H[np.diag_indices(n)] += np.bincount(flat, weights=P[mask], minlength=n)
        H /= Ni
        H[np.diag_indices(n)] += ridge
        return H

    return value, grad, hessian


def fit_mnl(items, pos, n: int, ridge: float = 1e-8, theta0=None,
            max_iter: int = 200, tol: float = 1e-12, newton_max_n: int = 200):
    """Single-population MNL maximum likelihood on padded item rows.

    Damped Newton for ``n <= newton_max_n``, backtracking gradient descent
    otherwise. Returns ``(theta, converged, iterations)``.
    """
    theta = np.zeros(n) if theta0 is None else np.array(theta0, dtype=float)
    if items.shape[0] == 0:
        return np.zeros(n), True, 0
    value, grad, hessian = _row_problem(items, pos, n, ridge)
    f, P = value(theta)
    use_newton = n <= newton_max_n
    for k in range(1, max_iter + 1):
        g = grad(P, theta)
        if use_newton:
            try:
                d = -np.linalg.solve(hessian(P), g)
            except np.linalg.LinAlgError:
                d = -g
            if not g @ d < 0:
                d = -g
        else:
            d = -g
        decrement = -(g @ d)
        if decrement <= tol:
            return theta, True, k - 1
        step = 1.0
        while True:
            cand = theta + step * d
            f2, P2 = value(cand)
            if f2 <= f - 1e-4 * step * decrement or step < 1e-12:
                break
            step *= 0.5 if use_newton else 0.8
        if f2 > f:
            return theta, True, k
        theta, f, P = cand, f2, P2
    return theta, False, max_iter


def per_type_mle(log: ObservationLog, m: int, n: int, ridge: float = 1e-8,
                 max_iter: int = 200) -> Estimate:
    """Row-by-row MNL MLE with a small ridge; rows without data stay at zero."""
    start = time.perf_counter()
    if len(log):
        log.check_ids(m, n)
    theta = np.zeros((m, n))
    nonconverged = []
    order = np.argsort(log.types, kind="stable")
    types = log.types[order]
    bounds = np.searchsorted(types, np.arange(m + 1))
    items, pos = log.items[order], log.chosen_pos[order]
    for i in range(m):
        a, b = bounds[i], bounds[i + 1]
        if a == b:
            continue
        theta[i], ok, _ = fit_mnl(items[a:b], pos[a:b], n, ridge, max_iter=max_iter)
        if not ok:
            nonconverged.append(i)
    mu_hat = estimate_mu(log, m) if len(log) else np.full(m, 1.0 / m)
    return Estimate(theta, mu_hat, "per-type-mle",
                    {"nonconverged": nonconverged, "ridge": ridge,
                     "wall_time": time.perf_counter() - start})


def pooled_mle(log: ObservationLog, n: int, ridge: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """One MNL vector fit to every observation regardless of type."""
    if len(log) == 0:
        return np.zeros(n)
    if log.items.max() >= n:
        raise InvalidInputError(f"item id outside [0, {n})")
    theta, _, _ = fit_mnl(log.items, log.chosen_pos, n, ridge, max_iter=max_iter)
    return theta


def estimate_mu(log: ObservationLog, m: int) -> np.ndarray:
    """Empirical type frequencies."""
    if len(log) == 0:
        raise InvalidInputError("cannot estimate type frequencies from an empty log")
    if log.types.max() >= m or log.types.min() < 0:
        raise InvalidInputError(f"type id outside [0, {m})")
    return np.bincount(log.types, minlength=m) / len(log)


def rmse(theta, theta_star) -> float:
    theta, theta_star = np.asarray(theta, float), np.asarray(theta_star, float)
    if theta.shape != theta_star.shape:
        raise InvalidInputError("shape mismatch")
    return float(np.linalg.norm(theta - theta_star) / np.sqrt(theta.size))


def tail_singular_sum(theta, r: int) -> float:
    """Sum of singular values beyond the r largest."""
    s = np.linalg.svd(np.asarray(theta, float), compute_uv=False)
    return float(s[r:].sum())


# -- serialization ----------------------------------------------------------------

def write_theta_csv(theta, path):
    """``type,item,value`` rows with 1-based ids."""
    theta = np.asarray(theta)
    m, n = theta.shape
    with open(path, "w") as fh:
        fh.write("type,item,value\n")
        for i in range(m):
            for j in range(n):
                fh.write(f"{i + 1},{j + 1},{float(theta[i, j])!r}\n")


def read_theta_csv(path, m: Optional[int] = None, n: Optional[int] = None) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    rows, cols = data[:, 0].astype(int) - 1, data[:, 1].astype(int) - 1
    m = rows.max() + 1 if m is None else m
    n = cols.max() + 1 if n is None else n
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= m or cols.max() >= n:
        raise InvalidInputError(f"{path}: ids outside the {m} x {n} preference matrix")
    theta = np.zeros((m, n))
    theta[rows, cols] = data[:, 2]
    return theta


def write_factors(factors: FactorPair, lam: float, path):
    """Plain-text factors: header ``m n r_tilde lambda``, then U rows, then V rows."""
    U, V = factors.U, factors.V
    with open(path, "w") as fh:
        fh.write(f"{U.shape[0]} {V.shape[0]} {U.shape[1]} {float(lam)!r}\n")
        for row in np.vstack([U, V]):
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_factors(path):
    """Returns ``(FactorPair, lam)``."""
    with open(path) as fh:
        m, n, r, lam = fh.readline().split()
        m, n, r = int(m), int(n), int(r)
        body = np.array([[float(x) for x in line.split()] for line in fh if line.strip()])
    if body.shape != (m + n, r):
        raise InvalidInputError(f"factor file body has shape {body.shape}, expected {(m + n, r)}")
    return FactorPair(body[:m].copy(), body[m:].copy()), float(lam)
