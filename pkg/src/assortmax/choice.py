"""Conditional MNL world model: instances, choice probabilities, sampling and likelihood.

Indexing convention for the Python API: types and items are 0-based and the
no-purchase outcome is ``NO_PURCHASE`` (-1). External file formats (CSV) use
1-based ids with 0 meaning no-purchase.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import sparse

NO_PURCHASE = -1


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


def _as_assortment(S: Iterable[int], n: int | None = None) -> tuple[int, ...]:
    items = tuple(int(j) for j in S)
    if len(set(items)) != len(items):
        raise InvalidInputError(f"assortment has repeated items: {items}")
    if n is not None and any(j < 0 or j >= n for j in items):
        raise InvalidInputError(f"assortment {items} has ids outside [0, {n})")
    return tuple(sorted(items))


@dataclass
class Instance:
    """Ground-truth world: m types, n items, cap K, revenues W, type law mu_star, preferences theta_star."""

    K: int
    W: np.ndarray
    mu_star: np.ndarray
    theta_star: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        self.mu_star = np.asarray(self.mu_star, dtype=float)
        self.K = int(self.K)
        if self.theta_star.ndim != 2:
            raise InvalidInputError("theta_star must be an m x n matrix")
        m, n = self.theta_star.shape
        if m < 1 or n < 1:
            raise InvalidInputError("m and n must be positive")
        if self.W.shape != (m, n):
            raise InvalidInputError(f"W has shape {self.W.shape}, expected {(m, n)}")
        if self.mu_star.shape != (m,):
            raise InvalidInputError(f"mu_star has shape {self.mu_star.shape}, expected {(m,)}")
        if not 1 <= self.K <= n:
            raise InvalidInputError(f"K={self.K} must lie in [1, n={n}]")
        if not np.all(np.isfinite(self.W)) or np.any(self.W < 0):
            raise InvalidInputError("W entries must be finite and nonnegative")
        if not np.all(np.isfinite(self.theta_star)):
            raise InvalidInputError("theta_star entries must be finite")
        if np.any(self.mu_star < 0) or abs(self.mu_star.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mu_star must be a probability vector")

    @property
    def m(self) -> int:
        return self.theta_star.shape[0]

    @property
    def n(self) -> int:
        return self.theta_star.shape[1]

    def to_json(self) -> str:
        payload = {
            "m": self.m,
            "n": self.n,
            "K": self.K,
            "mu_star": self.mu_star.tolist(),
            "W": self.W.tolist(),
            "theta_star": self.theta_star.tolist(),
        }
        return json.dumps(payload, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        d = json.loads(text)
        inst = cls(K=d["K"], W=d["W"], mu_star=d["mu_star"], theta_star=d["theta_star"])
        if (inst.m, inst.n) != (d["m"], d["n"]):
            raise InvalidInputError("declared m, n disagree with matrix shapes")
        return inst


@dataclass(frozen=True)
class Observation:
    type_id: int
    assortment: tuple[int, ...]
    choice: int
    t: int = 0

    def __post_init__(self):
        if self.choice != NO_PURCHASE and self.choice not in self.assortment:
            raise InvalidInputError(
                f"choice {self.choice} is neither no-purchase nor in {self.assortment}"
            )


class ObservationLog:
    """Append-only record of (type, assortment, choice) triples.

    Observations are stored in growable numpy buffers so that likelihood
    evaluations work on arrays: ``items`` is padded with -1 to the widest
    assortment seen so far and ``chosen_pos`` is the column of the chosen item
    within ``items`` (-1 for no-purchase).
    """

    def __init__(self, capacity: int = 64):
        capacity = max(int(capacity), 1)
        self._N = 0
        self._t = np.zeros(capacity, dtype=np.int64)
        self._types = np.zeros(capacity, dtype=np.int64)
        self._choices = np.zeros(capacity, dtype=np.int64)
        self._pos = np.zeros(capacity, dtype=np.int64)
        self._items = np.full((capacity, 1), -1, dtype=np.int64)

    # -- construction -------------------------------------------------------
    @classmethod
    def from_arrays(cls, types, items, choices, t=None) -> "ObservationLog":
        """Bulk constructor. ``items`` is an (N, K) array padded with -1."""
        types = np.asarray(types, dtype=np.int64)
        items = np.atleast_2d(np.asarray(items, dtype=np.int64))
        choices = np.asarray(choices, dtype=np.int64)
        N = types.shape[0]
        if items.shape[0] != N or choices.shape != (N,):
            raise InvalidInputError("types, items and choices disagree in length")
        log = cls(capacity=N)
        if N == 0:
            return log
        hit = (items == choices[:, None]) & (items >= 0)
        bad = (choices != NO_PURCHASE) & ~hit.any(axis=1)
        if bad.any():
            raise InvalidInputError(f"observation {int(np.argmax(bad))}: choice not in assortment")
        srt = np.sort(np.where(items >= 0, items, np.iinfo(np.int64).max), axis=1)
        if np.any((srt[:, 1:] == srt[:, :-1]) & (srt[:, 1:] != np.iinfo(np.int64).max)):
            raise InvalidInputError("assortment with repeated items")
        log._items = items.copy()
        log._types = types.copy()
        log._choices = choices.copy()
        log._pos = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
        log._t = np.arange(1, N + 1) if t is None else np.asarray(t, dtype=np.int64).copy()
        log._N = N
        return log

    def _grow(self, need_rows: int, need_width: int):
        cap, width = self._items.shape
        if need_width > width:
            wide = np.full((cap, need_width), -1, dtype=np.int64)
            wide[:, :width] = self._items
            self._items = wide
            width = need_width
        if need_rows > cap:
            new_cap = max(need_rows, 2 * cap)
            for name in ("_t", "_types", "_choices", "_pos"):
                buf = getattr(self, name)
                grown = np.zeros(new_cap, dtype=np.int64)
                grown[:cap] = buf
                setattr(self, name, grown)
            items = np.full((new_cap, width), -1, dtype=np.int64)
            items[:cap] = self._items
            self._items = items

    def append(self, type_id: int, assortment: Sequence[int], choice: int, t: int | None = None):
        S = _as_assortment(assortment)
        if len(S) == 0:
            raise InvalidInputError("empty assortments are not allowed")
        choice = int(choice)
        if choice != NO_PURCHASE and choice not in S:
            raise InvalidInputError(f"choice {choice} not in assortment {S}")
        k = self._N
        self._grow(k + 1, len(S))
        self._items[k, :] = -1
        self._items[k, : len(S)] = S
        self._types[k] = int(type_id)
        self._choices[k] = choice
        self._pos[k] = S.index(choice) if choice != NO_PURCHASE else -1
        self._t[k] = k + 1 if t is None else int(t)
        self._N += 1

    def add(self, obs: Observation):
        self.append(obs.type_id, obs.assortment, obs.choice, obs.t)

    # -- views --------------------------------------------------------------
    def __len__(self) -> int:
        return self._N

    @property
    def types(self) -> np.ndarray:
        return self._types[: self._N]

    @property
    def choices(self) -> np.ndarray:
        return self._choices[: self._N]

    @property
    def items(self) -> np.ndarray:
        return self._items[: self._N]

    @property
    def chosen_pos(self) -> np.ndarray:
        return self._pos[: self._N]

    @property
    def t(self) -> np.ndarray:
        return self._t[: self._N]

    def __iter__(self) -> Iterator[Observation]:
        for k in range(self._N):
            row = self._items[k]
            yield Observation(
                type_id=int(self._types[k]),
                assortment=tuple(int(j) for j in row[row >= 0]),
                choice=int(self._choices[k]),
                t=int(self._t[k]),
            )

    def __getitem__(self, k: int) -> Observation:
        if not -self._N <= k < self._N:
            raise IndexError(k)
        k %= self._N
        row = self._items[k]
        return Observation(int(self._types[k]), tuple(int(j) for j in row[row >= 0]),
                           int(self._choices[k]), int(self._t[k]))

    def type_counts(self, m: int) -> np.ndarray:
        return np.bincount(self.types, minlength=m)

    def select(self, rows) -> "ObservationLog":
        """New log holding the rows picked by a boolean mask or index array."""
        return ObservationLog.from_arrays(
            self.types[rows], self.items[rows], self.choices[rows], self.t[rows]
        )

    def check_ids(self, m: int, n: int):
        if self._N == 0:
            return
        if self.types.min() < 0 or self.types.max() >= m:
            raise InvalidInputError(f"type id outside [0, {m})")
        it = self.items
        if it.max() >= n:
            raise InvalidInputError(f"item id outside [0, {n})")

    # -- CSV ----------------------------------------------------------------
    def to_csv(self, path_or_file):
        """Write ``t,type,choice,assortment`` with 1-based ids, 0 = no purchase."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "type", "choice", "assortment"])
            for obs in self:
                w.writerow([obs.t, obs.type_id + 1, obs.choice + 1,
                            ";".join(str(j + 1) for j in obs.assortment)])
        finally:
            if own:
                fh.close()

    @classmethod
    def read_csv(cls, path_or_file) -> "ObservationLog":
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, newline="") if own else path_or_file
        try:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["t", "type", "choice", "assortment"]:
                raise InvalidInputError(f"unexpected header {reader.fieldnames}")
            log = cls()
            for line, row in enumerate(reader, start=2):
                try:
                    S = [int(x) - 1 for x in row["assortment"].split(";") if x != ""]
                    if min(S, default=0) < 0:
                        raise InvalidInputError("item ids are 1-based")
                    log.append(int(row["type"]) - 1, S, int(row["choice"]) - 1, int(row["t"]))
                except (ValueError, TypeError) as exc:
                    raise InvalidInputError(f"line {line}: {exc}") from exc
            return log
        finally:
            if own:
                fh.close()


def choice_probabilities(theta_row, S: Sequence[int]) -> np.ndarray:
    """MNL choice probabilities over ``[no-purchase, *S]``.

    The outside option has fixed weight 1, so the overflow guard shifts by
    ``max(0, max theta_S)`` and rescales that weight by the same factor.
    """
    theta_row = np.asarray(theta_row, dtype=float)
    S = list(S)
    if len(S) == 0:
        raise InvalidInputError("assortment must be nonempty")
    if len(set(S)) != len(S):
        raise InvalidInputError("assortment items must be distinct")
    x = theta_row[S]
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite preference parameters")
    shift = max(0.0, float(x.max()))
    w = np.empty(len(S) + 1)
    w[0] = np.exp(-shift)
    w[1:] = np.exp(x - shift)
    return w / w.sum()


def sample_uniform_assortment(n: int, K: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform size-K subset of range(n) via a partial Fisher-Yates shuffle."""
    if not 1 <= K <= n:
        raise InvalidInputError(f"need 1 <= K <= n, got K={K}, n={n}")
    ids = list(range(n))
    for k in range(K):
        j = int(rng.integers(k, n))
        ids[k], ids[j] = ids[j], ids[k]
    return tuple(sorted(ids[:K]))


def sample_choice(theta_row, S: Sequence[int], rng: np.random.Generator) -> int:
    p = choice_probabilities(theta_row, S)
    k = int(np.searchsorted(np.cumsum(p), rng.random() * 1.0, side="right"))
    k = min(k, len(S))
    return NO_PURCHASE if k == 0 else int(S[k - 1])


def sample_interaction(instance: Instance, S: Sequence[int], rng: np.random.Generator):
    """One customer interaction: returns (type i, choice j, realized revenue r).

    Revenue is realized at its expectation W[i, j].
    """
    S = _as_assortment(S, instance.n)
    if not 1 <= len(S) <= instance.K:
        raise InvalidInputError(f"assortment size {len(S)} outside [1, K={instance.K}]")
    i = int(rng.choice(instance.m, p=instance.mu_star))
    j = sample_choice(instance.theta_star[i], S, rng)
    r = 0.0 if j == NO_PURCHASE else float(instance.W[i, j])
    return i, j, r


def sample_observations(instance: Instance, N: int, rng: np.random.Generator,
                        K: int | None = None) -> ObservationLog:
    """Vectorized draw of N interactions with uniform size-K assortments."""
    K = instance.K if K is None else K
    m, n = instance.m, instance.n
    if N < 0 or not 1 <= K <= n:
        raise InvalidInputError("need N >= 0 and 1 <= K <= n")
    types = rng.choice(m, size=N, p=instance.mu_star)
    # first K columns of a uniform random permutation are a uniform K-subset
    keys = rng.random((N, n))
    items = np.sort(np.argpartition(keys, K - 1, axis=1)[:, :K], axis=1) if K < n \
        else np.tile(np.arange(n), (N, 1))
    logits = instance.theta_star[types[:, None], items]
    shift = np.maximum(0.0, logits.max(axis=1, initial=0.0))
    w = np.concatenate([np.exp(-shift)[:, None], np.exp(logits - shift[:, None])], axis=1)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(N) * cdf[:, -1]
    k = np.minimum((cdf <= u[:, None]).sum(axis=1), K)
    choices = np.where(k == 0, NO_PURCHASE, items[np.arange(N), np.maximum(k - 1, 0)])
    return ObservationLog.from_arrays(types, items, choices)


# -- likelihood ----------------------------------------------------------------

def _logit_terms(logits: np.ndarray, mask):
    """Per-observation log(1 + sum exp) and in-assortment probabilities.

    ``mask`` marks real (unpadded) entries; ``None`` means no padding.
    """
    if mask is None or mask.all():
        shift = np.maximum(logits.max(axis=1), 0.0)
        e = np.exp(logits - shift[:, None])
    else:
        x = np.where(mask, logits, -np.inf)
        shift = np.maximum(x.max(axis=1), 0.0)
        e = np.where(mask, np.exp(x - shift[:, None]), 0.0)
    denom = np.exp(-shift) + e.sum(axis=1)
    lse = shift + np.log(denom)
    e /= denom[:, None]
    return lse, e


def _validated(theta, log: ObservationLog):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2:
        raise InvalidInputError("theta must be a matrix")
    if len(log) == 0:
        raise InvalidInputError("observation log is empty")
    log.check_ids(*theta.shape)
    return theta


def nll(theta, log: ObservationLog) -> float:
    """Average negative log-likelihood of the log under preference matrix theta."""
    theta = _validated(theta, log)
    items, mask = log.items, log.items >= 0
    logits = theta[log.types[:, None], np.where(mask, items, 0)]
    lse, _ = _logit_terms(logits, mask)
    pos = log.chosen_pos
    chosen = np.where(pos >= 0, logits[np.arange(len(log)), np.maximum(pos, 0)], 0.0)
    return float(np.mean(lse - chosen))


def nll_gradient(theta, log: ObservationLog, as_sparse: bool = False):
    """Gradient of :func:`nll`; entry (i, j) only collects observations of type i offering j."""
    theta = _validated(theta, log)
    m, n = theta.shape
    N = len(log)
    items, mask = log.items, log.items >= 0
    logits = theta[log.types[:, None], np.where(mask, items, 0)]
    _, P = _logit_terms(logits, mask)
    pos = log.chosen_pos
    rows = np.flatnonzero(pos >= 0)
    P[rows, pos[rows]] -= 1.0
    r = np.broadcast_to(log.types[:, None], items.shape)[mask]
    c = items[mask]
    v = P[mask] / N
    if as_sparse:
        return sparse.coo_matrix((v, (r, c)), shape=(m, n)).tocsr()
    return np.bincount(r * n + c, weights=v, minlength=m * n).reshape(m, n)
