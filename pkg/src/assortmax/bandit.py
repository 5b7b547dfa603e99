"""Dynamic assortment personalization policies and regret accounting.

Every policy exposes ``step(instance, t, i, rng) -> assortment``: ``i`` is the
arriving customer type (drawn from a stream shared across policies), ``rng``
is the policy's own stream for exploration sets and choice feedback. Policies
that plan before seeing the type (``NucNormPlanPolicy``) choose the set
without reading ``i`` and only use it to record the observation.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import pickle
from dataclasses import dataclass, field
from math import log
from typing import Optional

import numpy as np

from .assortment import expected_revenue, optimal_assortment, plan_assortment
from .choice import Instance, InvalidInputError, ObservationLog, sample_choice, sample_uniform_assortment
from .estimator import FactorPair, FgdConfig, estimate_mu, fgd_solve, fit_mnl, practical_lambda

POLICY_KINDS = ("oracle", "nuc-norm", "nuc-norm-plan", "structure-ignorant", "context-ignorant")


@dataclass
class PolicyConfig:
    """Settings shared by all policies; each kind reads the fields it needs.

    ``lam=None`` recomputes the regularization weight from the current number
    of exploration observations with :func:`practical_lambda`.
    """

    kind: str = "nuc-norm"
    C: float = 1.0
    r: int = 2
    r_tilde: Optional[int] = None
    lam: Optional[float] = None
    d_rule: str = "m+n"
    beta_dec: float = 0.8
    tol: float = 1e-10
    max_outer_iters: int = 500
    max_linesearch_iters: int = 60
    refit_growth: float = 1.2
    faithful: bool = False
    baseline_explore_constant: float = 1.0
    ridge: float = 1e-8

    def validate(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidInputError(f"unknown policy kind {self.kind!r}")
        if self.C <= 0:
            raise InvalidInputError("C must be > 0")
        if self.refit_growth <= 1:
            raise InvalidInputError("refit_growth must be > 1")
        if self.baseline_explore_constant <= 0:
            raise InvalidInputError("baseline_explore_constant must be > 0")
        if self.r < 1:
            raise InvalidInputError("r must be >= 1")
        return self

    def fgd_config(self, m: int, n: int, lam: float) -> FgdConfig:
        r_tilde = self.r_tilde if self.r_tilde is not None else 2 * self.r
        return FgdConfig(r_tilde=min(r_tilde, m, n), lam=lam, beta_dec=self.beta_dec, tol=self.tol,
                         max_outer_iters=self.max_outer_iters,
                         max_linesearch_iters=self.max_linesearch_iters)


def theoretical_C(K: float, rho: float, omega: float, alpha: float, delta: float):
    """Exploration constant and regularization rule from the regret guarantee.

    Returns ``(C, lam_rule)`` where ``lam_rule(r, m, n) = 8 sqrt(rho K / (C r m n))``.
    The constant is astronomically large in practice; simulations use a
    calibrated ``C`` instead.
    """
    for name, val in dict(K=K, rho=rho, omega=omega, alpha=alpha, delta=delta).items():
        if not val > 0:
            raise InvalidInputError(f"{name} must be > 0")
    C = 4194304.0 * K ** 6 * rho ** 3 * omega ** 2 * alpha ** 2 * np.exp(16 * alpha) / delta ** 2

    def lam_rule(r, m, n):
        return 8.0 * np.sqrt(rho * K / (C * r * m * n))

    return C, lam_rule


def oracle_action(instance: Instance, i: int) -> tuple[int, ...]:
    """Optimal assortment for type i under the true preferences."""
    return optimal_assortment(instance.W[i], instance.theta_star[i], instance.K).S


def instantaneous_regret(instance: Instance, i: int, S) -> float:
    opt = optimal_assortment(instance.W[i], instance.theta_star[i], instance.K).value
    return opt - expected_revenue(S, instance.W[i], instance.theta_star[i])


def _exploit_set(w, theta_row, K):
    sol = optimal_assortment(w, theta_row, K)
    if sol.degenerate:
        # all-zero revenues: any set earns 0, offer the most attractive item
        return (int(np.argmax(theta_row)),)
    return sol.S


class Policy:
    kind = "base"

    def __init__(self, instance: Instance, config: PolicyConfig):
        self.config = config.validate()
        self.m, self.n, self.K = instance.m, instance.n, instance.K
        self.W = instance.W
        self.n_explore = 0
        self.n_exploit = 0
        self.n_refit = 0
        self.refit_sizes: list[int] = []

    def _explore(self, instance, i, rng, log: ObservationLog, t):
        S = sample_uniform_assortment(self.n, self.K, rng)
        j = sample_choice(instance.theta_star[i], S, rng)
        log.append(i, S, j, t)
        self.n_explore += 1
        return S

    def step(self, instance: Instance, t: int, i: int, rng: np.random.Generator):
        raise NotImplementedError


class OraclePolicy(Policy):
    kind = "oracle"

    def __init__(self, instance, config):
        super().__init__(instance, config)
        self.cache = [oracle_action(instance, i) for i in range(self.m)]

    def step(self, instance, t, i, rng):
        self.n_exploit += 1
        return self.cache[i]


class NucNormPolicy(Policy):
    """Explore uniformly while |O| <= C r (m + n) log t, otherwise exploit the low-rank estimate."""

    kind = "nuc-norm"

    def __init__(self, instance, config):
        super().__init__(instance, config)
        self.log = ObservationLog()
        self.factors: Optional[FactorPair] = None
        self.theta_hat: Optional[np.ndarray] = None
        self.cache: list = []
        self.last_refit_size = 0

    def budget(self, t: int) -> float:
        c = self.config
        return c.C * c.r * (self.m + self.n) * log(t)

    def should_explore(self, t: int) -> bool:
        return len(self.log) <= self.budget(t)

    def refit(self):
        c = self.config
        N = len(self.log)
        lam = c.lam if c.lam is not None else practical_lambda(self.K, self.m, self.n, N, c.d_rule)
        cfg = c.fgd_config(self.m, self.n, lam)
        warm = self.factors if self.factors is not None and self.factors.U.shape[1] == cfg.r_tilde else None
        est = fgd_solve(self.log, cfg, self.m, self.n, warm_start=warm)
        self.factors = est.factors
        self.theta_hat = est.theta_hat
        self.last_refit_size = N
        self.n_refit += 1
        self.refit_sizes.append(N)
        self._update_cache()

    def _update_cache(self):
        self.cache = [_exploit_set(self.W[i], self.theta_hat[i], self.K) for i in range(self.m)]

    def _maybe_refit_after_explore(self):
        N = len(self.log)
        if self.config.faithful or self.theta_hat is None or N >= self.config.refit_growth * self.last_refit_size:
            self.refit()

    def step(self, instance, t, i, rng):
        if self.should_explore(t) or self.theta_hat is None and len(self.log) == 0:
            S = self._explore(instance, i, rng, self.log, t)
            self._maybe_refit_after_explore()
            return S
        if len(self.log) != self.last_refit_size:
            # last exploration round before this exploit was not refit yet
            self.refit()
        self.n_exploit += 1
        return self.cache[i]


class NucNormPlanPolicy(NucNormPolicy):
    """As :class:`NucNormPolicy`, but one assortment for everyone chosen before the type arrives."""

    kind = "nuc-norm-plan"

    def _update_cache(self):
        mu_hat = estimate_mu(self.log, self.m)
        sol = plan_assortment(self.W, self.theta_hat, mu_hat, self.K)
        self.plan = sol.S if sol.S else (int(np.argmax(mu_hat @ self.theta_hat)),)

    def step(self, instance, t, i, rng):
        if self.should_explore(t) or self.theta_hat is None and len(self.log) == 0:
            S = sample_uniform_assortment(self.n, self.K, rng)
            # type is revealed only after the set is fixed
            j = sample_choice(instance.theta_star[i], S, rng)
            self.log.append(i, S, j, t)
            self.n_explore += 1
            self._maybe_refit_after_explore()
            return S
        if len(self.log) != self.last_refit_size:
            self.refit()
        self.n_exploit += 1
        return self.plan


class StructureIgnorantPolicy(Policy):
    """Independent explore-then-exploit MNL learner per type; no data crosses types.

    Type i explores while its own observation count is at most
    ``c * n * log(t_i)``, with ``t_i`` the number of arrivals of type i.
    """

    kind = "structure-ignorant"

    def __init__(self, instance, config):
        super().__init__(instance, config)
        self.logs = [ObservationLog(capacity=16) for _ in range(self.m)]
        self.arrivals = np.zeros(self.m, dtype=np.int64)
        self.theta = np.zeros((self.m, self.n))
        self.fit_size = np.zeros(self.m, dtype=np.int64)
        self.cache: list = [None] * self.m

    def _fit(self, i):
        lg = self.logs[i]
        self.theta[i], _, _ = fit_mnl(lg.items, lg.chosen_pos, self.n, self.config.ridge,
                                      theta0=self.theta[i])
        self.fit_size[i] = len(lg)
        self.cache[i] = _exploit_set(self.W[i], self.theta[i], self.K)
        self.n_refit += 1

    def step(self, instance, t, i, rng):
        self.arrivals[i] += 1
        lg = self.logs[i]
        c = self.config
        if len(lg) <= c.baseline_explore_constant * self.n * log(self.arrivals[i]):
            S = self._explore(instance, i, rng, lg, t)
            if c.faithful or len(lg) >= c.refit_growth * max(self.fit_size[i], 1):
                self._fit(i)
            return S
        if self.cache[i] is None or len(lg) != self.fit_size[i]:
            self._fit(i)
        self.n_exploit += 1
        return self.cache[i]


class ContextIgnorantPolicy(Policy):
    """Single MNL model for the whole population, global explore-then-exploit.

    Exploit uses the arriving type's revenue row with the shared preference vector.
    """

    kind = "context-ignorant"

    def __init__(self, instance, config):
        super().__init__(instance, config)
        self.log = ObservationLog()
        self.theta: Optional[np.ndarray] = None
        self.fit_size = 0
        self.cache: list = []

    def _fit(self):
        theta0 = self.theta if self.theta is not None else None
        self.theta, _, _ = fit_mnl(self.log.items, self.log.chosen_pos, self.n, self.config.ridge,
                                   theta0=theta0)
        self.fit_size = len(self.log)
        self.cache = [_exploit_set(self.W[i], self.theta, self.K) for i in range(self.m)]
        self.n_refit += 1

    def step(self, instance, t, i, rng):
        c = self.config
        if len(self.log) <= c.baseline_explore_constant * self.n * log(t):
            S = self._explore(instance, i, rng, self.log, t)
            if c.faithful or len(self.log) >= c.refit_growth * max(self.fit_size, 1):
                self._fit()
            return S
        if self.theta is None or len(self.log) != self.fit_size:
            self._fit()
        self.n_exploit += 1
        return self.cache[i]


_POLICY_CLASSES = {
    "oracle": OraclePolicy,
    "nuc-norm": NucNormPolicy,
    "nuc-norm-plan": NucNormPlanPolicy,
    "structure-ignorant": StructureIgnorantPolicy,
    "context-ignorant": ContextIgnorantPolicy,
}


def make_policy(instance: Instance, config: PolicyConfig) -> Policy:
    return _POLICY_CLASSES[config.validate().kind](instance, config)


def _step_with(kind, state, instance, t, rng, i):
    if state is None or state.kind != kind:
        raise InvalidInputError(f"expected a {kind} policy state")
    if t < 1:
        raise InvalidInputError("t starts at 1")
    if i is None:
        i = int(rng.choice(instance.m, p=instance.mu_star))
    return state.step(instance, t, i, rng), state


def nucnorm_step(state: NucNormPolicy, instance, t, rng, i=None):
    """One round of the structure-aware policy; returns (assortment, state)."""
    return _step_with("nuc-norm", state, instance, t, rng, i)


def nucnorm_plan_step(state: NucNormPlanPolicy, instance, t, rng, i=None):
    return _step_with("nuc-norm-plan", state, instance, t, rng, i)


def structure_ignorant_step(state: StructureIgnorantPolicy, instance, t, rng, i=None):
    return _step_with("structure-ignorant", state, instance, t, rng, i)


def context_ignorant_step(state: ContextIgnorantPolicy, instance, t, rng, i=None):
    return _step_with("context-ignorant", state, instance, t, rng, i)


# -- regret ---------------------------------------------------------------------

@dataclass
class RegretTrace:
    policy: str
    replicate: int
    regret_step: np.ndarray
    counters: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.regret_step)

    @property
    def regret_cum(self) -> np.ndarray:
        return np.cumsum(self.regret_step)


class _RegretTable:
    """Expected-revenue shortfall of an assortment for a type, memoized per (type, set)."""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.opt = np.array([optimal_assortment(instance.W[i], instance.theta_star[i], instance.K).value
                             for i in range(instance.m)])
        self._memo: dict = {}

    def __call__(self, i, S):
        key = (i, S)
        v = self._memo.get(key)
        if v is None:
            inst = self.instance
            v = max(0.0, self.opt[i] - expected_revenue(S, inst.W[i], inst.theta_star[i]))
            if len(self._memo) < 1_000_000:
                self._memo[key] = v
        return v


def draw_arrivals(instance: Instance, T: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(instance.m, size=T, p=instance.mu_star)


def config_hash(payload) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def simulate(instance: Instance, config: PolicyConfig, arrivals: np.ndarray,
             rng: np.random.Generator, replicate: int = 0,
             checkpoint_path: Optional[str] = None, checkpoint_key: Optional[str] = None,
             checkpoint_every: int = 0) -> RegretTrace:
    """Run one policy over the arrival sequence and record its expected regret per round.

    With ``checkpoint_path``, state is dumped on interruption (and every
    ``checkpoint_every`` rounds) and a matching dump is resumed on start.
    """
    T = len(arrivals)
    regret = np.zeros(T)
    explored = np.zeros(T, dtype=bool)
    policy = make_policy(instance, config)
    start = 1
    key = (checkpoint_key, replicate, config.kind)
    if checkpoint_path and os.path.exists(checkpoint_path):
        with open(checkpoint_path, "rb") as fh:
            saved = pickle.load(fh)
        if saved["key"] == key and len(saved["regret"]) == T:
            policy, regret, start = saved["policy"], saved["regret"], saved["t"] + 1
            explored = saved["explored"]
            rng.bit_generator.state = saved["rng"]

    def dump(t_done):
        tmp = checkpoint_path + ".tmp"
        with open(tmp, "wb") as fh:
            pickle.dump({"key": key, "t": t_done, "policy": policy, "regret": regret,
                         "explored": explored, "rng": rng.bit_generator.state}, fh)
        os.replace(tmp, checkpoint_path)

    table = _RegretTable(instance)
    t = start - 1
    try:
        for t in range(start, T + 1):
            i = int(arrivals[t - 1])
            before = policy.n_explore
            S = policy.step(instance, t, i, rng)
            regret[t - 1] = table(i, S)
            explored[t - 1] = policy.n_explore != before
            if checkpoint_path and checkpoint_every and t % checkpoint_every == 0:
                dump(t)
    except KeyboardInterrupt:
        if checkpoint_path:
            dump(t - 1)
        raise
    if checkpoint_path and os.path.exists(checkpoint_path):
        os.remove(checkpoint_path)
    counters = {"explore": policy.n_explore, "exploit": policy.n_exploit, "refit": policy.n_refit,
                "explored": explored}
    if hasattr(policy, "refit_sizes"):
        counters["refit_sizes"] = list(policy.refit_sizes)
    return RegretTrace(config.kind, replicate, regret, counters)


def traces_to_csv(traces, path_or_file, stride: int = 1):
    """``policy,replicate,t,regret_step,regret_cum`` rows in canonical order."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        fh.write("policy,replicate,t,regret_step,regret_cum\n")
        for tr in sorted(traces, key=lambda x: (x.policy, x.replicate)):
            cum = tr.regret_cum
            for t in range(stride - 1, tr.T, stride) if stride > 1 else range(tr.T):
                fh.write(f"{tr.policy},{tr.replicate},{t + 1},{float(tr.regret_step[t])!r},{float(cum[t])!r}\n")
    finally:
        if own:
            fh.close()


def read_traces_csv(path) -> list[RegretTrace]:
    import csv

    rows: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["policy", "replicate", "t", "regret_step", "regret_cum"]:
            raise InvalidInputError(f"unexpected header {reader.fieldnames}")
        for row in reader:
            rows.setdefault((row["policy"], int(row["replicate"])), []).append(float(row["regret_step"]))
    return [RegretTrace(p, r, np.array(v)) for (p, r), v in sorted(rows.items())]
