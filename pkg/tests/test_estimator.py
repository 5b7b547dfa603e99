import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assortmax.choice import NO_PURCHASE, Instance, InvalidInputError, ObservationLog, nll, sample_observations
from assortmax.estimator import (FactorPair, FgdConfig, estimate_mu, factored_gradients, factored_objective,
                                 fgd_initialize, fgd_solve, per_type_mle, pooled_mle, practical_lambda,
                                 read_factors, read_theta_csv, rmse, tail_singular_sum, write_factors,
                                 write_theta_csv)
from assortmax.simlab import generate_instance

from oracles import central_difference, nll_loop, nuclear_norm, prox_grad_nuclear
from test_choice import as_tuples, random_log


def lowrank_log(seed, m, n, r, K, N):
    rng = np.random.default_rng(seed)
    inst = generate_instance(m, n, r, K, rng)
    return inst, sample_observations(inst, N, rng)


# -- objective and gradients -------------------------------------------------------

def test_objective_zero_factor():
    rng = np.random.default_rng(0)
    log_ = random_log(rng, 4, 5, 30)
    U, V = np.zeros((4, 2)), rng.normal(size=(5, 2))
    lam = 0.3
    expected = nll(np.zeros((4, 5)), log_) + 0.5 * lam * np.sum(V * V)
    assert factored_objective(U, V, lam, log_) == pytest.approx(expected, abs=1e-14)


def test_objective_lambda_zero_matches_nll():
    rng = np.random.default_rng(1)
    log_ = random_log(rng, 4, 5, 30, vary=True)
    U, V = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    assert factored_objective(U, V, 0.0, log_) == pytest.approx(nll(U @ V.T, log_), abs=1e-12)


def test_objective_matches_dense_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        log_ = random_log(rng, 5, 6, 40, K=3, vary=True)
        U, V = rng.normal(size=(5, 2)), rng.normal(size=(6, 2))
        lam = rng.random()
        ref = nll_loop(U @ V.T, as_tuples(log_)) + 0.5 * lam * (np.sum(U ** 2) + np.sum(V ** 2))
        assert factored_objective(U, V, lam, log_) == pytest.approx(ref, abs=1e-10)


def test_factored_gradients_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m, n, r = rng.integers(2, 9, size=3)
        r = min(r, m, n)
        log_ = random_log(rng, m, n, 40, K=min(3, n), vary=True)
        U, V = rng.normal(size=(m, r)), rng.normal(size=(n, r))
        lam = rng.random()
        gU, gV = factored_gradients(U, V, lam, log_)
        fdU = central_difference(lambda X: factored_objective(X, V, lam, log_), U)
        fdV = central_difference(lambda X: factored_objective(U, X, lam, log_), V)
        for g, fd in ((gU, fdU), (gV, fdV)):
            assert np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12) <= 1e-6


def test_gradient_of_unobserved_type_is_pure_ridge():
    log_ = ObservationLog()
    log_.append(0, [0, 1], 1)
    log_.append(0, [2], NO_PURCHASE)
    rng = np.random.default_rng(4)
    U, V = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    gU, _ = factored_gradients(U, V, 0.25, log_)
    np.testing.assert_array_equal(gU[1:], 0.25 * U[1:])


def test_objective_rejects_empty_log():
    with pytest.raises(InvalidInputError):
        factored_objective(np.zeros((2, 1)), np.zeros((2, 1)), 0.1, ObservationLog())


# -- equivalence of the factored and nuclear-norm problems --------------------------

def test_svd_factorization_attains_nuclear_objective():
    rng = np.random.default_rng(5)
    for _ in range(30):
        m, n, r = 6, 7, int(rng.integers(1, 5))
        log_ = random_log(rng, m, n, 30, K=3)
        theta = rng.normal(size=(m, r)) @ rng.normal(size=(r, n))
        u, s, vt = np.linalg.svd(theta, full_matrices=False)
        U, V = u[:, :r] * np.sqrt(s[:r]), vt[:r].T * np.sqrt(s[:r])
        lam = rng.random()
        lhs = factored_objective(U, V, lam, log_)
        assert lhs == pytest.approx(nll(theta, log_) + lam * nuclear_norm(theta), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
def test_factored_objective_upper_bounds_nuclear(seed, lam):
    rng = np.random.default_rng(seed)
    log_ = random_log(rng, 5, 6, 20, K=2)
    U, V = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))
    theta = U @ V.T
    assert nll(theta, log_) + lam * nuclear_norm(theta) <= factored_objective(U, V, lam, log_) + 1e-10


# -- initialization ---------------------------------------------------------------

def test_initialization_is_balanced():
    _, log_ = lowrank_log(6, 12, 10, 2, 4, 500)
    init = fgd_initialize(log_, 0.05, 4, 12, 10)
    np.testing.assert_allclose(init.U.T @ init.U, init.V.T @ init.V, atol=1e-10)


def test_initialization_rank_one_gradient():
    # one type, one item ever offered: -grad L(0) has a single nonzero entry
    log_ = ObservationLog()
    for j in (0, 0, NO_PURCHASE):
        log_.append(0, [0], j)
    init = fgd_initialize(log_, 0.1, 1, 3, 4)
    theta0 = init.theta
    assert np.count_nonzero(np.abs(theta0) > 1e-14) == 1
    assert theta0[0, 0] > 0


def test_initialization_permutation_equivariant():
    rng = np.random.default_rng(7)
    log_ = random_log(rng, 5, 6, 200, K=3)
    swap = np.array([0, 2, 1, 3, 4])
    log_sw = ObservationLog.from_arrays(swap[log_.types], log_.items, log_.choices)
    a = fgd_initialize(log_, 0.05, 2, 5, 6)
    b = fgd_initialize(log_sw, 0.05, 2, 5, 6)
    # the normalizer depends on type 0 only, which the swap leaves alone
    np.testing.assert_allclose(b.U, a.U[swap], atol=1e-10)
    np.testing.assert_allclose(b.V, a.V, atol=1e-10)


def test_initialization_scale_fallback_warns():
    # lam = 0 and no observation of (type 0, item 0) makes the normalizer vanish
    log_ = ObservationLog()
    log_.append(1, [1], 1)
    with pytest.warns(RuntimeWarning):
        init = fgd_initialize(log_, 0.0, 1, 2, 2)
    assert np.all(np.isfinite(init.U))


# -- solver -----------------------------------------------------------------------

def test_fgd_objective_nonincreasing_and_consistent():
    _, log_ = lowrank_log(8, 15, 15, 2, 5, 2000)
    cfg = FgdConfig(r_tilde=4, lam=practical_lambda(5, 15, 15, 2000), max_outer_iters=200)
    est = fgd_solve(log_, cfg, 15, 15)
    hist = np.array(est.diagnostics["history"])
    assert np.all(np.diff(hist) <= 0)
    U, V = est.factors.U, est.factors.V
    assert factored_objective(U, V, cfg.lam, log_) == pytest.approx(est.diagnostics["objective"], abs=1e-12)
    assert est.mu_hat.sum() == pytest.approx(1.0)


def test_fgd_beats_zero_baseline():
    inst, log_ = lowrank_log(9, 20, 20, 1, 5, 4000)
    cfg = FgdConfig(r_tilde=2, lam=practical_lambda(5, 20, 20, 4000))
    est = fgd_solve(log_, cfg, 20, 20)
    assert rmse(est.theta_hat, inst.theta_star) < rmse(np.zeros((20, 20)), inst.theta_star)


def test_fgd_stationarity_at_convergence():
    _, log_ = lowrank_log(10, 8, 8, 2, 3, 400)
    cfg = FgdConfig(r_tilde=4, lam=0.05, tol=1e-14, max_outer_iters=20000)
    est = fgd_solve(log_, cfg, 8, 8)
    U, V = est.factors.U, est.factors.V
    gU, gV = factored_gradients(U, V, cfg.lam, log_)
    gnorm = np.sqrt(np.sum(gU ** 2) + np.sum(gV ** 2))
    assert gnorm <= 1e-4 * (1 + np.sqrt(np.sum(U ** 2) + np.sum(V ** 2)))


def test_fgd_matches_convex_solver_small():
    rng = np.random.default_rng(11)
    m = n = 5
    log_ = random_log(rng, m, n, 120, K=3)
    lam = 0.05
    est = fgd_solve(log_, FgdConfig(r_tilde=5, lam=lam, tol=1e-14, max_outer_iters=20000), m, n)
    _, ref = prox_grad_nuclear(as_tuples(log_), m, n, lam)
    assert abs(est.diagnostics["objective"] - ref) / ref <= 1e-4


def test_fgd_warm_start_never_worse():
    _, log_ = lowrank_log(12, 10, 10, 2, 3, 600)
    cfg = FgdConfig(r_tilde=4, lam=0.03, max_outer_iters=5)
    first = fgd_solve(log_, cfg, 10, 10)
    second = fgd_solve(log_, cfg, 10, 10, warm_start=first.factors)
    assert second.diagnostics["objective"] <= first.diagnostics["objective"] + 1e-15


def test_fgd_clamp_bounds_entries():
    _, log_ = lowrank_log(13, 6, 6, 2, 3, 300)
    est = fgd_solve(log_, FgdConfig(r_tilde=2, lam=0.01, clamp_alpha=1.0), 6, 6)
    assert np.abs(est.theta_hat).max() <= 1.0 / 6 + 1e-15


@pytest.mark.parametrize("kw", [dict(r_tilde=0), dict(r_tilde=7), dict(beta_dec=1.0), dict(tol=0.0),
                                dict(lam=-1.0)])
def test_config_validation(kw):
    args = dict(r_tilde=2, lam=0.1)
    args.update(kw)
    with pytest.raises(InvalidInputError):
        FgdConfig(**args).validate(6, 6)


def test_fgd_rejects_empty_log():
    with pytest.raises(InvalidInputError):
        fgd_solve(ObservationLog(), FgdConfig(r_tilde=1, lam=0.1), 2, 2)


def test_practical_lambda_formula():
    K, m, n, N = 10, 100, 100, 10_000
    d = m + n
    assert practical_lambda(K, m, n, N) == pytest.approx(np.sqrt(K * d * np.log(d) / (m * n * N)) / 8, rel=1e-15)
    assert practical_lambda(K, m, n, N, "max") < practical_lambda(K, m, n, N)


# -- baselines ---------------------------------------------------------------------

def test_per_type_mle_single_rejection_is_negative():
    log_ = ObservationLog()
    log_.append(0, [2], NO_PURCHASE)
    est = per_type_mle(log_, 2, 3)
    assert est.theta_hat[0, 2] < 0
    np.testing.assert_array_equal(est.theta_hat[1], 0.0)
    assert est.theta_hat[0, 0] == 0.0


def test_per_type_mle_consistency():
    rng = np.random.default_rng(14)
    theta = np.array([[0.4, -0.3, 0.8, 0.0, -0.6]])
    inst = Instance(K=3, W=np.ones((1, 5)), mu_star=[1.0], theta_star=theta)
    log_ = sample_observations(inst, 100_000, rng)
    est = per_type_mle(log_, 1, 5)
    assert np.abs(est.theta_hat - theta).max() < 0.1


def test_per_type_mle_improves_on_zero():
    rng = np.random.default_rng(15)
    log_ = random_log(rng, 4, 6, 80, K=3)
    est = per_type_mle(log_, 4, 6)
    for i in range(4):
        sub = log_.select(log_.types == i)
        if len(sub):
            one = np.zeros((1, 6))
            sub0 = ObservationLog.from_arrays(np.zeros(len(sub), int), sub.items, sub.choices)
            assert nll(est.theta_hat[i:i + 1], sub0) <= nll(one, sub0) + 1e-12


def test_pooled_mle_recovers_shared_row():
    rng = np.random.default_rng(16)
    row = np.array([0.5, -0.2, 0.3, -0.7, 0.1])
    inst = Instance(K=3, W=np.ones((3, 5)), mu_star=np.full(3, 1 / 3), theta_star=np.tile(row, (3, 1)))
    log_ = sample_observations(inst, 100_000, rng)
    assert np.abs(pooled_mle(log_, 5) - row).max() < 0.1


def test_pooled_mle_single_observation_and_empty():
    log_ = ObservationLog()
    log_.append(2, [0, 1], 1)
    collapsed = ObservationLog.from_arrays([0], log_.items, log_.choices)
    np.testing.assert_allclose(pooled_mle(log_, 3), per_type_mle(collapsed, 1, 3).theta_hat[0])
    np.testing.assert_array_equal(pooled_mle(ObservationLog(), 4), np.zeros(4))


# -- type frequencies and diagnostics ----------------------------------------------

def test_estimate_mu_examples():
    log_ = ObservationLog()
    for i in (0, 0, 1):
        log_.append(i, [0], 0)
    np.testing.assert_allclose(estimate_mu(log_, 3), [2 / 3, 1 / 3, 0.0])
    log_ = ObservationLog.from_arrays([1, 1], [[0], [0]], [0, 0])
    np.testing.assert_array_equal(estimate_mu(log_, 3), [0.0, 1.0, 0.0])
    with pytest.raises(InvalidInputError):
        estimate_mu(ObservationLog(), 3)


def test_rmse_examples():
    rng = np.random.default_rng(17)
    A = rng.normal(size=(4, 5))
    assert rmse(A, A) == 0.0
    assert rmse(A + 0.3, A) == pytest.approx(0.3, abs=1e-15)
    B = rng.normal(size=(4, 5))
    assert rmse(A, B) == pytest.approx(np.sqrt(np.mean((A - B) ** 2)), abs=1e-15)


def test_tail_singular_sum_examples():
    assert tail_singular_sum(np.diag([3.0, 2.0, 1.0]), 1) == pytest.approx(3.0, abs=1e-14)
    rng = np.random.default_rng(18)
    low = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 5))
    assert tail_singular_sum(low, 2) == pytest.approx(0.0, abs=1e-12)
    M = rng.normal(size=(6, 5))
    assert tail_singular_sum(M, 2) == pytest.approx(np.linalg.svd(M, compute_uv=False)[2:].sum(), abs=1e-10)


# -- serialization -----------------------------------------------------------------

def test_theta_csv_round_trip(tmp_path):
    theta = np.random.default_rng(19).normal(size=(3, 4))
    path = tmp_path / "theta.csv"
    write_theta_csv(theta, path)
    assert path.read_text().splitlines()[0] == "type,item,value"
    np.testing.assert_array_equal(read_theta_csv(path, 3, 4), theta)
    with pytest.raises(InvalidInputError):
        read_theta_csv(path, 2, 4)


def test_factor_file_round_trip(tmp_path):
    rng = np.random.default_rng(20)
    fp = FactorPair(rng.normal(size=(3, 2)), rng.normal(size=(5, 2)))
    path = tmp_path / "factors.txt"
    write_factors(fp, 0.125, path)
    assert path.read_text().splitlines()[0] == "3 5 2 0.125"
    back, lam = read_factors(path)
    np.testing.assert_array_equal(back.U, fp.U)
    np.testing.assert_array_equal(back.V, fp.V)
    assert lam == 0.125
