import numpy as np
import pytest
from scipy.optimize import minimize
from sklearn.base import clone

from dd4dvar import (BackgroundCovariance, ConvergenceError, DDFourDVar,
                     GlobalFourDVar, ObservationCovariance, asm_sweep,
                     build_advection_model, build_domain, build_interpolation,
                     conjugate_gradient, decompose, run_background,
                     synthesize_observations, uniform_locations)


def make_problem(n_p=12, n=5, n_sub=2, n_t=2, delta=2, n_obs=5, seed=1,
                 noise=0.4, locations=None, t_max=1.0, dx_corr=1.0):
    dom = build_domain(0, 1, 0, t_max, n_p, n)
    dec = decompose(dom, n_sub, n_t, delta)
    model = build_advection_model(dom, 0.5 * dom.dx / dom.dt)
    cov = BackgroundCovariance.build(n_p, dx_corr, 0.5)
    r_cov = ObservationCovariance(0.5)
    if locations is None:
        locations = uniform_locations(dom, n_obs)
    op = build_interpolation(dom, locations)
    rng = np.random.default_rng(seed)
    truth0 = np.exp(-((dom.nodes - 0.4) / 0.15) ** 2)
    truth = run_background(model, truth0)
    obs = synthesize_observations(truth, op, noise, seed)
    u0 = truth0 + 0.3 * np.exp(-((dom.nodes - 0.6) / 0.2) ** 2)
    return dom, dec, model, cov, r_cov, op, obs, u0


def fit_pair(*args, **overrides):
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(*args)
    glob = GlobalFourDVar(model, cov, r_cov, op).fit(u0, obs.values)
    dd = DDFourDVar(dec, model, cov, r_cov, op, **overrides).fit(u0, obs.values)
    return glob, dd


# ---------------------------------------------------------------------------
# conjugate gradient

def test_cg_solves_spd_system():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((10, 10))
    a = a.T @ a + np.eye(10)
    b = rng.standard_normal(10)
    x, iters, res = conjugate_gradient(a, b, tol=1e-12)
    assert np.abs(x - np.linalg.solve(a, b)).max() < 1e-9
    assert res <= 1e-12 * max(1.0, np.linalg.norm(b))


def test_cg_raises_when_budget_exhausted():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 30))
    a = a.T @ a + 1e-8 * np.eye(30)
    b = rng.standard_normal(30)
    with pytest.raises(ConvergenceError):
        conjugate_gradient(a, b, tol=1e-14, max_iter=2)


# ---------------------------------------------------------------------------
# global solver

def test_global_consistent_observations_leave_background():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(noise=0.0)
    u_m = run_background(model, u0)
    y = op.matrix @ u_m
    est = GlobalFourDVar(model, cov, r_cov, op).fit(u0, y)
    assert np.abs(est.w_).max() < 1e-12
    assert np.abs(est.analysis_ - u_m).max() < 1e-12
    assert est.cost_ == pytest.approx(0.0, abs=1e-20)


def test_global_without_observations_returns_background():
    dom = build_domain(0, 1, 0, 1, 10, 4)
    model = build_advection_model(dom, 0.4 * dom.dx / dom.dt)
    cov = BackgroundCovariance.build(10, 1.0, 0.5)
    r_cov = ObservationCovariance(0.5)
    op = build_interpolation(dom, np.empty(0))
    u0 = np.linspace(0, 1, 10)
    est = GlobalFourDVar(model, cov, r_cov, op).fit(u0, np.empty((0, 4)))
    assert np.array_equal(est.analysis_, run_background(model, u0))


def test_global_matches_independent_minimizer():
    # 8-node, 2-instant toy solved by quasi-Newton descent on the functional
    # evaluated from first principles
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(
        n_p=8, n=2, n_sub=1, n_t=1, delta=0, n_obs=3, noise=0.3)
    est = GlobalFourDVar(model, cov, r_cov, op).fit(u0, obs.values)

    u_m = run_background(model, u0)
    v = cov.factor
    h = op.matrix

    def functional(w):
        traj = u_m + (v @ w)[:, None]
        misfit = h @ traj - obs.values
        return 0.5 * (w @ w + (misfit * misfit).sum() / 0.5)

    res = minimize(functional, np.zeros(8), method="BFGS",
                   options={"gtol": 1e-12, "maxiter": 500})
    assert np.abs(res.x - est.w_).max() < 1e-6
    assert est.cost_ == pytest.approx(res.fun, abs=1e-10)


# ---------------------------------------------------------------------------
# local functional and gradient

def test_local_cost_zero_at_background_with_consistent_data():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(noise=0.0)
    u_m = run_background(model, u0)
    y = op.matrix @ u_m
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, y)
    zero_w = {i: np.zeros(len(dec.subdomain_nodes[i])) for i in range(dec.n_sub)}
    for (i, k), problem in problems.items():
        neighbor = {j: zero_w[j] for j in problem.couplings}
        assert problem.cost(np.zeros(problem.n_loc), neighbor) \
            == pytest.approx(0.0, abs=1e-18)


def test_local_cost_has_no_overlap_term_when_delta_zero():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(delta=0)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    rng = np.random.default_rng(3)
    for problem in problems.values():
        assert problem.couplings == {}
        w = rng.standard_normal(problem.n_loc)
        big = {j: 1e6 * np.ones(1) for j in ()}  # nothing to pass
        assert problem.cost(w, big) == problem.cost(w, None)


def test_single_domain_local_cost_equals_global_cost():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(
        n_p=10, n=4, n_sub=1, n_t=1, delta=0)
    glob = GlobalFourDVar(model, cov, r_cov, op).fit(u0, obs.values)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    problem = problems[(0, 0)]
    rng = np.random.default_rng(4)
    for _ in range(5):
        w = rng.standard_normal(10)
        trajectory = glob.background_ + (cov.factor @ w)[:, None]
        assert problem.cost(w) == pytest.approx(glob.cost_of(trajectory),
                                                rel=1e-12)


def test_gradient_matches_finite_differences():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem()
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    rng = np.random.default_rng(12)
    keys = list(problems)
    for probe in range(20):
        i, k = keys[probe % len(keys)]
        problem = problems[(i, k)]
        w = rng.standard_normal(problem.n_loc)
        neighbor = {j: rng.standard_normal(len(dec.subdomain_nodes[j]))
                    for j in problem.couplings}
        grad = problem.gradient(w, neighbor)
        fd = np.empty_like(grad)
        for m in range(len(w)):
            h = 1e-6 * max(1.0, abs(w[m]))
            up, down = w.copy(), w.copy()
            up[m] += h
            down[m] -= h
            fd[m] = (problem.cost(up, neighbor) - problem.cost(down, neighbor)) / (2 * h)
        denom = max(np.linalg.norm(grad), 1e-12)
        assert np.linalg.norm(fd - grad) / denom < 1e-5


def test_gradient_identity_term_only_without_data_or_neighbors():
    # all observations sit in the second subdomain; delta = 0 removes coupling
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(
        delta=0, locations=[0.8, 0.9], n_obs=2)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    problem = problems[(0, 0)]
    assert problem.data_matrix.shape[0] == 0
    rng = np.random.default_rng(5)
    w = rng.standard_normal(problem.n_loc)
    assert problem.gradient(w, {}) == pytest.approx(w)


def test_gradient_vanishes_at_fitted_solution():
    glob, dd = fit_pair(r_bar=60)   # enough sweeps to reach the fixed point
    dec = dd.decomposition
    state = dd.state_
    # rebuild the problems the final iterate solved and check optimality
    problems = {}
    for k in range(dec.n_t):
        for i in range(dec.n_sub):
            problems[(i, k)] = dd._build_problem(
                i, k, state.backgrounds[(i, k)], dd.background_global_)
    for (i, k), problem in problems.items():
        neighbor = {j: state.increments[(j, k)] for j in problem.couplings}
        grad = problem.gradient(state.increments[(i, k)], neighbor)
        assert np.linalg.norm(grad) < 1e-6


# ---------------------------------------------------------------------------
# additive Schwarz sweeps

def test_asm_single_subdomain_matches_direct_solve():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(
        n_p=10, n=4, n_sub=1, n_t=1, delta=0)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problem = dd.local_problems(u0, obs.values)[(0, 0)]
    w = {0: np.zeros(problem.n_loc)}
    w, stats = asm_sweep({0: problem}, w, cg_tol=1e-12)
    direct = np.linalg.solve(problem.system_matrix, problem.rhs_core)
    assert np.abs(w[0] - direct).max() < 1e-9


def test_asm_decoupled_subdomains_converge_in_one_sweep():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(delta=0)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    slab = {i: problems[(i, 0)] for i in range(dec.n_sub)}
    w = {i: np.zeros(slab[i].n_loc) for i in slab}
    w1, _ = asm_sweep(slab, w, cg_tol=1e-12)
    w2, _ = asm_sweep(slab, w1, cg_tol=1e-12)
    for i in slab:
        assert np.abs(w1[i] - w2[i]).max() < 1e-10


def test_asm_fixed_point_matches_monolithic_solve():
    # 8-node, 2-subdomain, delta=2 toy: the coupled optimality system is
    # assembled densely and solved directly as the oracle
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(
        n_p=8, n=3, n_sub=2, n_t=2, delta=2, n_obs=4, seed=2)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    for k in range(dec.n_t):
        slab = {i: problems[(i, k)] for i in range(dec.n_sub)}
        sizes = [slab[i].n_loc for i in range(dec.n_sub)]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = offsets[-1]
        big = np.zeros((total, total))
        rhs = np.zeros(total)
        for i in range(dec.n_sub):
            sl = slice(offsets[i], offsets[i + 1])
            big[sl, sl] = slab[i].system_matrix
            rhs[sl] = slab[i].rhs_core
            for j, (b_hat, source, target) in slab[i].couplings.items():
                transfer = np.zeros((sizes[i], sizes[j]))
                transfer[target, source] = 1.0
                big[sl, offsets[j]:offsets[j + 1]] = slab[i].beta * b_hat @ transfer
        monolithic = np.linalg.solve(big, rhs)
        w = {i: np.zeros(sizes[i]) for i in range(dec.n_sub)}
        for _ in range(200):
            w, _ = asm_sweep(slab, w, cg_tol=1e-13)
        for i in range(dec.n_sub):
            got = w[i]
            want = monolithic[offsets[i]:offsets[i + 1]]
            assert np.abs(got - want).max() < 1e-8


def test_asm_iterates_contract_geometrically():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(
        n_p=8, n=3, n_sub=2, n_t=2, delta=2, n_obs=4, seed=2)
    dd = DDFourDVar(dec, model, cov, r_cov, op)
    problems = dd.local_problems(u0, obs.values)
    slab = {i: problems[(i, 0)] for i in range(2)}
    w = {i: np.zeros(slab[i].n_loc) for i in slab}
    gaps = []
    prev = w
    for _ in range(16):
        nxt, _ = asm_sweep(slab, prev, cg_tol=1e-13)
        gaps.append(max(np.abs(nxt[i] - prev[i]).max() for i in slab))
        prev = nxt
    assert all(gaps[t + 1] < gaps[t] for t in range(len(gaps) - 1))
    assert gaps[-1] < 1e-4 * gaps[0]


# ---------------------------------------------------------------------------
# outer loop and full solver

def test_degenerate_decomposition_reproduces_global():
    dom = build_domain(0, 1, 0, 0.5, 64, 5)
    dec = decompose(dom, 1, 1, 0)
    model = build_advection_model(dom, 0.5 * dom.dx / dom.dt)
    cov = BackgroundCovariance.build(64, 1.0, 0.5)
    r_cov = ObservationCovariance(0.5)
    op = build_interpolation(dom, uniform_locations(dom, 16))
    truth0 = np.exp(-((dom.nodes - 0.4) / 0.1) ** 2)
    truth = run_background(model, truth0)
    obs = synthesize_observations(truth, op, np.sqrt(0.5), 3)
    u0 = truth0 + 0.2 * np.exp(-((dom.nodes - 0.6) / 0.15) ** 2)
    glob = GlobalFourDVar(model, cov, r_cov, op).fit(u0, obs.values)
    dd = DDFourDVar(dec, model, cov, r_cov, op).fit(u0, obs.values)
    rel = np.linalg.norm(glob.analysis_ - dd.analysis_) / np.linalg.norm(glob.analysis_)
    assert rel < 1e-8


def test_exact_data_keeps_background_through_outer_loop():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(noise=0.0)
    u_m = run_background(model, u0)
    y = op.matrix @ u_m
    dd = DDFourDVar(dec, model, cov, r_cov, op).fit(u0, y)
    assert np.abs(dd.analysis_ - u_m).max() < 1e-9
    assert dd.cost_ == pytest.approx(0.0, abs=1e-16)


@pytest.mark.parametrize("noise,window,chain", [
    (0.4, "full", False), (0.0, "full", False),
    (0.4, "cumulative", True), (0.0, "cumulative", True),
    (0.4, "slab", False), (0.4, "slab", True),
])
def test_cost_history_is_monotone(noise, window, chain):
    glob, dd = fit_pair(12, 5, 2, 2, 2, 5, 1, noise,
                        window=window, chain_slabs=chain)
    hist = dd.j_history_
    assert all(hist[t + 1] <= hist[t] + 1e-12 for t in range(len(hist) - 1))


def test_unguarded_outer_loop_converges_below_tolerance():
    # without the monotone safeguard the raw fixed-point iteration still
    # converges: the update norm falls below outer_tol within n_stop
    glob, dd = fit_pair(12, 5, 2, 2, 2, 5, 1, 0.4,
                        window="cumulative", chain_slabs=True,
                        monotone_guard=False, n_stop=40, outer_tol=1e-6)
    assert dd.update_norms_[-1] < 1e-6
    assert dd.n_outer_ < 40


def test_chained_predictor_mode_converges():
    glob, dd = fit_pair(12, 5, 2, 2, 2, 5, 1, 0.4,
                        window="cumulative", chain_slabs=True, n_stop=30)
    assert dd.n_outer_ >= 1
    assert np.isfinite(dd.cost_)
    # chaining hands each slab the predecessor's corrected final state
    state = dd.state_
    dec = dd.decomposition
    for i in range(dec.n_sub):
        start = state.backgrounds[(i, 1)][:, 0]
        inherited = state.analyses[(i, 0)][:, -1] + dd.model_perturbation
        assert np.abs(start - inherited).max() < 1e-12


def test_update_identity_holds_exactly():
    glob, dd = fit_pair()
    dec = dd.decomposition
    state = dd.state_
    for (i, k), analysis in state.analyses.items():
        v_i = dd.background_covariance.local_factor(dec, i)
        reconstructed = state.backgrounds[(i, k)] \
            + (v_i @ state.increments[(i, k)])[:, None]
        assert np.array_equal(reconstructed, analysis)


def test_system_matrices_symmetric_with_unit_eigenvalue_floor():
    for kwargs in [dict(), dict(n_p=16, n_sub=4, n_obs=6),
                   dict(delta=0, locations=[0.8, 0.9], n_obs=2),
                   dict(n_p=64, n=5, n_sub=4, delta=4, n_obs=12)]:
        dom, dec, model, cov, r_cov, op, obs, u0 = make_problem(**kwargs)
        dd = DDFourDVar(dec, model, cov, r_cov, op)
        problems = dd.local_problems(u0, obs.values)
        for problem in problems.values():
            a = problem.system_matrix
            assert np.abs(a - a.T).max() < 1e-12
            assert np.linalg.eigvalsh(a)[0] >= 1.0 - 1e-10


def test_toy_regression_anchor():
    # frozen gap between the direct and the DD analyses on the 8-node toy;
    # guards against silent behavior drift
    glob, dd = fit_pair(8, 3, 2, 2, 2, 4, 2)
    gap = float(np.linalg.norm(glob.analysis_ - dd.analysis_))
    assert gap == pytest.approx(0.25311466537090327, abs=1e-8)


def test_swe_stacked_state_dd_matches_oracle_cost():
    from dd4dvar import build_swe_model, stack_state, verify_minimum_equality
    from dd4dvar.models import physical_nodes

    dom = build_domain(0, 1, 0, 1.0, 32, 5)
    dec = decompose(dom, 2, 2, 2)
    model = build_swe_model(dom, 0.05, 0.02)
    cov = BackgroundCovariance.build(32, 1.0, 0.5)
    r_cov = ObservationCovariance(0.5)
    op = build_interpolation(dom, uniform_locations(dom, 8))
    xp = physical_nodes(dom)
    truth0 = stack_state(np.exp(-((xp - 0.5) / 0.12) ** 2), np.zeros(16))
    truth = run_background(model, truth0)
    obs = synthesize_observations(truth, op, 0.3, 5)
    u0 = truth0 + stack_state(0.2 * np.exp(-((xp - 0.4) / 0.15) ** 2),
                              np.zeros(16))
    glob = GlobalFourDVar(model, cov, r_cov, op).fit(u0, obs.values)
    dd = DDFourDVar(dec, model, cov, r_cov, op).fit(u0, obs.values)
    report = verify_minimum_equality(glob, dd, tolerance=1e-3)
    assert report["passed"], report


def test_solver_parameter_validation():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem()
    for bad in (dict(cg_tol=2.0), dict(r_bar=0), dict(alpha=0.0),
                dict(outer_tol=0.0), dict(window="bogus")):
        dd = DDFourDVar(dec, model, cov, r_cov, op, **bad)
        with pytest.raises(ValueError):
            dd.fit(u0, obs.values)
    with pytest.raises(ValueError):
        GlobalFourDVar(model, cov, r_cov, op, alpha=-1.0).fit(u0, obs.values)


def test_estimators_follow_sklearn_protocol():
    dom, dec, model, cov, r_cov, op, obs, u0 = make_problem()
    dd = DDFourDVar(dec, model, cov, r_cov, op, r_bar=7, cg_tol=1e-9)
    params = dd.get_params(deep=False)
    assert params["r_bar"] == 7
    assert params["cg_tol"] == 1e-9
    cloned = clone(dd)
    assert cloned.get_params(deep=False)["r_bar"] == 7
    cloned.set_params(r_bar=3)
    assert cloned.r_bar == 3
    cloned.fit(u0, obs.values)
    assert hasattr(cloned, "analysis_")
    glob = GlobalFourDVar(model, cov, r_cov, op, alpha=2.0)
    assert clone(glob).get_params(deep=False)["alpha"] == 2.0
