"""Error-analysis harness: truncation errors, grid-refinement consistency,
perturbation stability, and condition-number estimates."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import svdvals

from .covariance import factor_covariance
from .models import compose_slab


# ---------------------------------------------------------------------------
# truncation errors

@dataclass(eq=False)
class TruncationReport:
    """Euclidean norms of the gaps between the global analysis, the DD
    iterate, and a reference model solution, per (subdomain, slab) block
    and globally."""

    e_model: dict = field(default_factory=dict)
    e_asm: dict = field(default_factory=dict)
    e_local: dict = field(default_factory=dict)
    e_global: float = 0.0


def compute_truncation_errors(oracle, state, decomp, reference=None):
    """Gap norms between the direct analysis ``oracle``, the DD state, and
    optionally a ``reference`` model trajectory (for the model-error terms).

    In this solver the local analysis is exactly the ASM update added to the
    refreshed background, so the ASM and local errors coincide and are both
    reported.
    """
    oracle = np.asarray(oracle, dtype=float)
    if oracle.shape != state.gathered.shape:
        raise ValueError(f"mismatched instance: oracle shape {oracle.shape} "
                         f"vs DD shape {state.gathered.shape}")
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.shape != oracle.shape:
            raise ValueError(f"mismatched instance: reference shape "
                             f"{reference.shape} vs {oracle.shape}")
    report = TruncationReport()
    for i, k in decomp.pairs():
        block = np.ix_(decomp.subdomain_nodes[i], decomp.slab_instants[k])
        local = state.analyses[(i, k)]
        gap = float(np.linalg.norm(oracle[block] - local))
        report.e_asm[(i, k)] = gap
        report.e_local[(i, k)] = gap
        if reference is not None:
            report.e_model[(i, k)] = float(
                np.linalg.norm(reference[block] - state.backgrounds[(i, k)]))
    report.e_global = float(np.linalg.norm(oracle - state.gathered))
    return report


# ---------------------------------------------------------------------------
# consistency sweep

@dataclass(eq=False)
class ConsistencyRow:
    d: int
    dx: float
    dt: float
    e_p: float
    e_p_predicted: float


def refine_config(config, d):
    """Config with both steps divided by ~d: n_p -> d n_p, n -> d(n-1)+1.

    Multiplying the node count keeps the subdomain divisibility; the spatial
    step then shrinks by d(n_p+1)/(d n_p+1), within O(1/n_p) of exactly d.
    """
    refined = config.replace(n_p=d * config.n_p, n=d * (config.n - 1) + 1)
    return refined


def consistency_sweep(config, d_values):
    """Rerun the oracle and the DD solver on grids refined by each d and
    record e_p = ||u_DA - u_DD||_2 plus the least-squares order estimate."""
    from .experiment import build_experiment, dd_estimator, global_estimator

    d_values = [int(d) for d in d_values]
    if not d_values or min(d_values) < 1:
        raise ValueError("d_values must be a nonempty list of integers >= 1")
    rows = []
    for d in d_values:
        exp = build_experiment(refine_config(config, d))
        oracle = global_estimator(exp).fit(exp.background_initial, exp.observations.values)
        dd = dd_estimator(exp).fit(exp.background_initial, exp.observations.values)
        e_p = float(np.linalg.norm(oracle.analysis_ - dd.analysis_))
        rows.append(ConsistencyRow(
            d=d, dx=exp.model.dx, dt=exp.domain.dt, e_p=e_p, e_p_predicted=0.0))
    base = rows[0]
    for row in rows:
        row.e_p_predicted = base.e_p * (base.d / row.d) ** 2
    slope = None
    if len(rows) > 1:
        xs = np.log([row.d for row in rows])
        ys = np.log([max(row.e_p, 1e-300) for row in rows])
        slope = float(-np.polyfit(xs, ys, 1)[0])
    return rows, slope


# ---------------------------------------------------------------------------
# stability sweep

@dataclass(eq=False)
class StabilityRow:
    e_bar: float
    e_propagated: float
    ratio: float


def stability_sweep(config, perturbations, slab=None):
    """Propagation error on slab ``slab`` (default: last) when every local
    model's initial condition is shifted by e_bar."""
    from .experiment import build_experiment, dd_estimator

    perturbations = [float(e) for e in perturbations]
    if not perturbations or min(perturbations) <= 0:
        raise ValueError("perturbations must be a nonempty list of positive reals")
    exp = build_experiment(config)
    k = exp.decomposition.n_t - 1 if slab is None else int(slab) - 1
    if not 0 <= k < exp.decomposition.n_t:
        raise ValueError(f"slab must be in 1..{exp.decomposition.n_t}")
    instants = exp.decomposition.slab_instants[k]
    baseline = dd_estimator(exp).fit(exp.background_initial, exp.observations.values)
    rows = []
    for e_bar in perturbations:
        perturbed = dd_estimator(exp, model_perturbation=e_bar).fit(
            exp.background_initial, exp.observations.values)
        gap = float(np.linalg.norm(
            baseline.analysis_[:, instants] - perturbed.analysis_[:, instants]))
        rows.append(StabilityRow(e_bar=e_bar, e_propagated=gap, ratio=gap / e_bar))
    return rows


# ---------------------------------------------------------------------------
# condition numbers

def spectral_condition(matrix):
    """sigma_max / sigma_min over the nonzero singular values.

    Rectangular and rank-deficient inputs use the extreme nonzero values; a
    zero or empty matrix is rejected.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0 or not np.any(matrix):
        raise ValueError("zero matrix has no condition number")
    sv = svdvals(matrix)
    sv = sv[sv > sv[0] * np.finfo(float).eps * max(matrix.shape)]
    return float(sv[0] / sv[-1])


def composite_condition(mu_v, mu_g, mu_v_ij, adjacency, sigma_02, mu_m):
    """[1 + mu^2(V) mu^2(G)/sigma_0^2 + ad mu^2(V_ij)] * mu(M)."""
    bracket = 1.0
    if mu_g is not None and not np.isnan(mu_g):
        bracket += (mu_v ** 2) * (mu_g ** 2) / sigma_02
    if adjacency > 0 and mu_v_ij is not None:
        bracket += adjacency * mu_v_ij ** 2
    return bracket * mu_m


@dataclass(eq=False)
class ConditionReport:
    rows: list = field(default_factory=list)         # per (i, k) dicts
    global_rows: list = field(default_factory=list)  # per slab dicts


def condition_numbers(decomp, background_cov, observation_operator, sigma_02,
                      model, window="cumulative"):
    """Condition numbers mu(V_i), mu(G_ik), mu(M_ik), mu(V_ij) and the
    composite per (subdomain, slab), plus the global per-slab variants.

    mu(G_ik) is computed on one instant block; stacking identical blocks
    scales every singular value by the same factor, so the ratio is
    unchanged.  For multiple neighbors the largest mu(V_ij) enters the
    composite.
    """
    from .observations import subdomain_rows

    report = ConditionReport()
    mu_v_full = spectral_condition(background_cov.factor)
    mu_h_full = spectral_condition(observation_operator.matrix)
    slab_products = {k: compose_slab(model, decomp, k) for k in range(decomp.n_t)}
    for k in range(decomp.n_t):
        mu_m_k = spectral_condition(slab_products[k])
        report.global_rows.append({
            "slab": k + 1,
            "mu_v": mu_v_full,
            "mu_g": mu_h_full,
            "mu_m": mu_m_k,
            "mu_bar": (1.0 + (mu_v_full ** 2) * (mu_h_full ** 2) / sigma_02) * mu_m_k,
        })
    for i, k in decomp.pairs():
        nodes = decomp.subdomain_nodes[i]
        mu_v = spectral_condition(background_cov.local_factor(decomp, i))
        rows = subdomain_rows(decomp, observation_operator, i)
        h_local = observation_operator.matrix[np.ix_(rows, nodes)]
        mu_g = spectral_condition(h_local) if len(rows) else float("nan")
        mu_m = spectral_condition(slab_products[k][np.ix_(nodes, nodes)])
        adjacency = len(decomp.neighbors[i])
        mu_v_ij = None
        if adjacency and decomp.delta > 0:
            mu_v_ij = max(
                spectral_condition(factor_covariance(
                    background_cov.overlap_block(decomp, i, j)))
                for j in decomp.neighbors[i])
        report.rows.append({
            "subdomain": i + 1,
            "slab": k + 1,
            "mu_v": mu_v,
            "mu_g": mu_g,
            "mu_m": mu_m,
            "mu_v_ij": mu_v_ij,
            "adjacency": adjacency,
            "mu_dd": composite_condition(mu_v, mu_g, mu_v_ij, adjacency,
                                         sigma_02, mu_m),
        })
    return report


# ---------------------------------------------------------------------------
# minimum equality

def verify_minimum_equality(global_est, dd_est, tolerance=1e-2):
    """Compare the functional value at the direct minimum with the value at
    the gathered DD solution, both under the global functional."""
    j_global = float(global_est.cost_)
    j_dd = float(global_est.cost_of(dd_est.analysis_))
    gap = abs(j_global - j_dd) / abs(j_global) if j_global != 0 else float("inf")
    return {
        "j_global": j_global,
        "j_dd": j_dd,
        "relative_gap": gap,
        "tolerance": float(tolerance),
        "passed": bool(gap <= tolerance),
    }
