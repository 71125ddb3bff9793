"""Variational assimilation solvers.

``GlobalFourDVar`` solves the preconditioned normal equations of the global
functional directly and serves as the oracle.  ``DDFourDVar`` solves the
same problem by overlapping domain decomposition: per (subdomain, slab)
local quadratics coupled through overlap penalties, swept by an additive
Schwarz inner loop with conjugate-gradient local solves, inside an outer
loop that re-forecasts local backgrounds (slab k starts from slab k-1's
corrected final state; interface traces are exchanged between outer
iterations).

Both estimators follow the scikit-learn protocol: hyperparameters in the
constructor, data to ``fit``, fitted results on trailing-underscore
attributes.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular, cho_factor, cho_solve
from sklearn.base import BaseEstimator

from ._validation import ConvergenceError, as_matrix, as_vector
from .domain import gather
from .models import (build_local_model, local_traces_from_global,
                     run_background, run_local_model)
from .observations import subdomain_rows, window_instants

# slack used both by the outer-loop monotonicity safeguard and by the
# corresponding acceptance check
MONOTONE_SLACK = 1e-12


def conjugate_gradient(a, rhs, x0=None, tol=1e-10, max_iter=500):
    """Plain CG for SPD systems; residual tolerance is relative to
    max(1, ||rhs||).  Returns (x, iterations, final residual norm)."""
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - a @ x
    p = r.copy()
    rs = float(r @ r)
    threshold = tol * max(1.0, float(np.linalg.norm(rhs)))
    iters = 0
    while np.sqrt(rs) > threshold:
        if iters >= max_iter:
            raise ConvergenceError(
                f"CG did not reach tolerance {tol:g} in {max_iter} iterations "
                f"(residual {np.sqrt(rs):.3e})")
        ap = a @ p
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        iters += 1
    return x, iters, float(np.sqrt(rs))


def global_cost(background, factor, operator, y, sigma_02, alpha, trajectory):
    """Global assimilation functional on a space-time field.

    The background penalty averages per-instant B^{-1} norms over the
    window, so a time-constant increment V w costs exactly alpha * w'w and
    the direct solve below is its exact minimizer over that family.
    """
    z = solve_triangular(factor, trajectory - background, lower=True)
    bg = float((z * z).sum()) / trajectory.shape[1]
    mis = operator.matrix @ trajectory - y
    return 0.5 * (alpha * bg + float((mis * mis).sum()) / sigma_02)


class GlobalFourDVar(BaseEstimator):
    """Direct dense solution of the global 4DVAR problem.

    Parameters
    ----------
    model : LinearModel propagating the background from the initial state.
    background_covariance, observation_covariance : error statistics.
    observation_operator : interpolation to observation space.
    alpha : regularization weight on the background term.
    """

    def __init__(self, model, background_covariance, observation_covariance,
                 observation_operator, alpha=1.0):
        self.model = model
        self.background_covariance = background_covariance
        self.observation_covariance = observation_covariance
        self.observation_operator = observation_operator
        self.alpha = alpha

    def fit(self, u0, y):
        """Minimize the functional for initial state ``u0`` and observations
        ``y`` (n_obs x n).  Solves (V'G'R^-1 G V + alpha I) w = V'G'R^-1 d."""
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        u0 = as_vector("u0", u0, self.model.n_p)
        n = self.model.domain.n
        h = self.observation_operator.matrix
        y = as_matrix("y", y, (h.shape[0], n))
        v = self.background_covariance.factor
        s02 = self.observation_covariance.sigma_02

        u_m = run_background(self.model, u0)
        misfit = y - h @ u_m
        gv = h @ v
        a = n * (gv.T @ gv) / s02 + self.alpha * np.eye(self.model.n_p)
        rhs = v.T @ (h.T @ misfit.sum(axis=1)) / s02
        w = cho_solve(cho_factor(a, lower=True), rhs)

        self.background_ = u_m
        self.w_ = w
        self.increment_ = v @ w
        self.analysis_ = u_m + self.increment_[:, None]
        self.y_ = y
        self.cost_ = self.cost_of(self.analysis_)
        return self

    def cost_of(self, trajectory):
        """Evaluate the fitted functional on an arbitrary trajectory."""
        return global_cost(self.background_, self.background_covariance.factor,
                           self.observation_operator, self.y_,
                           self.observation_covariance.sigma_02, self.alpha,
                           trajectory)


@dataclass(eq=False)
class LocalProblem:
    """Quadratic local functional for one (subdomain, slab) pair, in the
    preconditioned variable w = V_i^{-1}(u - u^M).

    cost(w) = 1/2 [ alpha w'w + sum_l ||D w - d_l||^2 / sigma_0^2
                    + beta sum_j (w + w_j)' B_ij (w + w_j) ]

    with D = H_i V_i, d_l the per-instant misfits over the data window, and
    w_j the neighbor increment restricted to the overlap and embedded at
    this subdomain's overlap positions.  The gradient is
    A w - c + beta sum_j B_ij w_j with A = n_win D'D/sigma_0^2 + alpha I
    + beta sum_j B_ij.
    """

    i: int
    k: int
    factor: np.ndarray          # V_i
    system_matrix: np.ndarray   # A_ik
    rhs_core: np.ndarray        # c_i
    data_matrix: np.ndarray     # H_i V_i
    misfits: np.ndarray         # rows x n_window
    couplings: dict             # j -> (B_ij embedded, source pos in w_j, target pos)
    background: np.ndarray      # local background trajectory over the slab
    sigma_02: float
    alpha: float
    beta: float

    @property
    def n_loc(self):
        return self.system_matrix.shape[0]

    def embed_neighbor(self, j, w_j):
        _, source, target = self.couplings[j]
        out = np.zeros(self.n_loc)
        out[target] = np.asarray(w_j, dtype=float)[source]
        return out

    def coupling_sum(self, neighbor_w):
        """beta * sum_j B_ij w_j over available neighbors."""
        out = np.zeros(self.n_loc)
        for j, (b_hat, _, _) in self.couplings.items():
            if j not in neighbor_w:
                raise ValueError(f"missing neighbor increment for subdomain {j + 1}")
            out += self.beta * (b_hat @ self.embed_neighbor(j, neighbor_w[j]))
        return out

    def cost(self, w, neighbor_w=None):
        w = as_vector("w", w, self.n_loc)
        neighbor_w = {} if neighbor_w is None else neighbor_w
        value = self.alpha * float(w @ w)
        if self.data_matrix.shape[0]:
            res = self.data_matrix @ w
            resid = res[:, None] - self.misfits
            value += float((resid * resid).sum()) / self.sigma_02
        for j, (b_hat, _, _) in self.couplings.items():
            if j not in neighbor_w:
                raise ValueError(f"missing neighbor increment for subdomain {j + 1}")
            both = w + self.embed_neighbor(j, neighbor_w[j])
            value += self.beta * float(both @ (b_hat @ both))
        return 0.5 * value

    def gradient(self, w, neighbor_w=None):
        w = as_vector("w", w, self.n_loc)
        neighbor_w = {} if neighbor_w is None else neighbor_w
        return self.system_matrix @ w - self.rhs_core + self.coupling_sum(neighbor_w)


def asm_sweep(problems, w, cg_tol=1e-10, cg_max_iter=500):
    """One additive Schwarz sweep: every subdomain solves its local system
    with the neighbors' previous-sweep increments on the right-hand side,
    then all increments are exchanged simultaneously.

    ``problems`` and ``w`` are keyed by subdomain index for one slab.
    Returns (new increments, per-subdomain CG stats).
    """
    new_w = {}
    stats = []
    for i, problem in problems.items():
        neighbor_w = {j: w[j] for j in problem.couplings}
        rhs = problem.rhs_core - problem.coupling_sum(neighbor_w)
        x, iters, residual = conjugate_gradient(
            problem.system_matrix, rhs, x0=w[i], tol=cg_tol, max_iter=cg_max_iter)
        new_w[i] = x
        stats.append({"subdomain": i + 1, "cg_iterations": iters,
                      "cg_residual": residual})
    return new_w, stats


@dataclass(eq=False)
class AssimilationState:
    """Snapshot of the last accepted DD-4DVAR iterate.  ``diagnostics``
    logs every sweep performed, including a final rejected trial."""

    backgrounds: dict = field(default_factory=dict)   # (i, k) -> local trajectory
    increments: dict = field(default_factory=dict)    # (i, k) -> w vector
    analyses: dict = field(default_factory=dict)      # (i, k) -> local trajectory
    gathered: np.ndarray = None
    j_history: list = field(default_factory=list)
    update_norms: list = field(default_factory=list)
    n_outer: int = 0
    diagnostics: list = field(default_factory=list)


class DDFourDVar(BaseEstimator):
    """Domain-decomposition 4DVAR solver.

    Parameters
    ----------
    decomposition : overlapping space/time decomposition of the grid.
    model, background_covariance, observation_covariance,
    observation_operator : as for ``GlobalFourDVar``.
    alpha, beta : background and overlap-penalty weights.
    r_bar : additive Schwarz sweeps per slab.
    cg_tol, cg_max_iter : local conjugate-gradient control.
    n_stop, outer_tol : outer-loop iteration cap and update-norm stop.
    window : observation window per slab, "slab" | "cumulative" | "full".
        "full" (every slab fits all instants, columns restricted to the
        subdomain) keeps the gathered solution closest to the global
        minimum; "cumulative" uses the data through the slab's end and
        "slab" restricts strictly to the slab's instants.
    chain_slabs : start each slab's local model from the previous slab's
        corrected final state instead of the background trajectory value.
        Chaining re-fits data the inherited correction already explained,
        which drags the gathered solution past the global minimum, so it
        is off by default.
    monotone_guard : reject outer updates that would increase the global
        functional (the recorded cost history is then non-increasing).
    model_perturbation : constant added to every local-model initial state,
        the stability-analysis hook.
    """

    def __init__(self, decomposition, model, background_covariance,
                 observation_covariance, observation_operator, alpha=1.0,
                 beta=1.0, r_bar=10, cg_tol=1e-10, cg_max_iter=500, n_stop=20,
                 outer_tol=1e-6, window="full", chain_slabs=False,
                 monotone_guard=True, model_perturbation=0.0):
        self.decomposition = decomposition
        self.model = model
        self.background_covariance = background_covariance
        self.observation_covariance = observation_covariance
        self.observation_operator = observation_operator
        self.alpha = alpha
        self.beta = beta
        self.r_bar = r_bar
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.n_stop = n_stop
        self.outer_tol = outer_tol
        self.window = window
        self.chain_slabs = chain_slabs
        self.monotone_guard = monotone_guard
        self.model_perturbation = model_perturbation

    # -- construction of the frozen per-(i, k) pieces ----------------------

    def _setup(self):
        dec = self.decomposition
        self._local_models = [build_local_model(self.model, dec, i)
                              for i in range(dec.n_sub)]
        self._factors = [self.background_covariance.local_factor(dec, i)
                         for i in range(dec.n_sub)]
        self._obs_rows = [subdomain_rows(dec, self.observation_operator, i)
                          for i in range(dec.n_sub)]
        self._couplings = []
        for i in range(dec.n_sub):
            per_neighbor = {}
            for j in dec.neighbors[i]:
                if dec.delta == 0:
                    continue
                overlap = dec.overlap_nodes(i, j)
                per_neighbor[j] = (
                    self.background_covariance.embedded_coupling(dec, i, j),
                    dec.local_positions(j, overlap),
                    dec.local_positions(i, overlap),
                )
            self._couplings.append(per_neighbor)

    def _build_problem(self, i, k, background_local, u_m):
        dec = self.decomposition
        rows = self._obs_rows[i]
        nodes = dec.subdomain_nodes[i]
        slab = dec.slab_instants[k]
        insts = window_instants(dec, k, self.window)
        h_local = self.observation_operator.matrix[np.ix_(rows, nodes)]
        v_i = self._factors[i]
        data = h_local @ v_i
        s02 = self.observation_covariance.sigma_02

        slab_pos = {int(l): idx for idx, l in enumerate(slab)}
        misfits = np.empty((len(rows), len(insts)))
        h_rows = self.observation_operator.matrix[rows]
        for col, l in enumerate(insts):
            if int(l) in slab_pos:
                predicted = h_local @ background_local[:, slab_pos[int(l)]]
            else:
                predicted = h_rows @ u_m[:, l]
            misfits[:, col] = self.y_[rows, l] - predicted

        a = len(insts) * (data.T @ data) / s02 + self.alpha * np.eye(len(nodes))
        for j, (b_hat, _, _) in self._couplings[i].items():
            a = a + self.beta * b_hat
        c = data.T @ misfits.sum(axis=1) / s02
        return LocalProblem(
            i=i, k=k, factor=v_i, system_matrix=a, rhs_core=c,
            data_matrix=data, misfits=misfits, couplings=self._couplings[i],
            background=background_local, sigma_02=s02, alpha=self.alpha,
            beta=self.beta)

    def _reduce_model(self, i, k, analyses, previous, outer):
        """Local background for (i, k): interface traces lagged one outer
        iteration; the initial state comes from the background trajectory,
        or from slab k-1's corrected final state when chaining."""
        dec = self.decomposition
        local = self._local_models[i]
        slab = dec.slab_instants[k]
        if self.chain_slabs and k > 0:
            init = analyses[(i, k - 1)][:, -1]
        else:
            init = self.background_global_[dec.subdomain_nodes[i], slab[0]]
        init = init + self.model_perturbation
        if outer == 0:
            traces = local_traces_from_global(local, self.background_global_, slab)
        else:
            traces = {}
            for j, (cols, _) in local.halo.items():
                pos = dec.local_positions(j, cols)
                traces[j] = previous[(j, k)][pos, :-1]
        return run_local_model(local, init, len(slab) - 1, traces)

    def local_problems(self, u0, y):
        """Local quadratics at the initial (background) state, keyed by
        (subdomain, slab).  Used for gradient checks and fixed-point
        oracles; ``fit`` builds the same objects internally."""
        self._prepare(u0, y)
        dec = self.decomposition
        problems = {}
        analyses = {}
        for k in range(dec.n_t):
            for i in range(dec.n_sub):
                bg = self._reduce_model(i, k, analyses, {}, 0)
                problems[(i, k)] = self._build_problem(i, k, bg, self.background_global_)
            for i in range(dec.n_sub):
                analyses[(i, k)] = problems[(i, k)].background
        return problems

    def _check_params(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not 0 < self.cg_tol < 1:
            raise ValueError(f"cg_tol must lie in (0, 1), got {self.cg_tol}")
        for name in ("r_bar", "cg_max_iter", "n_stop"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.outer_tol > 0:
            raise ValueError(f"outer_tol must be positive, got {self.outer_tol}")
        if self.window not in ("slab", "cumulative", "full"):
            raise ValueError(f"unknown observation window {self.window!r}")

    def _prepare(self, u0, y):
        self._check_params()
        u0 = as_vector("u0", u0, self.model.n_p)
        n = self.model.domain.n
        y = as_matrix("y", y, (self.observation_operator.n_obs, n))
        self._setup()
        self.y_ = y
        self.background_global_ = run_background(self.model, u0)
        return u0, y

    # -- the solver ---------------------------------------------------------

    def fit(self, u0, y):
        self._prepare(u0, y)
        dec = self.decomposition
        state = AssimilationState()

        backgrounds = {(i, k): self.background_global_[
            np.ix_(dec.subdomain_nodes[i], dec.slab_instants[k])].copy()
            for i, k in dec.pairs()}
        analyses = {key: bg.copy() for key, bg in backgrounds.items()}
        increments = {(i, k): np.zeros(len(dec.subdomain_nodes[i]))
                      for i, k in dec.pairs()}
        gathered = gather(dec, analyses)
        state.j_history.append(self.cost_of(gathered))
        state.backgrounds = {k: v.copy() for k, v in backgrounds.items()}
        state.increments = {k: v.copy() for k, v in increments.items()}
        state.analyses = {k: v.copy() for k, v in analyses.items()}
        state.gathered = gathered

        for outer in range(self.n_stop):
            previous = {key: v.copy() for key, v in analyses.items()}
            new_backgrounds, new_increments, new_analyses = {}, {}, {}
            for k in range(dec.n_t):
                problems = {}
                for i in range(dec.n_sub):
                    bg = self._reduce_model(i, k, new_analyses, previous, outer)
                    new_backgrounds[(i, k)] = bg
                    problems[i] = self._build_problem(i, k, bg, self.background_global_)
                w = {i: np.zeros(problems[i].n_loc) for i in problems}
                for sweep in range(self.r_bar):
                    w, stats = asm_sweep(problems, w, self.cg_tol, self.cg_max_iter)
                    for row in stats:
                        row.update({"outer": outer + 1, "slab": k + 1,
                                    "sweep": sweep + 1})
                        row["local_cost"] = problems[row["subdomain"] - 1].cost(
                            w[row["subdomain"] - 1],
                            {j: w[j] for j in problems[row["subdomain"] - 1].couplings})
                        state.diagnostics.append(row)
                for i in problems:
                    new_increments[(i, k)] = w[i]
                    new_analyses[(i, k)] = (new_backgrounds[(i, k)]
                                            + (self._factors[i] @ w[i])[:, None])
            candidate = gather(dec, new_analyses)
            j_new = self.cost_of(candidate)
            if self.monotone_guard and j_new > state.j_history[-1] + MONOTONE_SLACK:
                break
            update_norm = float(np.linalg.norm(candidate - state.gathered))
            state.j_history.append(j_new)
            state.update_norms.append(update_norm)
            state.n_outer = outer + 1
            state.backgrounds = {key: v.copy() for key, v in new_backgrounds.items()}
            state.increments = {key: v.copy() for key, v in new_increments.items()}
            state.analyses = {key: v.copy() for key, v in new_analyses.items()}
            state.gathered = candidate
            analyses = new_analyses
            if update_norm < self.outer_tol:
                break

        self.state_ = state
        self.analysis_ = state.gathered
        self.j_history_ = list(state.j_history)
        self.update_norms_ = list(state.update_norms)
        self.n_outer_ = state.n_outer
        self.cost_ = state.j_history[-1]
        self.diagnostics_ = list(state.diagnostics)
        return self

    def cost_of(self, trajectory):
        """Global functional with this problem's background and data."""
        return global_cost(self.background_global_,
                           self.background_covariance.factor,
                           self.observation_operator, self.y_,
                           self.observation_covariance.sigma_02, self.alpha,
                           trajectory)
