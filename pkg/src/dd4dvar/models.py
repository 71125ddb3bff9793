"""Linear forward models: Lax-Wendroff propagators, slab compositions, and
subdomain-restricted local models with interface traces.

Two concrete models are provided.  The linearized 1D shallow-water system
(about the rest state h = mean_depth, u = 0) is the main testbed; its two
fields are interleaved into one state vector, q[2m] = h_m and q[2m+1] = u_m,
which keeps the step matrix banded so subdomains of the stacked vector stay
spatially local.  Scalar advection serves as a cheap oracle model.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import CFLViolationError, check_count, check_positive


@dataclass(eq=False)
class LinearModel:
    """One-step propagator q_{l+1} = M q_l + b with Dirichlet boundary data
    folded into the constant vector b (boundary values held fixed in time)."""

    domain: object
    step_matrix: np.ndarray
    boundary_vector: np.ndarray
    dx: float          # model grid spacing (physical spacing for the SWE stack)
    dt: float
    cfl: float
    scheme_orders: tuple = (2, 2)

    @property
    def n_p(self):
        return self.step_matrix.shape[0]


def build_advection_model(domain, speed, boundary_value=0.0):
    """Lax-Wendroff step matrix for u_t + a u_x = 0 on the domain grid."""
    nu = speed * domain.dt / domain.dx
    if abs(nu) > 1.0 + 1e-12:
        raise CFLViolationError(f"advection Courant number {abs(nu):.4g} exceeds 1")
    n = domain.n_p
    m = np.zeros((n, n))
    b = np.zeros(n)
    c_left = nu / 2 + nu * nu / 2
    c_mid = 1.0 - nu * nu
    c_right = -nu / 2 + nu * nu / 2
    for j in range(n):
        m[j, j] = c_mid
        if j - 1 >= 0:
            m[j, j - 1] = c_left
        else:
            b[j] += c_left * boundary_value
        if j + 1 < n:
            m[j, j + 1] = c_right
        else:
            b[j] += c_right * boundary_value
    return LinearModel(domain, m, b, domain.dx, domain.dt, abs(nu))


def build_swe_model(domain, gravity, mean_depth,
                    boundary_left=(0.0, 0.0), boundary_right=(0.0, 0.0)):
    """Lax-Wendroff step matrix for the linear shallow-water system
    h_t + H u_x = 0, u_t + g h_x = 0 on the interleaved stacked grid.

    ``domain.n_p`` must be even; the physical grid has n_p/2 inner nodes.
    """
    gravity = check_positive("gravity", gravity)
    mean_depth = check_positive("mean_depth", mean_depth)
    if domain.n_p % 2 != 0:
        raise ValueError(f"stacked state length must be even, got n_p={domain.n_p}")
    n_phys = domain.n_p // 2
    dxp = (domain.x_max - domain.x_min) / (n_phys + 1)
    wave = np.sqrt(gravity * mean_depth)
    nu = wave * domain.dt / dxp
    if nu > 1.0 + 1e-12:
        raise CFLViolationError(
            f"shallow-water Courant number {nu:.4g} exceeds 1 "
            f"(wave speed {wave:.4g}, dt {domain.dt:.4g}, dx {dxp:.4g})")

    r_h = mean_depth * domain.dt / (2 * dxp)
    r_g = gravity * domain.dt / (2 * dxp)
    s = wave * wave * domain.dt * domain.dt / (2 * dxp * dxp)
    n = domain.n_p
    m = np.zeros((n, n))
    b = np.zeros(n)

    def put(row, phys, var, coeff):
        if 0 <= phys < n_phys:
            m[row, 2 * phys + var] += coeff
        else:
            state = boundary_left if phys < 0 else boundary_right
            b[row] += coeff * state[var]

    for j in range(n_phys):
        rh, ru = 2 * j, 2 * j + 1
        m[rh, rh] += 1.0 - 2.0 * s
        put(rh, j + 1, 1, -r_h)
        put(rh, j - 1, 1, +r_h)
        put(rh, j + 1, 0, s)
        put(rh, j - 1, 0, s)
        m[ru, ru] += 1.0 - 2.0 * s
        put(ru, j + 1, 0, -r_g)
        put(ru, j - 1, 0, +r_g)
        put(ru, j + 1, 1, s)
        put(ru, j - 1, 1, s)
    return LinearModel(domain, m, b, dxp, domain.dt, nu)


def run_background(model, u0, n_instants=None):
    """Propagate an initial state over the window; column l is the state at
    instant l, column 0 the initial condition."""
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (model.n_p,):
        raise ValueError(f"initial state has shape {u0.shape}, expected ({model.n_p},)")
    n = model.domain.n if n_instants is None else n_instants
    out = np.empty((model.n_p, n))
    out[:, 0] = u0
    for l in range(1, n):
        out[:, l] = model.step_matrix @ out[:, l - 1] + model.boundary_vector
    return out


def compose_slab(model, decomp, k):
    """Product of the per-step matrices across slab k's instants."""
    check_count("k", k, minimum=0)
    if k >= decomp.n_t:
        raise ValueError(f"slab index {k} out of range [0, {decomp.n_t})")
    steps = len(decomp.slab_instants[k]) - 1
    out = np.eye(model.n_p)
    for _ in range(steps):
        out = model.step_matrix @ out
    return out


@dataclass(eq=False)
class LocalModel:
    """Subdomain restriction of a model: the local step matrix plus, per
    neighbor, the halo columns outside the subdomain that the stencil reads
    and their coupling block."""

    i: int
    nodes: np.ndarray
    step_matrix: np.ndarray
    boundary_vector: np.ndarray
    halo: dict  # neighbor j -> (global column indices, |I_i| x n_halo block)


def build_local_model(model, decomp, i):
    nodes = decomp.subdomain_nodes[i]
    m_loc = model.step_matrix[np.ix_(nodes, nodes)]
    b_loc = model.boundary_vector[nodes]
    outside = np.setdiff1d(
        np.where(np.abs(model.step_matrix[nodes, :]).sum(axis=0) > 0.0)[0], nodes)
    halo = {}
    for j in decomp.neighbors[i]:
        cols = outside[outside > nodes[-1]] if j > i else outside[outside < nodes[0]]
        if len(cols) and not np.all(np.isin(cols, decomp.subdomain_nodes[j])):
            raise ValueError(f"stencil of subdomain {i + 1} reaches past "
                             f"neighbor {j + 1}; overlap too small for the scheme")
        halo[j] = (cols, model.step_matrix[np.ix_(nodes, cols)])
    return LocalModel(i, nodes, m_loc, b_loc, halo)


def run_local_model(local, initial, n_steps, traces=None):
    """Step the local model; interface values come from ``traces``.

    ``traces[j]`` holds the neighbor's values at the halo columns, one
    column per step, evaluated at the step's source instant.  With exact
    traces from a global run the result equals the restricted global
    propagation to round-off.
    """
    initial = np.asarray(initial, dtype=float)
    n_loc = len(local.nodes)
    if initial.shape != (n_loc,):
        raise ValueError(f"initial state has shape {initial.shape}, expected ({n_loc},)")
    traces = {} if traces is None else traces
    trace_arrays = {}
    for j, (cols, _) in local.halo.items():
        if len(cols) == 0:
            continue
        if j not in traces:
            raise ValueError(f"missing trace: subdomain {local.i + 1} needs "
                             f"interface values from neighbor {j + 1}")
        tr = np.asarray(traces[j], dtype=float)
        if tr.shape != (len(cols), n_steps):
            raise ValueError(f"trace from neighbor {j + 1} has shape {tr.shape}, "
                             f"expected {(len(cols), n_steps)}")
        trace_arrays[j] = tr
    out = np.empty((n_loc, n_steps + 1))
    out[:, 0] = initial
    for step in range(n_steps):
        x = local.step_matrix @ out[:, step] + local.boundary_vector
        for j, tr in trace_arrays.items():
            x += local.halo[j][1] @ tr[:, step]
        out[:, step + 1] = x
    return out


def local_traces_from_global(local, trajectory, instants):
    """Extract exact halo traces for a slab from a global trajectory."""
    instants = np.asarray(instants, dtype=int)
    return {j: trajectory[np.ix_(cols, instants[:-1])]
            for j, (cols, _) in local.halo.items()}


# ---------------------------------------------------------------------------
# stacked-state helpers and analytic reference solutions

def stack_state(height, velocity):
    """Interleave (h, u) fields into one stacked state vector."""
    height = np.asarray(height, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    out = np.empty(2 * len(height))
    out[0::2] = height
    out[1::2] = velocity
    return out


def unstack_state(state):
    state = np.asarray(state, dtype=float)
    return state[0::2], state[1::2]


def physical_nodes(domain):
    """Inner nodes of the physical grid underlying a stacked SWE state."""
    n_phys = domain.n_p // 2
    dxp = (domain.x_max - domain.x_min) / (n_phys + 1)
    return domain.x_min + dxp * np.arange(1, n_phys + 1)


def advection_exact(initial_fn, speed):
    """Transport solution u(x, t) = u0(x - a t)."""
    return lambda x, t: initial_fn(np.asarray(x) - speed * t)


def swe_exact(height_fn, gravity, mean_depth):
    """d'Alembert solution of the linear shallow-water system for initial
    height perturbation ``height_fn`` and zero initial velocity."""
    wave = np.sqrt(gravity * mean_depth)

    def height(x, t):
        x = np.asarray(x)
        return 0.5 * (height_fn(x - wave * t) + height_fn(x + wave * t))

    def velocity(x, t):
        x = np.asarray(x)
        return 0.5 * (gravity / wave) * (height_fn(x - wave * t) - height_fn(x + wave * t))

    return height, velocity


def sample_swe_trajectory(domain, height_fn, gravity, mean_depth):
    """Analytic SWE solution sampled on the stacked grid at every instant."""
    hf, uf = swe_exact(height_fn, gravity, mean_depth)
    xp = physical_nodes(domain)
    out = np.empty((domain.n_p, domain.n))
    for l, t in enumerate(domain.times):
        out[:, l] = stack_state(hf(xp, t), uf(xp, t))
    return out


def sample_advection_trajectory(domain, initial_fn, speed):
    fn = advection_exact(initial_fn, speed)
    out = np.empty((domain.n_p, domain.n))
    for l, t in enumerate(domain.times):
        out[:, l] = fn(domain.nodes, t)
    return out
