"""Synthetic observations, piecewise-linear observation operators, and their
restriction to subdomains and time slabs."""

import csv
from dataclasses import dataclass

import numpy as np

from ._validation import check_count


@dataclass(eq=False)
class ObservationOperator:
    """Piecewise-linear interpolation from grid nodes to observation
    locations.  The same matrix applies at every instant (fixed network)."""

    domain: object
    locations: np.ndarray
    matrix: np.ndarray  # n_obs x n_p, rows sum to 1 with <= 2 nonzeros

    @property
    def n_obs(self):
        return self.matrix.shape[0]

    def stack(self, upto):
        """Vertical stack H_0 .. H_{upto-1} (identical blocks here)."""
        upto = check_count("upto", upto)
        return np.vstack([self.matrix] * upto)

    def apply(self, trajectory, instants=None):
        """Map a space-time field to observation space column by column."""
        trajectory = np.asarray(trajectory, dtype=float)
        if instants is not None:
            trajectory = trajectory[:, np.asarray(instants, dtype=int)]
        return self.matrix @ trajectory


def uniform_locations(domain, n_obs):
    """n_obs locations evenly spread over the domain, half a spacing off the
    boundaries."""
    n_obs = check_count("n_obs", n_obs)
    span = domain.x_max - domain.x_min
    return domain.x_min + span * (np.arange(n_obs) + 0.5) / n_obs


def build_interpolation(domain, locations):
    """Observation operator interpolating between the two bracketing nodes.

    A location at a node gives a unit row; locations between the boundary
    and the first/last node clamp to that node.  Locations outside the open
    domain are rejected.
    """
    locations = np.asarray(locations, dtype=float)
    xs = domain.nodes
    h = np.zeros((len(locations), domain.n_p))
    for r, z in enumerate(locations):
        if not (domain.x_min < z < domain.x_max):
            raise ValueError(f"observation location {z} outside open domain "
                             f"({domain.x_min}, {domain.x_max})")
        j = int(np.searchsorted(xs, z))
        if j == 0:
            h[r, 0] = 1.0
        elif j >= domain.n_p:
            h[r, -1] = 1.0
        else:
            theta = (z - xs[j - 1]) / (xs[j] - xs[j - 1])
            h[r, j - 1] = 1.0 - theta
            h[r, j] = theta
    return ObservationOperator(domain, locations, h)


@dataclass(eq=False)
class ObservationSet:
    """Observed values per (observation point, instant) with the noise
    parameters that generated them."""

    locations: np.ndarray
    values: np.ndarray  # n_obs x n
    sigma_0: float
    seed: int


def synthesize_observations(truth, operator, sigma_0, seed):
    """Twin-experiment observations y(., l) = H truth(., l) + N(0, sigma_0^2).

    Deterministic per seed; sigma_0 = 0 returns the interpolated truth.
    """
    if sigma_0 < 0:
        raise ValueError(f"sigma_0 must be nonnegative, got {sigma_0}")
    clean = operator.apply(truth)
    rng = np.random.default_rng(seed)
    noise = sigma_0 * rng.standard_normal(clean.shape) if sigma_0 > 0 else 0.0
    return ObservationSet(operator.locations.copy(), clean + noise,
                          float(sigma_0), int(seed))


def subdomain_rows(decomp, operator, i):
    """Observation rows whose location lies in subdomain i's closed span.

    Overlap-located observations belong to both neighbors.
    """
    lo, hi = decomp.intervals[i]
    return np.where((operator.locations >= lo) & (operator.locations <= hi))[0]


def window_instants(decomp, k, window):
    """Instants feeding the (i, k) local data term.

    "slab" uses slab k only; "cumulative" all instants through slab k's last
    one (the data seen up to that time); "full" the whole window.
    """
    if window == "slab":
        return decomp.slab_instants[k]
    if window == "cumulative":
        return np.arange(0, decomp.slab_instants[k][-1] + 1)
    if window == "full":
        return np.arange(0, decomp.n)
    raise ValueError(f"unknown observation window {window!r}")


@dataclass(eq=False)
class LocalObservations:
    """Observation data restricted to a subdomain and slab window."""

    rows: np.ndarray        # global observation row indices kept
    instants: np.ndarray    # instants in the data window
    matrix: np.ndarray      # rows x |I_i|, columns restricted to the subdomain
    values: np.ndarray      # len(rows) x len(instants)
    r_diagonal: np.ndarray  # stacked diagonal of the restricted R

    @property
    def stacked_matrix(self):
        return np.vstack([self.matrix] * len(self.instants))

    @property
    def stacked_values(self):
        """Instant-major stacking of the observed values."""
        return self.values.T.reshape(-1)


def restrict_observations(decomp, operator, obs_cov, obs, i, k, window="slab"):
    """Restrict (G, R, y) to subdomain i and slab k.

    Rows are kept for observations located in subdomain i; instants follow
    the window policy; columns are restricted to the subdomain's nodes
    (locations inside the span only interpolate from nodes of the span, so
    no information is dropped).  The restriction may be empty.
    """
    rows = subdomain_rows(decomp, operator, i)
    insts = window_instants(decomp, k, window)
    matrix = operator.matrix[np.ix_(rows, decomp.subdomain_nodes[i])]
    values = obs.values[np.ix_(rows, insts)]
    r_diag = obs_cov.stacked_diagonal(len(rows), len(insts))
    return LocalObservations(rows, insts, matrix, values, r_diag)


def observations_to_csv(obs, path):
    """Write the set as rows (instant, location, value), instants 1-based."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instant", "location", "value"])
        n_obs, n = obs.values.shape
        for l in range(n):
            for r in range(n_obs):
                writer.writerow([l + 1, f"{obs.locations[r]:.5e}",
                                 f"{obs.values[r, l]:.5e}"])
