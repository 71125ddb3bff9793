"""Discrete space-time grid, overlapping decomposition, and index machinery.

Indices are 0-based internally; user-facing output (CSV, reprs) reports
subdomain and slab labels 1-based.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_interval


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """Uniform grid on (x_min, x_max) x [t_min, t_max].

    ``n_p`` counts inner spatial nodes, ``n`` time instants; the spatial
    step is (x_max - x_min)/(n_p + 1) so all nodes are strictly interior.
    """

    x_min: float
    x_max: float
    t_min: float
    t_max: float
    n_p: int
    n: int
    dx: float = field(init=False)
    dt: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dx", (self.x_max - self.x_min) / (self.n_p + 1))
        object.__setattr__(self, "dt", (self.t_max - self.t_min) / (self.n - 1))

    @property
    def nodes(self):
        """Inner node coordinates, strictly increasing inside (x_min, x_max)."""
        return self.x_min + self.dx * np.arange(1, self.n_p + 1)

    @property
    def times(self):
        return self.t_min + self.dt * np.arange(self.n)


def build_domain(x_min, x_max, t_min, t_max, n_p, n):
    """Construct a uniform space-time grid.

    Raises ValueError for reversed bounds or node/instant counts below 2.
    """
    x_min, x_max = check_interval("x_min", x_min, "x_max", x_max)
    t_min, t_max = check_interval("t_min", t_min, "t_max", t_max)
    n_p = check_count("n_p", n_p, minimum=2)
    n = check_count("n", n, minimum=2)
    return DiscreteDomain(x_min, x_max, t_min, t_max, n_p, n)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Overlapping decomposition of the grid into subdomains and time slabs.

    Subdomain i holds node indices ``subdomain_nodes[i]``; adjacent
    subdomains share ``delta`` nodes.  Consecutive slabs share exactly one
    instant.  ``owner_node``/``owner_instant`` assign every grid point to
    the lowest-index subdomain/slab containing it, which makes the gather
    a partition.
    """

    n_p: int
    n: int
    n_sub: int
    n_t: int
    delta: int
    subdomain_nodes: tuple
    slab_instants: tuple
    neighbors: tuple
    intervals: tuple
    owner_node: np.ndarray
    owner_instant: np.ndarray

    @property
    def adjacency(self):
        """Number of neighbors per subdomain (ad_i)."""
        return tuple(len(js) for js in self.neighbors)

    def overlap_nodes(self, i, j):
        """Shared node indices of adjacent subdomains i and j."""
        if j not in self.neighbors[i]:
            raise ValueError(f"subdomains {i + 1} and {j + 1} are not adjacent")
        return np.intersect1d(self.subdomain_nodes[i], self.subdomain_nodes[j])

    def owner(self, node, instant):
        """The unique (subdomain, slab) pair owning a grid point."""
        return int(self.owner_node[node]), int(self.owner_instant[instant])

    def local_positions(self, i, nodes):
        """Positions of global ``nodes`` inside subdomain i's index list."""
        return np.searchsorted(self.subdomain_nodes[i], nodes)

    def pairs(self):
        for i in range(self.n_sub):
            for k in range(self.n_t):
                yield i, k


def decompose(domain, n_sub, n_t, delta):
    """Split the grid into ``n_sub`` overlapping subdomains and ``n_t`` slabs.

    Every subdomain extends delta/2 nodes into each adjacent base block, so
    end subdomains have n_p/n_sub + delta/2 nodes and interior ones
    n_p/n_sub + delta; each overlap region has exactly ``delta`` nodes.
    """
    n_sub = check_count("n_sub", n_sub)
    n_t = check_count("n_t", n_t)
    delta = check_count("delta", delta, minimum=0)
    if domain.n_p % n_sub != 0:
        raise ValueError(f"indivisible: n_sub={n_sub} does not divide n_p={domain.n_p}")
    if (domain.n - 1) % n_t != 0:
        raise ValueError(f"indivisible: n_t={n_t} does not divide n-1={domain.n - 1}")
    if delta % 2 != 0:
        raise ValueError(f"delta must be even, got {delta}")
    width = domain.n_p // n_sub
    if delta >= width:
        raise ValueError(f"overlap too large: delta={delta} >= subdomain width {width}")

    subs = []
    for i in range(n_sub):
        lo = i * width - (delta // 2 if i > 0 else 0)
        hi = (i + 1) * width + (delta // 2 if i < n_sub - 1 else 0)
        subs.append(np.arange(lo, hi))
    steps = (domain.n - 1) // n_t
    slabs = [np.arange(k * steps, (k + 1) * steps + 1) for k in range(n_t)]
    neighbors = tuple(tuple(j for j in (i - 1, i + 1) if 0 <= j < n_sub)
                      for i in range(n_sub))

    # physical span of each subdomain; end subdomains reach the boundary so
    # the subdomains cover all of (x_min, x_max)
    nodes = domain.nodes
    intervals = []
    for i, sub in enumerate(subs):
        lo = domain.x_min if i == 0 else nodes[sub[0]]
        hi = domain.x_max if i == n_sub - 1 else nodes[sub[-1]]
        intervals.append((lo, hi))

    owner_node = np.zeros(domain.n_p, dtype=int)
    for i in reversed(range(n_sub)):
        owner_node[subs[i]] = i
    owner_instant = np.zeros(domain.n, dtype=int)
    for k in reversed(range(n_t)):
        owner_instant[slabs[k]] = k

    return Decomposition(
        n_p=domain.n_p, n=domain.n, n_sub=n_sub, n_t=n_t, delta=delta,
        subdomain_nodes=tuple(subs), slab_instants=tuple(slabs),
        neighbors=neighbors, intervals=tuple(intervals),
        owner_node=owner_node, owner_instant=owner_instant,
    )


@dataclass(frozen=True, eq=False)
class RestrictionMap:
    """Index selection between a global vector and a restricted one.

    ``restrict`` picks entries at ``target_indices``; ``extend`` places them
    back and fills zeros elsewhere, so restrict(extend(x)) == x exactly.
    """

    source_dim: int
    target_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.target_indices, dtype=int)
        if idx.ndim != 1 or len(np.unique(idx)) != len(idx) or np.any(np.diff(idx) <= 0):
            raise ValueError("target_indices must be sorted and unique")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.source_dim):
            raise ValueError(f"target_indices out of range [0, {self.source_dim})")
        object.__setattr__(self, "target_indices", idx)

    def __len__(self):
        return len(self.target_indices)


def subdomain_map(decomp, i):
    return RestrictionMap(decomp.n_p, decomp.subdomain_nodes[i])


def overlap_map(decomp, i, j):
    return RestrictionMap(decomp.n_p, decomp.overlap_nodes(i, j))


def restrict(rmap, x):
    """Select the mapped rows of a vector or space-time array."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != rmap.source_dim:
        raise ValueError(f"dimension mismatch: field has leading dimension "
                         f"{x.shape[0]}, map expects {rmap.source_dim}")
    return x[rmap.target_indices].copy()


def extend(rmap, x):
    """Zero-fill the complement: values at mapped rows, exact zeros elsewhere."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != len(rmap.target_indices):
        raise ValueError(f"dimension mismatch: field has leading dimension "
                         f"{x.shape[0]}, map selects {len(rmap.target_indices)}")
    out = np.zeros((rmap.source_dim,) + x.shape[1:], dtype=float)
    out[rmap.target_indices] = x
    return out


def gather(decomp, local_fields, with_discrepancy=False):
    """Assemble local (i, k) blocks into the global space-time array.

    Each grid point takes the value of its owning (subdomain, slab); when
    the locals agree on overlaps the result is independent of ownership.
    ``with_discrepancy`` also returns the largest disagreement between a
    local value and the owner's value over all shared points.
    """
    out = np.zeros((decomp.n_p, decomp.n))
    for i, k in decomp.pairs():
        block = np.asarray(local_fields[(i, k)], dtype=float)
        nodes = decomp.subdomain_nodes[i]
        insts = decomp.slab_instants[k]
        if block.shape != (len(nodes), len(insts)):
            raise ValueError(f"shape mismatch for local ({i + 1}, {k + 1}): "
                             f"got {block.shape}, expected {(len(nodes), len(insts))}")
        own_n = decomp.owner_node[nodes] == i
        own_t = decomp.owner_instant[insts] == k
        out[np.ix_(nodes[own_n], insts[own_t])] = block[np.ix_(own_n, own_t)]
    if not with_discrepancy:
        return out
    disc = 0.0
    for i, k in decomp.pairs():
        block = np.asarray(local_fields[(i, k)], dtype=float)
        nodes = decomp.subdomain_nodes[i]
        insts = decomp.slab_instants[k]
        disc = max(disc, float(np.abs(block - out[np.ix_(nodes, insts)]).max()))
    return out, disc
