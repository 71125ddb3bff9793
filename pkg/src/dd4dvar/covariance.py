"""Background- and observation-error covariance structures and restrictions."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import NotSPDError, check_count, check_positive, check_symmetric


def gaussian_correlation(n_p, dx):
    """Gaussian correlation matrix c_ij = rho^(|i-j|^2), rho = exp(-dx^2/2).

    Entries with |i - j| >= n_p/2 are hard zeros.  Note the truncation can
    destroy positive definiteness when rho is close to 1 (dx small relative
    to the node count); callers pick dx so the factorization succeeds.
    """
    n_p = check_count("n_p", n_p)
    dx = check_positive("dx", dx)
    k = np.abs(np.subtract.outer(np.arange(n_p), np.arange(n_p)))
    rho = np.exp(-dx * dx / 2.0)
    c = rho ** (k.astype(float) ** 2)
    c[k >= n_p / 2.0] = 0.0
    return c


def factor_covariance(b):
    """Lower-triangular Cholesky factor V with V V^T = B.

    Raises NotSPDError when B is not numerically positive definite.
    """
    b = check_symmetric("covariance", b)
    try:
        return np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"covariance is not positive definite: {exc}") from exc


@dataclass(eq=False)
class BackgroundCovariance:
    """B = sigma_m2 * C with its Cholesky factor and subdomain restrictions."""

    sigma_m2: float
    correlation: np.ndarray
    matrix: np.ndarray = field(init=False)
    factor: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sigma_m2 = check_positive("sigma_m2", self.sigma_m2)
        self.correlation = check_symmetric("correlation", self.correlation)
        self.matrix = self.sigma_m2 * self.correlation
        self.factor = factor_covariance(self.matrix)
        self._local_factors = {}

    @classmethod
    def build(cls, n_p, dx, sigma_m2):
        return cls(sigma_m2, gaussian_correlation(n_p, dx))

    @property
    def n_p(self):
        return self.matrix.shape[0]

    def restrict(self, decomp, i, j=None):
        """B_i (principal block on subdomain i) or the |I_i| x delta cross
        block toward adjacent subdomain j."""
        rows = decomp.subdomain_nodes[i]
        if j is None:
            return self.matrix[np.ix_(rows, rows)]
        cols = decomp.overlap_nodes(i, j)
        return self.matrix[np.ix_(rows, cols)]

    def local_factor(self, decomp, i):
        """Cholesky factor of B_i, computed from B_i directly (restricting
        the global factor would not factor the restricted matrix)."""
        nodes = decomp.subdomain_nodes[i]
        key = (int(nodes[0]), int(nodes[-1]), len(nodes))
        if key not in self._local_factors:
            self._local_factors[key] = factor_covariance(self.restrict(decomp, i))
        return self._local_factors[key]

    def overlap_block(self, decomp, i, j):
        """delta x delta principal block of B on the overlap of i and j."""
        ov = decomp.overlap_nodes(i, j)
        return self.matrix[np.ix_(ov, ov)]

    def overlap_factor(self, decomp, i, j):
        return factor_covariance(self.overlap_block(decomp, i, j))

    def embedded_coupling(self, decomp, i, j):
        """Overlap coupling as an |I_i| x |I_i| matrix.

        The delta x delta overlap block is placed at subdomain i's local
        overlap positions, zeros elsewhere.  This keeps the local system
        matrix symmetric with eigenvalues >= 1 (the block is positive
        semidefinite), which the cross-block embedding does not.
        """
        pos = decomp.local_positions(i, decomp.overlap_nodes(i, j))
        out = np.zeros((len(decomp.subdomain_nodes[i]),) * 2)
        out[np.ix_(pos, pos)] = self.overlap_block(decomp, i, j)
        return out


@dataclass(eq=False)
class ObservationCovariance:
    """Diagonal observation-error covariance R = sigma_02 * I per instant."""

    sigma_02: float

    def __post_init__(self):
        self.sigma_02 = check_positive("sigma_02", self.sigma_02)

    def block(self, n_obs):
        """R_l for one instant."""
        return self.sigma_02 * np.eye(n_obs)

    def stacked_diagonal(self, n_obs, n_instants):
        """Diagonal of the block assembly over ``n_instants`` instants."""
        return np.full(n_obs * n_instants, self.sigma_02)
