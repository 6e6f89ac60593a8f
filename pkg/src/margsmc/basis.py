"""Basis-function construction and spectral prior covariances.

Builds sinusoidal eigenfunction bases on a box domain, evaluates the
squared-exponential spectral density, and assembles the diagonal prior
column covariance whose entries encode smoothness assumptions about the
function to be learned. Anti-symmetric subsets (even indices only) encode
oddness about the origin; stacked bases run several one-dimensional models
in parallel inside a single weight matrix.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# clamp bookkeeping: out-of-domain inputs are clamped to the box and counted
_CLAMP = {"count": 0, "warned": False}


def clamp_count() -> int:
    return _CLAMP["count"]


def reset_clamp_count():
    _CLAMP["count"] = 0
    _CLAMP["warned"] = False


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel hyperparameters (squared-exponential only)."""

    sigma2: float
    lengthscales: tuple
    kind: str = "squared-exponential"

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in self.lengthscales))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.kind != "squared-exponential":
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if not self.lengthscales or any(l <= 0 for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")

    @property
    def dims(self):
        return len(self.lengthscales)


@dataclass(frozen=True)
class HilbertBasisConfig:
    """Sinusoidal eigenfunction basis on the box [-L_1, L_1] x ... x [-L_d, L_d].

    ``indices`` holds one integer tuple (j_1 .. j_d) per basis function:

        phi_k(z) = prod_i  sin(pi j_i (z_i + L_i) / (2 L_i)) / sqrt(L_i).
    """

    L: tuple
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "L", tuple(float(l) for l in self.L))
        object.__setattr__(self, "indices", tuple(tuple(int(j) for j in t) for t in self.indices))
        if any(l <= 0 for l in self.L):
            raise ValueError("all half-lengths L_i must be positive")
        d = len(self.L)
        for t in self.indices:
            if len(t) != d:
                raise ValueError(f"index tuple {t} does not match dims = {d}")
            if any(j < 1 for j in t):
                raise ValueError(f"index tuple {t} has entries below 1")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("index tuples must be unique")

    @property
    def dims(self):
        return len(self.L)

    @property
    def n_phi(self):
        return len(self.indices)

    def phi(self, z):
        return eval_basis(self, z)


def eval_basis(cfg: HilbertBasisConfig, z) -> np.ndarray:
    """Evaluate all basis functions at z, shape (..., dims) -> (..., n_phi).

    Inputs outside the box are clamped to the boundary; clamping is counted
    and logged once per process.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (cfg.dims,):
        raise ValueError(f"z must have trailing dimension {cfg.dims}, got {z.shape}")
    l = np.asarray(cfg.L)
    clipped = np.clip(z, -l, l)
    n_out = int(np.sum(np.any(clipped != z, axis=-1)))
    if n_out:
        _CLAMP["count"] += n_out
        if not _CLAMP["warned"]:
            _CLAMP["warned"] = True
            logger.warning(
                "basis input outside [-L, L]; clamping to the boundary "
                "(this message is emitted once; see clamp_count())"
            )
    j = np.asarray(cfg.indices, dtype=float)  # (n_phi, d)
    arg = np.pi * j * (clipped[..., None, :] + l) / (2.0 * l)
    return np.sin(arg).prod(axis=-1) / np.sqrt(np.prod(l))


def eigenvalues(cfg: HilbertBasisConfig) -> np.ndarray:
    """Laplacian eigenvalues of the sine basis: rho_k = sum_i (pi j_i / (2 L_i))^2."""
    j = np.asarray(cfg.indices, dtype=float)
    l = np.asarray(cfg.L)
    return ((np.pi * j / (2.0 * l)) ** 2).sum(axis=1)


def se_spectral_density(kernel: KernelSpec, omega) -> np.ndarray:
    """Squared-exponential spectral density.

    Scalar ``omega`` is treated isotropically (requires a shared lengthscale):
    S(w) = sigma2 (2 pi)^{d/2} (prod l_i) exp(-l^2 w^2 / 2). A length-d vector
    evaluates the separable (ARD) form exp(-sum l_i^2 w_i^2 / 2).
    """
    ls = np.asarray(kernel.lengthscales)
    d = kernel.dims
    amp = kernel.sigma2 * (2.0 * np.pi) ** (d / 2.0) * np.prod(ls)
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 0 or (d > 1 and omega.shape[-1:] != (d,)):
        if d > 1 and not np.allclose(ls, ls[0]):
            raise ValueError("scalar frequency needs a shared lengthscale")
        return amp * np.exp(-0.5 * ls[0] ** 2 * omega**2)
    if d == 1 and omega.ndim >= 1 and omega.shape[-1] != 1:
        # 1-D kernels accept plain frequency arrays
        return amp * np.exp(-0.5 * ls[0] ** 2 * omega**2)
    return amp * np.exp(-0.5 * np.sum(ls**2 * omega**2, axis=-1))


def prior_column_covariance(cfg: HilbertBasisConfig, kernel: KernelSpec) -> np.ndarray:
    """Diagonal prior column covariance V = diag(S(sqrt(rho_1)), ...).

    With a shared lengthscale the density is evaluated isotropically at
    sqrt(rho_k); with ARD lengthscales the separable form is evaluated at the
    per-dimension frequencies pi j_i / (2 L_i).
    """
    if kernel.dims != cfg.dims:
        raise ValueError("kernel dims do not match basis dims")
    ls = np.asarray(kernel.lengthscales)
    if np.allclose(ls, ls[0]):
        s = se_spectral_density(kernel, np.sqrt(eigenvalues(cfg)))
    else:
        j = np.asarray(cfg.indices, dtype=float)
        freqs = np.pi * j / (2.0 * np.asarray(cfg.L))
        s = se_spectral_density(kernel, freqs)
    return np.diag(np.asarray(s, dtype=float))


def antisymmetric_indices(n: int, d: int = 1) -> list:
    """First n even indices j = 2, 4, ..., 2n, whose basis functions are odd."""
    if d != 1:
        raise NotImplementedError("anti-symmetric subsets are defined for d = 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    return [2 * k for k in range(1, n + 1)]


def antisymmetric_basis(L: float, n: int) -> HilbertBasisConfig:
    """1-D basis restricted to odd functions about the origin."""
    return HilbertBasisConfig((L,), tuple((j,) for j in antisymmetric_indices(n)))


def hilbert_basis(L, n_phi: int, budget: int | None = None) -> HilbertBasisConfig:
    """Basis with the n_phi smallest-eigenvalue index tuples.

    Candidate tuples come from the lattice {1..budget}^d (budget defaults to
    n_phi); ties are broken lexicographically.
    """
    L = tuple(float(v) for v in np.atleast_1d(L))
    d = len(L)
    budget = int(budget or n_phi)
    if budget**d < n_phi:
        raise ValueError(f"lattice budget {budget}^{d} cannot supply {n_phi} tuples")

    def eig(t):
        return sum((np.pi * j / (2.0 * L[i])) ** 2 for i, j in enumerate(t))

    cand = sorted(itertools.product(range(1, budget + 1), repeat=d), key=lambda t: (eig(t), t))
    return HilbertBasisConfig(L, tuple(cand[:n_phi]))


@dataclass(frozen=True)
class StackedBasis:
    """Several independent bases reading disjoint feature coordinates.

    Part k evaluates its (one-dimensional) sub-basis on feature column
    ``columns[k]``; the stacked vector is the concatenation. Used to learn
    per-output curves (e.g. one friction curve per axle) inside a single
    weight matrix.
    """

    parts: tuple
    columns: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        cols = self.columns if self.columns is not None else tuple(range(len(self.parts)))
        object.__setattr__(self, "columns", tuple(int(c) for c in cols))
        if len(self.columns) != len(self.parts):
            raise ValueError("one feature column per part is required")
        for p in self.parts:
            if p.dims != 1:
                raise ValueError("stacked parts must be one-dimensional bases")

    @property
    def dims(self):
        return max(self.columns) + 1

    @property
    def n_phi(self):
        return sum(p.n_phi for p in self.parts)

    def phi(self, z):
        z = np.asarray(z, dtype=float)
        blocks = [eval_basis(p, z[..., [c]]) for p, c in zip(self.parts, self.columns)]
        return np.concatenate(blocks, axis=-1)

    def column_prior(self, kernels) -> np.ndarray:
        """Block-diagonal prior column covariance, one kernel per part."""
        kernels = tuple(kernels)
        if len(kernels) != len(self.parts):
            raise ValueError("one kernel per part is required")
        blocks = [prior_column_covariance(p, k) for p, k in zip(self.parts, kernels)]
        out = np.zeros((self.n_phi, self.n_phi))
        at = 0
        for b in blocks:
            n = b.shape[0]
            out[at : at + n, at : at + n] = b
            at += n
        return out
