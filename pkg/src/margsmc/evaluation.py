"""Error metrics for learned functions and trajectories.

The headline metric is a variance-weighted RMSE over a function grid: each
grid point is weighted by the inverse marginal posterior variance, so
unexplored input regions (where the posterior reverts to its prior) do not
dominate the error. The normalization makes uniform weights reduce exactly
to the plain grid RMSE, and rescaling all weights leaves the metric
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conjugate
from .conjugate import SuffStats
from .errors import DimensionError, EmptyGrid


@dataclass
class FunctionGrid:
    """Equidistant evaluation grid with posterior mean/variance and truth.

    ``points`` is (P, d); ``phi`` caches the basis features at each point;
    ``mean`` and ``variance`` are (P, n_xi); ``truth`` is optional.
    """

    points: np.ndarray
    phi: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    truth: np.ndarray | None
    bounds: tuple
    counts: tuple

    def __len__(self):
        return self.points.shape[0]


def grid_points(bounds, counts) -> np.ndarray:
    """Equidistant points covering the boxed domain exactly, shape (P, d)."""
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    counts = [int(c) for c in np.atleast_1d(counts)] if np.ndim(counts) else [int(counts)]
    if len(counts) == 1 and len(bounds) > 1:
        counts = counts * len(bounds)
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def function_grid(basis, stats: SuffStats, bounds, counts, truth_fn=None) -> FunctionGrid:
    """Evaluate the posterior-mean function and predictive variance on a grid.

    ``variance`` holds the per-output predictive variance
    Lambda_ii * rho / (rho - 2) (the predictive scale when rho <= 2).
    """
    pts = grid_points(bounds, counts)
    phi = np.asarray(basis.phi(pts))
    p = conjugate.params_from_stats(stats)
    mean = phi @ p.M.T
    # predictive scale at every grid point from one factorization of chi1
    lc = np.linalg.cholesky(0.5 * (stats.chi1 + stats.chi1.T))
    half = np.linalg.solve(lc, phi.T)
    quad = np.sum(half**2, axis=0)
    rho = stats.chi3 - stats.n_xi + 1.0
    lam_diag = np.outer((quad + 1.0) / rho, np.diag(p.Psi))
    var = lam_diag * (rho / (rho - 2.0)) if rho > 2.0 else lam_diag
    truth = None
    if truth_fn is not None:
        truth = np.asarray(truth_fn(pts), dtype=float).reshape(len(pts), -1)
    counts_t = tuple(int(c) for c in np.atleast_1d(counts)) if np.ndim(counts) else (int(counts),)
    if len(counts_t) == 1 and pts.shape[1] > 1:
        counts_t = counts_t * pts.shape[1]
    return FunctionGrid(
        points=pts,
        phi=phi,
        mean=mean,
        variance=var,
        truth=truth,
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        counts=counts_t,
    )


def marginal_weight(stats: SuffStats, phi) -> np.ndarray:
    """Inverse-marginal-variance weights w_i = nu / (phi^T V phi * Psi_ii).

    ``phi`` may be a single basis vector (n_phi,) or a batch (P, n_phi);
    the result has a matching leading shape with one weight per output.
    """
    p = conjugate.params_from_stats(stats)
    phi = np.asarray(phi, dtype=float)
    single = phi.ndim == 1
    phi2 = phi[None] if single else phi
    quad = np.einsum("pi,ij,pj->p", phi2, p.V, phi2)
    with np.errstate(divide="ignore"):  # structural zeros of the basis -> inf
        w = p.nu / (quad[:, None] * np.diag(p.Psi)[None, :])
    return w[0] if single else w


def wrmse(grid: FunctionGrid, stats: SuffStats) -> np.ndarray:
    """Variance-weighted RMSE of the posterior mean against the grid truth.

    Weights are normalized to average one over the grid, so constant weights
    reduce the metric to the plain RMSE and any common rescaling of the
    weights cancels.
    """
    if len(grid) == 0:
        raise EmptyGrid("function grid has no points")
    if grid.truth is None:
        raise ValueError("grid carries no truth values")
    w = marginal_weight(stats, grid.phi)
    err2 = (grid.truth - grid.mean) ** 2
    # points where the basis vanishes identically (box boundary; the origin
    # for purely odd bases) have zero marginal variance and infinite weight;
    # the model has no freedom there, so they drop out of the quadrature
    finite = np.isfinite(w)
    w = np.where(finite, w, 0.0)
    if not np.any(finite):
        raise EmptyGrid("no grid point carries a finite weight")
    return np.sqrt(np.sum(w * err2, axis=0) / np.sum(w, axis=0))


def rmse(a, b) -> float:
    """Plain root-mean-square difference between two equal-length sequences."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))
