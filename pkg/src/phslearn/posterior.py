"""Posterior energy surfaces: grid sampling, smooth interpolation and drift
prediction for a trained model.

Sampling conditions the joint Gaussian of (observed drift targets, energy
values on a query grid) on the training targets.  A drawn grid sample is then
turned into a globally smooth, bounded energy function by Gaussian
radial-basis interpolation with an analytic gradient, which is what the
simulator differentiates.  Because the interpolant is smooth and the
structure matrices keep their algebraic properties, every realization
simulates as a genuinely passive system regardless of interpolation error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from . import dynamics
from .dynamics import HamiltonianFn
from .kernels import (drift_energy_cross_matrix, phs_kernel,
                      phs_kernel_blocks, blocks_to_matrix, se_gram)
from .numerics import NotPositiveDefinite, cholesky_jittered, solve_spd


class DegenerateGrid(ValueError):
    """Grid has too few points, duplicate nodes, or deficient rank."""


class GridEscapeWarning(UserWarning):
    """A simulated trajectory left the sampled grid's bounding box."""


@dataclass(frozen=True)
class HamiltonianGridSample:
    """One posterior realization of the energy on a finite grid."""

    grid: np.ndarray            # (M, n) query states
    values: np.ndarray          # (M,) sampled energy values
    seed: int
    posterior_mean: np.ndarray  # (M,)
    posterior_std: np.ndarray   # (M,)


def uniform_grid(ranges, counts):
    """Row-stacked lattice over a box: ``ranges`` is a list of (lo, hi) per
    dimension and ``counts`` the number of points per axis."""
    axes = [np.linspace(lo, hi, int(c)) for (lo, hi), c in zip(ranges, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class GridPosterior:
    """Gaussian posterior over energy values on a fixed grid.

    The covariance is formed and factorized once; :meth:`draw` then costs one
    matrix-vector product per seed.
    """

    def __init__(self, model, grid):
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if grid.shape[0] < 1 or grid.shape[1] != model.n:
            raise ValueError("grid must be (M, %d) with M >= 1" % model.n)
        if not np.all(np.isfinite(grid)):
            raise ValueError("grid contains non-finite entries")
        self.grid = grid
        cross = drift_energy_cross_matrix(
            model.training.states, grid, model.hyper, model.jr_train)
        self.mean = cross.T @ model.alpha
        cov = se_gram(grid, grid, model.hyper) \
            - cross.T @ solve_spd(model.factorization, cross)
        cov = 0.5 * (cov + cov.T)
        self.std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        if cov.any():
            self._factor = cholesky_jittered(cov)
        else:
            self._factor = None

    def draw(self, seed):
        z = np.random.Generator(np.random.Philox(seed)).standard_normal(
            self.mean.size)
        values = self.mean.copy()
        if self._factor is not None:
            values += self._factor.lower @ z
        return HamiltonianGridSample(self.grid, values, int(seed),
                                     self.mean.copy(), self.std.copy())


def sample_hamiltonian(model, grid, seed):
    """One seeded posterior realization of the energy over ``grid``.

    For repeated draws on the same grid build a :class:`GridPosterior` once
    and call :meth:`GridPosterior.draw` per seed.
    """
    return GridPosterior(model, grid).draw(seed)


@dataclass(frozen=True)
class InterpolatedHamiltonian(HamiltonianFn):
    """Smooth bounded energy approximator through grid samples.

    Behaves as a :class:`~phslearn.dynamics.HamiltonianFn`; also records the
    grid, weights and shape parameter it was built from.  Values decay to
    zero away from the grid, keeping the function bounded everywhere.
    """

    grid: np.ndarray = None
    weights: np.ndarray = None
    shape: float = None
    seed: int = None


def interpolate(sample, shape_scale=2.0):
    """Build a Gaussian radial-basis interpolant of a grid sample.

    Basis width is ``shape_scale`` times the median nearest-neighbor grid
    spacing; weights solve (Phi + 1e-10 I) w = values.  The gradient is
    analytic.
    """
    grid = np.atleast_2d(np.asarray(sample.grid, dtype=float))
    values = np.asarray(sample.values, dtype=float)
    m, n = grid.shape
    if m < n + 1:
        raise DegenerateGrid("need at least n+1 = %d nodes, got %d"
                             % (n + 1, m))
    if np.linalg.matrix_rank(grid - grid.mean(axis=0)) < n:
        raise DegenerateGrid("grid is rank-deficient along some dimension")
    dist = cdist(grid, grid)
    np.fill_diagonal(dist, np.inf)
    spacing = float(np.median(dist.min(axis=1)))
    if spacing <= 0 or not np.isfinite(spacing):
        raise DegenerateGrid("duplicate grid nodes")
    shape = shape_scale * spacing
    phi = np.exp(-(dist * dist) / (2.0 * shape * shape))
    np.fill_diagonal(phi, 1.0)
    phi[np.diag_indices_from(phi)] += 1e-10
    try:
        lower = np.linalg.cholesky(phi)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            "RBF system not positive definite at jitter 1e-10") from None
    weights = solve_triangular(
        lower.T, solve_triangular(lower, values, lower=True), lower=False)

    inv_two_s2 = 1.0 / (2.0 * shape * shape)

    def value(x):
        d = grid - np.asarray(x, dtype=float)[None, :]
        return float(weights @ np.exp(-np.sum(d * d, axis=1) * inv_two_s2))

    def gradient(x):
        d = np.asarray(x, dtype=float)[None, :] - grid
        basis = np.exp(-np.sum(d * d, axis=1) * inv_two_s2)
        return -(2.0 * inv_two_s2) * ((weights * basis) @ d)

    return InterpolatedHamiltonian(value, gradient, grid=grid,
                                   weights=weights, shape=shape,
                                   seed=getattr(sample, "seed", None))


def predict_drift(model, x, u=None):
    """GP-conditional drift at one state: returns ``(mean, cov)``.

    ``mean`` includes the input contribution G(x) u when ``u`` is given.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n:
        raise ValueError("state has dimension %d, model expects %d"
                         % (x.size, model.n))
    jr_x = model.structure.eval_jr(x, model.params)
    cross = blocks_to_matrix(phs_kernel_blocks(
        model.training.states, x[None, :], model.hyper, model.jr_train,
        jr_x[None, :, :]))
    mean = cross.T @ model.alpha
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.size != model.structure.m:
            raise ValueError("input has dimension %d, structure expects %d"
                             % (u.size, model.structure.m))
        if u.size:
            mean = mean + model.structure.eval_g(x, model.params) @ u
    prior = phs_kernel(x, x, model.hyper,
                       lambda _: jr_x)
    cov = prior - cross.T @ solve_spd(model.factorization, cross)
    return mean, 0.5 * (cov + cov.T)


def posterior_mean_field(model, u):
    """Vector field driven by the posterior-mean drift (no sampling)."""
    if model.structure.m == 0:
        return lambda t, x: predict_drift(model, x)[0]
    return lambda t, x: predict_drift(model, x, np.atleast_1d(u(t)))[0]


def sample_and_simulate(model, grid, seed, x0, u, t_span, shape_scale=2.0,
                        method="RK45", dt=1e-3):
    """Draw one energy realization, interpolate it, and simulate the system.

    The returned record carries the seed; steps whose state leaves the grid
    bounding box are flagged in ``record.escaped`` and raise a
    :class:`GridEscapeWarning` (the simulation itself continues, since the
    interpolant is defined everywhere).
    """
    sample = sample_hamiltonian(model, grid, seed)
    hstar = interpolate(sample, shape_scale=shape_scale)
    record = dynamics.simulate(model.structure, model.params, hstar, u, x0,
                               t_span, method=method, dt=dt, seed=seed)
    lo = sample.grid.min(axis=0)
    hi = sample.grid.max(axis=0)
    escaped = np.any((record.solution.states < lo)
                     | (record.solution.states > hi), axis=1)
    if np.any(escaped):
        first = record.solution.times[np.argmax(escaped)]
        warnings.warn("trajectory left the sampled grid box at t=%g" % first,
                      GridEscapeWarning)
    record.escaped = escaped
    return record
