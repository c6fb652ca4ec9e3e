"""Training pipeline: time-GP derivative extraction, drift-covariance
assembly, marginal-likelihood objective and joint hyper/physical-parameter
estimation.

Stage one smooths each state dimension with an independent GP over time and
differentiates it analytically, producing estimated states, derivatives and
per-point derivative variances.  Stage two treats the derivatives as noisy
observations of a structured drift and minimizes the negative log marginal
likelihood over the kernel hyperparameters and the free structure parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import (SeHyperparams, blocks_to_matrix, phs_kernel_blocks,
                      time_kernel_derivatives)
from .numerics import (NotPositiveDefinite, cholesky_jittered, minimize,
                       solve_spd, spd_inverse_quadratic)

VAR_FLOOR = 1e-10


class OptimizationFailed(RuntimeError):
    """Every optimizer start returned a non-finite objective."""


@dataclass(frozen=True)
class Trajectory:
    """Timestamped noisy state observations with synchronized inputs."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    def __init__(self, times, states, inputs=None):
        times = np.asarray(times, dtype=float).ravel()
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if inputs is None:
            inputs = np.zeros((times.size, 0))
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if times.size < 2:
            raise ValueError("need at least two samples")
        if states.shape[0] != times.size or inputs.shape[0] != times.size:
            raise ValueError("row counts disagree: %d times, %d states, "
                             "%d inputs" % (times.size, states.shape[0],
                                            inputs.shape[0]))
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))
                and np.all(np.isfinite(inputs))):
            raise ValueError("non-finite entries in trajectory")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.inputs.shape[1]


@dataclass(frozen=True)
class TimeGpHyperparams:
    sigma_f: float
    ell: float  # quadratic-form weight on squared time difference
    noise_sigma: float


@dataclass(frozen=True)
class DerivativeDataset:
    """Posterior state/derivative estimates with derivative variances."""

    states: np.ndarray      # (N, n) posterior state means
    derivs: np.ndarray      # (N, n) posterior derivative means
    deriv_vars: np.ndarray  # (N, n) posterior derivative variances
    inputs: np.ndarray      # (N, m) carried through from the trajectory

    def __post_init__(self):
        object.__setattr__(self, "deriv_vars",
                           np.maximum(self.deriv_vars, VAR_FLOOR))

    @property
    def size(self):
        return self.states.shape[0]

    @property
    def n(self):
        return self.states.shape[1]


def concat_datasets(datasets):
    return DerivativeDataset(
        np.concatenate([d.states for d in datasets]),
        np.concatenate([d.derivs for d in datasets]),
        np.concatenate([d.deriv_vars for d in datasets]),
        np.concatenate([d.inputs for d in datasets]))


def _scalar_gp_nlml(times, values, log_params):
    sigma_f, ell, noise = np.exp(log_params)
    k, _, _ = time_kernel_derivatives(times[:, None], times[None, :],
                                      sigma_f, ell)
    k[np.diag_indices_from(k)] += noise ** 2
    try:
        fact = cholesky_jittered(k)
    except NotPositiveDefinite:
        return np.inf
    return 0.5 * (spd_inverse_quadratic(fact, values) + fact.log_det)


def fit_time_gp_dim(times, values, seed=0, max_evals=400, restarts=2):
    """Fit (sigma_f, ell, noise) for one state dimension by NLML."""
    span = float(times[-1] - times[0])
    std = float(np.std(values))
    if std == 0.0:
        # constant signal: no derivative information, floor the scales
        return TimeGpHyperparams(1e-8, 1.0 / span ** 2, 1e-8)
    diffs = np.diff(values)
    noise0 = max(float(np.std(diffs)) / math.sqrt(2.0), 1e-4 * std)
    theta0 = np.log([std + abs(float(np.mean(values))),
                     1.0 / (span / 10.0) ** 2,
                     noise0])
    res = minimize(lambda p: _scalar_gp_nlml(times, values, p), theta0,
                   restarts=restarts, max_evals=max_evals, seed=seed)
    sigma_f, ell, noise = np.exp(res.x_best)
    return TimeGpHyperparams(sigma_f, ell, noise)


def _time_gp_posterior(times, values, hp):
    """State mean, derivative mean and derivative variance at the training
    timestamps for one dimension."""
    k, k1, _ = time_kernel_derivatives(times[:, None], times[None, :],
                                       hp.sigma_f, hp.ell)
    noisy = k.copy()
    noisy[np.diag_indices_from(noisy)] += hp.noise_sigma ** 2
    fact = cholesky_jittered(noisy)
    alpha = solve_spd(fact, values)
    mu_x = k @ alpha
    mu_dx = k1 @ alpha
    half = solve_triangular(fact.lower, k1.T, lower=True)
    k12_self = 2.0 * hp.ell * hp.sigma_f ** 2
    var_dx = k12_self - np.sum(half ** 2, axis=0)
    return mu_x, mu_dx, np.maximum(var_dx, VAR_FLOOR)


def fit_time_gps(traj, seed=0, max_evals=400, restarts=2):
    """Fit one GP over time per state dimension and differentiate it.

    Returns ``(hyperparams, dataset)`` where ``hyperparams`` is a list of
    per-dimension :class:`TimeGpHyperparams` and ``dataset`` holds the
    posterior state means, derivative means and derivative variances at the
    training timestamps.  A constant dimension yields a zero derivative with
    floored variance rather than an error.
    """
    n = traj.n
    hyper = []
    mu_x = np.empty_like(traj.states)
    mu_dx = np.empty_like(traj.states)
    var_dx = np.empty_like(traj.states)
    for j in range(n):
        values = traj.states[:, j]
        hp = fit_time_gp_dim(traj.times, values, seed=seed * n + j,
                             max_evals=max_evals, restarts=restarts)
        hyper.append(hp)
        if np.std(values) == 0.0:
            mu_x[:, j] = values
            mu_dx[:, j] = 0.0
            var_dx[:, j] = VAR_FLOOR
        else:
            mu_x[:, j], mu_dx[:, j], var_dx[:, j] = _time_gp_posterior(
                traj.times, values, hp)
    return hyper, DerivativeDataset(mu_x, mu_dx, var_dx, traj.inputs.copy())


# ---------------------------------------------------------------------------
# stage two: structured drift GP


def assemble_phs_gram(ds, structure, hyper, params):
    """Dense (nN x nN) drift covariance: pairwise structure-kernel blocks
    plus the per-point derivative variances on the diagonal.

    Row index = point * n + state dimension.
    """
    structure.check_params(params)
    jr = structure.jr_at_states(ds.states, params)
    blocks = phs_kernel_blocks(ds.states, ds.states, hyper, jr, jr)
    gram = blocks_to_matrix(blocks)
    gram = 0.5 * (gram + gram.T)
    gram[np.diag_indices_from(gram)] += ds.deriv_vars.ravel()
    return gram


def mean_adjusted_outputs(ds, structure, params):
    """Stacked derivative means minus the input contribution G(x) u."""
    if structure.m != ds.inputs.shape[1]:
        raise ValueError("structure expects %d inputs, dataset has %d"
                         % (structure.m, ds.inputs.shape[1]))
    adjusted = ds.derivs
    if structure.m:
        g = structure.g_at_states(ds.states, params)
        adjusted = ds.derivs - np.einsum("ink,ik->in", g, ds.inputs)
    return adjusted.ravel()


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ThetaPacking:
    """Maps the unconstrained optimizer vector to (hyper, params).

    Kernel scales travel in log space; bounded structure parameters pass
    through a scaled logistic onto (lower, upper), one-sided bounds through
    a shifted exponential, unbounded ones through the identity.
    """

    def __init__(self, structure):
        self.structure = structure
        self.n = structure.n
        self.specs = structure.params

    @property
    def size(self):
        return 1 + self.n + len(self.specs)

    def pack(self, hyper, params):
        raw = [math.log(hyper.sigma_f)]
        raw.extend(np.log(hyper.lam))
        for spec in self.specs:
            v = float(params[spec.name])
            lo, hi = spec.lower, spec.upper
            if np.isfinite(lo) and np.isfinite(hi):
                frac = min(max((v - lo) / (hi - lo), 1e-9), 1 - 1e-9)
                raw.append(math.log(frac / (1.0 - frac)))
            elif np.isfinite(lo):
                raw.append(math.log(max(v - lo, 1e-12)))
            elif np.isfinite(hi):
                raw.append(math.log(max(hi - v, 1e-12)))
            else:
                raw.append(v)
        return np.array(raw)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        hyper = SeHyperparams(float(np.exp(theta[0])),
                              np.exp(theta[1:1 + self.n]))
        params = {}
        for k, spec in enumerate(self.specs):
            raw = theta[1 + self.n + k]
            lo, hi = spec.lower, spec.upper
            if np.isfinite(lo) and np.isfinite(hi):
                params[spec.name] = lo + (hi - lo) * float(
                    _sigmoid(np.array([raw]))[0])
            elif np.isfinite(lo):
                params[spec.name] = lo + math.exp(raw)
            elif np.isfinite(hi):
                params[spec.name] = hi - math.exp(raw)
            else:
                params[spec.name] = float(raw)
        return hyper, params


def nlml(ds, structure, theta, packing=None):
    """Negative log marginal likelihood of the drift data (up to the
    constant term): quadratic form plus log-determinant.

    Any numerical failure or non-finite intermediate maps to +inf so the
    optimizer can treat this as a plain objective.
    """
    packing = packing or ThetaPacking(structure)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        return np.inf
    try:
        hyper, params = packing.unpack(theta)
        gram = assemble_phs_gram(ds, structure, hyper, params)
        fact = cholesky_jittered(gram)
        targets = mean_adjusted_outputs(ds, structure, params)
        value = spd_inverse_quadratic(fact, targets) + fact.log_det
    except (NotPositiveDefinite, ValueError, FloatingPointError,
            ArithmeticError):
        return np.inf
    return value if np.isfinite(value) else np.inf


@dataclass
class TrainConfig:
    restarts: int = 1
    max_evals: int = 500
    simplex_scale: float = 0.3
    seed: int = 0
    time_gp_max_evals: int = 400
    time_gp_restarts: int = 2


@dataclass
class PhsGpModel:
    """Trained structured drift model with cached solves.

    ``alpha`` is the Gram-solve of the mean-adjusted derivative targets and
    ``jr_train`` the structure matrices at the training states, so
    prediction and sampling never re-factorize.
    """

    structure: object
    hyper: SeHyperparams
    params: dict
    noise_sigmas: np.ndarray
    time_gp_hyper: list
    training: DerivativeDataset
    factorization: object
    alpha: np.ndarray
    nlml_value: float
    evals: int

    @property
    def n(self):
        return self.structure.n

    def __post_init__(self):
        self.jr_train = self.structure.jr_at_states(
            self.training.states, self.params)


def train(trajectories, structure, config=None):
    """Run the full two-stage estimation and return a :class:`PhsGpModel`.

    ``trajectories`` may be a single :class:`Trajectory` or a list; each is
    smoothed independently and the derivative datasets are concatenated.
    Deterministic given the data and ``config.seed``.
    """
    config = config or TrainConfig()
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    if not trajectories:
        raise ValueError("need at least one trajectory")
    for traj in trajectories:
        if traj.n != structure.n or traj.m != structure.m:
            raise ValueError("trajectory dimensions (%d states, %d inputs) "
                             "do not match structure (%d, %d)"
                             % (traj.n, traj.m, structure.n, structure.m))
    fits = [fit_time_gps(t, seed=config.seed + 7919 * k,
                         max_evals=config.time_gp_max_evals,
                         restarts=config.time_gp_restarts)
            for k, t in enumerate(trajectories)]
    time_hyper = [f[0] for f in fits]
    ds = concat_datasets([f[1] for f in fits])

    packing = ThetaPacking(structure)
    params0 = structure.initial_params()
    targets0 = mean_adjusted_outputs(ds, structure, params0)
    sigma_f0 = max(float(np.std(targets0)), 1e-6)
    lam0 = 1.0 / np.maximum(np.var(ds.states, axis=0), 1e-6)
    theta0 = packing.pack(SeHyperparams(sigma_f0, lam0), params0)

    objective = lambda theta: nlml(ds, structure, theta, packing)
    res = minimize(objective, theta0, restarts=config.restarts,
                   max_evals=config.max_evals,
                   simplex_scale=config.simplex_scale, seed=config.seed)
    if not np.isfinite(res.f_best):
        raise OptimizationFailed("no optimizer start produced a finite "
                                 "objective")
    hyper, params = packing.unpack(res.x_best)
    gram = assemble_phs_gram(ds, structure, hyper, params)
    fact = cholesky_jittered(gram)
    targets = mean_adjusted_outputs(ds, structure, params)
    alpha = solve_spd(fact, targets)
    noise_sigmas = np.array([hp.noise_sigma for hp in time_hyper[0]])
    return PhsGpModel(structure, hyper, params, noise_sigmas, time_hyper,
                      ds, fact, alpha, res.f_best, res.evals)
