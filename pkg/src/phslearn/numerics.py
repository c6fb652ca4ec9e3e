"""Shared dense linear-algebra, sampling, optimization and ODE primitives.

Everything here is deterministic given its inputs (random draws take explicit
integer seeds and use a counter-based generator), so results are reproducible
artifacts.  All matrices are dense; problem sizes stay in the low thousands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize as _sciopt
from scipy.linalg import solve_triangular


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Factorization failed even after the jitter escalation ladder."""


class NonFiniteState(RuntimeError):
    """Integration produced a non-finite state; carries the failure time."""

    def __init__(self, time):
        self.time = time
        super().__init__("non-finite state at t=%g" % time)


@dataclass(frozen=True)
class SpdFactorization:
    """Lower-triangular Cholesky factor of (A + jitter*I)."""

    lower: np.ndarray
    jitter_used: float
    log_det: float

    @property
    def size(self):
        return self.lower.shape[0]


def cholesky_jittered(a, symmetry_rtol=1e-10):
    """Cholesky-factorize a symmetric matrix, escalating diagonal jitter.

    The input is required to be symmetric within ``symmetry_rtol`` (relative
    to its largest entry) and is symmetrized internally.  Factorization is
    attempted with jitter 0, then ``1e-10 * mean(diag)`` escalating by 10x
    per retry up to ``1e-2 * mean(diag)``.

    Raises
    ------
    NotPositiveDefinite
        If every retry fails.
    ValueError
        If the input is not square or not symmetric within tolerance.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix, got shape %s" % (a.shape,))
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > symmetry_rtol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)

    base = 1e-10 * float(np.mean(np.diag(a))) if a.size else 0.0
    jitter = 0.0
    limit = base * 1e8  # 1e-2 * mean(diag)
    while True:
        try:
            lower = np.linalg.cholesky(
                a if jitter == 0.0 else a + jitter * np.eye(a.shape[0]))
            log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
            return SpdFactorization(lower, jitter, log_det)
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = base
            else:
                jitter *= 10.0
            if jitter <= 0.0 or jitter > limit:
                raise NotPositiveDefinite(
                    "not positive definite (last jitter %g)" % jitter) from None


def solve_spd(fact, b):
    """Solve (A + jitter*I) X = b from a cached factorization.

    ``b`` may be a vector or a matrix; the result has the same shape.
    """
    b = np.asarray(b, dtype=float)
    if b.shape[0] != fact.size:
        raise ValueError("dimension mismatch: factor is %d, rhs has %d rows"
                         % (fact.size, b.shape[0]))
    y = solve_triangular(fact.lower, b, lower=True)
    return solve_triangular(fact.lower.T, y, lower=False)


def spd_inverse_quadratic(fact, b):
    """Return b^T (A + jitter*I)^-1 b without forming the full solve twice."""
    y = solve_triangular(fact.lower, b, lower=True)
    return float(y @ y)


def sample_mvn(mean, cov, seed):
    """One multivariate-normal draw with a counter-based seeded generator.

    Identical (seed, shape) pairs reproduce bit-identical output on one
    platform.  An all-zero covariance returns the mean exactly; otherwise the
    covariance is factorized with :func:`cholesky_jittered` and the draw is
    ``mean + L z`` with ``z`` standard normal from a Philox stream.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise ValueError("covariance shape %s does not match mean size %d"
                         % (cov.shape, mean.size))
    z = np.random.Generator(np.random.Philox(seed)).standard_normal(mean.size)
    if not cov.any():
        return mean.copy()
    fact = cholesky_jittered(cov)
    return mean + fact.lower @ z


@dataclass
class MinimizeResult:
    x_best: np.ndarray
    f_best: float
    evals: int
    exhausted: bool  # True when some restart stopped on the eval budget


def minimize(f, x0, restarts=0, max_evals=2000, simplex_scale=0.1, seed=0):
    """Derivative-free (Nelder-Mead) minimization with seeded multi-start.

    Runs once from ``x0`` plus ``restarts`` runs from multiplicatively
    perturbed copies (per-coordinate factors log-uniform in [1/3, 3], drawn
    from a Philox stream keyed by ``seed``).  Non-finite objective values are
    treated as +inf penalties.  ``max_evals`` budgets each start; exhausting
    it returns the best point so far with ``exhausted`` set.  The winner is
    the lowest objective value, ties broken by restart index, and is never
    worse than ``f(x0)``.
    """
    x0 = np.asarray(x0, dtype=float)
    evals = 0

    def penalized(x):
        nonlocal evals
        evals += 1
        value = f(x)
        return float(value) if np.isfinite(value) else np.inf

    f0 = penalized(x0)
    rng = np.random.Generator(np.random.Philox(seed))
    starts = [x0]
    for _ in range(restarts):
        factors = np.exp(rng.uniform(-math.log(3.0), math.log(3.0), x0.size))
        starts.append(x0 * factors)

    best_x, best_f = x0.copy(), f0
    exhausted = False
    for start in starts:
        simplex = np.repeat(start[None, :], x0.size + 1, axis=0)
        for k in range(x0.size):
            step = simplex_scale * (abs(start[k]) if start[k] != 0.0 else 1.0)
            simplex[k + 1, k] += step
        res = _sciopt.minimize(
            penalized, start, method="Nelder-Mead",
            options={"maxfev": max_evals, "initial_simplex": simplex,
                     "xatol": 1e-8, "fatol": 1e-10})
        if not res.success:
            exhausted = True
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = np.asarray(res.x, dtype=float), float(res.fun)
    return MinimizeResult(best_x, best_f, evals, exhausted)


@dataclass(frozen=True)
class OdeSolution:
    """Accepted integration steps: strictly increasing times, finite states."""

    times: np.ndarray
    states: np.ndarray

    def at(self, query_times):
        """Resample by linear interpolation between accepted steps."""
        query_times = np.atleast_1d(np.asarray(query_times, dtype=float))
        out = np.empty((query_times.size, self.states.shape[1]))
        for j in range(self.states.shape[1]):
            out[:, j] = np.interp(query_times, self.times, self.states[:, j])
        return out


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(t)


def _rk4(f, x0, t0, t1, dt):
    n_steps = max(1, int(math.ceil((t1 - t0) / dt - 1e-12)))
    times = [t0]
    states = [x0]
    x, t = x0, t0
    for k in range(n_steps):
        t_next = min(t0 + (k + 1) * dt, t1)
        h = t_next - t
        k1 = f(t, x)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_next
        _check_finite(x, t)
        times.append(t)
        states.append(x)
    return np.array(times), np.array(states)


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                   11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _rk45(f, x0, t0, t1, atol, rtol, max_steps=2_000_000):
    """Embedded Dormand-Prince pair with error-per-unit-step control.

    Accepting steps on ``err <= h * tol`` (rather than ``err <= tol``) keeps
    the accumulated global error near the stated tolerances instead of a
    step-count multiple of them.
    """
    t, x = t0, x0
    times = [t0]
    states = [x0]
    span = t1 - t0
    h = min(span, max(1e-6 * span, 1e-3))
    k = np.empty((7, x0.size))
    k[0] = f(t, x)
    for _ in range(max_steps):
        if t >= t1 - 1e-14 * max(abs(t1), 1.0):
            break
        h = min(h, t1 - t)
        for stage in range(1, 7):
            xs = x + h * (_DP_A[stage] @ k[:stage])
            k[stage] = f(t + _DP_C[stage] * h, xs)
        x5 = x + h * (_DP_B5 @ k)
        x4 = x + h * (_DP_B4 @ k)
        _check_finite(x5, t + h)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        err = float(np.sqrt(np.mean(((x5 - x4) / scale) ** 2)))
        tol = max(0.2 * h / span, 2e-5)
        if err <= tol:
            t = t + h
            x = x5
            times.append(t)
            states.append(x)
            k[0] = k[6]  # first-same-as-last
        ratio = (tol / err) ** 0.2 if err > 0.0 else 5.0
        h *= min(5.0, max(0.1, 0.9 * ratio))
        if h <= 1e-14 * max(abs(t), 1.0):
            raise NonFiniteState(t)
    else:
        raise RuntimeError("step budget exhausted at t=%g" % t)
    return np.array(times), np.array(states)


def integrate_rk(f, x0, t_span, dt=1e-3, method="RK4", atol=1e-8, rtol=1e-6):
    """Integrate ``dx/dt = f(t, x)`` over ``t_span``.

    ``RK4`` takes fixed steps of size ``dt`` (final step shortened to land on
    the endpoint); ``RK45`` is the adaptive embedded pair with the given
    tolerances.  Non-finite states abort with :class:`NonFiniteState`.
    """
    x0 = np.asarray(x0, dtype=float)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("t_span must satisfy t1 > t0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_finite(x0, t0)
    fv = lambda t, x: np.asarray(f(t, x), dtype=float)
    if method == "RK4":
        times, states = _rk4(fv, x0, t0, t1, dt)
    elif method == "RK45":
        times, states = _rk45(fv, x0, t0, t1, atol, rtol)
    else:
        raise ValueError("unknown method %r" % method)
    return OdeSolution(times, states)
