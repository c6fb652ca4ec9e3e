"""Magnetic-levitation benchmark: an iron ball in the field of a controlled
inductor.

State: vertical position x1, momentum x2, magnetic flux x3.  The structure
couples a lossy mechanical oscillator (drag proportional to |x2|) to a lossy
electrical circuit through a position-dependent inductance
L(x1) = 1/(0.1 + x1^2); energy is H = x2^2/(2m) + x3^2/(2 L(x1)).

The reference right-hand side below is written out by hand from those
formulas on purpose: it gives the tests an oracle that does not share code
with the expression-matrix evaluation path.
"""

from __future__ import annotations

import numpy as np

from .dynamics import HamiltonianFn, ParamSpec, PhsStructure
from .learning import Trajectory
from .numerics import integrate_rk

RESISTANCE = 0.1
DRAG = 1.0
MASS = 0.1


def structure(c_initial=2.0, c_lower=1e-6, c_upper=10.0):
    """Parametric maglev structure with the drag coefficient ``c`` free."""
    return PhsStructure(
        n=3, m=1,
        j=[["0", "1", "0"],
           ["-1", "0", "0"],
           ["0", "0", "0"]],
        r=[["0", "0", "0"],
           ["0", "c*abs(x2)", "0"],
           ["0", "0", "10"]],
        g=[["0"], ["0"], ["1"]],
        params=[ParamSpec("c", c_initial, c_lower, c_upper)])


def fixed_structure(c=DRAG):
    """Maglev structure with the drag coefficient baked in (no free
    parameters)."""
    return PhsStructure(
        n=3, m=1,
        j=[["0", "1", "0"],
           ["-1", "0", "0"],
           ["0", "0", "0"]],
        r=[["0", "0", "0"],
           ["0", "%r*abs(x2)" % float(c), "0"],
           ["0", "0", "10"]],
        g=[["0"], ["0"], ["1"]])


def inductance(x1):
    return 1.0 / (0.1 + x1 ** 2)


def true_hamiltonian():
    def value(x):
        return x[1] ** 2 / (2.0 * MASS) + 0.5 * x[2] ** 2 / inductance(x[0])

    def gradient(x):
        return np.array([x[0] * x[2] ** 2,
                         x[1] / MASS,
                         x[2] * (0.1 + x[0] ** 2)])

    return HamiltonianFn(value, gradient)


def reference_rhs(x, u, c=DRAG):
    """Hand-derived ground-truth drift (independent of the structure
    machinery)."""
    x1, x2, x3 = x
    return np.array([
        x2 / MASS,
        -x1 * x3 ** 2 - c * abs(x2) * x2 / MASS,
        -x3 * (0.1 + x1 ** 2) / RESISTANCE + u,
    ])


def training_input(t):
    """Rectangular wave, amplitude 2, period 5 s."""
    return np.array([2.0 if (t % 5.0) < 2.5 else -2.0])


def test_input(t):
    """Held-out input: constant 2 until t = 10 s, then zero."""
    return np.array([2.0 if t < 10.0 else 0.0])


def simulate_truth(x0, t_span, u, dt=1e-3, c=DRAG):
    """Integrate the hand-coded reference dynamics with fixed-step RK4."""
    f = lambda t, x: reference_rhs(x, float(np.atleast_1d(u(t))[0]), c=c)
    return integrate_rk(f, x0, t_span, dt=dt, method="RK4")


def generate_trajectory(noise_sigma=0.01, dt_sample=0.05, t_end=20.0,
                        x0=None, seed=0, input_profile="training", c=DRAG):
    """Sample a noisy training or test trajectory of the true system.

    Integration uses fixed-step RK4 at dt = 1e-3 and the samples are taken
    on exact step multiples, so ``noise_sigma = 0`` reproduces the
    integrated states to solver accuracy.
    """
    if input_profile == "training":
        u = training_input
        x0 = np.array([1.0, 0.0, 0.0]) if x0 is None else np.asarray(x0, float)
    elif input_profile == "test":
        u = test_input
        x0 = np.array([0.5, 0.1, 0.5]) if x0 is None else np.asarray(x0, float)
    else:
        raise ValueError("input_profile must be 'training' or 'test'")
    dt = 1e-3
    stride = int(round(dt_sample / dt))
    if abs(stride * dt - dt_sample) > 1e-12:
        raise ValueError("dt_sample must be a multiple of %g" % dt)
    sol = simulate_truth(x0, (0.0, t_end), u, dt=dt, c=c)
    times = sol.times[::stride]
    states = sol.states[::stride].copy()
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        states += rng.normal(0.0, noise_sigma, states.shape)
    inputs = np.array([u(t) for t in times])
    return Trajectory(times, states, inputs)
