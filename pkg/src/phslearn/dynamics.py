"""Port-Hamiltonian structures: validation, vector fields, simulation,
passivity auditing and energy-preserving interconnection.

A system is ``dx/dt = (J(x) - R(x)) grad H(x) + G(x) u`` with skew J,
symmetric positive-semidefinite R, input matrix G and scalar energy H; the
collocated output is ``y = G(x)^T grad H(x)``.  J, R, G entries are
expression trees over the state and named parameters, so one structure
describes a whole parametric family.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import exprdsl
from .exprdsl import Expr
from .numerics import OdeSolution, integrate_rk


class StructureInvalid(ValueError):
    """A structural matrix violated skewness, symmetry or PSD-ness."""

    def __init__(self, condition, state=None, detail=""):
        self.condition = condition
        self.state = None if state is None else np.asarray(state)
        msg = "structure invalid (%s)" % condition
        if state is not None:
            msg += " at state %s" % (np.asarray(state),)
        if detail:
            msg += ": " + detail
        super().__init__(msg)


class PortMismatch(ValueError):
    """Interconnection port indices are out of range or not distinct."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    initial: float
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if not self.lower <= self.initial <= self.upper:
            raise ValueError("initial value of %r outside [%g, %g]"
                             % (self.name, self.lower, self.upper))


def _as_expr(entry):
    if isinstance(entry, Expr):
        return entry
    if isinstance(entry, str):
        return exprdsl.parse_expr(entry)
    return Expr.const(float(entry))


def _expr_matrix(rows, n_rows, n_cols, label):
    rows = list(rows)
    if len(rows) != n_rows or any(len(r) != n_cols for r in rows):
        raise ValueError("%s must be %dx%d" % (label, n_rows, n_cols))
    return tuple(tuple(_as_expr(e) for e in r) for r in rows)


@dataclass(frozen=True)
class PhsStructure:
    """Parametric (J, R, G) matrices plus parameter metadata.

    Entries may be given as :class:`Expr` trees, source strings, or plain
    numbers.  Construction checks that parameter names are unique and that
    every state/parameter reference in the entries is declared; the algebraic
    conditions (skewness, symmetry, PSD-ness) are state-dependent and checked
    by :func:`validate_structure` at probe points.
    """

    n: int
    m: int
    j: tuple = field(repr=False)
    r: tuple = field(repr=False)
    g: tuple = field(repr=False)
    params: tuple = ()

    def __init__(self, n, m, j, r, g, params=()):
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "m", int(m))
        object.__setattr__(self, "j", _expr_matrix(j, n, n, "J"))
        object.__setattr__(self, "r", _expr_matrix(r, n, n, "R"))
        object.__setattr__(self, "g", _expr_matrix(g, n, max(m, 0), "G"))
        specs = tuple(p if isinstance(p, ParamSpec) else ParamSpec(**p)
                      for p in params)
        object.__setattr__(self, "params", specs)
        names = [p.name for p in specs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names: %s" % (names,))
        declared = set(names)
        referenced = set()
        for rows in (self.j, self.r, self.g):
            for row in rows:
                for e in row:
                    referenced |= e.param_names()
                    bad = [i for i in e.state_indices() if not 1 <= i <= n]
                    if bad:
                        raise ValueError(
                            "state reference x%d outside dimension %d"
                            % (bad[0], n))
        undeclared = referenced - declared
        if undeclared:
            raise ValueError("undeclared parameters: %s" % sorted(undeclared))

    # -- evaluation ---------------------------------------------------------

    def initial_params(self):
        return {p.name: p.initial for p in self.params}

    def check_params(self, values):
        """Raise ValueError if any declared parameter is missing or out of
        bounds; extra keys are ignored."""
        for p in self.params:
            if p.name not in values:
                raise ValueError("missing parameter %r" % p.name)
            v = values[p.name]
            if not (p.lower <= v <= p.upper) or not np.isfinite(v):
                raise ValueError("parameter %r = %g outside [%g, %g]"
                                 % (p.name, v, p.lower, p.upper))

    def _eval(self, rows, x, values):
        out = np.empty((len(rows), len(rows[0]) if rows else 0))
        for i, row in enumerate(rows):
            for jj, e in enumerate(row):
                out[i, jj] = exprdsl.eval_expr(e, x, values)
        return out

    def eval_j(self, x, values):
        return self._eval(self.j, x, values)

    def eval_r(self, x, values):
        return self._eval(self.r, x, values)

    def eval_g(self, x, values):
        if self.m == 0:
            return np.zeros((self.n, 0))
        return self._eval(self.g, x, values)

    def eval_jr(self, x, values):
        """J(x) - R(x) in one pass."""
        return self.eval_j(x, values) - self.eval_r(x, values)

    def _eval_batch(self, rows, states, values, n_cols):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        out = np.empty((states.shape[0], len(rows), n_cols))
        for i, row in enumerate(rows):
            for jj, e in enumerate(row):
                out[:, i, jj] = exprdsl.eval_expr_batch(e, states, values)
        return out

    def jr_at_states(self, states, values):
        """Stacked (N, n, n) J-R matrices over rows of ``states``."""
        return (self._eval_batch(self.j, states, values, self.n)
                - self._eval_batch(self.r, states, values, self.n))

    def g_at_states(self, states, values):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.m == 0:
            return np.zeros((states.shape[0], self.n, 0))
        return self._eval_batch(self.g, states, values, self.m)


@dataclass(frozen=True)
class HamiltonianFn:
    """Scalar energy function with an analytic gradient."""

    value: object  # state -> float
    gradient: object  # state -> (n,) array


@dataclass
class SimulationRecord:
    """Stored integration steps with energy and port bookkeeping.

    ``outputs[k] = G(x_k)^T grad H(x_k)`` and ``supply[k] = u_k . y_k``; the
    optional ``seed`` identifies the sampled energy realization that was
    simulated, ``escaped`` flags steps outside a reference grid box.
    """

    solution: OdeSolution
    inputs: np.ndarray
    hamiltonian: np.ndarray
    outputs: np.ndarray
    supply: np.ndarray
    seed: int | None = None
    escaped: np.ndarray | None = None


@dataclass(frozen=True)
class ValidationReport:
    max_skew_defect: float
    max_symmetry_defect: float
    min_r_eigenvalue: float
    probes: int


def sample_probe_params(structure, count, seed=0, span=10.0):
    """Draw ``count`` parameter dictionaries inside the declared bounds.

    Unbounded sides are clamped to ``initial +/- span`` for probing purposes.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for _ in range(count):
        values = {}
        for p in structure.params:
            lo = p.lower if np.isfinite(p.lower) else p.initial - span
            hi = p.upper if np.isfinite(p.upper) else p.initial + span
            values[p.name] = float(rng.uniform(lo, hi))
        out.append(values)
    return out


def validate_structure(structure, probe_states, probe_params=None,
                       skew_tol=1e-12, sym_tol=1e-12, eig_tol=-1e-10):
    """Check skewness of J, symmetry and PSD-ness of R at every probe point.

    Returns a :class:`ValidationReport` with the worst defects seen, or
    raises :class:`StructureInvalid` at the first violated condition.
    """
    probe_states = np.atleast_2d(np.asarray(probe_states, dtype=float))
    if probe_states.shape[0] == 0:
        raise ValueError("probe_states must be non-empty")
    if probe_params is None:
        probe_params = [structure.initial_params()]
    if not probe_params:
        raise ValueError("probe_params must be non-empty")
    max_skew = 0.0
    max_sym = 0.0
    min_eig = np.inf
    for values in probe_params:
        structure.check_params(values)
        for x in probe_states:
            jmat = structure.eval_j(x, values)
            skew = float(np.max(np.abs(jmat + jmat.T)))
            if skew > skew_tol:
                raise StructureInvalid("skew", x,
                                       "max |J + J^T| = %g" % skew)
            rmat = structure.eval_r(x, values)
            sym = float(np.max(np.abs(rmat - rmat.T)))
            if sym > sym_tol:
                raise StructureInvalid("symmetry", x,
                                       "max |R - R^T| = %g" % sym)
            eig = float(np.linalg.eigvalsh(0.5 * (rmat + rmat.T)).min())
            if eig < eig_tol:
                raise StructureInvalid("psd", x,
                                       "min eig(R) = %g" % eig)
            max_skew = max(max_skew, skew)
            max_sym = max(max_sym, sym)
            min_eig = min(min_eig, eig)
    return ValidationReport(max_skew, max_sym, min_eig,
                            probe_states.shape[0] * len(probe_params))


def vector_field(structure, params, hamiltonian, u):
    """Closure computing (J-R)(x) grad H(x) + G(x) u(t)."""
    structure.check_params(params)
    grad = hamiltonian.gradient
    if structure.m == 0:
        def f(t, x):
            return structure.eval_jr(x, params) @ np.asarray(grad(x))
    else:
        def f(t, x):
            drift = structure.eval_jr(x, params) @ np.asarray(grad(x))
            return drift + structure.eval_g(x, params) @ np.atleast_1d(u(t))
    return f


def simulate(structure, params, hamiltonian, u, x0, t_span,
             method="RK45", dt=1e-3, r_check_every=100, seed=None):
    """Integrate the system and record energy, outputs and supply per step.

    The dissipation matrix is re-checked for PSD-ness every
    ``r_check_every`` stored steps (a guard against parameter values that
    leave the valid region mid-trajectory).
    """
    f = vector_field(structure, params, hamiltonian, u)
    sol = integrate_rk(f, x0, t_span, dt=dt, method=method)
    steps = sol.times.size
    if structure.m == 0:
        u_fn = lambda t: np.zeros(0)
    else:
        u_fn = lambda t: np.atleast_1d(np.asarray(u(t), dtype=float))
    inputs = np.empty((steps, structure.m))
    outputs = np.empty((steps, structure.m))
    ham = np.empty(steps)
    supply = np.empty(steps)
    for k in range(steps):
        x = sol.states[k]
        ham[k] = hamiltonian.value(x)
        inputs[k] = u_fn(sol.times[k])
        outputs[k] = structure.eval_g(x, params).T @ np.asarray(
            hamiltonian.gradient(x))
        supply[k] = float(inputs[k] @ outputs[k])
        if r_check_every and k % r_check_every == 0:
            rmat = structure.eval_r(x, params)
            eig = float(np.linalg.eigvalsh(0.5 * (rmat + rmat.T)).min())
            if eig < -1e-10:
                raise StructureInvalid("psd", x, "min eig(R) = %g" % eig)
    return SimulationRecord(sol, inputs, ham, outputs, supply, seed=seed)


@dataclass(frozen=True)
class PassivityAudit:
    max_violation: float
    dissipated: np.ndarray


def passivity_audit(record):
    """Compare the discrete energy rate against the supplied port power.

    Per interval: dH/dt is the forward difference of the stored energy and
    the supply is averaged over the interval endpoints (the discrete analogue
    of the power balance).  ``max_violation`` is the largest excess of the
    energy rate over the supply; ``dissipated`` is the per-interval slack.
    """
    t = record.solution.times
    dh = np.diff(record.hamiltonian) / np.diff(t)
    s = 0.5 * (record.supply[:-1] + record.supply[1:])
    dissipated = s - dh
    return PassivityAudit(float(np.max(dh - s)) if dh.size else 0.0,
                          dissipated)


# ---------------------------------------------------------------------------
# energy-preserving interconnection


def _fold_neg(e):
    return e if e.is_zero() else Expr("neg", args=(e,))


def _fold_mul(a, b):
    if a.is_zero() or b.is_zero():
        return Expr.const(0.0)
    if a.is_one():
        return b
    if b.is_one():
        return a
    return Expr("mul", args=(a, b))


def _fold_add(a, b):
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    return Expr("add", args=(a, b))


def _shift_expr(e, shift, rename):
    if e.kind == "state":
        return Expr("state", e.value + shift, offset=e.offset)
    if e.kind == "param":
        return Expr("param", rename.get(e.value, e.value), offset=e.offset)
    if e.args:
        return Expr(e.kind, e.value,
                    tuple(_shift_expr(a, shift, rename) for a in e.args),
                    e.offset)
    return e


def _split_ports(structure, ports):
    ports = list(ports)
    if len(set(ports)) != len(ports):
        raise PortMismatch("port indices must be distinct: %s" % ports)
    if any(not 0 <= p < structure.m for p in ports):
        raise PortMismatch("port index out of range 0..%d: %s"
                           % (structure.m - 1, ports))
    coupled = [[row[p] for p in ports] for row in structure.g]
    external = [[row[p] for p in range(structure.m) if p not in ports]
                for row in structure.g]
    return coupled, external


def interconnect(structure1, hamiltonian1, structure2, hamiltonian2,
                 port_map):
    """Join two systems through power-conserving feedback on paired ports.

    ``port_map`` lists (port-of-1, port-of-2) pairs; the first system's
    coupled input receives the negated coupled output of the second and vice
    versa.  The coupling enters the joint interconnection matrix as the
    skew pair (-G1c G2c^T, G2c G1c^T); dissipation stays block-diagonal, the
    remaining ports stack block-diagonally, and the joint energy is the sum
    of the two energies.  Returns ``(structure, hamiltonian)``.
    """
    pairs = list(port_map)
    if not pairs:
        raise PortMismatch("port_map must contain at least one pair")
    if len(pairs) > min(structure1.m, structure2.m):
        raise PortMismatch("more pairs than available ports")
    ports1, ports2 = zip(*pairs)
    g1c, g1x = _split_ports(structure1, ports1)
    g2c, g2x = _split_ports(structure2, ports2)

    n1, n2 = structure1.n, structure2.n
    taken = {p.name for p in structure1.params}
    rename = {}
    for p in structure2.params:
        name = p.name
        while name in taken:
            name += "_b"
        taken.add(name)
        if name != p.name:
            rename[p.name] = name
    shift = lambda e: _shift_expr(e, n1, rename)

    zero = Expr.const(0.0)
    mc = len(pairs)
    n = n1 + n2
    j_rows = [[zero] * n for _ in range(n)]
    r_rows = [[zero] * n for _ in range(n)]
    for a in range(n1):
        for b in range(n1):
            j_rows[a][b] = structure1.j[a][b]
            r_rows[a][b] = structure1.r[a][b]
    for a in range(n2):
        for b in range(n2):
            j_rows[n1 + a][n1 + b] = shift(structure2.j[a][b])
            r_rows[n1 + a][n1 + b] = shift(structure2.r[a][b])
    for a in range(n1):
        for b in range(n2):
            acc = zero
            for c in range(mc):
                acc = _fold_add(acc, _fold_mul(g1c[a][c], shift(g2c[b][c])))
            j_rows[a][n1 + b] = _fold_neg(acc)
            j_rows[n1 + b][a] = acc

    m1x, m2x = structure1.m - mc, structure2.m - mc
    g_rows = [[zero] * (m1x + m2x) for _ in range(n)]
    for a in range(n1):
        for c in range(m1x):
            g_rows[a][c] = g1x[a][c]
    for a in range(n2):
        for c in range(m2x):
            g_rows[n1 + a][m1x + c] = shift(g2x[a][c])

    params = list(structure1.params)
    for p in structure2.params:
        params.append(ParamSpec(rename.get(p.name, p.name), p.initial,
                                p.lower, p.upper))
    composed = PhsStructure(n, m1x + m2x, j_rows, r_rows, g_rows, params)

    h1v, h1g = hamiltonian1.value, hamiltonian1.gradient
    h2v, h2g = hamiltonian2.value, hamiltonian2.gradient
    joint = HamiltonianFn(
        value=lambda x: float(h1v(x[:n1])) + float(h2v(x[n1:])),
        gradient=lambda x: np.concatenate(
            [np.asarray(h1g(x[:n1])), np.asarray(h2g(x[n1:]))]))
    return composed, joint
