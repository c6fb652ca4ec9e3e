"""Squared-exponential kernel family for energy-structured drift models.

The base covariance between two energy values is

    k(x, x') = sigma_f^2 * exp(-(x - x')^T Lambda (x - x'))

with Lambda = diag(lam) acting directly as the quadratic-form weights, so
larger ``lam`` entries mean faster decorrelation along that state dimension.
Because the drift of a port-Hamiltonian system is an affine image of the
energy gradient, the drift covariance is the congruence

    sigma_f^2 * JR(x) * Pi(x, x') * JR(x')^T

where ``JR`` is the interconnection-minus-dissipation matrix and ``Pi`` is
the mixed second derivative of the unit-amplitude kernel, one derivative in
each argument:

    Pi[p, q] = (2 lam_p delta_pq - 4 lam_p lam_q d_p d_q) exp(-d^T Lambda d)

with d = x - x'.  The mixed-argument form is the one under which assembled
block matrices are valid Gram matrices of the energy gradient.  Scalar entry
points mirror that math one pair at a time; the ``*_blocks`` helpers evaluate
whole point sets at once and are what the training and prediction code uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SeHyperparams:
    """Signal scale and per-dimension quadratic-form weights, all > 0."""

    sigma_f: float
    lam: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "lam", np.atleast_1d(
            np.asarray(self.lam, dtype=float)))
        if not (np.isfinite(self.sigma_f) and self.sigma_f > 0):
            raise ValueError("sigma_f must be a positive real")
        if self.lam.ndim != 1 or not np.all(np.isfinite(self.lam)) \
                or np.any(self.lam <= 0):
            raise ValueError("lam must be a vector of positive reals")

    @property
    def dim(self):
        return self.lam.size


def _pair(x, x2, dim):
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != dim or x2.size != dim:
        raise ValueError("point dimension mismatch: %d/%d vs kernel dim %d"
                         % (x.size, x2.size, dim))
    return x, x2


def se_kernel(x, x2, hyp):
    """Scalar SE covariance sigma_f^2 exp(-sum_k lam_k (x_k - x2_k)^2)."""
    x, x2 = _pair(x, x2, hyp.dim)
    d = x - x2
    return hyp.sigma_f ** 2 * float(np.exp(-np.dot(hyp.lam * d, d)))


def se_kernel_grad(x, x2, hyp):
    """Gradient of :func:`se_kernel` with respect to the first argument."""
    x, x2 = _pair(x, x2, hyp.dim)
    d = x - x2
    return -2.0 * hyp.lam * d * (hyp.sigma_f ** 2
                                 * np.exp(-np.dot(hyp.lam * d, d)))

def se_cross_hessian(x, x2, lam):
    """Mixed Hessian of the unit-amplitude SE kernel, one derivative per
    argument: entry (p, q) is d^2/(dx_p dx2_q) exp(-||x-x2||^2_Lambda)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    x, x2 = _pair(x, x2, lam.size)
    d = x - x2
    e = np.exp(-np.dot(lam * d, d))
    return (2.0 * np.diag(lam) - 4.0 * np.outer(lam * d, lam * d)) * e


def phs_kernel(x, x2, hyp, jr):
    """Matrix covariance between structured drifts at two states.

    ``jr`` maps a state to its interconnection-minus-dissipation matrix.
    """
    pi = se_cross_hessian(x, x2, hyp.lam)
    return hyp.sigma_f ** 2 * (np.asarray(jr(x)) @ pi @ np.asarray(jr(x2)).T)


def drift_energy_cross(x, x2, hyp, jr):
    """Cross-covariance between the drift at ``x`` and the energy value at
    ``x2``: JR(x) times the kernel gradient."""
    return np.asarray(jr(x)) @ se_kernel_grad(x, x2, hyp)


def time_kernel_derivatives(t, t2, sigma_f, ell):
    """Scalar-input SE kernel and its first/mixed-second time derivatives.

    Returns ``(k, k1, k12)`` where ``k1`` differentiates the first argument
    and ``k12`` one derivative per argument; ``ell`` is the quadratic-form
    weight (same convention as ``lam``).  Accepts scalars or arrays and
    broadcasts.
    """
    d = np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)
    k = sigma_f ** 2 * np.exp(-ell * d * d)
    k1 = -2.0 * ell * d * k
    k12 = (2.0 * ell - 4.0 * ell ** 2 * d * d) * k
    return k, k1, k12


# ---------------------------------------------------------------------------
# batch evaluation over point sets


def se_gram(a, b, hyp):
    """SE covariance matrix between row-stacked point sets a (Ma x n) and
    b (Mb x n)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d = a[:, None, :] - b[None, :, :]
    return hyp.sigma_f ** 2 * np.exp(-np.einsum("ijk,k,ijk->ij", d, hyp.lam, d))


def cross_hessian_blocks(a, b, lam):
    """Mixed-Hessian blocks for all point pairs: shape (Ma, Mb, n, n)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    d = a[:, None, :] - b[None, :, :]
    e = np.exp(-np.einsum("ijk,k,ijk->ij", d, lam, d))
    ld = lam[None, None, :] * d
    blocks = -4.0 * ld[:, :, :, None] * ld[:, :, None, :]
    blocks[:, :, np.arange(lam.size), np.arange(lam.size)] += 2.0 * lam
    return blocks * e[:, :, None, None]


def phs_kernel_blocks(a, b, hyp, jr_a, jr_b):
    """Drift-covariance blocks sigma_f^2 JR_a[i] Pi[i,j] JR_b[j]^T for all
    pairs; ``jr_a``/``jr_b`` are stacked (M, n, n) structure matrices."""
    pi = cross_hessian_blocks(a, b, hyp.lam)
    return hyp.sigma_f ** 2 * np.einsum(
        "ipk,ijkl,jql->ijpq", jr_a, pi, jr_b, optimize=True)


def blocks_to_matrix(blocks):
    """Flatten (Ma, Mb, n, n) pair blocks into the (Ma*n, Mb*n) matrix with
    one n-row band per point (row index = point*n + state dimension)."""
    ma, mb, n, n2 = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(ma * n, mb * n2)


def drift_energy_cross_matrix(a, b, hyp, jr_a):
    """Stacked cross-covariance between drifts at points ``a`` and energy
    values at points ``b``: shape (Ma*n, Mb), same row stacking as
    :func:`blocks_to_matrix`."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d = a[:, None, :] - b[None, :, :]
    e = np.exp(-np.einsum("ijk,k,ijk->ij", d, hyp.lam, d))
    grads = -2.0 * hyp.sigma_f ** 2 * hyp.lam[None, None, :] * d \
        * e[:, :, None]
    stacked = np.einsum("ipk,ijk->ijp", jr_a, grads)
    ma, mb, n = stacked.shape
    return stacked.transpose(0, 2, 1).reshape(ma * n, mb)
