"""Structured-matrix kernels for the network filters.

Three pieces the estimators lean on: a rank-update recursion that applies
information-form measurement updates without ever inverting a full-size
matrix, an L-banded approximate-inverse construction from overlapping
principal blocks, and an iterate/collapse scheme that reconstructs a
covariance from its banded inverse. Plus rigid point-set alignment for
evaluation.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, NumericalError
from .validation import as_finite_array, check_square, inv_sym


@dataclass(frozen=True, eq=False)
class BandedMatrix:
    """Symmetric matrix whose entries vanish for |row - col| > half_bandwidth."""

    data: np.ndarray
    half_bandwidth: int

    def __post_init__(self):
        a = as_finite_array(self.data, name="data")
        check_square(a, "data")
        n = a.shape[0]
        L = int(self.half_bandwidth)
        if not 1 <= L < n:
            raise ValueError(f"half_bandwidth must be in [1, {n - 1}], got {L}")
        if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ValueError("banded matrix must be symmetric")
        a = 0.5 * (a + a.T)
        if np.any(a[~_band_mask(n, L)] != 0.0):
            raise ValueError("entries outside the band must be zero")
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "half_bandwidth", L)

    @property
    def n(self):
        return self.data.shape[0]

    def as_array(self):
        return self.data.copy()


def _band_mask(n, L):
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]) <= L


def binomial_update_chain(p_prior, terms):
    """Apply information-form rank updates to a covariance.

    Returns (P^-1 + sum_j U_j B_j V_j)^-1 for terms = [(U_j, B_j, V_j), ...]
    via the recursion Q <- Q - Q U B (I + V Q U B)^-1 V Q, so only inner
    systems the size of each term's row count are ever solved; neither P
    nor any B is inverted.
    """
    q = as_finite_array(p_prior, name="p_prior")
    check_square(q, "p_prior")
    q = 0.5 * (q + q.T)
    n = q.shape[0]
    for j, (u, b, v) in enumerate(terms):
        u = as_finite_array(u, name=f"U[{j}]")
        b = as_finite_array(b, name=f"B[{j}]")
        v = as_finite_array(v, name=f"V[{j}]")
        if u.ndim != 2 or v.ndim != 2 or u.shape[0] != n or v.shape[1] != n:
            raise ValueError(f"term {j} has incompatible shapes {u.shape}, {v.shape}")
        m = u.shape[1]
        if b.shape != (m, m) or v.shape[0] != m:
            raise ValueError(f"term {j} inner dimensions disagree")
        qu = q @ u
        inner = np.eye(m) + (v @ qu) @ b
        try:
            gain = np.linalg.solve(inner.T, (qu @ b).T).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular inner matrix in rank update",
                                 term_index=j) from exc
        if not np.all(np.isfinite(gain)):
            raise NumericalError("non-finite rank update", term_index=j)
        q = q - gain @ (v @ q)
        q = 0.5 * (q + q.T)
    return q


def lband_approx_inverse(p, L):
    """L-banded approximation of P^-1 from overlapping principal blocks.

    Sums the padded inverses of the (L+1)-sized principal blocks of P and
    subtracts the padded inverses of their L-sized overlaps. Exact whenever
    P^-1 is itself L-banded; otherwise it is the banded matrix agreeing
    with P on the band after inversion (maximum-entropy completion).
    """
    a = as_finite_array(p, name="p")
    check_square(a, "p")
    n = a.shape[0]
    L = int(L)
    if not 1 <= L < n:
        raise ValueError(f"L must be in [1, {n - 1}], got {L}")
    out = np.zeros_like(a)
    for i in range(n - L):
        sl = slice(i, i + L + 1)
        try:
            out[sl, sl] += inv_sym(a[sl, sl])
        except NumericalError as exc:
            raise NumericalError(f"singular principal block at {i}") from exc
    for i in range(1, n - L):
        sl = slice(i, i + L)
        try:
            out[sl, sl] -= inv_sym(a[sl, sl])
        except NumericalError as exc:
            raise NumericalError(f"singular overlap block at {i}") from exc
    out = 0.5 * (out + out.T)
    out[~_band_mask(n, L)] = 0.0
    return BandedMatrix(data=out, half_bandwidth=L)


def _collapse(p, L):
    """Fill entries beyond the band from nearer diagonals.

    Applies p_ab = p_{a,b-1} * p_{a+1,b-1}^-1 * p_{a+1,b} in increasing
    |a - b| order, mirroring each filled entry.
    """
    n = p.shape[0]
    p = p.copy()
    var = np.abs(np.diag(p))
    for d in range(L + 1, n):
        prev = p.diagonal(d - 1)
        piv = p.diagonal(d - 2)[1:-1]
        num = prev[:-1] * prev[1:]
        # a vanishing numerator forces a zero fill whatever the pivot is
        if np.any((piv == 0.0) & (num != 0.0)):
            raise NumericalError(f"zero pivot in collapse at distance {d}")
        new = np.divide(num, piv, out=np.zeros_like(num), where=piv != 0.0)
        # keep fills statistically meaningful: cap at the Cauchy-Schwarz
        # bound, since the chain recursion blows up across weakly
        # correlated intermediate entries
        cap = 0.999 * np.sqrt(var[: n - d] * var[d:])
        new = np.clip(new, -cap, cap)
        idx = np.arange(n - d)
        p[idx, idx + d] = new
        p[idx + d, idx] = new
    return p


def dici_or_invert(j_mat, p_prev=None, gamma=0.6, iters=10, *,
                   half_bandwidth=None, return_history=False):
    """Reconstruct a covariance from its (approximately) banded inverse.

    Each pass refines band entries with one overrelaxed Jacobi sweep
    P <- P - gamma * M^-1 (J P - I) with M = diag(J), fills out-of-band
    entries by the collapse recursion in increasing |a - b| order, then
    symmetrizes. A full (non-banded) matrix is accepted: the sweep uses
    its full rows, only the declared band is iterated. p_prev warm-starts
    the solution; the default start is the reciprocal diagonal.

    The step size is clamped per call so the sweep stays contractive: the
    Jacobi modes scale with the eigenvalues of the diagonally equilibrated
    input, so gamma is capped at 1.8 over the Gershgorin row-sum bound of
    that matrix. Well-conditioned inputs are unaffected; strongly coupled
    information matrices get a smaller, stable step instead of divergence.

    With return_history=True also returns the per-pass iterates (each a
    full, collapsed, symmetric matrix) for convergence inspection.
    """
    if isinstance(j_mat, BandedMatrix):
        a = j_mat.as_array()
        L = j_mat.half_bandwidth if half_bandwidth is None else int(half_bandwidth)
    else:
        a = as_finite_array(j_mat, name="j_mat")
        check_square(a, "j_mat")
        L = a.shape[0] - 1 if half_bandwidth is None else int(half_bandwidth)
    n = a.shape[0]
    if not 1 <= L <= n - 1:
        raise ValueError(f"half_bandwidth must be in [1, {n - 1}], got {L}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    m = np.diag(a).copy()
    if np.any(m == 0.0):
        raise NumericalError("zero diagonal entry in banded inverse")
    mask = _band_mask(n, L)

    # contractivity clamp: Gershgorin bound on the equilibrated spectrum
    scale = 1.0 / np.sqrt(np.abs(m))
    lam_bound = float(np.max(scale * (np.abs(a) @ scale)))
    gamma = min(gamma, 1.8 / lam_bound)

    if p_prev is None:
        p = np.diag(1.0 / m)
    else:
        p = as_finite_array(p_prev, name="p_prev").copy()
        check_square(p, "p_prev")
        if p.shape[0] != n:
            raise ValueError("p_prev dimension mismatch")
        p = 0.5 * (p + p.T)

    eye = np.eye(n)
    history = []
    for _ in range(iters):
        residual = a @ p - eye
        stepped = p - gamma * (residual / m[:, None])
        p = np.where(mask, stepped, p)
        p = _collapse(p, L)
        p = 0.5 * (p + p.T)
        if return_history:
            history.append(p.copy())
    return (p, history) if return_history else p


def procrustes_align(est, truth):
    """Rigid alignment (rotation + translation, no scaling) of est onto truth.

    Returns (rotation, translation, aligned) minimizing the summed squared
    distance, with the reflection case corrected to a proper rotation.
    """
    e = as_finite_array(est, name="est")
    t = as_finite_array(truth, name="truth")
    if e.ndim != 2 or t.ndim != 2 or e.shape != t.shape or e.shape[1] != 3:
        raise AlignmentError(f"need matching (n, 3) point sets, got {e.shape} and {t.shape}")
    n = e.shape[0]
    if n < 3:
        raise AlignmentError(f"need at least 3 points, got {n}")
    e_mean = e.mean(axis=0)
    t_mean = t.mean(axis=0)
    h = (e - e_mean).T @ (t - t_mean)
    u, s, vt = np.linalg.svd(h)
    scale = max(s[0], 1.0)
    if s[1] <= 1e-12 * scale:
        raise AlignmentError("degenerate point configuration: rotation not unique")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = t_mean - rot @ e_mean
    aligned = e @ rot.T + trans
    return rot, trans, aligned
