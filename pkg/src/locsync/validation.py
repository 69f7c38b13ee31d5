"""Input validation helpers used across estimators and linear algebra kernels."""

import numpy as np

from .errors import ModelError, NumericalError


def as_finite_array(x, shape=None, name="array"):
    """Coerce to a float ndarray, checking finiteness and (optionally) shape."""
    arr = np.asarray(x, dtype=float)
    if shape is not None and arr.shape != tuple(shape):
        raise ModelError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    return arr


def check_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericalError(f"{name} must be square, got shape {a.shape}")
    return a


def symmetrize(a):
    """Return the symmetric part (A + A^T)/2."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def ensure_spd(a, rel_floor=1e-12):
    """Symmetrize and, if needed, lift eigenvalues to a floor relative to the largest.

    Covariances here mix units (m^2, s^2, dimensionless), so the floor is
    relative: an absolute floor would swamp legitimately tiny variances.
    """
    a = symmetrize(check_square(a))
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix contains non-finite entries")
    w, v = np.linalg.eigh(a)
    floor = rel_floor * max(w[-1], 0.0)
    if w[0] >= floor:
        return a
    w = np.maximum(w, floor)
    return symmetrize((v * w) @ v.T)


def solve_sym(a, b, term_index=None):
    """Solve a @ x = b for symmetric positive definite a with diagonal equilibration.

    Rows of a may span many orders of magnitude (seconds^2 next to meters^2);
    scaling by 1/sqrt(diag) keeps the factorization well conditioned.
    """
    a = check_square(a)
    b = np.asarray(b, dtype=float)
    d = np.sqrt(np.abs(np.diag(a)))
    d[d == 0.0] = 1.0
    scale = 1.0 / d
    a_s = symmetrize(a * scale[:, None] * scale[None, :])
    b_s = b * scale[:, None] if b.ndim == 2 else b * scale
    try:
        try:
            c = np.linalg.cholesky(a_s)
            x_s = np.linalg.solve(c.T, np.linalg.solve(c, b_s))
        except np.linalg.LinAlgError:
            # fall back to a general solve for indefinite intermediates
            x_s = np.linalg.solve(a_s, b_s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular symmetric solve: {exc}", term_index) from exc
    if not np.all(np.isfinite(x_s)):
        raise NumericalError("non-finite solution in symmetric solve", term_index)
    return x_s * scale[:, None] if b.ndim == 2 else x_s * scale


def inv_sym(a, term_index=None):
    """Inverse of a symmetric positive definite matrix via the scaled solver."""
    a = check_square(a)
    return symmetrize(solve_sym(a, np.eye(a.shape[0]), term_index=term_index))
