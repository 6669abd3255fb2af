"""Dense linear-algebra kernels used throughout the identification pipeline.

Provides a truncated SVD pseudoinverse, the principal real matrix logarithm,
the matrix exponential, and a deterministic coordinate-descent solver for
L1-penalized least squares. All functions are pure and thread-safe.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numba import njit

from .validation import as_matrix, as_vector, check_rcond

EPS = np.finfo(np.float64).eps


class NumericalFailure(RuntimeError):
    """A dense kernel failed (SVD non-convergence, overflow, ...)."""


class NonPrincipalSpectrumError(NumericalFailure):
    """Matrix has an eigenvalue on or near the closed negative real axis,
    so the principal real logarithm does not exist."""


def default_rcond(shape) -> float:
    """Relative singular-value cutoff: max(rows, cols) times machine epsilon."""
    return max(shape) * EPS


def pinv(a, rcond: float | None = None, return_rank: bool = False):
    """Moore-Penrose pseudoinverse via SVD.

    Singular values ``s_j <= rcond * s_max`` are treated as zero. The default
    ``rcond`` is ``max(rows, cols) * eps``.
    """
    a = as_matrix(a, "pinv input")
    if rcond is None:
        rcond = default_rcond(a.shape)
    rcond = check_rcond(rcond)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(
            f"SVD did not converge for a {a.shape[0]}x{a.shape[1]} matrix"
        ) from exc
    cutoff = rcond * (s[0] if s.size else 0.0)
    keep = s > cutoff
    rank = int(keep.sum())
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    result = (vt.T * inv_s) @ u.T
    if return_rank:
        return result, rank
    return result


def effective_rank(a, rcond: float | None = None) -> int:
    """Number of singular values above the relative cutoff."""
    a = as_matrix(a, "matrix")
    if rcond is None:
        rcond = default_rcond(a.shape)
    s = np.linalg.svd(a, compute_uv=False)
    return int((s > rcond * s[0]).sum()) if s.size else 0


def expm(a) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring with Pade approximation)."""
    a = as_matrix(a, "expm input", square=True)
    e = scipy.linalg.expm(a)
    if not np.isfinite(e).all():
        raise NumericalFailure(
            f"matrix exponential overflowed for a {a.shape[0]}x{a.shape[0]} "
            f"matrix with norm {np.linalg.norm(a):.3e}"
        )
    return e


def spectral_margin(eigenvalues: np.ndarray) -> float:
    """Distance from the spectrum to the closed negative real axis."""
    w = np.asarray(eigenvalues, dtype=complex)
    dist = np.where(w.real < 0.0, np.abs(w.imag), np.abs(w))
    return float(dist.min()) if dist.size else np.inf


_AXIS_TOL = 1e-12
_IMAG_TOL = 1e-8
_COND_LIMIT = 1e8


def logm(a, cond_limit: float = _COND_LIMIT) -> np.ndarray:
    """Principal real matrix logarithm.

    Uses a complex eigendecomposition when the eigenvector matrix is well
    conditioned (below ``cond_limit``) and falls back to inverse scaling and
    squaring on the Schur form otherwise. Raises NonPrincipalSpectrumError if
    any eigenvalue lies within 1e-12 (relative) of the closed negative real
    axis, or if the computed logarithm has a relative imaginary residue above
    1e-8; both indicate the sampling time is too large or the operator
    estimate is bad.
    """
    a = as_matrix(a, "logm input", square=True)
    try:
        w, v = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(
            f"eigendecomposition failed for a {a.shape[0]}x{a.shape[0]} matrix"
        ) from exc
    scale = float(np.abs(w).max())
    if scale == 0.0:
        raise NonPrincipalSpectrumError("matrix is nilpotent or zero: spectrum at 0")
    on_axis = (np.abs(w.imag) <= _AXIS_TOL * scale) & (w.real <= _AXIS_TOL * scale)
    if on_axis.any():
        bad = w[on_axis][0]
        raise NonPrincipalSpectrumError(
            f"eigenvalue {bad:.6e} lies on the closed negative real axis; "
            "the principal logarithm does not exist"
        )
    with np.errstate(all="ignore"):
        cond_v = np.linalg.cond(v)
    if np.isfinite(cond_v) and cond_v <= cond_limit:
        log_a = (v * np.log(w)) @ np.linalg.inv(v)
    else:
        # near-defective eigenvectors: inverse scaling-and-squaring is stabler
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            log_a = scipy.linalg.logm(a)
        log_a = np.asarray(log_a, dtype=complex)
    norm = np.linalg.norm(log_a)
    imag_norm = np.linalg.norm(np.imag(log_a))
    if imag_norm > _IMAG_TOL * max(1.0, norm):
        raise NonPrincipalSpectrumError(
            f"logarithm has relative imaginary residue {imag_norm / max(norm, EPS):.3e}; "
            "spectrum is too close to the negative real axis"
        )
    return np.real(log_a)


@njit(cache=True, nogil=True)
def _cd_kernel(design, target, threshold, max_iter, tol, record):  # pragma: no cover
    # Cyclic coordinate descent with correlation screening: columns whose
    # update would provably be a no-op (zero coefficient and correlation
    # within the threshold) are skipped for a pass; a fresh KKT check
    # reactivates any violator, so the iterate sequence matches plain cyclic
    # descent up to provably-zero updates.
    n_rows, n_cols = design.shape
    coef = np.zeros(n_cols)
    resid = target.copy()
    col_sq = np.zeros(n_cols)
    for j in range(n_cols):
        s = 0.0
        for i in range(n_rows):
            s += design[i, j] * design[i, j]
        col_sq[j] = s
    objectives = np.zeros(max_iter if record else 0)
    active = np.zeros(n_cols, np.bool_)
    n_sweeps = 0
    converged = False
    while n_sweeps < max_iter:
        corr = np.dot(resid, design)
        any_active = False
        for j in range(n_cols):
            if col_sq[j] == 0.0:
                active[j] = False
                continue
            active[j] = coef[j] != 0.0 or abs(corr[j]) > threshold
            any_active = any_active or active[j]
        if not any_active:
            converged = True
            break
        inner_converged = False
        while n_sweeps < max_iter:
            max_change = 0.0
            for j in range(n_cols):
                if not active[j]:
                    continue
                cj = col_sq[j]
                z = coef[j] * cj
                for i in range(n_rows):
                    z += design[i, j] * resid[i]
                if z > threshold:
                    new = (z - threshold) / cj
                elif z < -threshold:
                    new = (z + threshold) / cj
                else:
                    new = 0.0
                d = new - coef[j]
                if d != 0.0:
                    for i in range(n_rows):
                        resid[i] -= design[i, j] * d
                    coef[j] = new
                    ad = abs(d)
                    if ad > max_change:
                        max_change = ad
            n_sweeps += 1
            if record:
                rss = 0.0
                for i in range(n_rows):
                    rss += resid[i] * resid[i]
                l1 = 0.0
                for j in range(n_cols):
                    l1 += abs(coef[j])
                objectives[n_sweeps - 1] = rss + 2.0 * threshold * l1
            if max_change < tol:
                inner_converged = True
                break
        if not inner_converged:
            break
        corr = np.dot(resid, design)
        violation = False
        for j in range(n_cols):
            if not active[j] and col_sq[j] > 0.0 and abs(corr[j]) > threshold:
                violation = True
                break
        if not violation:
            converged = True
            break
    return coef, n_sweeps, converged, objectives[:n_sweeps]


@dataclass
class LassoResult:
    coef: np.ndarray
    converged: bool
    n_sweeps: int
    objectives: np.ndarray | None = None


def lasso(
    design,
    target,
    penalty: float,
    max_iter: int = 10000,
    tol: float = 1e-8,
    standardize: bool = False,
    record_objective: bool = False,
) -> LassoResult:
    """Minimize ``||target - design @ coef||^2 + penalty * ||coef||_1``.

    Cyclic coordinate descent sweeping columns in order; converged when the
    largest coefficient change within a sweep drops below ``tol``. There is no
    intercept term. With ``standardize=True`` columns are scaled to unit
    Euclidean norm internally and coefficients rescaled on output.

    Non-convergence does not raise: the result carries ``converged=False``
    and the caller decides.
    """
    design = as_matrix(design, "design")
    target = as_vector(target, "target")
    if design.shape[0] != target.shape[0]:
        raise ValueError(
            f"design has {design.shape[0]} rows but target has {target.shape[0]} entries"
        )
    penalty = float(penalty)
    if penalty < 0.0:
        raise ValueError(f"penalty must be nonnegative, got {penalty}")
    scales = None
    if standardize:
        scales = np.linalg.norm(design, axis=0)
        scales[scales == 0.0] = 1.0
        design = design / scales
    design = np.ascontiguousarray(design)
    coef, n_sweeps, converged, objectives = _cd_kernel(
        design, target, penalty / 2.0, int(max_iter), float(tol), record_objective
    )
    if scales is not None:
        coef = coef / scales
    return LassoResult(
        coef=coef,
        converged=bool(converged),
        n_sweeps=int(n_sweeps),
        objectives=objectives if record_objective else None,
    )
