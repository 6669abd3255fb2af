"""Sample-space ("dual") Koopman approximation with inputs.

Test functions are evaluated at the augmented snapshots [x_k, u_k] and
[y_k, u_k]; the resulting K x K operator advances any test function's sample
values by one sampling interval. Its scaled matrix logarithm approximates the
infinitesimal generator and yields vector-field estimates at the data points,
which feed the topology step.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .dictionary import TestFunctionSet, eval_matrix, rbf_set
from .simulate import SnapshotDataset


@dataclass
class DualOperator:
    """Sample-space Koopman matrix and its generator approximation."""

    koopman: np.ndarray
    generator: np.ndarray
    t_sample: float
    test_set_id: str = ""
    diagnostics: dict = field(default_factory=dict)


def augmented_snapshots(ds: SnapshotDataset):
    """Stack states with the (held) inputs: rows [x_k, u_k] and [y_k, u_k]."""
    return np.hstack([ds.X, ds.U]), np.hstack([ds.Y, ds.U])


def _koopman_matrix(ds, tests: TestFunctionSet, rcond=None):
    if tests.count < ds.n_samples:
        raise ValueError(
            f"need at least as many test functions as samples: "
            f"{tests.count} < {ds.n_samples}"
        )
    xbar, ybar = augmented_snapshots(ds)
    p_x = eval_matrix(tests.functions, xbar)
    p_y = eval_matrix(tests.functions, ybar)
    pinv_px, rank = numerics.pinv(p_x, rcond=rcond, return_rank=True)
    koopman = p_y @ pinv_px
    if rank < ds.n_samples:
        warnings.warn(
            f"test-function matrix has effective rank {rank} < {ds.n_samples} samples; "
            "the sample-space operator is rank deficient",
            stacklevel=3,
        )
    return koopman, rank


def fit_dual_operator(ds: SnapshotDataset, tests: TestFunctionSet, rcond=None) -> DualOperator:
    """Build the K x K sample-space operator and its generator log(A)/T_s."""
    koopman, rank = _koopman_matrix(ds, tests, rcond)
    eigenvalues = np.linalg.eigvals(koopman)
    try:
        generator = numerics.logm(koopman) / ds.t_sample
    except numerics.NonPrincipalSpectrumError as exc:
        raise numerics.NonPrincipalSpectrumError(
            f"{exc}; reduce t_sample or change the test set"
        ) from exc
    diagnostics = {
        "effective_rank": rank,
        "n_tests": tests.count,
        "koopman_cond": float(np.linalg.cond(koopman)),
        "spectral_margin": numerics.spectral_margin(eigenvalues),
    }
    return DualOperator(
        koopman=koopman,
        generator=generator,
        t_sample=ds.t_sample,
        test_set_id=tests.label,
        diagnostics=diagnostics,
    )


def estimate_vector_field(op: DualOperator, ds: SnapshotDataset) -> np.ndarray:
    """Row k approximates the state derivative at (x_k, u_k).

    The coordinate identities are applied analytically: the generator matrix
    multiplies the stacked state rows. Inputs enter implicitly through the
    operator; estimates are valid only at the sampled state-input pairs.
    """
    if op.koopman.shape[0] != ds.n_samples:
        raise ValueError(
            f"operator was built from {op.koopman.shape[0]} samples, "
            f"dataset has {ds.n_samples}"
        )
    return op.generator @ ds.X


def koopman_residual(koopman: np.ndarray, ds: SnapshotDataset) -> float:
    """Frobenius norm of Y - A X over the state columns (operator fit error)."""
    return float(np.linalg.norm(ds.Y - koopman @ ds.X))


def generator_residual(generator: np.ndarray, ds: SnapshotDataset, derivatives) -> float:
    """Frobenius norm of dX - L X against externally supplied derivatives."""
    derivatives = np.asarray(derivatives, dtype=float)
    return float(np.linalg.norm(derivatives - generator @ ds.X))


def select_test_set(ds: SnapshotDataset, candidates, rcond=None):
    """Score each candidate by the operator fit error and return the argmin.

    Returns (best_index, scores, failed_indices). Candidates whose operator
    cannot be built are scored +inf; ties break toward the smaller index.
    """
    if len(candidates) == 0:
        raise ValueError("need at least one candidate test set")
    scores = np.full(len(candidates), np.inf)
    failed = []
    for i, tests in enumerate(candidates):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                koopman, _ = _koopman_matrix(ds, tests, rcond)
            scores[i] = koopman_residual(koopman, ds)
        except (numerics.NumericalFailure, ValueError):
            failed.append(i)
    best = int(np.argmin(scores))
    return best, scores, failed


def rbf_test_sets(ds: SnapshotDataset, gammas, centers: str = "xy"):
    """Gaussian RBF candidates centered at the augmented data points.

    ``centers="xy"`` uses both {x_k, u_k} and {y_k, u_k} (2K functions),
    ``centers="x"`` only the former (K functions).
    """
    xbar, ybar = augmented_snapshots(ds)
    if centers == "xy":
        pts = np.vstack([xbar, ybar])
    elif centers == "x":
        pts = xbar
    else:
        raise ValueError(f"centers must be 'x' or 'xy', got {centers!r}")
    return [rbf_set(pts, g, label=f"rbf(gamma={g!r},centers={centers})") for g in gammas]
