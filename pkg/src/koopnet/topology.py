"""Topology reconstruction from vector-field estimates.

Per node component, an L1-penalized regression of the estimated derivatives
on zero-mean node functions yields block coefficient vectors; their
aggregated 1-norms weigh the influence of every node and input on every
node. Thresholding the weights produces the estimated neighbor and input
sets, and sweeping the threshold traces the ROC curve for the Boolean
reconstruction.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dictionary import NodeFunctionSet, eval_matrix
from .numerics import lasso
from .simulate import SnapshotDataset


@dataclass
class DesignMatrix:
    """Stacked node-function evaluations with the column block layout."""

    values: np.ndarray
    state_slices: list
    input_slices: list

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def build_design_matrix(ds: SnapshotDataset, funcs: NodeFunctionSet) -> DesignMatrix:
    """Row k holds every node function evaluated at sample k, ordered as
    [node 0 block, ..., node N-1 block, input 0 block, ..., input M-1 block]."""
    if len(funcs.state) != len(ds.node_dims):
        raise ValueError(
            f"node-function set covers {len(funcs.state)} nodes, dataset has {len(ds.node_dims)}"
        )
    if len(funcs.inputs) != len(ds.input_dims):
        raise ValueError(
            f"node-function set covers {len(funcs.inputs)} inputs, dataset has {len(ds.input_dims)}"
        )
    blocks = []
    state_slices, input_slices = [], []
    col = 0
    for k, fs in enumerate(funcs.state):
        try:
            blocks.append(eval_matrix(fs, ds.state_block(k)))
        except ValueError as exc:
            raise ValueError(f"node block {k}: {exc}") from exc
        state_slices.append(slice(col, col + len(fs)))
        col += len(fs)
    for k, fs in enumerate(funcs.inputs):
        try:
            blocks.append(eval_matrix(fs, ds.input_block(k)))
        except ValueError as exc:
            raise ValueError(f"input block {k}: {exc}") from exc
        input_slices.append(slice(col, col + len(fs)))
        col += len(fs)
    values = np.hstack(blocks) if blocks else np.zeros((ds.n_samples, 0))
    return DesignMatrix(values=values, state_slices=state_slices, input_slices=input_slices)


@dataclass
class WeightEstimate:
    state_weights: np.ndarray      # (N, N): influence of node k on node i
    input_weights: np.ndarray      # (N, M): influence of input k on node i
    coefficients: list             # per node: list over components of (D,) vectors
    penalties: list                # per node: per-component penalty used
    unconverged: list = field(default_factory=list)  # (node, component) pairs


def _component_targets(vf: np.ndarray, node_dims):
    offsets = np.concatenate(([0], np.cumsum(node_dims))).astype(int)
    for i in range(len(node_dims)):
        for j in range(node_dims[i]):
            yield i, j, vf[:, offsets[i] + j]


def estimate_weights(
    vf,
    design: DesignMatrix,
    node_dims,
    penalty: float | None = None,
    penalty_fraction: float = 0.01,
    max_iter: int = 10000,
    tol: float = 1e-8,
    standardize: bool = False,
    threads: int = 1,
) -> WeightEstimate:
    """Solve one Lasso per node component and aggregate block 1-norms.

    When no absolute ``penalty`` is given, each regression uses
    ``penalty_fraction * ||H^T target||_inf`` so the effective shrinkage is
    scale free. Regressions are independent and may run on several threads;
    results are placed by index so the outcome does not depend on scheduling.
    """
    vf = np.asarray(vf, dtype=float)
    h = design.values
    if vf.shape[0] != h.shape[0]:
        raise ValueError(
            f"vector field has {vf.shape[0]} rows, design matrix has {h.shape[0]}"
        )
    if vf.shape[1] != int(np.sum(node_dims)):
        raise ValueError(
            f"vector field has {vf.shape[1]} columns, node dims sum to {int(np.sum(node_dims))}"
        )
    jobs = list(_component_targets(vf, node_dims))

    def solve(job):
        _i, _j, target = job
        rho = penalty
        if rho is None:
            rho = penalty_fraction * float(np.abs(h.T @ target).max()) if h.size else 0.0
        res = lasso(h, target, rho, max_iter=max_iter, tol=tol, standardize=standardize)
        return rho, res

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, jobs))
    else:
        results = [solve(job) for job in jobs]

    n_nodes, n_inputs = len(node_dims), len(design.input_slices)
    state_weights = np.zeros((n_nodes, n_nodes))
    input_weights = np.zeros((n_nodes, n_inputs))
    coefficients = [[] for _ in range(n_nodes)]
    penalties = [[] for _ in range(n_nodes)]
    unconverged = []
    for (i, j, _), (rho, res) in zip(jobs, results):
        coefficients[i].append(res.coef)
        penalties[i].append(rho)
        if not res.converged:
            unconverged.append((i, j))
        for k, sl in enumerate(design.state_slices):
            state_weights[i, k] += np.abs(res.coef[sl]).sum()
        for k, sl in enumerate(design.input_slices):
            input_weights[i, k] += np.abs(res.coef[sl]).sum()
    return WeightEstimate(
        state_weights=state_weights,
        input_weights=input_weights,
        coefficients=coefficients,
        penalties=penalties,
        unconverged=unconverged,
    )


@dataclass
class TopologyEstimate:
    """Thresholded weights: neighbor/input sets consistent with the stored
    matrices (membership means weight >= threshold)."""

    state_weights: np.ndarray
    input_weights: np.ndarray
    threshold: float
    neighbors: list
    inputs: list
    meta: dict = field(default_factory=dict)


def threshold_topology(weights: WeightEstimate, threshold: float, meta=None) -> TopologyEstimate:
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    lam, delta = weights.state_weights, weights.input_weights
    neighbors = [sorted(np.flatnonzero(lam[i] >= threshold).tolist()) for i in range(lam.shape[0])]
    inputs = [sorted(np.flatnonzero(delta[i] >= threshold).tolist()) for i in range(lam.shape[0])]
    return TopologyEstimate(
        state_weights=lam.copy(),
        input_weights=delta.copy(),
        threshold=float(threshold),
        neighbors=neighbors,
        inputs=inputs,
        meta=dict(meta or {}),
    )


@dataclass
class ROCResult:
    points: np.ndarray        # (n_thresholds + 2, 2) columns (FPR, TPR)
    auroc: float
    thresholds: np.ndarray
    degenerate: bool = False  # no true edges or no non-edges


def roc_sweep(state_weights, truth, thresholds=None, include_self: bool = False) -> ROCResult:
    """TPR against FPR over directed edges as the threshold varies.

    ``truth`` is a NetworkModel or a Boolean adjacency matrix with entry
    (i, k) marking an edge from node k into node i. Self-edges are excluded
    unless ``include_self``. With no explicit thresholds, every distinct
    weight is used, which makes the area invariant under strictly increasing
    transforms of the weights. Endpoints (0,0) and (1,1) are appended and the
    area computed by trapezoidal integration.
    """
    lam = np.asarray(state_weights, dtype=float)
    adj = truth.adjacency(include_self=include_self) if hasattr(truth, "adjacency") else np.asarray(truth, bool)
    if adj.shape != lam.shape:
        raise ValueError(f"truth adjacency {adj.shape} does not match weights {lam.shape}")
    if include_self:
        mask = np.ones_like(adj, dtype=bool)
    else:
        mask = ~np.eye(lam.shape[0], dtype=bool)
    scores = lam[mask]
    labels = adj[mask]
    n_true = int(labels.sum())
    n_false = int((~labels).sum())
    degenerate = n_true == 0 or n_false == 0
    if thresholds is None:
        thresholds = np.unique(scores)[::-1]
    else:
        thresholds = np.sort(np.asarray(thresholds, dtype=float))[::-1]
    pts = []
    for thr in thresholds:
        hit = scores >= thr
        tpr = (hit & labels).sum() / n_true if n_true else np.nan
        fpr = (hit & ~labels).sum() / n_false if n_false else np.nan
        pts.append((fpr, tpr))
    points = np.array([(0.0, 0.0)] + pts + [(1.0, 1.0)]) if pts else np.array([(0.0, 0.0), (1.0, 1.0)])
    if degenerate:
        auroc = float("nan")
    else:
        order = np.argsort(points[:, 0], kind="stable")
        points_sorted = points[order]
        auroc = float(np.trapezoid(points_sorted[:, 1], points_sorted[:, 0]))
    return ROCResult(
        points=points,
        auroc=auroc,
        thresholds=np.asarray(thresholds, dtype=float),
        degenerate=degenerate,
    )
