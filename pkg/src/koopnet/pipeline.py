"""Estimator front-ends composing the identification stages.

``DualKoopman`` fits the sample-space operator and exposes vector-field
estimates; ``TwoStepIdentifier`` chains it with the Lasso topology step and
the per-node lifted identification; ``DualGlobalIdentifier`` is the
comparison baseline that regresses the vector-field estimates on the full
global dictionary in one shot. All three follow scikit-learn conventions:
constructor arguments are stored verbatim, ``fit`` returns self, and fitted
attributes carry a trailing underscore.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import numerics
from .dictionary import (
    DictionarySpec,
    NodeFunctionSet,
    center_node_functions,
    monomial_node_functions,
)
from .dual import (
    estimate_vector_field,
    fit_dual_operator,
    rbf_test_sets,
    select_test_set,
)
from .local import (
    ParameterEstimate,
    assemble_global,
    extract_parameters,
    fit_all_local,
    predict_lifted,
)
from .simulate import SnapshotDataset
from .topology import (
    build_design_matrix,
    estimate_weights,
    roc_sweep,
    threshold_topology,
)

DEFAULT_GAMMA_GRID = tuple(np.geomspace(5e-4, 0.5, 16))


def _check_fitted(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class DualKoopman(BaseEstimator):
    """Sample-space Koopman operator with RBF test functions.

    With a fixed ``gamma`` a single operator is fitted; with a grid the
    candidate minimizing the operator fit error is chosen, falling back to
    the next-best candidate if the winner has no principal logarithm.
    """

    def __init__(self, gamma=None, gamma_grid=None, centers="xy", test_set=None, rcond=None):
        self.gamma = gamma
        self.gamma_grid = gamma_grid
        self.centers = centers
        self.test_set = test_set
        self.rcond = rcond

    def fit(self, data: SnapshotDataset):
        if self.test_set is not None:
            candidates = [self.test_set]
            gammas = [None]
        elif self.gamma is not None:
            candidates = rbf_test_sets(data, [self.gamma], self.centers)
            gammas = [self.gamma]
        else:
            grid = list(self.gamma_grid) if self.gamma_grid is not None else list(DEFAULT_GAMMA_GRID)
            candidates = rbf_test_sets(data, grid, self.centers)
            gammas = grid
        if len(candidates) == 1:
            order = [0]
            self.scores_ = None
        else:
            _best, scores, _failed = select_test_set(data, candidates, rcond=self.rcond)
            order = list(np.argsort(scores, kind="stable"))
            self.scores_ = scores
        last_error = None
        for idx in order:
            if not np.isfinite(
                self.scores_[idx] if self.scores_ is not None else 0.0
            ):
                continue
            try:
                self.operator_ = fit_dual_operator(data, candidates[idx], rcond=self.rcond)
                self.gamma_ = gammas[idx]
                self.selected_index_ = int(idx)
                break
            except numerics.NumericalFailure as exc:
                last_error = exc
        else:
            raise numerics.NumericalFailure(
                f"no candidate test set yields a usable operator: {last_error}"
            )
        if self.scores_ is not None and self.selected_index_ != order[0]:
            warnings.warn(
                f"best-scoring test set (index {order[0]}) has no principal "
                f"logarithm; fell back to index {self.selected_index_}"
            )
        self.vector_field_ = estimate_vector_field(self.operator_, data)
        return self

    def transform(self, data: SnapshotDataset) -> np.ndarray:
        """Vector-field estimates at the fitted data points."""
        _check_fitted(self, "operator_")
        return estimate_vector_field(self.operator_, data)


class TwoStepIdentifier(BaseEstimator):
    """Full two-step network identification.

    Step 1 estimates the vector field through the sample-space operator and
    localizes dependencies by per-component Lasso on node functions; step 2
    fits each node's lifted dynamics over the estimated neighbors and
    recovers continuous-time coefficients. ``dictionaries`` (a
    DictionarySpec) is required; ``node_functions`` defaults to monomials up
    to ``node_degree`` with empirical centering.
    """

    def __init__(
        self,
        dictionaries: DictionarySpec = None,
        node_functions: NodeFunctionSet = None,
        node_degree: int = 2,
        centering: str = "empirical_mean",
        gamma=None,
        gamma_grid=None,
        centers: str = "xy",
        penalty=None,
        penalty_fraction: float = 0.01,
        threshold: float = 0.1,
        rcond=None,
        threads: int = 1,
        standardize: bool = False,
        lasso_max_iter: int = 10000,
        lasso_tol: float = 1e-8,
        neighbor_lift: str = "midpoint",
        refine: int = 0,
        assemble: bool = True,
    ):
        self.dictionaries = dictionaries
        self.node_functions = node_functions
        self.node_degree = node_degree
        self.centering = centering
        self.gamma = gamma
        self.gamma_grid = gamma_grid
        self.centers = centers
        self.penalty = penalty
        self.penalty_fraction = penalty_fraction
        self.threshold = threshold
        self.rcond = rcond
        self.threads = threads
        self.standardize = standardize
        self.lasso_max_iter = lasso_max_iter
        self.lasso_tol = lasso_tol
        self.neighbor_lift = neighbor_lift
        self.refine = refine
        self.assemble = assemble

    def _node_functions(self, data):
        funcs = self.node_functions
        if funcs is None:
            funcs = monomial_node_functions(data.node_dims, data.input_dims, self.node_degree)
        if self.centering != "raw":
            funcs = center_node_functions(funcs, data, self.centering)
        return funcs

    def fit(self, data: SnapshotDataset):
        if self.dictionaries is None:
            raise ValueError("TwoStepIdentifier requires a DictionarySpec")
        self.dual_ = DualKoopman(
            gamma=self.gamma,
            gamma_grid=self.gamma_grid,
            centers=self.centers,
            rcond=self.rcond,
        ).fit(data)
        self.vector_field_ = self.dual_.vector_field_

        self.node_functions_ = self._node_functions(data)
        design = build_design_matrix(data, self.node_functions_)
        self.weights_ = estimate_weights(
            self.vector_field_,
            design,
            data.node_dims,
            penalty=self.penalty,
            penalty_fraction=self.penalty_fraction,
            max_iter=self.lasso_max_iter,
            tol=self.lasso_tol,
            standardize=self.standardize,
            threads=self.threads,
        )
        self.topology_ = threshold_topology(
            self.weights_,
            self.threshold,
            meta={
                "penalty": self.penalty,
                "penalty_fraction": self.penalty_fraction,
                "gamma": self.dual_.gamma_,
                "centering": self.centering,
            },
        )

        self.local_models_, self.failures_ = fit_all_local(
            data,
            self.topology_,
            self.dictionaries,
            rcond=self.rcond,
            threads=self.threads,
            neighbor_lift=self.neighbor_lift,
        )
        params = [
            extract_parameters(m) if m is not None else None for m in self.local_models_
        ]
        self.parameters_ = ParameterEstimate.collect(params, len(data.node_dims))
        if self.refine:
            from .refine import refine_parameters

            self.parameters_ = refine_parameters(
                self.parameters_,
                data,
                self.dictionaries,
                self.topology_,
                passes=self.refine,
                rcond=self.rcond,
            )
        self.global_ = None
        if self.assemble and not self.failures_:
            self.global_ = assemble_global(self.local_models_)
        self.node_dims_ = list(data.node_dims)
        self.input_dims_ = list(data.input_dims)
        return self

    def roc(self, truth, thresholds=None):
        """ROC of the Boolean reconstruction against a ground-truth model."""
        _check_fitted(self, "weights_")
        return roc_sweep(self.weights_.state_weights, truth, thresholds=thresholds)

    def predict(self, x0, inputs=None, n_steps: int = 1) -> np.ndarray:
        """Roll the identified lifted models forward (validation helper)."""
        _check_fitted(self, "local_models_")
        if self.failures_:
            raise numerics.NumericalFailure(
                f"cannot predict: nodes {sorted(self.failures_)} failed to fit"
            )
        return predict_lifted(
            self.local_models_, x0, inputs=inputs, n_steps=n_steps, input_dims=self.input_dims_
        )


class DualGlobalIdentifier(BaseEstimator):
    """Baseline: one global sparse regression over all dictionary functions.

    The vector field is estimated exactly as in the two-step method, then
    every node component is regressed on the union of all nodes' local and
    coupling functions plus all input functions. Edge weights aggregate the
    coefficients landing on another node's coupling functions.
    """

    def __init__(
        self,
        dictionaries: DictionarySpec = None,
        gamma=None,
        gamma_grid=None,
        centers: str = "xy",
        penalty=None,
        penalty_fraction: float = 0.01,
        threshold: float = 0.1,
        rcond=None,
        threads: int = 1,
        lasso_max_iter: int = 10000,
        lasso_tol: float = 1e-8,
    ):
        self.dictionaries = dictionaries
        self.gamma = gamma
        self.gamma_grid = gamma_grid
        self.centers = centers
        self.penalty = penalty
        self.penalty_fraction = penalty_fraction
        self.threshold = threshold
        self.rcond = rcond
        self.threads = threads
        self.lasso_max_iter = lasso_max_iter
        self.lasso_tol = lasso_tol

    def _global_design(self, data):
        """Columns: per node, the union of local and coupling functions
        (deduplicated by text, local first); then per input its functions."""
        from .dictionary import eval_matrix

        dicts = self.dictionaries
        columns = []
        col_meta = []  # (kind, block index, text)
        for i in range(len(data.node_dims)):
            seen = {}
            funcs = []
            for f in dicts.local[i] + dicts.coupling[i]:
                if f.text() not in seen:
                    seen[f.text()] = True
                    funcs.append(f)
            block = eval_matrix(funcs, data.state_block(i))
            columns.append(block)
            col_meta.extend(("node", i, f.text()) for f in funcs)
        for k in range(len(data.input_dims)):
            funcs = dicts.inputs[k]
            if funcs:
                columns.append(eval_matrix(funcs, data.input_block(k)))
                col_meta.extend(("input", k, f.text()) for f in funcs)
        design = np.hstack(columns)
        return design, col_meta

    def fit(self, data: SnapshotDataset):
        if self.dictionaries is None:
            raise ValueError("DualGlobalIdentifier requires a DictionarySpec")
        self.dual_ = DualKoopman(
            gamma=self.gamma,
            gamma_grid=self.gamma_grid,
            centers=self.centers,
            rcond=self.rcond,
        ).fit(data)
        vf = self.dual_.vector_field_
        design, col_meta = self._global_design(data)
        n_nodes = len(data.node_dims)
        node_dims = data.node_dims
        offsets = np.concatenate(([0], np.cumsum(node_dims))).astype(int)

        coupling_texts = [
            {f.text() for f in self.dictionaries.coupling[i]} for i in range(n_nodes)
        ]
        local_texts = [
            {f.text() for f in self.dictionaries.local[i]} for i in range(n_nodes)
        ]

        from .numerics import lasso

        lam = np.zeros((n_nodes, n_nodes))
        delta = np.zeros((n_nodes, len(data.input_dims)))
        est = ParameterEstimate(
            local=[{} for _ in range(n_nodes)],
            coupling=[{} for _ in range(n_nodes)],
            inputs=[{} for _ in range(n_nodes)],
        )

        def put(table, text, vec_len, j, value):
            if text not in table:
                table[text] = np.zeros(vec_len)
            table[text][j] = value

        jobs = [(i, j) for i in range(n_nodes) for j in range(node_dims[i])]

        def solve(job):
            i, j = job
            target = vf[:, offsets[i] + j]
            rho = self.penalty
            if rho is None:
                rho = self.penalty_fraction * float(np.abs(design.T @ target).max())
            return lasso(
                design, target, rho, max_iter=self.lasso_max_iter, tol=self.lasso_tol
            )

        if self.threads > 1 and len(jobs) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(solve, jobs))
        else:
            results = [solve(job) for job in jobs]

        for (i, j), res in zip(jobs, results):
            for value, (kind, block, text) in zip(res.coef, col_meta):
                if value == 0.0:
                    continue
                if kind == "input":
                    delta[i, block] += abs(value)
                    put(est.inputs[i].setdefault(block, {}), text, node_dims[i], j, value)
                elif block == i:
                    if text in local_texts[i]:
                        put(est.local[i], text, node_dims[i], j, value)
                else:
                    if text in coupling_texts[block]:
                        lam[i, block] += abs(value)
                        put(
                            est.coupling[i].setdefault(block, {}),
                            text,
                            node_dims[i],
                            j,
                            value,
                        )
        self.state_weights_ = lam
        self.input_weights_ = delta
        self.parameters_ = est
        self.topology_ = threshold_topology(
            _WeightsView(lam, delta), self.threshold, meta={"method": "dual_global"}
        )
        return self

    def roc(self, truth, thresholds=None):
        _check_fitted(self, "state_weights_")
        return roc_sweep(self.state_weights_, truth, thresholds=thresholds)


class _WeightsView:
    def __init__(self, state_weights, input_weights):
        self.state_weights = state_weights
        self.input_weights = input_weights
