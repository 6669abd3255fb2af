"""Scoring identified networks against ground truth.

The primary per-node error aggregates squared coefficient mismatches of
coupling and input terms over the true neighbor/input sets, with estimates
invented for spurious neighbors additionally scored against zero (the
``paper_strict`` variant drops that addition). Coefficients are aligned by
canonical function text, never by column position; a true self-coupling is
treated as part of the local dynamics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ScoringError(ValueError):
    """Truth and estimate dictionaries cannot be aligned."""


# Reference row for the neuron-network benchmark (local-error statistics),
# used by trend comparisons.
HR_REFERENCE_SCORES = {
    "rmse": 0.335,
    "max_error": 1.01,
    "min_error": 0.056,
    "std_error": 0.205,
}


def _truth_tables(model):
    """Coefficient tables keyed by function text; self-couplings fold into local."""
    n = model.n_nodes
    local = [dict() for _ in range(n)]
    coupling = [dict() for _ in range(n)]
    inputs = [dict() for _ in range(n)]

    def add(table, text, coef):
        table[text] = table.get(text, 0.0) + coef

    for i in range(n):
        for t in model.local_terms[i]:
            add(local[i], t.func.text(), t.coef)
        for k, terms in model.coupling_terms[i].items():
            for t in terms:
                if k == i:
                    add(local[i], t.func.text(), t.coef)
                else:
                    add(coupling[i].setdefault(k, {}), t.func.text(), t.coef)
        for k, terms in model.input_terms[i].items():
            for t in terms:
                add(inputs[i].setdefault(k, {}), t.func.text(), t.coef)
    return local, coupling, inputs


def _sq_table_error(true_table, est_table):
    """Sum of squared differences over the union of function texts."""
    err = 0.0
    for text, coef in true_table.items():
        est = est_table.get(text)
        diff = coef - est if est is not None else coef
        err += float(np.sum(np.square(diff)))
    for text, est in est_table.items():
        if text not in true_table:
            err += float(np.sum(np.square(est)))
    return err


def _check_alignable(truth_texts, est_texts, node):
    if truth_texts and est_texts and not (truth_texts & est_texts):
        raise ScoringError(
            f"node {node}: no common dictionary functions between truth and "
            f"estimate; unmatched truth functions: {sorted(truth_texts)}"
        )


@dataclass
class LocalErrorBreakdown:
    primary: float        # true sets + false-positive estimates against zero
    strict: float         # true sets only
    extended: float       # primary plus local-dynamics coefficient errors


def local_error(model, estimate, node: int, tables=None) -> LocalErrorBreakdown:
    """Per-node error over coupling and input coefficients.

    ``estimate`` is a ParameterEstimate; absent estimated terms count as
    zero. Returns all three variants; the primary value is the paper formula
    extended with false-positive estimates scored against zero.
    """
    t_local, t_coupling, t_inputs = tables if tables is not None else _truth_tables(model)
    i = node
    est_coupling = {k: v for k, v in estimate.coupling[i].items() if k != i}
    est_inputs = estimate.inputs[i]

    truth_texts = set()
    for table in t_coupling[i].values():
        truth_texts |= set(table)
    for table in t_inputs[i].values():
        truth_texts |= set(table)
    est_texts = set()
    for table in est_coupling.values():
        est_texts |= set(table)
    for table in est_inputs.values():
        est_texts |= set(table)
    _check_alignable(truth_texts, est_texts, i)

    strict = 0.0
    for k, table in t_coupling[i].items():
        strict += _sq_table_error(table, est_coupling.get(k, {}))
    for k, table in t_inputs[i].items():
        strict += _sq_table_error(table, est_inputs.get(k, {}))
    fp = 0.0
    for k, table in est_coupling.items():
        if k not in t_coupling[i]:
            fp += sum(float(np.sum(np.square(v))) for v in table.values())
    for k, table in est_inputs.items():
        if k not in t_inputs[i]:
            fp += sum(float(np.sum(np.square(v))) for v in table.values())
    # self-coupling estimates fold into the local comparison
    est_local = dict(estimate.local[i])
    for text, coef in estimate.coupling[i].get(i, {}).items():
        est_local[text] = est_local.get(text, 0.0) + coef
    local_err = _sq_table_error(t_local[i], est_local)
    return LocalErrorBreakdown(
        primary=float(np.sqrt(strict + fp)),
        strict=float(np.sqrt(strict)),
        extended=float(np.sqrt(strict + fp + local_err)),
    )


@dataclass
class ScoreReport:
    """Aggregated identification scores for one run."""

    local_errors: np.ndarray
    local_errors_strict: np.ndarray
    local_errors_extended: np.ndarray
    rmse: float
    max_error: float
    min_error: float
    std_error: float
    rmse_strict: float
    rmse_extended: float
    tp: int
    fp: int
    fn: int
    tn: int
    tpr: float
    fpr: float
    input_tp: int = 0
    input_fp: int = 0
    input_fn: int = 0
    input_tn: int = 0
    auroc: float = float("nan")
    meta: dict = field(default_factory=dict)

    CSV_COLUMNS = (
        "rmse", "max_error", "min_error", "std_error", "rmse_strict",
        "rmse_extended", "tpr", "fpr", "auroc", "tp", "fp", "fn", "tn",
    )

    def to_csv_row(self):
        return [getattr(self, c) for c in self.CSV_COLUMNS]

    def to_text(self) -> str:
        lines = [
            f"RMSE            {self.rmse:.6g}",
            f"max error       {self.max_error:.6g}",
            f"min error       {self.min_error:.6g}",
            f"std error       {self.std_error:.6g}",
            f"RMSE (strict)   {self.rmse_strict:.6g}",
            f"RMSE (extended) {self.rmse_extended:.6g}",
            f"edges TP/FP/FN/TN  {self.tp}/{self.fp}/{self.fn}/{self.tn}",
            f"TPR {self.tpr:.6g}  FPR {self.fpr:.6g}",
        ]
        if np.isfinite(self.auroc):
            lines.append(f"AUROC           {self.auroc:.6g}")
        return "\n".join(lines)


def boolean_counts(truth_adj, estimated_sets, exclude_diagonal=True):
    n_rows, n_cols = truth_adj.shape
    est = np.zeros_like(truth_adj, dtype=bool)
    for i, members in enumerate(estimated_sets):
        for k in members:
            est[i, k] = True
    if exclude_diagonal:
        mask = ~np.eye(n_rows, n_cols, dtype=bool)
    else:
        mask = np.ones((n_rows, n_cols), dtype=bool)
    t, e = truth_adj[mask], est[mask]
    tp = int((t & e).sum())
    fp = int((~t & e).sum())
    fn = int((t & ~e).sum())
    tn = int((~t & ~e).sum())
    return tp, fp, fn, tn


def score_run(model, topology, estimate, roc=None, count_self_loops=False) -> ScoreReport:
    """Aggregate local errors and Boolean reconstruction counts.

    Edge counts are over ordered pairs of distinct nodes unless
    ``count_self_loops``; rates for empty denominators come out as NaN.
    """
    n = model.n_nodes
    tables = _truth_tables(model)
    breakdowns = [local_error(model, estimate, i, tables=tables) for i in range(n)]
    eps = np.array([b.primary for b in breakdowns])
    eps_strict = np.array([b.strict for b in breakdowns])
    eps_ext = np.array([b.extended for b in breakdowns])
    tp, fp, fn, tn = boolean_counts(
        model.adjacency(include_self=count_self_loops),
        topology.neighbors,
        exclude_diagonal=not count_self_loops,
    )
    itp, ifp, ifn, itn = boolean_counts(
        model.input_adjacency(), topology.inputs, exclude_diagonal=False
    )
    return ScoreReport(
        local_errors=eps,
        local_errors_strict=eps_strict,
        local_errors_extended=eps_ext,
        rmse=float(np.sqrt(np.mean(eps**2))),
        max_error=float(eps.max()),
        min_error=float(eps.min()),
        std_error=float(eps.std()),
        rmse_strict=float(np.sqrt(np.mean(eps_strict**2))),
        rmse_extended=float(np.sqrt(np.mean(eps_ext**2))),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        tpr=tp / (tp + fn) if (tp + fn) else float("nan"),
        fpr=fp / (fp + tn) if (fp + tn) else float("nan"),
        input_tp=itp,
        input_fp=ifp,
        input_fn=ifn,
        input_tn=itn,
        auroc=roc.auroc if roc is not None else float("nan"),
        meta={"failed_nodes": list(getattr(estimate, "failed_nodes", []))},
    )
