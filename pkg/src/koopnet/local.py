"""Per-node lifted identification and the modular global model.

For each node, the snapshots are lifted through its local dictionary while
the (estimated) neighbor states and inputs are lifted through their coupling
and input dictionaries; a single least-squares solve yields the discrete
lifted matrices, the principal matrix logarithm converts them to continuous
time via the zero-order-hold relation, and the physical parameters sit in
the first n_i rows of the continuous matrices.

Constant dictionary functions are genuinely constant over every sampling
interval, so they are carried on the held-input side of the regression
(where the zero-order-hold conversion is exact) rather than inside the
lifted state, where they would create a structural unit eigenvalue and make
the conversion singular.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .dictionary import Constant, DictionarySpec, eval_matrix
from .simulate import SnapshotDataset

SINGULARITY_RCOND = 1e-10


@dataclass
class LocalLiftedModel:
    """Discrete and continuous lifted dynamics of one node.

    The lifted state stacks the node's non-constant local dictionary values;
    constant local functions, neighbor lifted states (coupling-dictionary
    values of the sources) and lifted inputs act as held external inputs.
    ``aux_*`` rows give the continuous-time evolution of the node's own
    outgoing coupling functions, fitted separately for global assembly.
    """

    node: int
    node_dim: int
    neighbors: list
    inputs: list
    local_functions: tuple
    coupling_functions: dict      # source node -> functions consumed from it
    input_functions: dict         # input index -> functions
    output_functions: tuple       # this node's own outgoing coupling functions
    t_sample: float
    neighbor_lift: str = "midpoint"
    A_bar: np.ndarray = None      # dynamic lift -> dynamic lift
    C_bar: np.ndarray = None      # constant local functions -> dynamic lift
    E_bar: np.ndarray = None      # neighbor lifts -> dynamic lift
    B_bar: np.ndarray = None      # input lifts -> dynamic lift
    A: np.ndarray = None
    C: np.ndarray = None
    E: np.ndarray = None
    B: np.ndarray = None
    aux_A: np.ndarray = None
    aux_C: np.ndarray = None
    aux_E: np.ndarray = None
    aux_B: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dynamic_indices = tuple(
            l for l, f in enumerate(self.local_functions) if not isinstance(f, Constant)
        )
        self.constant_indices = tuple(
            l for l, f in enumerate(self.local_functions) if isinstance(f, Constant)
        )

    @property
    def lift_dim(self) -> int:
        """Size of the dynamic lifted state."""
        return len(self.dynamic_indices)

    @property
    def dynamic_functions(self):
        return tuple(self.local_functions[l] for l in self.dynamic_indices)

    @property
    def constant_functions(self):
        return tuple(self.local_functions[l] for l in self.constant_indices)

    def neighbor_column(self, k: int) -> slice:
        """Column block of E for neighbor k."""
        widths = [len(self.coupling_functions[j]) for j in self.neighbors]
        start = int(np.sum(widths[: self.neighbors.index(k)]))
        return slice(start, start + len(self.coupling_functions[k]))

    def input_column(self, k: int) -> slice:
        widths = [len(self.input_functions[j]) for j in self.inputs]
        start = int(np.sum(widths[: self.inputs.index(k)]))
        return slice(start, start + len(self.input_functions[k]))


def fit_local_discrete(
    ds: SnapshotDataset,
    node: int,
    neighbors,
    inputs,
    dicts: DictionarySpec,
    rcond: float | None = None,
    fit_aux: bool = True,
    neighbor_lift: str = "midpoint",
) -> LocalLiftedModel:
    """Least-squares fit of the discrete lifted dynamics of one node.

    ``neighbors``/``inputs`` are the estimated sets; a self entry is dropped
    since the local dictionary already carries own-state dependence. The
    local dictionary must start with the coordinate identities.

    With ``neighbor_lift="midpoint"`` (default) the neighbor lifted signals
    enter as interval averages (q(x) + q(y)) / 2, which approximates the
    held-input integral to second order in the sampling time; ``"left"``
    holds them at the interval start. Inputs and constants are genuinely
    constant over the interval, so their columns are the same either way.
    The auxiliary rows for the node's outgoing coupling functions regress
    the finite difference (q(y) - q(x)) / T_s on the same regressors.
    """
    if neighbor_lift not in ("midpoint", "left"):
        raise ValueError(f"neighbor_lift must be 'midpoint' or 'left', got {neighbor_lift!r}")
    n_i = ds.node_dims[node]
    dicts.validate_identity_first(ds.node_dims)
    neighbors = sorted(int(k) for k in set(neighbors) if int(k) != node)
    inputs = sorted(int(k) for k in set(inputs))
    model = LocalLiftedModel(
        node=node,
        node_dim=n_i,
        neighbors=neighbors,
        inputs=inputs,
        local_functions=dicts.local[node],
        coupling_functions={k: dicts.coupling[k] for k in neighbors},
        input_functions={k: dicts.inputs[k] for k in inputs},
        output_functions=dicts.coupling[node],
        t_sample=ds.t_sample,
        neighbor_lift=neighbor_lift,
    )

    x_i = ds.state_block(node, "X")
    y_i = ds.state_block(node, "Y")
    p_x = eval_matrix(model.dynamic_functions, x_i)
    p_y = eval_matrix(model.dynamic_functions, y_i)
    blocks = [p_x]
    if model.constant_indices:
        blocks.append(eval_matrix(model.constant_functions, x_i))
    for k in neighbors:
        q_x = eval_matrix(model.coupling_functions[k], ds.state_block(k, "X"))
        if neighbor_lift == "midpoint":
            q_y = eval_matrix(model.coupling_functions[k], ds.state_block(k, "Y"))
            blocks.append(0.5 * (q_x + q_y))
        else:
            blocks.append(q_x)
    for k in inputs:
        blocks.append(eval_matrix(model.input_functions[k], ds.input_block(k)))
    regressor = np.hstack(blocks)

    n_dyn = len(model.dynamic_indices)
    n_const = len(model.constant_indices)
    n_coupling = sum(len(model.coupling_functions[k]) for k in neighbors)
    if ds.n_samples < regressor.shape[1]:
        model.diagnostics["underdetermined"] = (
            f"{ds.n_samples} samples for {regressor.shape[1]} regressors"
        )
    pinv_g, rank = numerics.pinv(regressor, rcond=rcond, return_rank=True)
    model.diagnostics["regressor_rank"] = rank
    if rank < regressor.shape[1]:
        model.diagnostics["rank_deficient"] = (
            f"effective rank {rank} of {regressor.shape[1]} regressors"
        )
    theta = pinv_g @ p_y
    model.A_bar = theta[:n_dyn].T
    model.C_bar = theta[n_dyn:n_dyn + n_const].T
    model.E_bar = theta[n_dyn + n_const:n_dyn + n_const + n_coupling].T
    model.B_bar = theta[n_dyn + n_const + n_coupling:].T
    if fit_aux and len(model.output_functions) > 0:
        q_x = eval_matrix(model.output_functions, x_i)
        q_y = eval_matrix(model.output_functions, y_i)
        theta_q = pinv_g @ ((q_y - q_x) / ds.t_sample)
        model.aux_A = theta_q[:n_dyn].T
        model.aux_C = theta_q[n_dyn:n_dyn + n_const].T
        model.aux_E = theta_q[n_dyn + n_const:n_dyn + n_const + n_coupling].T
        model.aux_B = theta_q[n_dyn + n_const + n_coupling:].T
    return model


def to_continuous(model: LocalLiftedModel, rcond: float = SINGULARITY_RCOND) -> LocalLiftedModel:
    """Fill the continuous matrices from the discrete ones.

    A = log(A_bar) / T_s; the constant, coupling and input matrices follow
    from the zero-order-hold relation E = A (A_bar - I)^{-1} E_bar. A
    singular (A_bar - I), i.e. a zero eigenvalue of A, is an integrator mode
    and is an error rather than something to regularize silently.
    """
    n_dyn = model.A_bar.shape[0]
    if model.C_bar is None:
        model.C_bar = np.zeros((n_dyn, 0))
    if model.E_bar is None:
        model.E_bar = np.zeros((n_dyn, 0))
    if model.B_bar is None:
        model.B_bar = np.zeros((n_dyn, 0))
    try:
        log_a = numerics.logm(model.A_bar)
    except numerics.NonPrincipalSpectrumError as exc:
        raise numerics.NonPrincipalSpectrumError(
            f"node {model.node}: {exc}; consider a smaller sampling time"
        ) from exc
    model.A = log_a / model.t_sample
    model.diagnostics["roundtrip_residual"] = float(
        np.linalg.norm(numerics.expm(model.A * model.t_sample) - model.A_bar)
    )
    n_ext = model.C_bar.shape[1] + model.E_bar.shape[1] + model.B_bar.shape[1]
    if n_ext > 0:
        shifted = model.A_bar - np.eye(model.A_bar.shape[0])
        sigma = np.linalg.svd(shifted, compute_uv=False)
        # singularity is judged against the operator scale, not ||A_bar - I||
        tol = rcond * max(1.0, float(np.linalg.norm(model.A_bar)))
        if sigma[-1] <= tol:
            raise numerics.NumericalFailure(
                f"node {model.node} is an integrator-mode node: (A_bar - I) is "
                "singular, so the zero-order-hold conversion is undefined"
            )
        convert = model.A @ numerics.pinv(shifted, rcond=rcond)
        model.C = convert @ model.C_bar
        model.E = convert @ model.E_bar
        model.B = convert @ model.B_bar
    else:
        model.C = np.zeros((model.lift_dim, 0))
        model.E = np.zeros((model.lift_dim, 0))
        model.B = np.zeros((model.lift_dim, 0))
    return model


@dataclass
class NodeParameters:
    """Estimated coefficient vectors of one node, keyed by canonical function text."""

    node: int
    local: dict
    coupling: dict   # source node -> {text: coef vector}
    inputs: dict     # input index -> {text: coef vector}


def extract_parameters(model: LocalLiftedModel) -> NodeParameters:
    """Read coefficients from the first n_i rows of the continuous matrices."""
    if model.A is None:
        raise ValueError(f"node {model.node}: continuous matrices not computed yet")
    n = model.node_dim
    local = {}
    for pos, l in enumerate(model.dynamic_indices):
        local[model.local_functions[l].text()] = model.A[:n, pos].copy()
    for pos, l in enumerate(model.constant_indices):
        local[model.local_functions[l].text()] = model.C[:n, pos].copy()
    coupling = {}
    for k in model.neighbors:
        block = model.E[:n, model.neighbor_column(k)]
        coupling[k] = {
            f.text(): block[:, l].copy() for l, f in enumerate(model.coupling_functions[k])
        }
    inputs = {}
    for k in model.inputs:
        block = model.B[:n, model.input_column(k)]
        inputs[k] = {
            f.text(): block[:, l].copy() for l, f in enumerate(model.input_functions[k])
        }
    return NodeParameters(node=model.node, local=local, coupling=coupling, inputs=inputs)


@dataclass
class ParameterEstimate:
    """Per-node parameter tables for the whole network."""

    local: list
    coupling: list
    inputs: list
    failed_nodes: list = field(default_factory=list)

    @classmethod
    def collect(cls, node_params, n_nodes):
        est = cls(
            local=[{} for _ in range(n_nodes)],
            coupling=[{} for _ in range(n_nodes)],
            inputs=[{} for _ in range(n_nodes)],
        )
        seen = set()
        for p in node_params:
            if p is None:
                continue
            est.local[p.node] = p.local
            est.coupling[p.node] = p.coupling
            est.inputs[p.node] = p.inputs
            seen.add(p.node)
        est.failed_nodes = sorted(set(range(n_nodes)) - seen)
        return est


def fit_all_local(
    ds: SnapshotDataset,
    topology,
    dicts: DictionarySpec,
    rcond: float | None = None,
    threads: int = 1,
    neighbor_lift: str = "midpoint",
):
    """Fit and convert every node; failures are collected, not raised.

    Returns (models, errors) where ``models[i]`` is None when node i failed
    and ``errors`` maps node index to the failure message.
    """
    n_nodes = len(ds.node_dims)

    def run(i):
        try:
            m = fit_local_discrete(
                ds, i, topology.neighbors[i], topology.inputs[i], dicts,
                rcond=rcond, neighbor_lift=neighbor_lift,
            )
            return to_continuous(m), None
        except (numerics.NumericalFailure, ValueError) as exc:
            return None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(n_nodes)))
    else:
        results = [run(i) for i in range(n_nodes)]
    models = [r[0] for r in results]
    errors = {i: r[1] for i, r in enumerate(results) if r[1] is not None}
    return models, errors


@dataclass
class GlobalLiftedModel:
    """Block-assembled continuous lifted dynamics of the entire network."""

    A: np.ndarray
    B: np.ndarray
    node_slices: list     # lifted block per node (local then outgoing functions)
    input_slices: list


def assemble_global(models) -> GlobalLiftedModel:
    """Assemble the modular global matrices.

    Each node's global lifted block stacks its local dictionary values (in
    declared order, constants included as frozen coordinates with zero rows)
    followed by its own outgoing coupling-function values; continuous E
    blocks land in the columns of the source node's coupling slots, and the
    auxiliary rows fill the evolution of the coupling functions themselves.
    """
    models = list(models)
    if any(m is None for m in models):
        missing = [i for i, m in enumerate(models) if m is None]
        raise ValueError(f"cannot assemble: nodes {missing} have no fitted model")
    n_nodes = len(models)
    for m in models:
        for k in m.neighbors:
            used = tuple(f.text() for f in m.coupling_functions[k])
            exported = tuple(f.text() for f in models[k].output_functions)
            if used != exported:
                raise ValueError(
                    f"dictionary mismatch: node {m.node} consumes {used} from node {k}, "
                    f"which exports {exported}"
                )
    block_sizes = [len(m.local_functions) + len(m.output_functions) for m in models]
    offsets = np.concatenate(([0], np.cumsum(block_sizes))).astype(int)
    node_slices = [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(n_nodes)]
    total = int(offsets[-1])

    input_ids = sorted({k for m in models for k in m.inputs})
    input_widths = {}
    for m in models:
        for k in m.inputs:
            w = len(m.input_functions[k])
            if input_widths.setdefault(k, w) != w:
                raise ValueError(f"input {k}: inconsistent dictionary width across nodes")
    in_off = np.concatenate(([0], np.cumsum([input_widths[k] for k in input_ids]))).astype(int)
    input_slices = {k: slice(int(in_off[j]), int(in_off[j + 1])) for j, k in enumerate(input_ids)}

    def rows_of(i):
        base = offsets[i]
        m = models[i]
        dyn = base + np.asarray(m.dynamic_indices, dtype=int)
        const = base + np.asarray(m.constant_indices, dtype=int)
        h = base + len(m.local_functions) + np.arange(len(m.output_functions))
        return dyn, const, h

    a = np.zeros((total, total))
    b = np.zeros((total, int(in_off[-1]) if input_ids else 0))
    for i, m in enumerate(models):
        dyn, const, h = rows_of(i)
        a[np.ix_(dyn, dyn)] = m.A
        if const.size:
            a[np.ix_(dyn, const)] = m.C
        if m.aux_A is not None:
            a[np.ix_(h, dyn)] = m.aux_A
            if const.size:
                a[np.ix_(h, const)] = m.aux_C
        for k in m.neighbors:
            col = m.neighbor_column(k)
            _, _, h_src = rows_of(k)
            a[np.ix_(dyn, h_src)] = m.E[:, col]
            if m.aux_E is not None:
                a[np.ix_(h, h_src)] = m.aux_E[:, col]
        for k in m.inputs:
            col = m.input_column(k)
            sl = input_slices[k]
            b[np.ix_(dyn, np.arange(sl.start, sl.stop))] = m.B[:, col]
            if m.aux_B is not None:
                b[np.ix_(h, np.arange(sl.start, sl.stop))] = m.aux_B[:, col]
    return GlobalLiftedModel(
        A=a,
        B=b,
        node_slices=node_slices,
        input_slices=[input_slices[k] for k in input_ids],
    )


def predict_lifted(models, x0, inputs=None, n_steps: int = 1, input_dims=None):
    """Step the discrete lifted models forward, re-lifting each step.

    Neighbor lifted states are re-evaluated from the predicted coordinates at
    every step rather than propagated linearly (with one corrector pass when
    the models were fitted with midpoint lifting); the returned trajectory
    holds the coordinate (identity) components. ``inputs`` may be None, a
    constant (m,) vector, or a (n_steps, m) array of piecewise-constant
    inputs.
    """
    models = list(models)
    node_dims = [m.node_dim for m in models]
    offsets = np.concatenate(([0], np.cumsum(node_dims))).astype(int)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (offsets[-1],):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({offsets[-1]},)")
    if input_dims is None:
        input_dims = []
    in_off = np.concatenate(([0], np.cumsum(input_dims))).astype(int)
    if inputs is None:
        inputs = np.zeros((n_steps, int(in_off[-1])))
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = np.tile(inputs, (n_steps, 1))
    if inputs.shape != (n_steps, int(in_off[-1])):
        raise ValueError(
            f"inputs have shape {inputs.shape}, expected ({n_steps}, {int(in_off[-1])})"
        )

    def lift_all(vec):
        blocks = [vec[offsets[i]:offsets[i + 1]] for i in range(len(models))]
        lifted = [
            eval_matrix(m.dynamic_functions, blocks[i][None, :])[0]
            for i, m in enumerate(models)
        ]
        w_blocks = [
            {
                k: eval_matrix(m.coupling_functions[k], blocks[k][None, :])[0]
                for k in m.neighbors
            }
            for m in models
        ]
        return blocks, lifted, w_blocks

    def advance(blocks, lifted, w_blocks, step):
        nxt = np.empty_like(x0)
        for i, m in enumerate(models):
            z = m.A_bar @ lifted[i]
            if m.constant_indices:
                z = z + m.C_bar @ eval_matrix(m.constant_functions, blocks[i][None, :])[0]
            if m.neighbors:
                w = np.concatenate([w_blocks[i][k] for k in m.neighbors])
                z = z + m.E_bar @ w
            if m.inputs:
                v = np.concatenate([
                    eval_matrix(
                        m.input_functions[k],
                        inputs[step, in_off[k]:in_off[k + 1]][None, :],
                    )[0]
                    for k in m.inputs
                ])
                z = z + m.B_bar @ v
            nxt[offsets[i]:offsets[i + 1]] = z[: m.node_dim]
        return nxt

    states = np.empty((n_steps + 1, offsets[-1]))
    states[0] = x0
    current = x0.copy()
    midpoint = any(m.neighbor_lift == "midpoint" and m.neighbors for m in models)
    for step in range(n_steps):
        blocks, lifted, w_now = lift_all(current)
        nxt = advance(blocks, lifted, w_now, step)
        if midpoint and np.isfinite(nxt).all():
            # one corrector pass: neighbor signals at the interval average
            _, _, w_pred = lift_all(nxt)
            w_mid = [
                {k: 0.5 * (w_now[i][k] + w_pred[i][k]) for k in m.neighbors}
                for i, m in enumerate(models)
            ]
            nxt = advance(blocks, lifted, w_mid, step)
        if not np.isfinite(nxt).all():
            raise numerics.NumericalFailure(f"lifted prediction diverged at step {step + 1}")
        current = nxt
        states[step + 1] = current
    return states
