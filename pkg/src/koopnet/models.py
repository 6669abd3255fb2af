"""Ground-truth network construction.

A NetworkModel is a directed network of nodes with per-node local dynamics,
couplings from neighbor states, and effects from external inputs, each
expressed as coefficient vectors attached to known scalar dictionary
functions. The three generators build the experiment families: random
polynomial couplings on an Erdos-Renyi digraph, a four-branch network mixing
polynomial, sine and exponential couplings, and Hindmarsh-Rose neurons with
sigmoidal coupling on a Watts-Strogatz graph.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .dictionary import (
    Constant,
    Exp,
    Monomial,
    ScalarFunction,
    Sigmoid,
    Sine,
    parse_function,
)


def rng_for(seed: int, *path) -> np.random.Generator:
    """Counter-based generator for a named substream.

    Streams are independent for distinct (seed, path) pairs, so per-node
    draws do not depend on the order nodes are visited.
    """
    key = [int(seed)]
    for p in path:
        if isinstance(p, str):
            key.append(int.from_bytes(hashlib.sha256(p.encode()).digest()[:4], "big"))
        else:
            key.append(int(p))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class Term:
    """One dictionary term: coefficient vector (length n_i) times a function."""

    coef: np.ndarray
    func: ScalarFunction

    def __post_init__(self):
        object.__setattr__(self, "coef", np.atleast_1d(np.asarray(self.coef, float)))


@dataclass
class NetworkModel:
    node_dims: list
    input_dims: list
    local_terms: list          # per node: [Term]
    coupling_terms: list       # per node: {source node: [Term]}
    input_terms: list          # per node: {input: [Term]}
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_dims = [int(d) for d in self.node_dims]
        self.input_dims = [int(d) for d in self.input_dims]
        for i, terms in enumerate(self.local_terms):
            for t in terms:
                if t.coef.shape != (self.node_dims[i],):
                    raise ValueError(
                        f"node {i}: local coefficient has shape {t.coef.shape}, "
                        f"expected ({self.node_dims[i]},)"
                    )
        for label, table in (("coupling", self.coupling_terms), ("input", self.input_terms)):
            limit = self.n_nodes if label == "coupling" else self.n_inputs
            for i, sources in enumerate(table):
                for k, terms in sources.items():
                    if not 0 <= k < limit:
                        raise ValueError(f"node {i}: {label} source {k} out of range")
                    for t in terms:
                        if t.coef.shape != (self.node_dims[i],):
                            raise ValueError(
                                f"node {i}: {label} coefficient for source {k} has "
                                f"shape {t.coef.shape}, expected ({self.node_dims[i]},)"
                            )

    @property
    def n_nodes(self) -> int:
        return len(self.node_dims)

    @property
    def n_inputs(self) -> int:
        return len(self.input_dims)

    @property
    def n_states(self) -> int:
        return sum(self.node_dims)

    @property
    def n_input_channels(self) -> int:
        return sum(self.input_dims)

    def node_offsets(self):
        return np.concatenate(([0], np.cumsum(self.node_dims)))

    def input_offsets(self):
        return np.concatenate(([0], np.cumsum(self.input_dims)))

    def neighbors(self, i: int):
        """Sources coupled into node i, ascending, self excluded."""
        return sorted(k for k in self.coupling_terms[i] if k != i)

    def input_set(self, i: int):
        return sorted(self.input_terms[i])

    def adjacency(self, include_self: bool = False) -> np.ndarray:
        """Boolean matrix; entry (i, k) is True when node k couples into node i."""
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, sources in enumerate(self.coupling_terms):
            for k in sources:
                if include_self or k != i:
                    adj[i, k] = True
        return adj

    def input_adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_inputs), dtype=bool)
        for i, sources in enumerate(self.input_terms):
            for k in sources:
                adj[i, k] = True
        return adj

    def vector_field(self, X, U=None) -> np.ndarray:
        """Stacked right-hand side, batched: X (B, n) and U (B, m) -> (B, n)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if U is None:
            U = np.zeros((X.shape[0], self.n_input_channels))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if X.shape[1] != self.n_states or U.shape[1] != self.n_input_channels:
            raise ValueError(
                f"state/input have {X.shape[1]}/{U.shape[1]} columns, "
                f"model expects {self.n_states}/{self.n_input_channels}"
            )
        noff, ioff = self.node_offsets(), self.input_offsets()
        out = np.zeros_like(X)
        for i in range(self.n_nodes):
            block = out[:, noff[i]:noff[i + 1]]
            xi = X[:, noff[i]:noff[i + 1]]
            for t in self.local_terms[i]:
                block += np.outer(t.func(xi), t.coef)
            for k, terms in self.coupling_terms[i].items():
                xk = X[:, noff[k]:noff[k + 1]]
                for t in terms:
                    block += np.outer(t.func(xk), t.coef)
            for k, terms in self.input_terms[i].items():
                uk = U[:, ioff[k]:ioff[k + 1]]
                for t in terms:
                    block += np.outer(t.func(uk), t.coef)
            if not np.isfinite(block).all():
                raise FloatingPointError(f"vector field non-finite at node {i}")
        return out[0] if single else out

    # -- serialization -----------------------------------------------------

    def to_manifest(self) -> dict:
        def dump_terms(terms):
            return [
                {"coef": [repr(float(c)) for c in t.coef], "func": t.func.text()}
                for t in terms
            ]

        return {
            "format": "koopnet-model-v1",
            "node_dims": self.node_dims,
            "input_dims": self.input_dims,
            "nodes": [
                {
                    "local": dump_terms(self.local_terms[i]),
                    "coupling": {
                        str(k): dump_terms(v)
                        for k, v in sorted(self.coupling_terms[i].items())
                    },
                    "inputs": {
                        str(k): dump_terms(v)
                        for k, v in sorted(self.input_terms[i].items())
                    },
                }
                for i in range(self.n_nodes)
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "NetworkModel":
        def load_terms(items):
            return [
                Term(coef=np.array([float(c) for c in d["coef"]]), func=parse_function(d["func"]))
                for d in items
            ]

        nodes = manifest["nodes"]
        return cls(
            node_dims=manifest["node_dims"],
            input_dims=manifest["input_dims"],
            local_terms=[load_terms(n["local"]) for n in nodes],
            coupling_terms=[
                {int(k): load_terms(v) for k, v in n["coupling"].items()} for n in nodes
            ],
            input_terms=[
                {int(k): load_terms(v) for k, v in n["inputs"].items()} for n in nodes
            ],
            meta=manifest.get("meta", {}),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_manifest(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# generators

def _signed_uniform(rng, low=0.25, high=1.0) -> float:
    mag = rng.uniform(low, high)
    return float(mag if rng.uniform() < 0.5 else -mag)


def make_erdos_renyi_polynomial(
    n_nodes: int,
    edge_prob: float,
    n_inputs: int = 2,
    seed: int = 0,
    coupling_degrees=(1, 2, 3),
    input_degrees=(1, 2),
    coef_range=(0.25, 1.0),
) -> NetworkModel:
    """Scalar nodes on a directed Erdos-Renyi graph with monomial couplings.

    Each directed edge (including self-edges) exists independently with
    probability ``edge_prob`` and carries one monomial whose degree is drawn
    uniformly from ``coupling_degrees``; each input acts on each node with the
    same probability through a monomial of degree from ``input_degrees``.
    Coefficients are drawn uniformly from +/-[coef_range], bounded away from
    zero so edges remain detectable.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must lie in [0, 1], got {edge_prob}")
    coupling_terms = [dict() for _ in range(n_nodes)]
    input_terms = [dict() for _ in range(n_nodes)]
    for i in range(n_nodes):
        rng = rng_for(seed, "er-node", i)
        present = rng.uniform(size=n_nodes) < edge_prob
        for k in np.flatnonzero(present):
            deg = int(rng.choice(coupling_degrees))
            coef = _signed_uniform(rng, *coef_range)
            coupling_terms[i][int(k)] = [Term(coef=[coef], func=Monomial(0, deg))]
        present_u = rng.uniform(size=n_inputs) < edge_prob
        for k in np.flatnonzero(present_u):
            deg = int(rng.choice(input_degrees))
            coef = _signed_uniform(rng, *coef_range)
            input_terms[i][int(k)] = [Term(coef=[coef], func=Monomial(0, deg))]
    return NetworkModel(
        node_dims=[1] * n_nodes,
        input_dims=[1] * n_inputs,
        local_terms=[[] for _ in range(n_nodes)],
        coupling_terms=coupling_terms,
        input_terms=input_terms,
        meta={
            "family": "erdos_renyi",
            "n_nodes": n_nodes,
            "edge_prob": edge_prob,
            "n_inputs": n_inputs,
            "seed": int(seed),
        },
    )


def _wrap_index(j: int, n: int) -> int:
    """Map a 1-based modular index into {1..n} (0 maps to n), return 0-based."""
    j = j % n
    if j == 0:
        j = n
    return j - 1


def make_nonpolynomial_network(n_nodes: int, seed: int = 0) -> NetworkModel:
    """Four-branch network with polynomial, sine and exponential couplings.

    Node i (1-based) follows branch (i-1) mod 4; deterministic neighbors come
    from fixed modular index maps and one extra neighbor per node is drawn at
    random. Four external inputs act on one branch each. Indices are 1-based
    with 0 mapping to n before conversion to 0-based storage.
    """
    if n_nodes < 4 or n_nodes % 4 != 0:
        raise ValueError(f"n_nodes must be a positive multiple of 4, got {n_nodes}")
    n = n_nodes
    local_terms = [[] for _ in range(n)]
    coupling_terms = [dict() for _ in range(n)]
    input_terms = [dict() for _ in range(n)]

    def add(i, k, coef, func):
        if k == i:
            local_terms[i].append(Term(coef=[coef], func=func))
        else:
            coupling_terms[i].setdefault(k, []).append(Term(coef=[coef], func=func))

    for i0 in range(n):
        i = i0 + 1
        rng = rng_for(seed, "nonpoly-node", i0)
        t_i = int(rng.integers(0, n))
        branch = (i - 1) % 4
        if branch == 0:
            local_terms[i0].append(Term(coef=[-0.5], func=Monomial(0, 2)))
            add(i0, _wrap_index(47 * i, n), -0.5, Monomial(0, 1))
            add(i0, _wrap_index(i + 1, n), 0.7, Monomial(0, 1))
            add(i0, t_i, -0.5, Sine(0))
            input_terms[i0][0] = [Term(coef=[1.4], func=Monomial(0, 1))]
        elif branch == 1:
            local_terms[i0].append(Term(coef=[-0.5], func=Monomial(0, 1)))
            add(i0, _wrap_index(i - 1, n), 0.7, Monomial(0, 2))
            add(i0, _wrap_index(23 * i, n), 0.7, Monomial(0, 3))
            add(i0, t_i, 0.7, Exp(0))
            input_terms[i0][3] = [Term(coef=[1.4], func=Monomial(0, 2))]
        elif branch == 2:
            local_terms[i0].append(Term(coef=[-0.5], func=Monomial(0, 1)))
            add(i0, _wrap_index(i + 1, n), 0.7, Monomial(0, 2))
            add(i0, _wrap_index(67 * i, n), -0.5, Monomial(0, 1))
            add(i0, t_i, 0.5, Exp(0))
            input_terms[i0][1] = [Term(coef=[1.4], func=Monomial(0, 2))]
        else:
            local_terms[i0].append(Term(coef=[-0.5], func=Monomial(0, 2)))
            add(i0, _wrap_index(i - 1, n), -0.5, Monomial(0, 2))
            add(i0, _wrap_index(11 * i, n), 0.7, Monomial(0, 3))
            add(i0, t_i, -0.5, Sine(0))
            input_terms[i0][2] = [Term(coef=[1.4], func=Monomial(0, 2))]
    return NetworkModel(
        node_dims=[1] * n,
        input_dims=[1] * 4,
        local_terms=local_terms,
        coupling_terms=coupling_terms,
        input_terms=input_terms,
        meta={"family": "nonpolynomial", "n_nodes": n, "seed": int(seed)},
    )


HR_PARAM_SETS = {
    "a": (1.0, 1.25, 1.5, 1.75, 2.0),
    "b": (2.0, 2.75, 3.5, 4.25, 5.0),
    "d": (-3.0, -3.5, -4.0, -4.5, -5.0),
    "s": (8.0, 11.0, 14.0, 17.0, 20.0),
    "e": (-4.0, -2.0, 0.0, 2.0, 4.0),
}
HR_THETA_SET = (-0.5, -1.0, -1.5)


def make_hindmarsh_rose(
    n_nodes: int,
    mean_degree: int = 8,
    rewire_prob: float = 0.5,
    seed: int = 0,
    c_value: float = 1.0,
    tau: float = 1000.0,
    coupling_gain: float = 4.0,
) -> NetworkModel:
    """Hindmarsh-Rose neurons (3-d nodes) on a Watts-Strogatz small world.

    Per-node parameters are drawn uniformly from finite sets; the sigmoidal
    coupling enters the first (membrane) equation only and is expressed as a
    gain coefficient on a unit sigmoid so estimates align with the candidate
    dictionary. Each undirected small-world edge becomes two directed edges.
    """
    if n_nodes < mean_degree + 1:
        raise ValueError("n_nodes must exceed mean_degree")
    if not 0.0 <= rewire_prob <= 1.0:
        raise ValueError(f"rewire_prob must lie in [0, 1], got {rewire_prob}")
    graph_seed = int(rng_for(seed, "ws-graph").integers(0, 2**31 - 1))
    graph = nx.watts_strogatz_graph(n_nodes, mean_degree, rewire_prob, seed=graph_seed)
    local_terms = []
    coupling_terms = [dict() for _ in range(n_nodes)]
    for i in range(n_nodes):
        rng = rng_for(seed, "hr-node", i)
        a = rng.choice(HR_PARAM_SETS["a"])
        b = rng.choice(HR_PARAM_SETS["b"])
        d = rng.choice(HR_PARAM_SETS["d"])
        s = rng.choice(HR_PARAM_SETS["s"])
        e = rng.choice(HR_PARAM_SETS["e"])
        c = c_value
        # dx = y - b x^2 + a x^3 - z + coupling; dy = c - d x^2 - y;
        # dz = (s (x - e) - z) / tau
        local_terms.append([
            Term(coef=[0.0, 0.0, s / tau], func=Monomial(0, 1)),
            Term(coef=[1.0, -1.0, 0.0], func=Monomial(1, 1)),
            Term(coef=[-1.0, 0.0, -1.0 / tau], func=Monomial(2, 1)),
            Term(coef=[-b, -d, 0.0], func=Monomial(0, 2)),
            Term(coef=[a, 0.0, 0.0], func=Monomial(0, 3)),
            Term(coef=[0.0, c, -s * e / tau], func=Constant(1.0)),
        ])
        for j in sorted(graph.neighbors(i)):
            theta = float(rng_for(seed, "hr-edge", i, j).choice(HR_THETA_SET))
            coupling_terms[i][j] = [
                Term(
                    coef=[coupling_gain, 0.0, 0.0],
                    func=Sigmoid(coord=0, slope=1.0, offset=theta, gain=1.0),
                )
            ]
    return NetworkModel(
        node_dims=[3] * n_nodes,
        input_dims=[],
        local_terms=local_terms,
        coupling_terms=coupling_terms,
        input_terms=[dict() for _ in range(n_nodes)],
        meta={
            "family": "hindmarsh_rose",
            "n_nodes": n_nodes,
            "mean_degree": mean_degree,
            "rewire_prob": rewire_prob,
            "seed": int(seed),
            "tau": tau,
        },
    )
