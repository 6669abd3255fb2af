"""Evaluable scalar function families.

Three roles share this module: dictionary functions attached to node states
and inputs (the candidate terms of the dynamics), node functions used by the
topology step (zero-mean per block so cross-node projections vanish), and
test functions for the sample-space Koopman approximation (Gaussian RBFs).

Every function evaluates on an array of points of shape (n_points, dim) and
has a canonical text form used in configs, manifests and for aligning
estimated coefficients with ground truth.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .validation import as_points

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class ScalarFunction:
    """Base class; subclasses implement _values and text."""

    def __call__(self, points) -> np.ndarray:
        points = as_points(points)
        if points.shape[1] < self.min_dim:
            raise ValueError(
                f"function {self.text()} needs at least {self.min_dim} coordinates, "
                f"points have {points.shape[1]}"
            )
        return self._values(points)

    @property
    def min_dim(self) -> int:
        return 1

    def text(self) -> str:
        raise NotImplementedError

    def _values(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Monomial(ScalarFunction):
    """x[coord] ** degree; degree 1 is the coordinate identity."""

    coord: int = 0
    degree: int = 1

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"monomial degree must be >= 0, got {self.degree}")
        if self.coord < 0:
            raise ValueError(f"coordinate index must be >= 0, got {self.coord}")

    @property
    def min_dim(self):
        return self.coord + 1

    def text(self):
        if self.degree == 0:
            return "const(1.0)"
        if self.degree == 1:
            return f"x[{self.coord}]"
        return f"x[{self.coord}]^{self.degree}"

    def _values(self, points):
        return points[:, self.coord] ** self.degree


@dataclass(frozen=True)
class Constant(ScalarFunction):
    value: float = 1.0

    @property
    def min_dim(self):
        return 0

    def text(self):
        return f"const({_fmt(self.value)})"

    def _values(self, points):
        return np.full(points.shape[0], self.value)


@dataclass(frozen=True)
class Sine(ScalarFunction):
    coord: int = 0

    @property
    def min_dim(self):
        return self.coord + 1

    def text(self):
        return f"sin(x[{self.coord}])"

    def _values(self, points):
        return np.sin(points[:, self.coord])


@dataclass(frozen=True)
class Exp(ScalarFunction):
    coord: int = 0

    @property
    def min_dim(self):
        return self.coord + 1

    def text(self):
        return f"exp(x[{self.coord}])"

    def _values(self, points):
        return np.exp(points[:, self.coord])


@dataclass(frozen=True)
class Sigmoid(ScalarFunction):
    """gain / (1 + exp(-slope * (x[coord] - offset)))."""

    coord: int = 0
    slope: float = 1.0
    offset: float = 0.0
    gain: float = 1.0

    @property
    def min_dim(self):
        return self.coord + 1

    def text(self):
        return (
            f"sigmoid(x[{self.coord}],nu={_fmt(self.slope)},"
            f"theta={_fmt(self.offset)},gain={_fmt(self.gain)})"
        )

    def _values(self, points):
        z = -self.slope * (points[:, self.coord] - self.offset)
        return self.gain / (1.0 + np.exp(z))


@dataclass(frozen=True)
class GaussianRBF(ScalarFunction):
    """exp(-gamma^2 * ||x - center||^2) on the full point vector."""

    center: tuple = ()
    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def min_dim(self):
        return len(self.center)

    def text(self):
        c = ",".join(_fmt(v) for v in self.center)
        return f"rbf(gamma={_fmt(self.gamma)},center=[{c}])"

    def _values(self, points):
        if points.shape[1] != len(self.center):
            raise ValueError(
                f"rbf center has dimension {len(self.center)}, points have {points.shape[1]}"
            )
        d2 = ((points - np.asarray(self.center)) ** 2).sum(axis=1)
        return np.exp(-self.gamma**2 * d2)


@dataclass(frozen=True)
class Centered(ScalarFunction):
    """base - shift; used to enforce the zero-mean node-function condition."""

    base: ScalarFunction = None
    shift: float = 0.0

    @property
    def min_dim(self):
        return self.base.min_dim

    def text(self):
        return f"centered({self.base.text()},shift={_fmt(self.shift)})"

    def _values(self, points):
        return self.base._values(points) - self.shift


def eval_matrix(functions, points) -> np.ndarray:
    """Evaluate a function list on points: entry (k, j) = functions[j](points[k])."""
    points = as_points(points)
    out = np.empty((points.shape[0], len(functions)))
    for j, f in enumerate(functions):
        try:
            out[:, j] = f(points)
        except ValueError as exc:
            raise ValueError(f"function {j}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# test functions

@dataclass(frozen=True)
class TestFunctionSet:
    """Functions on the augmented state [x, u] used by the sample-space method."""

    functions: tuple
    label: str = ""
    degenerate: bool = False

    @property
    def count(self) -> int:
        return len(self.functions)


def rbf_set(centers, gamma: float, label: str = "") -> TestFunctionSet:
    """One Gaussian RBF per center, all with the same width parameter."""
    centers = as_points(centers, "centers")
    if centers.shape[0] == 0:
        raise ValueError("centers must be non-empty")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    funcs = tuple(GaussianRBF(center=tuple(c), gamma=float(gamma)) for c in centers)
    return TestFunctionSet(
        functions=funcs,
        label=label or f"rbf(gamma={_fmt(gamma)},n={len(funcs)})",
        degenerate=(gamma == 0.0),
    )


# ---------------------------------------------------------------------------
# node functions (topology step)

CENTERING_MODES = ("raw", "empirical_mean", "analytic_mean")


@dataclass(frozen=True)
class NodeFunctionSet:
    """Per-node-block and per-input-block function lists.

    ``state[k]`` holds functions of node k's state block only, ``inputs[k]``
    functions of input k's block only. ``centering`` records how the zero-mean
    condition was (or was not) enforced.
    """

    state: tuple
    inputs: tuple
    centering: str = "raw"
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.centering not in CENTERING_MODES:
            raise ValueError(f"unknown centering mode {self.centering!r}")
        object.__setattr__(self, "state", tuple(tuple(fs) for fs in self.state))
        object.__setattr__(self, "inputs", tuple(tuple(fs) for fs in self.inputs))


def monomial_node_functions(node_dims, input_dims, degree: int = 2) -> NodeFunctionSet:
    """Monomials x[c]^p for p = 1..degree on every coordinate of every block."""
    if degree < 1:
        raise ValueError("degree must be >= 1")

    def block(dim):
        return tuple(Monomial(c, p) for c in range(dim) for p in range(1, degree + 1))

    return NodeFunctionSet(
        state=tuple(block(d) for d in node_dims),
        inputs=tuple(block(d) for d in input_dims),
        centering="raw",
    )


def analytic_mean(func: ScalarFunction, low: float, high: float) -> float:
    """Mean of a single-coordinate function over [low, high] via Gauss-Legendre."""
    if isinstance(func, Constant):
        return func.value
    if isinstance(func, Centered):
        return analytic_mean(func.base, low, high) - func.shift
    if isinstance(func, GaussianRBF):
        raise ValueError("analytic centering is not supported for RBF node functions")
    half = 0.5 * (high - low)
    pts = np.zeros((_GL_NODES.size, func.min_dim))
    pts[:, func.min_dim - 1] = 0.5 * (low + high) + half * _GL_NODES
    vals = func(pts)
    return float((vals * _GL_WEIGHTS).sum() * half / (high - low))


def center_node_functions(funcs: NodeFunctionSet, data, mode: str | None = None) -> NodeFunctionSet:
    """Replace each node function by ``f - mean(f)``.

    The mean is empirical over the dataset's state/input blocks, or analytic
    over the declared hyper-rectangle domain. Already-centered functions are
    re-centered against their base.
    """
    mode = mode or funcs.centering
    if mode == "raw":
        raise ValueError("centering mode is 'raw'; nothing to center")
    if mode not in CENTERING_MODES:
        raise ValueError(f"unknown centering mode {mode!r}")
    if mode == "empirical_mean" and data.n_samples == 0:
        raise ValueError("cannot center empirically on an empty dataset")

    def center_block(fs, values):
        out = []
        for f in fs:
            base = f.base if isinstance(f, Centered) else f
            if mode == "empirical_mean":
                shift = float(np.mean(base(values)))
            else:
                shift = analytic_mean(base, *funcs.domain)
            out.append(Centered(base=base, shift=shift))
        return tuple(out)

    state = tuple(
        center_block(fs, data.state_block(k)) for k, fs in enumerate(funcs.state)
    )
    inputs = tuple(
        center_block(fs, data.input_block(k)) for k, fs in enumerate(funcs.inputs)
    )
    return NodeFunctionSet(state=state, inputs=inputs, centering=mode, domain=funcs.domain)


# ---------------------------------------------------------------------------
# dictionaries for local identification

@dataclass(frozen=True)
class DictionarySpec:
    """Candidate dictionaries: local functions per node (coordinate identities
    first), outgoing coupling functions per node, input functions per input."""

    local: tuple
    coupling: tuple
    inputs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "local", tuple(tuple(fs) for fs in self.local))
        object.__setattr__(self, "coupling", tuple(tuple(fs) for fs in self.coupling))
        object.__setattr__(self, "inputs", tuple(tuple(fs) for fs in self.inputs))

    def validate_identity_first(self, node_dims):
        for i, dim in enumerate(node_dims):
            funcs = self.local[i]
            if len(funcs) < dim:
                raise ValueError(
                    f"node {i}: local dictionary has {len(funcs)} functions, "
                    f"needs the {dim} coordinate identities first"
                )
            for j in range(dim):
                f = funcs[j]
                if not (isinstance(f, Monomial) and f.degree == 1 and f.coord == j):
                    raise ValueError(
                        f"node {i}: local dictionary function {j} is {f.text()}, "
                        f"expected the coordinate identity x[{j}]"
                    )


def monomial_dictionary(
    node_dims,
    input_dims,
    local_degree: int = 4,
    coupling_degree: int = 3,
    input_degree: int = 2,
) -> DictionarySpec:
    """Monomial dictionaries: identities first, then higher powers per coordinate."""

    def local_block(dim):
        funcs = [Monomial(c, 1) for c in range(dim)]
        funcs += [Monomial(c, p) for c in range(dim) for p in range(2, local_degree + 1)]
        return tuple(funcs)

    def plain_block(dim, degree):
        return tuple(Monomial(c, p) for c in range(dim) for p in range(1, degree + 1))

    return DictionarySpec(
        local=tuple(local_block(d) for d in node_dims),
        coupling=tuple(plain_block(d, coupling_degree) for d in node_dims),
        inputs=tuple(plain_block(d, input_degree) for d in input_dims),
    )


# ---------------------------------------------------------------------------
# parsing canonical text forms

_MONO_RE = re.compile(r"^x\[(\d+)\](?:\^(\d+))?$")
_SIN_RE = re.compile(r"^sin\(x\[(\d+)\]\)$")
_EXP_RE = re.compile(r"^exp\(x\[(\d+)\]\)$")
_CONST_RE = re.compile(r"^const\(([^)]+)\)$")
_SIG_RE = re.compile(r"^sigmoid\(x\[(\d+)\],nu=([^,]+),theta=([^,]+),gain=([^)]+)\)$")
_RBF_RE = re.compile(r"^rbf\(gamma=([^,]+),center=\[([^\]]*)\]\)$")
_CENT_RE = re.compile(r"^centered\((.+),shift=([^,)]+)\)$")


def parse_function(text: str) -> ScalarFunction:
    """Inverse of ScalarFunction.text()."""
    text = text.strip()
    m = _CENT_RE.match(text)
    if m:
        return Centered(base=parse_function(m.group(1)), shift=float(m.group(2)))
    m = _MONO_RE.match(text)
    if m:
        return Monomial(int(m.group(1)), int(m.group(2) or 1))
    m = _SIN_RE.match(text)
    if m:
        return Sine(int(m.group(1)))
    m = _EXP_RE.match(text)
    if m:
        return Exp(int(m.group(1)))
    m = _CONST_RE.match(text)
    if m:
        return Constant(float(m.group(1)))
    m = _SIG_RE.match(text)
    if m:
        return Sigmoid(
            coord=int(m.group(1)),
            slope=float(m.group(2)),
            offset=float(m.group(3)),
            gain=float(m.group(4)),
        )
    m = _RBF_RE.match(text)
    if m:
        center = tuple(float(v) for v in m.group(2).split(",") if v.strip())
        return GaussianRBF(center=center, gamma=float(m.group(1)))
    raise ValueError(f"cannot parse function text {text!r}")
