"""Experiment configuration: a strict JSON schema with per-family defaults.

Unknown keys are rejected, every seed is explicit, and a loaded config
round-trips losslessly through its dictionary form.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .dictionary import (
    Constant,
    DictionarySpec,
    Monomial,
    Exp,
    NodeFunctionSet,
    Sigmoid,
    Sine,
    monomial_dictionary,
    monomial_node_functions,
)
from .models import (
    make_erdos_renyi_polynomial,
    make_hindmarsh_rose,
    make_nonpolynomial_network,
)

FAMILIES = ("erdos_renyi", "nonpolynomial", "hindmarsh_rose")
SWEEP_AXES = (
    "n_samples", "n_nodes", "noise_sigma", "edge_prob", "t_sample", "threshold", "gamma",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _take(raw: dict, section: str, allowed: dict):
    """Pop known keys with defaults; reject unknown ones."""
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return {k: raw.get(k, v) for k, v in allowed.items()}


@dataclass
class ModelConfig:
    family: str = "erdos_renyi"
    n_nodes: int = 50
    seed: int = 0
    edge_prob: float = 0.05
    n_inputs: int = 2
    mean_degree: int = 8
    rewire_prob: float = 0.5


@dataclass
class DatasetConfig:
    n_samples: int = 100
    t_sample: float = 0.1
    noise_sigma: float = 0.0
    sigma_is_variance: bool = False
    seed: int = 1
    state_low: float = -1.0
    state_high: float = 1.0
    input_low: float = -1.0
    input_high: float = 1.0
    max_step: float = 1e-3


@dataclass
class DualConfig:
    gamma: float | None = None
    gamma_grid: list | None = None
    centers: str = "xy"
    rcond: float | None = None


@dataclass
class TopologyConfig:
    node_degree: int = 2
    centering: str = "empirical_mean"
    penalty: float | None = None
    penalty_fraction: float = 0.01
    threshold: float = 0.1
    threshold_sweep: list | None = None
    standardize: bool = False
    lasso_max_iter: int = 10000
    lasso_tol: float = 1e-8


@dataclass
class LocalConfig:
    local_degree: int = 4
    coupling_degree: int = 3
    input_degree: int = 2
    neighbor_lift: str = "midpoint"
    refine: int = 0


@dataclass
class MetricsConfig:
    paper_strict: bool = False
    count_self_loops: bool = False


@dataclass
class SweepConfig:
    axis: str = "n_samples"
    values: list = field(default_factory=list)
    repeats: int = 1
    method: str = "two_step"  # two_step | dual_baseline | both


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    dual: DualConfig = field(default_factory=DualConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sweep: SweepConfig | None = None
    threads: int = 1

    def to_dict(self) -> dict:
        d = {
            "model": asdict(self.model),
            "dataset": asdict(self.dataset),
            "dual": asdict(self.dual),
            "topology": asdict(self.topology),
            "local": asdict(self.local),
            "metrics": asdict(self.metrics),
            "threads": self.threads,
        }
        if self.sweep is not None:
            d["sweep"] = asdict(self.sweep)
        return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    sections = {
        "model", "dataset", "dual", "topology", "local", "metrics", "sweep", "threads",
    }
    unknown = set(raw) - sections
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    def section(name, cls):
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"{name}: expected an object")
        defaults = {f_.name: getattr(cls(), f_.name) for f_ in cls.__dataclass_fields__.values()}
        return cls(**_take(data, name, defaults))

    cfg = ExperimentConfig(
        model=section("model", ModelConfig),
        dataset=section("dataset", DatasetConfig),
        dual=section("dual", DualConfig),
        topology=section("topology", TopologyConfig),
        local=section("local", LocalConfig),
        metrics=section("metrics", MetricsConfig),
        sweep=section("sweep", SweepConfig) if "sweep" in raw else None,
        threads=int(raw.get("threads", 1)),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    m, d, t = cfg.model, cfg.dataset, cfg.topology
    if m.family not in FAMILIES:
        raise ConfigError(f"model.family: unknown family {m.family!r}, expected one of {FAMILIES}")
    if m.n_nodes < 1:
        raise ConfigError("model.n_nodes must be >= 1")
    if m.family == "erdos_renyi" and not 0.0 <= m.edge_prob <= 1.0:
        raise ConfigError("model.edge_prob must lie in [0, 1]")
    if m.family == "nonpolynomial" and m.n_nodes % 4 != 0:
        raise ConfigError("model.n_nodes must be a multiple of 4 for the nonpolynomial family")
    if d.n_samples < 1:
        raise ConfigError("dataset.n_samples must be >= 1")
    if d.t_sample <= 0:
        raise ConfigError("dataset.t_sample must be positive")
    if d.noise_sigma < 0:
        raise ConfigError("dataset.noise_sigma must be nonnegative")
    if t.threshold < 0:
        raise ConfigError("topology.threshold must be nonnegative")
    if cfg.dual.centers not in ("x", "xy"):
        raise ConfigError("dual.centers must be 'x' or 'xy'")
    if cfg.sweep is not None:
        if cfg.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
        if not cfg.sweep.values:
            raise ConfigError("sweep.values must be non-empty")
        if cfg.sweep.repeats < 1:
            raise ConfigError("sweep.repeats must be >= 1")
        if cfg.sweep.method not in ("two_step", "dual_baseline", "both"):
            raise ConfigError("sweep.method must be two_step, dual_baseline or both")
    if cfg.local.neighbor_lift not in ("midpoint", "left"):
        raise ConfigError("local.neighbor_lift must be 'midpoint' or 'left'")
    if cfg.local.refine < 0:
        raise ConfigError("local.refine must be >= 0")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# family builders

def build_model(cfg: ExperimentConfig):
    m = cfg.model
    if m.family == "erdos_renyi":
        return make_erdos_renyi_polynomial(
            m.n_nodes, m.edge_prob, n_inputs=m.n_inputs, seed=m.seed
        )
    if m.family == "nonpolynomial":
        return make_nonpolynomial_network(m.n_nodes, seed=m.seed)
    return make_hindmarsh_rose(
        m.n_nodes, mean_degree=m.mean_degree, rewire_prob=m.rewire_prob, seed=m.seed
    )


def build_dictionaries(cfg: ExperimentConfig, model) -> DictionarySpec:
    """Candidate dictionaries per family.

    The polynomial family uses monomials (degree 4 locally, 3 for couplings,
    2 for inputs); the mixed family adds sine and exponential terms; the
    neuron family uses the cubic-polynomial local set with a constant plus
    unit sigmoids at the three candidate offsets.
    """
    fam = cfg.model.family
    loc = cfg.local
    if fam == "erdos_renyi":
        return monomial_dictionary(
            model.node_dims,
            model.input_dims,
            local_degree=loc.local_degree,
            coupling_degree=loc.coupling_degree,
            input_degree=loc.input_degree,
        )
    if fam == "nonpolynomial":
        local = tuple(
            (Monomial(0, 1), Monomial(0, 2), Monomial(0, 3), Sine(0), Exp(0))
            for _ in model.node_dims
        )
        return DictionarySpec(
            local=local,
            coupling=local,
            inputs=tuple(
                (Monomial(0, 1), Monomial(0, 2)) for _ in model.input_dims
            ),
        )
    local = (
        Monomial(0, 1), Monomial(1, 1), Monomial(2, 1),
        Monomial(0, 2), Monomial(0, 3), Constant(1.0),
    )
    coupling = tuple(
        Sigmoid(coord=0, slope=1.0, offset=th, gain=1.0) for th in (-0.5, -1.0, -1.5)
    )
    return DictionarySpec(
        local=tuple(local for _ in model.node_dims),
        coupling=tuple(coupling for _ in model.node_dims),
        inputs=(),
    )


def build_node_functions(cfg: ExperimentConfig, model) -> NodeFunctionSet:
    if cfg.model.family == "hindmarsh_rose":
        block = (Monomial(0, 1), Monomial(0, 2), Monomial(1, 1), Monomial(2, 1))
        return NodeFunctionSet(
            state=tuple(block for _ in model.node_dims), inputs=(), centering="raw"
        )
    return monomial_node_functions(
        model.node_dims, model.input_dims, cfg.topology.node_degree
    )


def build_two_step(cfg: ExperimentConfig, model):
    from .pipeline import TwoStepIdentifier

    return TwoStepIdentifier(
        dictionaries=build_dictionaries(cfg, model),
        node_functions=build_node_functions(cfg, model),
        centering=cfg.topology.centering,
        gamma=cfg.dual.gamma,
        gamma_grid=cfg.dual.gamma_grid,
        centers=cfg.dual.centers,
        penalty=cfg.topology.penalty,
        penalty_fraction=cfg.topology.penalty_fraction,
        threshold=cfg.topology.threshold,
        rcond=cfg.dual.rcond,
        threads=cfg.threads,
        standardize=cfg.topology.standardize,
        lasso_max_iter=cfg.topology.lasso_max_iter,
        lasso_tol=cfg.topology.lasso_tol,
        neighbor_lift=cfg.local.neighbor_lift,
        refine=cfg.local.refine,
    )


def build_dual_baseline(cfg: ExperimentConfig, model):
    from .pipeline import DualGlobalIdentifier

    return DualGlobalIdentifier(
        dictionaries=build_dictionaries(cfg, model),
        gamma=cfg.dual.gamma,
        gamma_grid=cfg.dual.gamma_grid,
        centers=cfg.dual.centers,
        penalty=cfg.topology.penalty,
        penalty_fraction=cfg.topology.penalty_fraction,
        threshold=cfg.topology.threshold,
        rcond=cfg.dual.rcond,
        threads=cfg.threads,
        lasso_max_iter=cfg.topology.lasso_max_iter,
        lasso_tol=cfg.topology.lasso_tol,
    )
