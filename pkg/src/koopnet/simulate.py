"""Snapshot generation: integrate the network ODE with zero-order-hold inputs
and package {X_k, U_k, Y_k} triples, optionally with measurement noise.

Datasets persist as a directory holding a JSON manifest plus headerless CSV
tables (X, U, Y and their noise-free copies) written with 17 significant
digits so values round-trip bit-exactly.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .models import rng_for


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, message, time=None, sample=None):
        super().__init__(message)
        self.time = time
        self.sample = sample


class DatasetFormatError(ValueError):
    """Dataset directory is malformed or inconsistent."""


@dataclass
class SnapshotDataset:
    """Sampled triples: X holds initial states, U constant inputs over the
    sampling interval, Y the states one sampling time later (rows = samples).
    Noise-free copies are retained when measurement noise was added."""

    t_sample: float
    node_dims: list
    input_dims: list
    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    X_clean: np.ndarray | None = None
    Y_clean: np.ndarray | None = None
    noise_sigma: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.U = np.asarray(self.U, dtype=float).reshape(self.X.shape[0], -1)
        n, m = sum(self.node_dims), sum(self.input_dims)
        if self.t_sample <= 0:
            raise ValueError(f"t_sample must be positive, got {self.t_sample}")
        if self.Y.shape != self.X.shape:
            raise ValueError(f"X and Y shapes differ: {self.X.shape} vs {self.Y.shape}")
        if self.X.shape[1] != n:
            raise ValueError(f"X has {self.X.shape[1]} columns, node dims sum to {n}")
        if self.U.shape[1] != m:
            raise ValueError(f"U has {self.U.shape[1]} columns, input dims sum to {m}")
        for name in ("X", "U", "Y"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_states(self) -> int:
        return self.X.shape[1]

    @property
    def n_input_channels(self) -> int:
        return self.U.shape[1]

    def node_offsets(self):
        return np.concatenate(([0], np.cumsum(self.node_dims))).astype(int)

    def input_offsets(self):
        return np.concatenate(([0], np.cumsum(self.input_dims))).astype(int)

    def state_block(self, i: int, source: str = "X") -> np.ndarray:
        off = self.node_offsets()
        return getattr(self, source)[:, off[i]:off[i + 1]]

    def input_block(self, k: int) -> np.ndarray:
        off = self.input_offsets()
        return self.U[:, off[k]:off[k + 1]]


def flow(model, x0, u=None, t: float = 0.0, max_step: float = 1e-3, substeps: int | None = None):
    """Integrate the model for duration ``t`` with the input held constant.

    Classical fixed-step RK4; the number of substeps defaults to ceil(t /
    max_step). Accepts a single state (n,) or a batch (B, n), integrating all
    batch rows simultaneously.
    """
    if t < 0:
        raise ValueError(f"duration must be nonnegative, got {t}")
    x = np.array(x0, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if u is None:
        u = np.zeros((x.shape[0], sum(model.input_dims)))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if t == 0:
        return x[0].copy() if single else x.copy()
    if substeps is None:
        substeps = max(1, math.ceil(t / max_step))
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = t / substeps
    f = model.vector_field
    for step in range(substeps):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                k1 = f(x, u)
                k2 = f(x + 0.5 * h * k1, u)
                k3 = f(x + 0.5 * h * k2, u)
                k4 = f(x + h * k3, u)
        except FloatingPointError as exc:
            raise DivergenceError(
                f"vector field overflowed at t={h * step:.6g}: {exc}", time=h * step
            ) from exc
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(x).all():
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise DivergenceError(
                f"state diverged at t={h * (step + 1):.6g} (batch row {bad})",
                time=h * (step + 1),
                sample=bad,
            )
    return x[0] if single else x


def make_dataset(
    model,
    n_samples: int,
    t_sample: float,
    state_box=(-1.0, 1.0),
    input_box=(-1.0, 1.0),
    noise_sigma: float = 0.0,
    seed: int = 0,
    max_step: float = 1e-3,
    sigma_is_variance: bool = False,
) -> SnapshotDataset:
    """Draw uniform initial states and inputs, integrate one sampling interval,
    then add independent zero-mean Gaussian noise to both X and Y.

    ``noise_sigma`` is a standard deviation unless ``sigma_is_variance``; the
    interpretation is recorded in the dataset metadata. Noise-free copies are
    always retained.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if t_sample <= 0:
        raise ValueError(f"t_sample must be positive, got {t_sample}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    n, m = sum(model.node_dims), sum(model.input_dims)
    X = rng_for(seed, "states").uniform(state_box[0], state_box[1], size=(n_samples, n))
    U = rng_for(seed, "inputs").uniform(input_box[0], input_box[1], size=(n_samples, m))
    try:
        Y = flow(model, X, U, t_sample, max_step=max_step)
    except DivergenceError as exc:
        raise DivergenceError(
            f"sample {exc.sample} diverged during data generation: {exc}",
            time=exc.time,
            sample=exc.sample,
        ) from exc
    std = math.sqrt(noise_sigma) if sigma_is_variance else noise_sigma
    X_noisy = X + rng_for(seed, "noise-x").normal(0.0, 1.0, size=X.shape) * std
    Y_noisy = Y + rng_for(seed, "noise-y").normal(0.0, 1.0, size=Y.shape) * std
    return SnapshotDataset(
        t_sample=float(t_sample),
        node_dims=list(model.node_dims),
        input_dims=list(model.input_dims),
        X=X_noisy,
        U=U,
        Y=Y_noisy,
        X_clean=X,
        Y_clean=Y,
        noise_sigma=float(noise_sigma),
        seed=int(seed),
        meta={
            "sigma_is_variance": bool(sigma_is_variance),
            "noise_std": std,
            "max_step": max_step,
            "state_box": list(state_box),
            "input_box": list(input_box),
            "model_hash": model.content_hash() if hasattr(model, "content_hash") else None,
        },
    )


_TABLES = ("X", "U", "Y", "X_clean", "Y_clean")


def _write_csv(path, array):
    with open(path, "w") as fh:
        for row in np.atleast_2d(array):
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def _read_csv(path, n_rows, n_cols, name):
    if n_cols == 0:
        return np.zeros((n_rows, 0))
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_cols:
                raise DatasetFormatError(
                    f"{name} line {ln}: expected {n_cols} values, found {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetFormatError(f"{name} line {ln}: {exc}") from exc
    if len(rows) != n_rows:
        raise DatasetFormatError(
            f"{name}: manifest declares {n_rows} samples but file holds {len(rows)} rows"
        )
    return np.array(rows, dtype=float)


def save_dataset(ds: SnapshotDataset, path) -> None:
    """Write the dataset directory (manifest.json plus CSV tables)."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": "koopnet-dataset-v1",
        "n_samples": ds.n_samples,
        "t_sample": ds.t_sample,
        "node_dims": list(ds.node_dims),
        "input_dims": list(ds.input_dims),
        "noise_sigma": ds.noise_sigma,
        "seed": ds.seed,
        "meta": ds.meta,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    clean_x = ds.X_clean if ds.X_clean is not None else ds.X
    clean_y = ds.Y_clean if ds.Y_clean is not None else ds.Y
    tables = {"X": ds.X, "U": ds.U, "Y": ds.Y, "X_clean": clean_x, "Y_clean": clean_y}
    for name in _TABLES:
        arr = tables[name]
        if arr.shape[1] == 0:
            open(os.path.join(path, f"{name}.csv"), "w").close()
        else:
            _write_csv(os.path.join(path, f"{name}.csv"), arr)


def load_dataset(path) -> SnapshotDataset:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DatasetFormatError(f"no manifest.json under {path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"manifest.json: {exc}") from exc
    if manifest.get("format") != "koopnet-dataset-v1":
        raise DatasetFormatError(f"unknown dataset format {manifest.get('format')!r}")
    k = int(manifest["n_samples"])
    n = sum(manifest["node_dims"])
    m = sum(manifest["input_dims"])
    data = {}
    for name in _TABLES:
        cols = m if name == "U" else n
        data[name] = _read_csv(os.path.join(path, f"{name}.csv"), k, cols, f"{name}.csv")
    return SnapshotDataset(
        t_sample=float(manifest["t_sample"]),
        node_dims=list(manifest["node_dims"]),
        input_dims=list(manifest["input_dims"]),
        X=data["X"],
        U=data["U"],
        Y=data["Y"],
        X_clean=data["X_clean"],
        Y_clean=data["Y_clean"],
        noise_sigma=float(manifest["noise_sigma"]),
        seed=manifest.get("seed"),
        meta=manifest.get("meta", {}),
    )
