import os

import numpy as np
import pytest

from koopnet.dictionary import Monomial
from koopnet.models import NetworkModel, Term, make_erdos_renyi_polynomial
from koopnet.simulate import (
    DatasetFormatError,
    DivergenceError,
    SnapshotDataset,
    flow,
    load_dataset,
    make_dataset,
    save_dataset,
)


def scalar_decay():
    """dx = -x."""
    return NetworkModel(
        node_dims=[1],
        input_dims=[],
        local_terms=[[Term(coef=[-1.0], func=Monomial(0, 1))]],
        coupling_terms=[{}],
        input_terms=[{}],
    )


def driven_integrator():
    """dx = u."""
    return NetworkModel(
        node_dims=[1],
        input_dims=[1],
        local_terms=[[]],
        coupling_terms=[{}],
        input_terms=[{0: [Term(coef=[1.0], func=Monomial(0, 1))]}],
    )


class TestFlow:
    def test_exponential_decay(self):
        # closed form: x(t) = x0 exp(-t)
        out = flow(scalar_decay(), [1.0], t=0.1)
        assert abs(out[0] - 0.904837418) < 1e-8

    def test_zero_duration_identity(self):
        x0 = np.array([0.3])
        out = flow(scalar_decay(), x0, t=0.0)
        assert np.array_equal(out, x0)
        assert out is not x0

    def test_constant_input_exact(self):
        out = flow(driven_integrator(), [0.0], u=[2.0], t=0.5)
        assert abs(out[0] - 1.0) < 1e-12

    def test_rk4_order(self):
        # halving the step should shrink the error roughly 16x (order >= 3.7)
        model = scalar_decay()
        exact = np.exp(-1.0)
        errs = []
        for substeps in (8, 16):
            out = flow(model, [1.0], t=1.0, substeps=substeps)
            errs.append(abs(out[0] - exact))
        order = np.log2(errs[0] / errs[1])
        assert order >= 3.7

    def test_semigroup_property(self):
        model = make_erdos_renyi_polynomial(4, 0.5, seed=2)
        rng = np.random.default_rng(0)
        x0 = rng.uniform(-1, 1, size=4)
        u = rng.uniform(-1, 1, size=2)
        one_shot = flow(model, x0, u, t=0.3, substeps=300)
        midpoint = flow(model, x0, u, t=0.1, substeps=100)
        two_step = flow(model, midpoint, u, t=0.2, substeps=200)
        assert np.allclose(one_shot, two_step, atol=1e-10)

    def test_divergence_reports_time(self):
        # dx = x^2 from x0 = 5 blows up at t = 0.2
        model = NetworkModel(
            node_dims=[1],
            input_dims=[],
            local_terms=[[Term(coef=[1.0], func=Monomial(0, 2))]],
            coupling_terms=[{}],
            input_terms=[{}],
        )
        with pytest.raises(DivergenceError) as err:
            flow(model, [5.0], t=0.3)
        assert err.value.time is not None

    def test_negative_duration(self):
        with pytest.raises(ValueError):
            flow(scalar_decay(), [1.0], t=-1.0)

    def test_batch_matches_loop(self):
        model = make_erdos_renyi_polynomial(3, 0.6, seed=3)
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, size=(5, 3))
        U = rng.uniform(-1, 1, size=(5, 2))
        batch = flow(model, X, U, t=0.05)
        for k in range(5):
            assert np.array_equal(batch[k], flow(model, X[k], U[k], t=0.05))


class TestMakeDataset:
    def test_noiseless_snapshots_match_flow(self):
        model = make_erdos_renyi_polynomial(4, 0.4, seed=4)
        data = make_dataset(model, 20, 0.05, seed=1)
        assert np.array_equal(data.Y, data.Y_clean)
        expected = flow(model, data.X, data.U, 0.05)
        assert np.allclose(data.Y, expected, atol=1e-12)

    def test_determinism(self):
        model = make_erdos_renyi_polynomial(4, 0.4, seed=4)
        a = make_dataset(model, 15, 0.05, seed=7, noise_sigma=0.1)
        b = make_dataset(model, 15, 0.05, seed=7, noise_sigma=0.1)
        for name in ("X", "U", "Y", "X_clean", "Y_clean"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_noise_statistics(self):
        model = scalar_decay()
        sigma = 0.05
        data = make_dataset(model, 20_000, 0.01, seed=3, noise_sigma=sigma)
        noise = data.X - data.X_clean
        assert abs(noise.mean()) < 4 * sigma / np.sqrt(noise.size)
        assert abs(noise.std() - sigma) < 0.05 * sigma

    def test_sigma_as_variance(self):
        model = scalar_decay()
        data = make_dataset(
            model, 5000, 0.01, seed=3, noise_sigma=0.04, sigma_is_variance=True
        )
        noise = data.X - data.X_clean
        assert abs(noise.std() - 0.2) < 0.02

    def test_boxes_respected(self):
        model = make_erdos_renyi_polynomial(3, 0.2, seed=0)
        data = make_dataset(model, 50, 0.01, state_box=(-0.5, 0.5), input_box=(0.0, 1.0), seed=2)
        assert data.X_clean.min() >= -0.5 and data.X_clean.max() <= 0.5
        assert data.U.min() >= 0.0 and data.U.max() <= 1.0

    def test_invalid_sizes(self):
        model = scalar_decay()
        with pytest.raises(ValueError):
            make_dataset(model, 0, 0.1)
        with pytest.raises(ValueError):
            make_dataset(model, 5, -0.1)


class TestDatasetIO:
    def test_roundtrip_bitwise(self, tmp_path):
        model = make_erdos_renyi_polynomial(4, 0.4, seed=4)
        data = make_dataset(model, 12, 0.05, seed=9, noise_sigma=0.01)
        save_dataset(data, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        for name in ("X", "U", "Y", "X_clean", "Y_clean"):
            assert np.array_equal(getattr(data, name), getattr(loaded, name)), name
        assert loaded.t_sample == data.t_sample
        assert loaded.node_dims == data.node_dims
        assert loaded.noise_sigma == data.noise_sigma

    def test_empty_input_table(self, tmp_path):
        model = NetworkModel(
            node_dims=[1],
            input_dims=[],
            local_terms=[[Term(coef=[-1.0], func=Monomial(0, 1))]],
            coupling_terms=[{}],
            input_terms=[{}],
        )
        data = make_dataset(model, 5, 0.05, seed=1)
        save_dataset(data, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert loaded.U.shape == (5, 0)

    def test_truncated_file_detected(self, tmp_path):
        model = scalar_decay()
        data = make_dataset(model, 10, 0.05, seed=1)
        save_dataset(data, tmp_path / "ds")
        x_path = tmp_path / "ds" / "X.csv"
        lines = x_path.read_text().splitlines()
        x_path.write_text("\n".join(lines[:5]) + "\n")
        with pytest.raises(DatasetFormatError, match="10 samples"):
            load_dataset(tmp_path / "ds")

    def test_malformed_value_reports_line(self, tmp_path):
        model = scalar_decay()
        data = make_dataset(model, 4, 0.05, seed=1)
        save_dataset(data, tmp_path / "ds")
        y_path = tmp_path / "ds" / "Y.csv"
        lines = y_path.read_text().splitlines()
        lines[2] = "not-a-number"
        y_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            load_dataset(tmp_path / "ds")

    def test_column_count_mismatch(self, tmp_path):
        model = scalar_decay()
        data = make_dataset(model, 4, 0.05, seed=1)
        save_dataset(data, tmp_path / "ds")
        x_path = tmp_path / "ds" / "X.csv"
        x_path.write_text("1.0,2.0\n" * 4)
        with pytest.raises(DatasetFormatError, match="expected 1"):
            load_dataset(tmp_path / "ds")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path)

    def test_block_slicing(self):
        ds = SnapshotDataset(
            t_sample=0.1,
            node_dims=[2, 1],
            input_dims=[1],
            X=np.arange(12.0).reshape(4, 3),
            U=np.arange(4.0).reshape(4, 1),
            Y=np.zeros((4, 3)),
        )
        assert np.array_equal(ds.state_block(1), ds.X[:, 2:3])
        assert np.array_equal(ds.input_block(0), ds.U)
