import numpy as np
import pytest

from koopnet.dictionary import (
    Centered,
    Monomial,
    NodeFunctionSet,
    center_node_functions,
    monomial_node_functions,
)
from koopnet.models import NetworkModel, Term, make_erdos_renyi_polynomial
from koopnet.simulate import SnapshotDataset, make_dataset
from koopnet.topology import (
    build_design_matrix,
    estimate_weights,
    roc_sweep,
    threshold_topology,
)


def dataset_from_states(X, node_dims, input_dims=(), U=None):
    X = np.asarray(X, dtype=float)
    U = np.zeros((X.shape[0], sum(input_dims))) if U is None else np.asarray(U, float)
    return SnapshotDataset(
        t_sample=0.1,
        node_dims=list(node_dims),
        input_dims=list(input_dims),
        X=X,
        U=U,
        Y=X.copy(),
    )


class TestDesignMatrix:
    def test_single_identity_column(self):
        ds = dataset_from_states([[2.0], [3.0]], [1])
        funcs = NodeFunctionSet(state=((Monomial(0, 1),),), inputs=())
        design = build_design_matrix(ds, funcs)
        assert np.array_equal(design.values, [[2.0], [3.0]])
        assert design.state_slices == [slice(0, 1)]

    def test_block_order_and_width(self):
        ds = dataset_from_states(np.ones((4, 2)), [1, 1], [1], U=np.ones((4, 1)))
        funcs = monomial_node_functions([1, 1], [1], degree=2)
        design = build_design_matrix(ds, funcs)
        assert design.values.shape == (4, 6)
        assert design.state_slices == [slice(0, 2), slice(2, 4)]
        assert design.input_slices == [slice(4, 6)]

    def test_centered_columns_sum_to_zero(self):
        rng = np.random.default_rng(0)
        ds = dataset_from_states(rng.uniform(-1, 1, size=(80, 2)), [1, 1])
        funcs = center_node_functions(
            monomial_node_functions([1, 1], [], 2), ds, "empirical_mean"
        )
        design = build_design_matrix(ds, funcs)
        assert np.all(np.abs(design.values.mean(axis=0)) < 1e-10)

    def test_coverage_mismatch(self):
        ds = dataset_from_states(np.ones((3, 2)), [1, 1])
        funcs = monomial_node_functions([1], [], 2)
        with pytest.raises(ValueError, match="covers 1 nodes"):
            build_design_matrix(ds, funcs)


def exact_vf_weights(model, n_samples=200, seed=0, degree=2, penalty=None, **kw):
    """Weights computed from the true vector field at sampled points."""
    rng = np.random.default_rng(seed)
    n, m = sum(model.node_dims), sum(model.input_dims)
    X = rng.uniform(-1, 1, size=(n_samples, n))
    U = rng.uniform(-1, 1, size=(n_samples, m))
    ds = SnapshotDataset(
        t_sample=0.1, node_dims=model.node_dims, input_dims=model.input_dims,
        X=X, U=U, Y=X.copy(),
    )
    vf = model.vector_field(X, U)
    funcs = center_node_functions(
        monomial_node_functions(model.node_dims, model.input_dims, degree),
        ds,
        "empirical_mean",
    )
    design = build_design_matrix(ds, funcs)
    return estimate_weights(vf, design, model.node_dims, penalty=penalty, **kw)


class TestEstimateWeights:
    def test_zero_vector_field_gives_zero_weights(self):
        model = make_erdos_renyi_polynomial(3, 0.5, seed=0)
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, size=(30, 3))
        U = rng.uniform(-1, 1, size=(30, 2))
        ds = SnapshotDataset(
            t_sample=0.1, node_dims=[1, 1, 1], input_dims=[1, 1], X=X, U=U, Y=X.copy()
        )
        funcs = monomial_node_functions([1, 1, 1], [1, 1], 2)
        design = build_design_matrix(ds, funcs)
        w = estimate_weights(np.zeros((30, 3)), design, [1, 1, 1])
        assert np.all(w.state_weights == 0.0)
        assert np.all(w.input_weights == 0.0)

    def test_decoupled_nodes_have_no_cross_weights(self):
        model = NetworkModel(
            node_dims=[1, 1], input_dims=[],
            local_terms=[
                [Term(coef=[-1.0], func=Monomial(0, 1))],
                [Term(coef=[-1.0], func=Monomial(0, 1))],
            ],
            coupling_terms=[{}, {}], input_terms=[{}, {}],
        )
        w = exact_vf_weights(model, penalty=1e-10)
        lam = w.state_weights
        assert lam[0, 1] < 1e-6 * lam[0, 0]
        assert lam[1, 0] < 1e-6 * lam[1, 1]

    def test_chain_coupling_detected(self):
        model = NetworkModel(
            node_dims=[1, 1], input_dims=[],
            local_terms=[
                [Term(coef=[-1.0], func=Monomial(0, 1))],
                [Term(coef=[-1.0], func=Monomial(0, 1))],
            ],
            coupling_terms=[{}, {0: [Term(coef=[1.0], func=Monomial(0, 2))]}],
            input_terms=[{}, {}],
        )
        w = exact_vf_weights(model)
        assert w.state_weights[1, 0] > 0.5

    def test_theorem_forward_direction(self):
        # absent couplings give weights far below true-edge weights when the
        # vector field is exact and lies in the node-function span
        for seed in range(5):
            model = make_erdos_renyi_polynomial(6, 0.4, seed=seed)
            w = exact_vf_weights(model, n_samples=300, degree=3, seed=seed, penalty=0.0)
            lam = w.state_weights
            adj = model.adjacency()
            off = ~np.eye(6, dtype=bool)
            true_edges = lam[off & adj]
            non_edges = lam[off & ~adj]
            if true_edges.size == 0 or non_edges.size == 0:
                continue
            assert non_edges.max() < 1e-6 * true_edges.mean()

    @pytest.mark.parametrize("seed", range(20))
    def test_theorem_reverse_direction(self, seed):
        # every true edge dominates every non-edge by 10x for penalties in a
        # reasonable window, over 20 random sparse networks
        model = make_erdos_renyi_polynomial(8, 0.25, seed=100 + seed)
        w = exact_vf_weights(model, n_samples=400, degree=3, seed=seed,
                             penalty=None, penalty_fraction=0.003)
        lam = w.state_weights
        adj = model.adjacency()
        off = ~np.eye(8, dtype=bool)
        true_edges = lam[off & adj]
        non_edges = lam[off & ~adj]
        if true_edges.size == 0:
            pytest.skip("draw has no edges")
        floor = non_edges.max() if non_edges.size else 0.0
        assert true_edges.min() >= 10 * floor

    def test_unconverged_recorded(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=(40, 1))
        design_vals = base + 0.01 * rng.normal(size=(40, 12))
        from koopnet.topology import DesignMatrix

        design = DesignMatrix(
            values=design_vals,
            state_slices=[slice(0, 12)],
            input_slices=[],
        )
        w = estimate_weights(
            rng.normal(size=(40, 1)), design, [1], penalty=0.0, max_iter=2
        )
        assert (0, 0) in w.unconverged

    def test_threads_do_not_change_result(self):
        model = make_erdos_renyi_polynomial(6, 0.4, seed=3)
        w1 = exact_vf_weights(model, threads=1)
        w2 = exact_vf_weights(model, threads=3)
        assert np.array_equal(w1.state_weights, w2.state_weights)
        assert np.array_equal(w1.input_weights, w2.input_weights)


class TestThreshold:
    def test_zero_threshold_keeps_everything(self):
        from koopnet.topology import WeightEstimate

        w = WeightEstimate(
            state_weights=np.array([[0.0, 0.2], [0.3, 0.0]]),
            input_weights=np.zeros((2, 0)),
            coefficients=[], penalties=[],
        )
        topo = threshold_topology(w, 0.0)
        assert topo.neighbors == [[0, 1], [0, 1]]

    def test_above_max_threshold_empties_sets(self):
        from koopnet.topology import WeightEstimate

        w = WeightEstimate(
            state_weights=np.array([[0.5, 0.05], [0.2, 0.3]]),
            input_weights=np.zeros((2, 0)),
            coefficients=[], penalties=[],
        )
        topo = threshold_topology(w, 10.0)
        assert topo.neighbors == [[], []]

    def test_spec_example(self):
        from koopnet.topology import WeightEstimate

        w = WeightEstimate(
            state_weights=np.array([[0.5, 0.05], [0.2, 0.3]]),
            input_weights=np.zeros((2, 0)),
            coefficients=[], penalties=[],
        )
        topo = threshold_topology(w, 0.1)
        assert topo.neighbors == [[0], [0, 1]]

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        from koopnet.topology import WeightEstimate

        w = WeightEstimate(
            state_weights=rng.uniform(size=(5, 5)),
            input_weights=rng.uniform(size=(5, 2)),
            coefficients=[], penalties=[],
        )
        prev = threshold_topology(w, 0.2)
        nxt = threshold_topology(w, 0.6)
        for i in range(5):
            assert set(nxt.neighbors[i]) <= set(prev.neighbors[i])
            assert set(nxt.inputs[i]) <= set(prev.inputs[i])

    def test_negative_threshold_rejected(self):
        from koopnet.topology import WeightEstimate

        w = WeightEstimate(
            state_weights=np.zeros((1, 1)), input_weights=np.zeros((1, 0)),
            coefficients=[], penalties=[],
        )
        with pytest.raises(ValueError):
            threshold_topology(w, -0.1)


class TestROC:
    def _truth(self, n=6, p=0.3, seed=0):
        return make_erdos_renyi_polynomial(n, p, seed=seed)

    def test_perfect_separation(self):
        truth = self._truth(seed=2)
        adj = truth.adjacency()
        lam = np.where(adj, 2.0, 0.1) + 0.0
        roc = roc_sweep(lam, truth)
        assert roc.auroc == 1.0

    def test_constant_weights_give_half(self):
        truth = self._truth(seed=2)
        lam = np.ones((6, 6))
        roc = roc_sweep(lam, truth)
        assert roc.auroc == pytest.approx(0.5)

    def test_indicator_plus_small_noise(self):
        truth = self._truth(seed=3)
        rng = np.random.default_rng(0)
        lam = truth.adjacency().astype(float) + 0.3 * rng.uniform(size=(6, 6))
        roc = roc_sweep(lam, truth)
        assert roc.auroc == 1.0

    def test_matches_rank_statistic_oracle(self):
        # oracle: AUROC equals the Mann-Whitney statistic computed by sklearn
        from sklearn.metrics import roc_auc_score

        truth = self._truth(n=10, p=0.3, seed=5)
        rng = np.random.default_rng(1)
        lam = rng.uniform(size=(10, 10))
        mask = ~np.eye(10, dtype=bool)
        expected = roc_auc_score(truth.adjacency()[mask], lam[mask])
        roc = roc_sweep(lam, truth)
        assert roc.auroc == pytest.approx(expected, abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        truth = self._truth(n=8, p=0.4, seed=6)
        rng = np.random.default_rng(2)
        lam = rng.uniform(size=(8, 8))
        a = roc_sweep(lam, truth).auroc
        b = roc_sweep(np.exp(3 * lam) + 5, truth).auroc
        assert a == pytest.approx(b, abs=1e-12)

    def test_degenerate_no_edges(self):
        truth = make_erdos_renyi_polynomial(4, 0.0, seed=0)
        roc = roc_sweep(np.ones((4, 4)), truth)
        assert roc.degenerate
        assert np.isnan(roc.auroc)

    def test_explicit_thresholds(self):
        truth = self._truth(seed=2)
        lam = truth.adjacency().astype(float)
        roc = roc_sweep(lam, truth, thresholds=[0.5])
        assert roc.points.shape == (3, 2)
        assert tuple(roc.points[0]) == (0.0, 0.0)
        assert tuple(roc.points[-1]) == (1.0, 1.0)

    def test_shape_mismatch(self):
        truth = self._truth()
        with pytest.raises(ValueError):
            roc_sweep(np.ones((3, 3)), truth)


class TestPipelineIntegration:
    def test_weights_scale_with_true_coefficients(self):
        # coupling weight approximates the absolute coupling coefficient when
        # node functions contain the coupling functions
        model = NetworkModel(
            node_dims=[1, 1], input_dims=[],
            local_terms=[
                [Term(coef=[-0.6], func=Monomial(0, 1))],
                [Term(coef=[-1.0], func=Monomial(0, 1))],
            ],
            coupling_terms=[{}, {0: [Term(coef=[0.8], func=Monomial(0, 2))]}],
            input_terms=[{}, {}],
        )
        w = exact_vf_weights(model, n_samples=400, penalty=1e-8)
        assert w.state_weights[1, 0] == pytest.approx(0.8, abs=0.05)
