import numpy as np
import pandas as pd
import pytest

from utils import numkern as nk
from utils.errors import DimensionError, UsageError
from utils.graphio import Graph
from utils.intergat import (
    BaseGatLayer,
    InterGatLayer,
    VariantSource,
    aggregate_interactions,
    basegat_forward,
    build_variant,
    clustered_adjacency,
    dropout_mask,
    empirical_covariance,
    intergat_forward,
    process_interaction,
    process_interaction_backward,
    save_interaction_csv,
    symmetrized,
)


def _scalar_process(raw, eps=1e-5):
    """Loop version of symmetrize, row layer norm and row softmax."""
    n = raw.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        row = [0.5 * (raw[i, j] + raw[j, i]) for j in range(n)]
        mean = sum(row) / n
        var = sum((v - mean) ** 2 for v in row) / n
        normed = [(v - mean) / np.sqrt(var + eps) for v in row]
        top = max(normed)
        exps = [np.exp(v - top) for v in normed]
        total = sum(exps)
        for j in range(n):
            out[i, j] = exps[j] / total
    return out


def _path_adjacency(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return a


class TestProcessInteraction:
    def test_rows_are_distributions(self, rng):
        for _ in range(20):
            p = process_interaction(rng.normal(size=(7, 7)))
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(p >= 0)

    def test_symmetrized_is_exactly_symmetric(self, rng):
        s = symmetrized(rng.normal(size=(9, 9)))
        np.testing.assert_array_equal(s, s.T)

    def test_matches_loop_oracle(self, rng):
        raw = rng.normal(size=(5, 5))
        np.testing.assert_allclose(process_interaction(raw), _scalar_process(raw), atol=1e-12)

    def test_constant_matrix_gives_uniform_rows(self):
        np.testing.assert_allclose(process_interaction(np.full((4, 4), 2.5)), 0.25, atol=1e-15)

    def test_matrix_wide_norm_is_row_stochastic(self, rng):
        p = process_interaction(rng.normal(size=(6, 6)), norm_axis="matrix")
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_unknown_axis(self, rng):
        with pytest.raises(UsageError):
            process_interaction(rng.normal(size=(3, 3)), norm_axis="column")

    def test_non_square(self):
        with pytest.raises(DimensionError):
            process_interaction(np.ones((2, 3)))

    @pytest.mark.parametrize("axis", ["row", "matrix"])
    def test_backward_matches_finite_differences(self, rng, axis):
        raw = rng.normal(size=(5, 5))
        w = rng.normal(size=(5, 5))
        numeric = nk.numerical_gradient(lambda: float(np.sum(w * process_interaction(raw, norm_axis=axis))), raw)
        analytic = process_interaction_backward(raw, w, norm_axis=axis)
        assert nk.relative_error(analytic, numeric) < 1e-6


class TestInterGatLayer:
    def test_single_node_is_projection(self, rng):
        layer = InterGatLayer(1, 3, heads=1, head_dim=2, rng=rng)
        x = rng.normal(size=(1, 3))
        expected = nk.elu(x @ layer.params["spatial.W.0"])
        np.testing.assert_allclose(intergat_forward(layer, x), expected, atol=1e-15)

    def test_uniform_matrix_averages_nodes(self, rng):
        layer = InterGatLayer(4, 2, heads=1, head_dim=2, rng=rng)
        layer.params["spatial.I.0"][:] = 1.0
        layer.params["spatial.W.0"][:] = np.eye(2)
        x = rng.normal(size=(4, 2))
        z = intergat_forward(layer, x)
        np.testing.assert_allclose(z, np.tile(nk.elu(x.mean(axis=0)), (4, 1)), atol=1e-12)

    def test_matches_double_loop(self, rng):
        for _ in range(20):
            layer = InterGatLayer(4, 2, heads=2, head_dim=3, rng=rng)
            x = rng.normal(size=(4, 2))
            z = intergat_forward(layer, x)
            for k in range(2):
                p = layer.effective_matrix(k)
                w = layer.params[f"spatial.W.{k}"]
                h = x @ w
                for i in range(4):
                    acc = np.zeros(3)
                    for j in range(4):
                        acc += p[i, j] * h[j]
                    np.testing.assert_allclose(z[i, 3 * k:3 * k + 3], nk.elu(acc), atol=1e-12)

    def test_permutation_equivariance(self, rng):
        layer = InterGatLayer(5, 3, heads=2, head_dim=2, rng=rng)
        x = rng.normal(size=(5, 3))
        perm = rng.permutation(5)
        z = intergat_forward(layer, x)
        for k in range(2):
            raw = layer.params[f"spatial.I.{k}"]
            raw[:] = raw[np.ix_(perm, perm)]
        np.testing.assert_allclose(intergat_forward(layer, x[perm]), z[perm], atol=1e-12)

    def test_batched_input(self, rng):
        layer = InterGatLayer(4, 2, heads=2, head_dim=3, rng=rng)
        x = rng.normal(size=(3, 4, 2))
        z = intergat_forward(layer, x)
        assert z.shape == (3, 4, 6)
        np.testing.assert_allclose(z[2], intergat_forward(layer, x[2]), atol=1e-12)

    def test_wrong_node_count(self, rng):
        layer = InterGatLayer(4, 2, heads=1, head_dim=2, rng=rng)
        with pytest.raises(DimensionError):
            intergat_forward(layer, np.ones((5, 2)))

    def test_parameter_count(self):
        layer = InterGatLayer(10, 3, heads=4, head_dim=8)
        assert layer.parameter_count() == 4 * (10 * 10 + 3 * 8)
        assert layer.parameter_count() == sum(v.size for v in layer.params.values())

    def test_fixed_variant_has_no_matrix_parameters(self):
        source = VariantSource("adjacency", _path_adjacency(4))
        layer = InterGatLayer(4, 2, heads=2, head_dim=3, source=source)
        assert layer.interaction_names() == []
        assert layer.parameter_count() == 2 * 2 * 3
        np.testing.assert_array_equal(layer.effective_matrix(0), _path_adjacency(4))

    def test_weighted_variant_starts_at_base(self):
        base = _path_adjacency(4)
        layer = InterGatLayer(4, 2, heads=2, head_dim=3, source=VariantSource("weighted_adjacency", base))
        assert layer.interaction_names() == ["spatial.M.0", "spatial.M.1"]
        np.testing.assert_array_equal(layer.effective_matrix(1), base)

    def test_none_variant_rejected(self):
        with pytest.raises(UsageError):
            InterGatLayer(3, 2, source=VariantSource("none"))


class TestBaseGatLayer:
    def test_complete_graph_with_equal_features_is_uniform(self, rng):
        adjacency = np.ones((4, 4)) - np.eye(4)
        layer = BaseGatLayer(adjacency, 2, heads=1, head_dim=3, rng=rng)
        x = np.tile(rng.normal(size=(1, 2)), (4, 1))
        _, _, alpha = layer.attention(x, 0)
        np.testing.assert_allclose(alpha, adjacency / 3, atol=1e-12)

    def test_identity_adjacency_isolates_nodes(self, rng):
        layer = BaseGatLayer(np.eye(3), 2, heads=2, head_dim=2, rng=rng)
        x = rng.normal(size=(3, 2))
        z = basegat_forward(layer, x)
        for i in range(3):
            expected = np.concatenate([nk.elu(x[i] @ layer.params[f"spatial.W.{k}"]) for k in range(2)])
            np.testing.assert_allclose(z[i], expected, atol=1e-12)

    def test_non_edges_get_exactly_zero_attention(self, rng):
        adjacency = _path_adjacency(5)
        layer = BaseGatLayer(adjacency, 3, heads=2, head_dim=2, rng=rng)
        x = rng.normal(size=(2, 5, 3))
        for k in range(2):
            _, _, alpha = layer.attention(x, k)
            assert np.all(alpha[:, adjacency == 0] == 0.0)
            np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)

    def test_path_graph_oracle(self, rng):
        adjacency = _path_adjacency(3)
        layer = BaseGatLayer(adjacency, 2, heads=1, head_dim=2, slope=0.2, rng=rng)
        x = rng.normal(size=(3, 2))
        w, a = layer.params["spatial.W.0"], layer.params["spatial.a.0"]
        h = x @ w
        z = basegat_forward(layer, x)
        for i in range(3):
            nbrs = [j for j in range(3) if adjacency[i, j] > 0]
            e = np.array([nk.leaky_relu(a[:2] @ h[i] + a[2:] @ h[j], 0.2) for j in nbrs])
            weights = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
            expected = nk.elu(sum(wt * h[j] for wt, j in zip(weights, nbrs)))
            np.testing.assert_allclose(z[i], expected, atol=1e-12)

    def test_isolated_node_attends_to_itself(self, rng):
        adjacency = np.zeros((3, 3))
        adjacency[0, 1] = adjacency[1, 0] = 1.0
        layer = BaseGatLayer(adjacency, 2, heads=1, head_dim=2, rng=rng)
        _, _, alpha = layer.attention(rng.normal(size=(3, 2)), 0)
        np.testing.assert_array_equal(alpha[2], [0.0, 0.0, 1.0])

    def test_adjacency_can_be_swapped(self, rng):
        layer = BaseGatLayer(np.ones((3, 3)), 2, heads=1, head_dim=2, rng=rng)
        x = rng.normal(size=(3, 2))
        z = basegat_forward(layer, x, adjacency=np.eye(3))
        np.testing.assert_allclose(z, nk.elu(x @ layer.params["spatial.W.0"]), atol=1e-12)

    def test_parameter_count(self):
        layer = BaseGatLayer(np.ones((6, 6)), 3, heads=4, head_dim=8)
        assert layer.parameter_count() == sum(v.size for v in layer.params.values())


class TestVariants:
    def test_adjacency_copies_graph(self):
        graph = Graph(_path_adjacency(2))
        source = build_variant("adjacency", graph)
        np.testing.assert_array_equal(source.base, graph.adjacency)
        assert not source.weighted

    def test_single_cluster_block(self):
        source = build_variant("spectral_block", Graph(_path_adjacency(4)), k=1)
        np.testing.assert_array_equal(source.base, np.ones((4, 4)) - np.eye(4))

    def test_two_clique_blocks(self):
        adjacency = np.zeros((6, 6))
        adjacency[:3, :3] = 1.0
        adjacency[3:, 3:] = 1.0
        np.fill_diagonal(adjacency, 0.0)
        adjacency[2, 3] = adjacency[3, 2] = 1.0
        source = build_variant("spectral_block", Graph(adjacency), k=2)
        np.testing.assert_array_equal(source.base, clustered_adjacency([0, 0, 0, 1, 1, 1]))
        assert source.meta["k"] == 2

    def test_covariance_of_correlated_nodes(self, rng):
        first = rng.normal(size=200)
        values = np.stack([first, 2.0 * first], axis=1)
        source = build_variant("weighted_covariance", Graph(np.ones((2, 2))), train_values=values)
        c = source.base
        np.testing.assert_allclose(c[0, 1], c[1, 0], atol=1e-15)
        np.testing.assert_allclose(c[0, 1], np.sqrt(c[0, 0] * c[1, 1]), rtol=1e-12)
        np.testing.assert_allclose(c, empirical_covariance(values[:, :, None]), atol=1e-15)
        assert source.weighted

    def test_unknown_tag(self):
        with pytest.raises(UsageError):
            build_variant("attention", Graph(np.ones((2, 2))))

    def test_too_many_clusters(self):
        with pytest.raises(UsageError):
            build_variant("spectral_block", Graph(_path_adjacency(3)), k=4)

    def test_covariance_needs_signal(self):
        with pytest.raises(UsageError):
            build_variant("weighted_covariance", Graph(np.ones((2, 2))))


class TestDropout:
    def test_rate_zero_is_identity(self):
        np.testing.assert_array_equal(dropout_mask(0.0, 1, (4, 4)), np.ones((4, 4)))

    def test_eval_mode_is_identity(self):
        np.testing.assert_array_equal(dropout_mask(0.5, 1, (4, 4), training=False), np.ones((4, 4)))

    def test_kept_fraction_and_scaling(self):
        mask = dropout_mask(0.3, 7, (200, 100))
        kept = mask > 0
        assert abs(kept.mean() - 0.7) < 0.02
        np.testing.assert_allclose(mask[kept], 1.0 / 0.7)

    def test_same_seed_same_mask(self):
        np.testing.assert_array_equal(dropout_mask(0.3, 5, (10, 10)), dropout_mask(0.3, 5, (10, 10)))

    def test_rate_one_rejected(self):
        with pytest.raises(UsageError):
            dropout_mask(1.0, 0, (2, 2))


class TestHelpers:
    def test_aggregate_rules(self):
        mats = [np.ones((2, 2)), 3 * np.ones((2, 2))]
        np.testing.assert_array_equal(aggregate_interactions(mats), 2 * np.ones((2, 2)))
        np.testing.assert_array_equal(aggregate_interactions(mats, "sum"), 4 * np.ones((2, 2)))
        with pytest.raises(UsageError):
            aggregate_interactions(mats, "max")

    def test_interaction_csv(self, tmp_path, rng):
        m = rng.normal(size=(4, 4))
        save_interaction_csv(m, tmp_path / "m.csv")
        back = pd.read_csv(tmp_path / "m.csv", header=None).to_numpy()
        np.testing.assert_allclose(back, m, atol=1e-15)
