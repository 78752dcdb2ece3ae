import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmle_lab import acquisition as acq
from dmle_lab import mlp
from dmle_lab.autodiff import Graph
from dmle_lab.rng import stream


def bias_model(log_prob_rows: np.ndarray) -> mlp.MlpParams:
    """One-hot inputs select log-probability rows, so softmax reproduces
    the wanted predictive vectors exactly (up to normalisation)."""
    n, k = log_prob_rows.shape
    return mlp.MlpParams(layer_dims=[n, k], hidden_activation="relu",
                         weights=[log_prob_rows.copy()], biases=[np.zeros(k)])


class TestEntropy:
    def test_uniform_four_class_is_ln4(self):
        np.testing.assert_allclose(acq.entropy_of(np.full((1, 4), 0.25)),
                                   np.log(4.0), atol=1e-12)
        np.testing.assert_allclose(float(np.log(4.0)), 1.386294, atol=5e-7)

    def test_one_hot_is_zero(self):
        assert acq.entropy_of(np.array([[0.0, 1.0, 0.0]]))[0] == 0.0

    def test_skewed_vector_direct_summation(self):
        p = np.array([[0.7, 0.2, 0.1]])
        expected = -(0.7 * np.log(0.7) + 0.2 * np.log(0.2) + 0.1 * np.log(0.1))
        np.testing.assert_allclose(acq.entropy_of(p)[0], expected, atol=1e-15)
        np.testing.assert_allclose(expected, 0.801819, atol=5e-7)

    @given(st.permutations([0.6, 0.25, 0.1, 0.05]))
    @settings(max_examples=24, deadline=None)
    def test_invariant_to_class_permutation(self, perm):
        base = acq.entropy_of(np.array([[0.6, 0.25, 0.1, 0.05]]))[0]
        np.testing.assert_allclose(acq.entropy_of(np.array([list(perm)]))[0],
                                   base, atol=1e-12)


class TestLeastConfidence:
    def test_uniform_five_class(self):
        params = bias_model(np.zeros((1, 5)))
        sv = acq.score(acq.AcquisitionKind("least_confidence"), params,
                       np.eye(1))
        np.testing.assert_allclose(sv.scores, 0.8, atol=1e-12)

    @given(st.permutations([0.5, 0.3, 0.15, 0.05]))
    @settings(max_examples=24, deadline=None)
    def test_invariant_to_class_permutation(self, perm):
        params = bias_model(np.log(np.array([list(perm)])))
        sv = acq.score(acq.AcquisitionKind("least_confidence"), params, np.eye(1))
        assert sv.scores[0] == pytest.approx(0.5, abs=1e-12)


class TestBald:
    def test_identical_predictions_give_zero(self):
        params = mlp.init_params([2, 6, 3], "relu", stream(0, "init"))  # rate 0
        sv = acq.score(acq.AcquisitionKind("bald", bald_samples=5), params,
                       stream(1, "mc").normal(size=(4, 2)),
                       rng=stream(2, "bald"))
        np.testing.assert_allclose(sv.scores, 0.0, atol=1e-12)

    def test_disagreeing_one_hot_predictions_give_ln2(self):
        preds = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
        mean_p = np.mean(preds, axis=0)
        value = acq.entropy_of(mean_p) - np.mean([acq.entropy_of(p) for p in preds],
                                                 axis=0)
        np.testing.assert_allclose(value[0], np.log(2.0), atol=1e-12)

    def test_requires_rng_and_two_samples(self, small_mlp):
        with pytest.raises(ValueError, match="rng"):
            acq.score(acq.AcquisitionKind("bald"), small_mlp, np.ones((1, 2)))
        with pytest.raises(ValueError, match="2"):
            acq.score(acq.AcquisitionKind("bald", bald_samples=1), small_mlp,
                      np.ones((1, 2)), rng=stream(0, "bald"))

    def test_bounded_by_entropy_of_mean(self):
        params = mlp.init_params([2, 8, 4], "relu", stream(9, "init"),
                                 dropout_rate=0.5)
        x = stream(10, "mc").normal(size=(20, 2))
        kind = acq.AcquisitionKind("bald", bald_samples=16)
        sv = acq.score(kind, params, x, rng=stream(11, "bald"))
        preds = mlp.mc_dropout_predict(params, x, 16, rng=stream(11, "bald"))
        h_mean = acq.entropy_of(np.mean(preds, axis=0))
        assert np.all(sv.scores <= h_mean + 1e-12)
        assert np.all(sv.scores >= -1e-9)


class TestCoreset:
    def test_center_sample_scores_exactly_zero(self, small_mlp):
        x = stream(12, "mc").normal(size=(5, 2))
        context = acq.coreset_context(small_mlp, x[:2])
        sv = acq.score(acq.AcquisitionKind("coreset"), small_mlp, x,
                       context=context)
        assert sv.scores[0] == 0.0
        assert sv.scores[1] == 0.0
        assert np.all(sv.scores >= 0.0)

    def test_plane_geometry_distance(self):
        emb = np.array([[1.0, 1.0]])
        centers = np.array([[0.0, 0.0], [2.0, 0.0]])
        nearest, dist = acq._nearest_center(emb, centers)
        np.testing.assert_allclose(dist[0], np.sqrt(2.0), atol=1e-15)
        np.testing.assert_allclose(np.sqrt(2.0), 1.414214, atol=5e-7)

    def test_requires_context(self, small_mlp):
        with pytest.raises(ValueError, match="context"):
            acq.score(acq.AcquisitionKind("coreset"), small_mlp, np.ones((1, 2)))


class TestDifferentiableParity:
    """Graph-mode scores equal plain-mode scores at identical parameters."""

    @pytest.mark.parametrize("tag", ["entropy", "least_confidence"])
    def test_theta_only_kinds(self, small_mlp, tag):
        x = stream(13, "mc").normal(size=(7, 2))
        kind = acq.AcquisitionKind(tag)
        plain = acq.score(kind, small_mlp, x).scores
        g = Graph()
        leaves = mlp.param_leaves(g, small_mlp)
        node = acq.score_nodes(kind, g, leaves, small_mlp, x)
        np.testing.assert_allclose(node.data, plain, atol=1e-12)

    def test_coreset(self, small_mlp):
        x = stream(14, "mc").normal(size=(7, 2))
        kind = acq.AcquisitionKind("coreset")
        context = acq.coreset_context(small_mlp, x[:3])
        plain = acq.score(kind, small_mlp, x, context=context).scores
        g = Graph()
        leaves = mlp.param_leaves(g, small_mlp)
        node = acq.score_nodes(kind, g, leaves, small_mlp, x, context=context)
        np.testing.assert_allclose(node.data, plain, atol=1e-12)

    def test_bald_with_replayed_masks(self):
        params = mlp.init_params([2, 6, 3], "relu", stream(15, "init"),
                                 dropout_rate=0.5)
        x = stream(16, "mc").normal(size=(5, 2))
        kind = acq.AcquisitionKind("bald", bald_samples=8)
        plain = acq.score(kind, params, x, rng=stream(17, "bald")).scores
        masks = acq.replay_bald_masks(params, 8, stream(17, "bald"))
        g = Graph()
        leaves = mlp.param_leaves(g, params)
        node = acq.score_nodes(kind, g, leaves, params, x, bald_masks=masks)
        np.testing.assert_allclose(node.data, plain, atol=1e-12)

    def test_gradients_flow_into_parameters(self, small_mlp):
        x = stream(18, "mc").normal(size=(4, 2))
        g = Graph()
        leaves = mlp.param_leaves(g, small_mlp)
        total = acq.score_nodes(acq.AcquisitionKind("entropy"), g, leaves,
                                small_mlp, x).sum()
        g.backward(total)
        assert any(np.any(leaf.grad != 0) for leaf in leaves.values())


class TestScoreVector:
    def test_ranges_on_random_models(self):
        rng = stream(19, "mc")
        for trial in range(10):
            params = mlp.init_params([3, 6, 4], "relu", stream(20 + trial, "init"))
            x = rng.normal(size=(15, 3))
            ent = acq.score(acq.AcquisitionKind("entropy"), params, x).scores
            assert np.all(ent >= 0.0) and np.all(ent <= np.log(4.0) + 1e-12)
            lc = acq.score(acq.AcquisitionKind("least_confidence"), params, x).scores
            assert np.all(lc >= 0.0) and np.all(lc <= 0.75 + 1e-12)

    def test_empty_sample_set_rejected(self, small_mlp):
        with pytest.raises(ValueError, match="empty"):
            acq.score(acq.AcquisitionKind("entropy"), small_mlp,
                      np.zeros((0, 2)))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown acquisition"):
            acq.AcquisitionKind("margin")

    def test_theta_version_recorded(self, small_mlp):
        sv = acq.score(acq.AcquisitionKind("entropy"), small_mlp,
                       np.ones((2, 2)), theta_version=7)
        assert sv.theta_version == 7
        np.testing.assert_array_equal(sv.indices, [0, 1])
