"""Embedding network and plain prototypical-network math."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semiproto.embedding import EmbeddingConfig, embed, init_embedding
from semiproto.errors import ConfigurationError, ContractError
from semiproto.numerics import Tensor, grad_check, mean
from semiproto.protonet import PrototypeSet, class_log_probs, compute_prototypes, episode_loss, predict

finite = st.floats(-10, 10, allow_nan=False)


def T(x):
    return Tensor(np.asarray(x, dtype=float))


class TestEmbedding:
    def test_same_seed_is_bit_identical(self):
        cfg = EmbeddingConfig(input_shape=(5,), hidden=(8,), embed_dim=3)
        a, b = init_embedding(cfg, 7), init_embedding(cfg, 7)
        for k in a.tensors:
            assert a.tensors[k].data.tobytes() == b.tensors[k].data.tobytes()

    def test_different_seeds_differ(self):
        cfg = EmbeddingConfig(input_shape=(5,), hidden=(8,), embed_dim=3)
        a, b = init_embedding(cfg, 1), init_embedding(cfg, 2)
        assert any(not np.array_equal(a.tensors[k].data, b.tensors[k].data) for k in a.tensors)

    def test_parameter_count(self):
        params = init_embedding(EmbeddingConfig(input_shape=(2,), hidden=(64, 64), embed_dim=16), 0)
        assert params.count() == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 16 + 16

    def test_empty_batch(self):
        params = init_embedding(EmbeddingConfig(input_shape=(4,), hidden=(6,), embed_dim=3), 0)
        assert embed(params, np.zeros((0, 4))).shape == (0, 3)

    def test_identity_layer(self):
        params = init_embedding(EmbeddingConfig(input_shape=(4,), hidden=(), embed_dim=4), 0)
        params.tensors["embed.layer0.weight"].data = np.eye(4)
        x = np.random.default_rng(0).normal(size=(6, 4))
        np.testing.assert_array_equal(embed(params, x).data, x)

    def test_duplicated_rows_and_permutation(self):
        params = init_embedding(EmbeddingConfig(input_shape=(4,), hidden=(6,), embed_dim=3), 0)
        x = np.random.default_rng(1).normal(size=(5, 4))
        x[3] = x[1]
        out = embed(params, x).data
        np.testing.assert_array_equal(out[3], out[1])
        perm = np.array([4, 2, 0, 1, 3])
        np.testing.assert_allclose(embed(params, x[perm]).data, out[perm], atol=1e-14)

    def test_shape_mismatch(self):
        params = init_embedding(EmbeddingConfig(input_shape=(4,), hidden=(6,), embed_dim=3), 0)
        with pytest.raises(ConfigurationError):
            embed(params, np.zeros((2, 5)))

    def test_bad_configs(self):
        with pytest.raises(ConfigurationError):
            EmbeddingConfig(embed_dim=0)
        with pytest.raises(ConfigurationError):
            EmbeddingConfig(kind="conv", input_shape=(16,))
        with pytest.raises(ConfigurationError):
            EmbeddingConfig(kind="conv", input_shape=(4, 4), hidden=(8, 8, 8), embed_dim=None)

    def test_conv_output(self):
        cfg = EmbeddingConfig(kind="conv", input_shape=(1, 8, 8), hidden=(3, 4), embed_dim=None)
        assert cfg.embed_dim == 4 * 2 * 2
        params = init_embedding(cfg, 0)
        x = np.random.default_rng(0).uniform(size=(3, 64))
        assert embed(params, x).shape == (3, 16)

    @pytest.mark.parametrize("cfg", [
        EmbeddingConfig(input_shape=(4,), hidden=(6, 5), embed_dim=3, nonlinearity="tanh"),
        EmbeddingConfig(input_shape=(4,), hidden=(6,), embed_dim=3),
        EmbeddingConfig(kind="conv", input_shape=(1, 4, 4), hidden=(2,), embed_dim=None),
    ])
    def test_grad_check(self, cfg):
        params = init_embedding(cfg, 3)
        x = np.random.default_rng(3).normal(size=(5, cfg.input_size))
        names = list(params.tensors)

        def f(ps):
            params.tensors.update(zip(names, ps))
            return mean(embed(params, x))

        assert grad_check(f, params.parameters(), eps=1e-6) < 1e-4


class TestPrototypes:
    def test_mean_of_class(self):
        p = compute_prototypes(T([[0, 0], [2, 0]]), [0, 0])
        np.testing.assert_array_equal(p.prototypes.data, [[1, 0]])

    def test_single_shot(self):
        e = T([[3, 4], [5, 6]])
        np.testing.assert_array_equal(compute_prototypes(e, [0, 1]).prototypes.data, e.data)

    def test_equal_prototypes(self):
        p = compute_prototypes(T([[1, 1], [-1, 3], [3, -1]]), [0, 1, 1]).prototypes.data
        np.testing.assert_array_equal(p, [[1, 1], [1, 1]])

    def test_empty_class(self):
        with pytest.raises(ContractError):
            compute_prototypes(T([[1, 1]]), [0], n_classes=2)


class TestClassification:
    def test_equidistant(self):
        lp = class_log_probs(T([[1, 0]]), T([[0, 0], [2, 0]]))
        np.testing.assert_allclose(np.exp(lp.data), [[0.5, 0.5]], atol=1e-15)

    def test_direct_evaluation(self):
        lp = class_log_probs(T([[0, 0]]), T([[0, 0], [2, 0]]))
        p = np.exp(lp.data[0])
        assert p[0] == pytest.approx(1 / (1 + math.exp(-4)), abs=1e-12)
        assert p[0] == pytest.approx(0.98201, abs=1e-5)
        assert predict(lp).tolist() == [0]

    def test_single_class(self):
        lp = class_log_probs(T([[5, -3]]), T([[0, 0]]))
        assert np.exp(lp.data[0, 0]) == pytest.approx(1.0, abs=1e-15)

    def test_no_classes(self):
        with pytest.raises(ContractError):
            class_log_probs(T([[0, 0]]), T(np.zeros((0, 2))))

    def test_distractor_row_is_not_a_class(self):
        protos = PrototypeSet(T([[0, 0], [2, 0]]), distractor=np.zeros((1, 2)), length_scales=T([1, 1, 3]))
        assert class_log_probs(T([[1, 1]]), protos).shape == (1, 2)

    def test_loss_examples(self):
        assert episode_loss(T([[math.log(0.5), math.log(0.5)]]), [1]).item() == pytest.approx(math.log(2), abs=1e-12)
        assert episode_loss(T([[0.0, -1e300]]), [0]).item() == 0.0
        lp = class_log_probs(T([[0, 0], [1, 0]]), T([[0, 0], [2, 0]]))
        loss = episode_loss(lp, [0, 0]).item()
        assert loss == pytest.approx((-math.log(1 / (1 + math.exp(-4))) + math.log(2)) / 2, abs=1e-12)
        assert loss == pytest.approx(0.355649, abs=1e-6)

    def test_predict_ties_go_low(self):
        assert predict(np.log([[0.9, 0.1], [0.5, 0.5], [0.98201, 0.01799]])).tolist() == [0, 0, 0]
        assert predict(np.array([[1.0, 3.0, 3.0]])).tolist() == [1]

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, (4, 3), elements=finite), arrays(float, (3, 3), elements=finite),
           arrays(float, 3, elements=finite))
    def test_rows_normalise_and_translation_invariance(self, q, p, shift):
        lp = class_log_probs(T(q), T(p)).data
        np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)
        moved = class_log_probs(T(q + shift), T(p + shift)).data
        np.testing.assert_allclose(moved, lp, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.int64, (5, 4), elements=st.integers(-20, 20)))
    def test_predict_invariant_to_monotone_transform(self, ints):
        scores = ints.astype(float)  # well separated, so the transforms stay strict in floating point
        for g in (np.exp, lambda v: 3 * v + 1, np.arctan):
            assert np.array_equal(predict(g(scores)), predict(scores))

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, (4, 2), elements=finite), arrays(float, (3, 2), elements=finite),
           st.lists(st.integers(0, 2), min_size=4, max_size=4))
    def test_loss_is_nonnegative(self, q, p, labels):
        assert episode_loss(class_log_probs(T(q), T(p)), labels).item() >= 0.0
