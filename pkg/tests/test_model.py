import numpy as np
import pytest

import dualgnn.autodiff as ad
from dualgnn.autodiff import Tape, Tensor
from dualgnn.connectivity import build_semantic, build_structural
from dualgnn.errors import CheckpointFormatError, InvalidParameterError
from dualgnn.gradcheck import check_gradient
from dualgnn.model import (DualEncoderParams, ForwardResult, GcnParams,
                           ModelConfig, checkpoint_bytes, forward,
                           gcn_forward, init_gcn_params, init_params,
                           load_checkpoint, restore_params, save_checkpoint)
from dualgnn.sparse import CsrMatrix, add_self_loops, sym_normalize

from oracles import semantic_dense


def random_setup(seed, n=12, d=5, c=3, num_layers=2, hidden=4, k=4,
                 **config_kwargs):
    rng = np.random.default_rng(seed)
    dense = (rng.random((n, n)) < 0.25).astype(float)
    dense = np.triu(dense, 1)
    dense = dense + dense.T
    graph = CsrMatrix.from_dense(dense)
    config = ModelConfig(num_layers=num_layers, hidden_dim=hidden,
                         dropout=0.5, max_hops=2, num_clusters=k,
                         **config_kwargs)
    struct = build_structural(graph, config.max_hops)
    struct_op = sym_normalize(add_self_loops(struct.matrix, 1.0))
    assignments = [rng.integers(0, k, size=n) for _ in range(num_layers)]
    sem_ops = [build_semantic(a, num_clusters=k) for a in assignments]
    features = rng.standard_normal((n, d))
    params = init_params(config, d, c, seed=seed)
    return dict(rng=rng, graph=graph, config=config, struct_op=struct_op,
                sem_ops=sem_ops, assignments=assignments, features=features,
                params=params, n=n, d=d, c=c)


def dense_reference_logits(setup):
    """Independent forward pass: explicit dense operators, literal
    propagate-then-transform order."""
    config = setup["config"]
    p = setup["params"]
    p_struct = setup["struct_op"].to_dense()
    p_sems = [semantic_dense(a) for a in setup["assignments"]]
    x = setup["features"]
    hs = hm = None
    for layer in range(config.num_layers):
        inp = x if layer == 0 else np.concatenate([hs, hm], axis=1)
        hs = np.maximum(p_struct @ inp @ p.struct_weights[layer].value, 0.0)
        hm = np.maximum(p_sems[layer] @ inp @ p.sem_weights[layer].value, 0.0)
    cin = np.concatenate([hs, hm], axis=1)
    hidden = np.maximum(p_struct @ cin @ p.cls_gcn.value, 0.0)
    return hidden @ p.cls_out.value + p.cls_bias.value


class TestInitShapes:
    def test_fused_shapes(self):
        config = ModelConfig(num_layers=3, hidden_dim=8)
        params = init_params(config, num_features=10, num_classes=4, seed=0)
        assert [w.value.shape for w in params.struct_weights] == \
            [(10, 8), (16, 8), (16, 8)]
        assert [w.value.shape for w in params.sem_weights] == \
            [(10, 8), (16, 8), (16, 8)]
        assert params.cls_gcn.value.shape == (16, 8)
        assert params.cls_out.value.shape == (8, 4)
        assert params.cls_bias.value.shape == (1, 4)
        np.testing.assert_array_equal(params.cls_bias.value, 0.0)

    def test_independent_shapes(self):
        config = ModelConfig(num_layers=2, hidden_dim=8,
                             independent_encoders=True)
        params = init_params(config, 10, 4, seed=0)
        assert [w.value.shape for w in params.struct_weights] == \
            [(10, 8), (8, 8)]
        assert params.cls_gcn.value.shape == (16, 8)

    def test_struct_only_shapes(self):
        config = ModelConfig(num_layers=2, hidden_dim=8, struct_only=True)
        params = init_params(config, 10, 4, seed=0)
        assert params.sem_weights == []
        assert [w.value.shape for w in params.struct_weights] == \
            [(10, 8), (8, 8)]
        assert params.cls_gcn.value.shape == (8, 8)

    def test_sem_only_shapes(self):
        config = ModelConfig(num_layers=2, hidden_dim=8, sem_only=True)
        params = init_params(config, 10, 4, seed=0)
        assert params.struct_weights == []
        assert [w.value.shape for w in params.sem_weights] == \
            [(10, 8), (8, 8)]

    def test_seeded_init_deterministic(self):
        config = ModelConfig()
        a = init_params(config, 6, 3, seed=1)
        b = init_params(config, 6, 3, seed=1)
        c = init_params(config, 6, 3, seed=2)
        np.testing.assert_array_equal(a.cls_gcn.value, b.cls_gcn.value)
        assert not np.array_equal(a.cls_gcn.value, c.cls_gcn.value)

    def test_glorot_scale(self):
        config = ModelConfig(num_layers=1, hidden_dim=50)
        params = init_params(config, 100, 3, seed=0)
        w = params.struct_weights[0].value
        limit = np.sqrt(6.0 / 150)
        assert np.abs(w).max() <= limit
        assert w.std() == pytest.approx(limit / np.sqrt(3), rel=0.1)


class TestConfigValidation:
    def test_both_streams_disabled_rejected(self):
        with pytest.raises(InvalidParameterError):
            ModelConfig(struct_only=True, sem_only=True).validate()

    def test_bad_values_rejected(self):
        for kwargs in (dict(num_layers=0), dict(hidden_dim=0),
                       dict(dropout=1.0), dict(max_hops=0),
                       dict(num_clusters=0),
                       dict(classifier_adjacency="nope")):
            with pytest.raises(InvalidParameterError):
                ModelConfig(**kwargs).validate()


class TestForward:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_reference(self, seed):
        setup = random_setup(seed)
        result = forward(None, setup["params"], setup["config"],
                         Tensor(setup["features"]), setup["struct_op"],
                         setup["sem_ops"], setup["struct_op"])
        np.testing.assert_allclose(result.logits.value,
                                   dense_reference_logits(setup),
                                   rtol=0, atol=1e-10)

    def test_states_collected(self):
        setup = random_setup(0)
        result = forward(None, setup["params"], setup["config"],
                         Tensor(setup["features"]), setup["struct_op"],
                         setup["sem_ops"], setup["struct_op"])
        assert len(result.struct_states) == 2
        assert len(result.sem_states) == 2
        assert result.layer_state(0).shape == (setup["n"], 8)

    def test_permutation_equivariance(self):
        setup = random_setup(3)
        n = setup["n"]
        perm = np.random.default_rng(99).permutation(n)

        logits = forward(None, setup["params"], setup["config"],
                         Tensor(setup["features"]), setup["struct_op"],
                         setup["sem_ops"], setup["struct_op"]).logits.value

        dense_graph = setup["graph"].to_dense()[np.ix_(perm, perm)]
        struct = build_structural(CsrMatrix.from_dense(dense_graph),
                                  setup["config"].max_hops)
        struct_op = sym_normalize(add_self_loops(struct.matrix, 1.0))
        sem_ops = [build_semantic(a[perm],
                                  num_clusters=setup["config"].num_clusters)
                   for a in setup["assignments"]]
        permuted = forward(None, setup["params"], setup["config"],
                           Tensor(setup["features"][perm]), struct_op,
                           sem_ops, struct_op).logits.value
        np.testing.assert_allclose(permuted, logits[perm], rtol=0, atol=1e-10)

    def test_training_dropout_deterministic_per_seed(self):
        setup = random_setup(1)
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(55)
            res = forward(Tape(), setup["params"], setup["config"],
                          Tensor(setup["features"]), setup["struct_op"],
                          setup["sem_ops"], setup["struct_op"],
                          training=True, rng=rng)
            outs.append(res.logits.value)
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_eval_ignores_rng(self):
        setup = random_setup(2)
        res1 = forward(None, setup["params"], setup["config"],
                       Tensor(setup["features"]), setup["struct_op"],
                       setup["sem_ops"], setup["struct_op"],
                       training=False, rng=np.random.default_rng(0))
        res2 = forward(None, setup["params"], setup["config"],
                       Tensor(setup["features"]), setup["struct_op"],
                       setup["sem_ops"], setup["struct_op"])
        np.testing.assert_array_equal(res1.logits.value, res2.logits.value)

    @pytest.mark.parametrize("variant", [
        dict(independent_encoders=True),
        dict(struct_only=True),
        dict(sem_only=True),
    ])
    def test_variant_forward_runs(self, variant):
        setup = random_setup(4, **variant)
        res = forward(None, setup["params"], setup["config"],
                      Tensor(setup["features"]), setup["struct_op"],
                      setup["sem_ops"], setup["struct_op"])
        assert res.logits.value.shape == (setup["n"], setup["c"])
        assert np.all(np.isfinite(res.logits.value))


class TestFullModelGradients:
    @pytest.mark.parametrize("variant", [
        dict(),
        dict(independent_encoders=True),
        dict(struct_only=True),
        dict(sem_only=True),
    ])
    def test_total_loss_gradient(self, variant):
        setup = random_setup(7, n=10, d=4, c=3, hidden=3, **variant)
        train_ids = np.array([0, 3, 5])
        train_labels = np.array([0, 1, 2])
        weights = np.array([1.0, 0.5, 2.0])
        pseudo_ids = np.array([1, 7])
        pseudo_labels = np.array([2, 0])
        features = Tensor(setup["features"])

        def build(tape):
            res = forward(tape, setup["params"], setup["config"], features,
                          setup["struct_op"], setup["sem_ops"],
                          setup["struct_op"])
            sup = ad.weighted_ce(tape, res.logits, train_ids, train_labels,
                                 weights)
            ps = ad.mean_ce(tape, res.logits, pseudo_ids, pseudo_labels)
            return ad.add(tape, sup, ad.scale(tape, ps, 1.0))

        res = check_gradient("total", build,
                             setup["params"].all_parameters())
        assert res.passed, f"max rel err {res.max_rel_err}"


class TestGcnBaseline:
    def test_shapes_and_forward(self):
        setup = random_setup(5)
        params = init_gcn_params(setup["d"], 8, setup["c"], seed=0)
        adj_op = sym_normalize(add_self_loops(setup["graph"], 1.0))
        logits = gcn_forward(None, params, adj_op, Tensor(setup["features"]),
                             0.5)
        assert logits.value.shape == (setup["n"], setup["c"])

    def test_gradients(self):
        setup = random_setup(6, n=8, d=3, c=2)
        params = init_gcn_params(setup["d"], 4, setup["c"], seed=1)
        adj_op = sym_normalize(add_self_loops(setup["graph"], 1.0))
        features = Tensor(setup["features"])
        ids = np.array([0, 2, 4])
        labels = np.array([0, 1, 0])

        def build(tape):
            logits = gcn_forward(tape, params, adj_op, features, 0.5)
            return ad.weighted_ce(tape, logits, ids, labels, np.ones(3))

        res = check_gradient("gcn", build, params.all_parameters())
        assert res.passed, f"max rel err {res.max_rel_err}"


class TestCheckpoints:
    def test_round_trip_restores_logits(self, tmp_path):
        setup = random_setup(8)
        path = tmp_path / "model.ckpt"
        save_checkpoint(setup["params"], path)
        original = forward(None, setup["params"], setup["config"],
                           Tensor(setup["features"]), setup["struct_op"],
                           setup["sem_ops"], setup["struct_op"]).logits.value

        fresh = init_params(setup["config"], setup["d"], setup["c"],
                            seed=999)
        restore_params(fresh, load_checkpoint(path))
        restored = forward(None, fresh, setup["config"],
                           Tensor(setup["features"]), setup["struct_op"],
                           setup["sem_ops"], setup["struct_op"]).logits.value
        np.testing.assert_array_equal(restored, original)

    def test_payload_is_little_endian_doubles(self):
        arr = np.array([[1.5, -2.0]])
        data = checkpoint_bytes({"w": arr})
        assert data[:4] == b"DGN1"
        assert arr.astype("<f8").tobytes() in data

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        setup = random_setup(9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(setup["params"], path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 10])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_name_mismatch_rejected(self, tmp_path):
        setup = random_setup(10)
        path = tmp_path / "model.ckpt"
        save_checkpoint(setup["params"], path)
        other = init_gcn_params(4, 3, 2, seed=0)
        with pytest.raises(CheckpointFormatError):
            restore_params(other, load_checkpoint(path))

    def test_shape_mismatch_rejected(self, tmp_path):
        setup = random_setup(11)
        path = tmp_path / "model.ckpt"
        save_checkpoint(setup["params"], path)
        smaller = init_params(
            ModelConfig(num_layers=2, hidden_dim=3,
                        num_clusters=setup["config"].num_clusters),
            setup["d"], setup["c"], seed=0)
        with pytest.raises(CheckpointFormatError):
            restore_params(smaller, load_checkpoint(path))
