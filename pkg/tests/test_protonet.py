import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import finite_difference, max_relative_error
from monreco.errors import DivergenceError
from monreco.model import RESOURCE_CLASSES, ResourceClass
from monreco.protonet import (
    DEFAULT_THRESHOLDS,
    FALLBACK_THRESHOLD,
    NetworkConfig,
    decode_prototypes,
    default_threshold,
    forward,
    gradients,
    init_network,
    load_network,
    loss,
    network_from_json,
    network_to_json,
    predict_class,
    predict_proba,
    save_network,
    softmax,
    train,
)


def random_batch(seed, n=8, p=5):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, p)), rng.integers(0, 2, n)


def random_net(seed, **kw):
    net = init_network(NetworkConfig(seed=seed, **kw))
    # spread the weights so no block sits at a trivial point
    rng = np.random.default_rng(seed + 1000)
    for p in net.parameters().values():
        p += rng.normal(0, 0.3, p.shape)
    return net


def gradient_error(net, x, y):
    analytic = gradients(net, x, y)
    numeric = finite_difference(lambda: loss(net, x, y).total, net.parameters())
    return max_relative_error(analytic, numeric)


def separable(seed, n=60):
    y = np.repeat([0, 1], n // 2)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 5)) * 0.5 + y[:, None] * 0.4
    return x, y


class TestConfig:
    def test_defaults(self):
        c = NetworkConfig()
        assert (c.input_dim, c.latent_dim, c.prototype_count, c.class_count) == (5, 3, 4, 2)
        assert c.lambdas == (0.05, 0.05, 0.05)

    @pytest.mark.parametrize(
        "kw", [{"class_count": 3}, {"latent_dim": 0}, {"activation": "relu"}, {"lambdas": (1, 1)}, {"learning_rate": 0}]
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            NetworkConfig(**kw)

    def test_from_mapping_unknown_key(self):
        with pytest.raises(ValueError):
            NetworkConfig.from_mapping({"momentum": 0.9})

    def test_json_round_trip(self):
        c = NetworkConfig(encoder_hidden=(6, 4), lambdas=(0.1, 0.2, 0.3))
        assert NetworkConfig.from_mapping(json.loads(json.dumps(c.to_json()))) == c


class TestThresholds:
    def test_table_values(self):
        r = ResourceClass
        expected = {
            r.SERVICE_LEVEL: 0.45, r.API: 0.30, r.CPU: 0.20, r.CONTAINER: 0.40,
            r.DEPENDENCY: 0.20, r.COMPUTE_CLUSTER: 0.05, r.STORAGE: 0.35,
            r.RAM_MEMORY: 0.30, r.CERTIFICATE: 0.50, r.CACHE_MEMORY: 0.41,
            r.NONE_OF_THE_ABOVE: 0.40,
        }
        assert DEFAULT_THRESHOLDS == expected

    def test_fallback(self):
        missing = [c for c in RESOURCE_CLASSES if c not in DEFAULT_THRESHOLDS]
        assert set(missing) == {ResourceClass.IO, ResourceClass.PAGING_MEMORY}
        assert all(default_threshold(c) == FALLBACK_THRESHOLD for c in missing)


class TestForward:
    def test_softmax_overflow_safe(self):
        p = softmax(np.array([[1e308, -1e308], [1000.0, 1000.0]]))
        assert np.allclose(p, [[1, 0], [0.5, 0.5]])

    @settings(max_examples=200)
    @given(arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6)))
    def test_softmax_sums_to_one(self, logits):
        assert np.all(np.abs(softmax(logits).sum(axis=1) - 1.0) <= 1e-12)

    def test_shapes_and_ranges(self):
        net = random_net(0)
        out = forward(net, np.full(5, 0.3))
        assert out.z.shape == (3,) and out.x_hat.shape == (5,) and out.distances.shape == (4,)
        assert np.all(out.distances >= 0)
        assert abs(out.probabilities.sum() - 1.0) <= 1e-12
        assert np.all((out.probabilities > 0) & (out.probabilities < 1))

    def test_prototype_at_encoding(self):
        net = random_net(1)
        x = np.linspace(0, 1, 5)
        net.prototypes[0] = net.encode(x)[0]
        d = forward(net, x).distances
        assert d[0] == 0.0 and np.all(d[1:] > 0)

    def test_zero_class_weights_uniform(self):
        net = random_net(2)
        net.class_weights[:] = 0
        assert np.all(forward(net, random_batch(0)[0]).probabilities == 0.5)

    def test_proba_and_argmax_agree(self):
        net = random_net(3)
        x = random_batch(3, n=30)[0]
        p = predict_proba(net, x)
        assert np.array_equal(predict_class(net, x), (p > 0.5).astype(int))
        assert isinstance(predict_proba(net, x[0]), float)

    def test_decode_prototypes(self):
        net = random_net(4, prototype_count=6)
        decoded = decode_prototypes(net)
        assert len(decoded) == 6 and all(v.shape == (5,) for v in decoded)


class TestLoss:
    def test_components_non_negative(self):
        net = random_net(0)
        b = loss(net, *random_batch(0))
        assert b.cross_entropy > 0 and b.recon >= 0 and b.r1 >= 0 and b.r2 >= 0
        lam = net.config.lambdas
        assert b.total == pytest.approx(b.cross_entropy + lam[0] * b.recon + lam[1] * b.r1 + lam[2] * b.r2, abs=1e-15)

    def test_zero_lambdas_is_cross_entropy(self):
        net = random_net(5, lambdas=(0, 0, 0))
        x, y = random_batch(5)
        b = loss(net, x, y)
        probs = forward(net, x).probabilities
        ce = -np.mean(np.log(probs[np.arange(len(y)), y]))
        assert b.total == b.cross_entropy
        assert b.cross_entropy == pytest.approx(ce, abs=1e-12)

    def test_single_point_at_prototype(self):
        net = random_net(6, prototype_count=1)
        x = np.full((1, 5), 0.2)
        net.prototypes[0] = net.encode(x)[0]
        b = loss(net, x, [1])
        assert b.r1 == 0.0 and b.r2 == 0.0

    def test_confident_predictions_approach_zero(self):
        net = random_net(7, lambdas=(0, 0, 0), prototype_count=2)
        x = np.array([[0.1] * 5, [0.9] * 5])
        z = net.encode(x)
        net.prototypes[:] = z
        # class 0 near prototype 0, class 1 near prototype 1
        net.class_weights[:] = [[-1.0, 0.0], [0.0, -1.0]]
        values = []
        for scale in (1e2, 1e4, 1e6):
            net.class_weights *= scale / max(1.0, abs(net.class_weights).max())
            values.append(loss(net, x, [0, 1]).total)
        assert values[0] > values[1] > values[2] and values[2] < 1e-6

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            loss(random_net(0), np.zeros((0, 5)), [])


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_difference(self, seed):
        assert gradient_error(random_net(seed), *random_batch(seed)) < 1e-4

    def test_tanh_and_deeper(self):
        net = random_net(11, activation="tanh", encoder_hidden=(6, 4))
        assert gradient_error(net, *random_batch(11)) < 1e-4

    def test_zero_lambdas_zero_weights(self):
        net = random_net(12, lambdas=(0, 0, 0))
        net.class_weights[:] = 0
        x, y = random_batch(12)
        g = gradients(net, x, y)
        assert np.any(g["class_weights"] != 0)
        assert all(not np.any(v) for k, v in g.items() if k != "class_weights")
        assert gradient_error(net, x, y) < 1e-4

    def test_duplicated_batch(self):
        net = random_net(13)
        x, y = random_batch(13)
        single = gradients(net, x, y)
        double = gradients(net, np.vstack([x, x]), np.concatenate([y, y]))
        for name in single:
            np.testing.assert_allclose(double[name], single[name], rtol=1e-12, atol=1e-15)


class TestTrain:
    def test_loss_decreases(self):
        x, y = separable(0)
        hist = train(NetworkConfig(epochs=50, learning_rate=0.5), x, y).history
        assert hist[-1].total < hist[0].total

    def test_deterministic(self):
        x, y = separable(1)
        cfg = NetworkConfig(epochs=30, seed=7)
        a, b = train(cfg, x, y), train(cfg, x, y)
        assert a.history == b.history
        assert all(np.array_equal(p, q) for p, q in zip(a.network.parameters().values(), b.network.parameters().values()))

    def test_init_not_mutated(self):
        x, y = separable(2)
        start = init_network(NetworkConfig(), x)
        before = {k: v.copy() for k, v in start.parameters().items()}
        train(NetworkConfig(epochs=5), x, y, init=start)
        assert all(np.array_equal(before[k], v) for k, v in start.parameters().items())

    def test_input_dim_checked(self):
        with pytest.raises(ValueError):
            train(NetworkConfig(), np.zeros((4, 3)), [0, 1, 0, 1])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        x, y = separable(3, n=20)
        with pytest.raises(DivergenceError) as err:
            train(NetworkConfig(learning_rate=1e6, epochs=200), x, y)
        assert err.value.epoch < 200

    @pytest.mark.parametrize("seed", range(10))
    def test_prototypes_near_training_points(self, seed):
        y = np.repeat([0, 1], 60)
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, (120, 5)) * 0.5 + y[:, None] * 0.4
        cfg = NetworkConfig(lambdas=(0.05, 0.5, 0.05), learning_rate=0.5, seed=seed)
        net = train(cfg, x, y).network
        z = net.encode(x)
        pair = np.sqrt(((z[:, None] - z[None]) ** 2).sum(-1))[np.triu_indices(len(z), 1)]
        cutoff = np.percentile(pair, 10)
        nearest = np.sqrt(((net.prototypes[:, None] - z[None]) ** 2).sum(-1)).min(axis=1)
        assert np.all(nearest <= cutoff)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = random_net(20, encoder_hidden=(7,))
        net.meta = {"resource_class": "cpu"}
        save_network(net, tmp_path / "n.json")
        back = load_network(tmp_path / "n.json")
        assert back.config == net.config and back.meta == net.meta
        for k, v in net.parameters().items():
            assert np.array_equal(back.parameters()[k], v)
        x = random_batch(20)[0]
        assert np.array_equal(predict_proba(back, x), predict_proba(net, x))

    def test_rejects_bad_files(self):
        data = network_to_json(random_net(21))
        with pytest.raises(ValueError):
            network_from_json({**data, "version": 99})
        with pytest.raises(ValueError):
            network_from_json({**data, "format": "other"})
        bad = json.loads(json.dumps(data))
        bad["params"]["prototypes"] = [[0.0]]
        with pytest.raises(ValueError):
            network_from_json(bad)

    def test_non_finite_probabilities_never_from_finite_inputs(self):
        net = random_net(22)
        p = predict_proba(net, np.array([[1e6] * 5, [-1e6] * 5]))
        assert all(math.isfinite(v) for v in p)
