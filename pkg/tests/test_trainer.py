import numpy as np
import pytest

from semsurprise.data import EmbeddingSet
from semsurprise.synthetic import SyntheticSpec, generate_synthetic
from semsurprise.trainer import (
    ProjectionHead,
    TrainConfig,
    TrainingDiverged,
    embed,
    format_config,
    initial_state,
    load_head,
    parse_config_text,
    save_head,
    train,
    train_step,
)

from conftest import central_diff, rel_err


@pytest.fixture(scope="module")
def small_data():
    return generate_synthetic(SyntheticSpec(num_superclasses=2, subclasses_per_superclass=2,
                                            samples_per_subclass=30, test_samples_per_subclass=10, seed=3))


@pytest.mark.parametrize("seed", range(20))
def test_head_backward_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    head = ProjectionHead.init(6, 5, 4, r)
    head = ProjectionHead(head.W1, r.normal(size=5) * 0.1, head.W2, r.normal(size=4) * 0.1)
    X = r.standard_normal((7, 6))
    G = r.standard_normal((7, 4))
    z, cache = head.forward(X)
    grads = head.backward(cache, G)
    params = list(head.params())
    for j in range(4):
        def f(p, j=j):
            ps = list(params)
            ps[j] = p
            return float(np.sum(G * ProjectionHead(*ps).forward(X)[0]))
        assert rel_err(grads[j], central_diff(f, params[j])) < 1e-4


def test_zero_weight_head_outputs_bias_direction(rng):
    b2 = np.array([3.0, 4.0, 0.0])
    head = ProjectionHead(np.zeros((5, 4)), np.zeros(5), np.zeros((3, 5)), b2)
    z, _ = head.forward(rng.standard_normal((6, 4)))
    np.testing.assert_allclose(z, np.tile(b2 / 5.0, (6, 1)), atol=1e-15)


def test_embed_pure_and_normalized(small_data):
    head, _, _ = initial_state(small_data.train, small_data.hierarchy, TrainConfig())
    a = embed(head, small_data.train)
    b = embed(head, small_data.train)
    assert a == b
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0, atol=1e-6)


def test_zero_epochs_returns_initial_state(small_data):
    cfg = TrainConfig(epochs=0, seed=5)
    head, bank, log = train(small_data.train, small_data.hierarchy, cfg)
    h0, b0, _ = initial_state(small_data.train, small_data.hierarchy, cfg)
    assert head == h0 and bank == b0
    assert log.epochs == []


def test_same_seed_bit_identical(small_data):
    cfg = TrainConfig(epochs=3, seed=11)
    h1, b1, l1 = train(small_data.train, small_data.hierarchy, cfg)
    h2, b2, l2 = train(small_data.train, small_data.hierarchy, cfg)
    assert h1 == h2 and b1 == b2
    assert l1.to_csv() == l2.to_csv()
    assert l1.epochs == l2.epochs


def test_prototypes_unit_norm_every_step(small_data):
    cfg = TrainConfig(seed=2)
    head, bank, rng = initial_state(small_data.train, small_data.hierarchy, cfg)
    X, y = small_data.train.as_float64(), small_data.train.labels
    for _ in range(3):
        order = rng.permutation(len(X))
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            head, bank, _ = train_step(head, bank, X[idx], y[idx], cfg)
            np.testing.assert_allclose(np.linalg.norm(bank.prototypes, axis=-1), 1.0, atol=1e-6)


def test_default_run_lowers_loss():
    data = generate_synthetic(SyntheticSpec())
    _, _, log = train(data.train, data.hierarchy, TrainConfig())
    assert len(log.epochs) == 30
    assert log.epochs[-1].total < log.epochs[0].total


def test_divergence_reports_position(small_data):
    with pytest.raises(TrainingDiverged) as exc:
        with np.errstate(all="ignore"):
            train(small_data.train, small_data.hierarchy, TrainConfig(epochs=2, learning_rate=float("inf")))
    assert exc.value.epoch == 0


def test_nan_rows_rejected():
    with pytest.raises(ValueError, match="norm violation"):
        EmbeddingSet(np.array([[np.nan, 0.0]]), np.array([0]))


def test_unlabelled_training_rejected(small_data):
    with pytest.raises(ValueError):
        train(small_data.near_ood, small_data.hierarchy)


def test_config_round_trip():
    cfg = TrainConfig(epochs=7).with_overrides({"loss.tau": "0.3", "sinkhorn.epsilon": 0.1,
                                                 "hierarchy_loss_enabled": "false"})
    assert cfg.loss.tau == 0.3 and cfg.sinkhorn.epsilon == 0.1 and not cfg.hierarchy_loss_enabled
    again = TrainConfig().with_overrides(parse_config_text(format_config(cfg)))
    assert again == cfg
    with pytest.raises(KeyError):
        cfg.with_overrides({"nope": 1})


def test_head_round_trip(tmp_path, rng):
    head = ProjectionHead.init(4, 6, 3, rng)
    save_head(head, tmp_path / "h.bin")
    assert load_head(tmp_path / "h.bin") == head
