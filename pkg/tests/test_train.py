import numpy as np
import pytest

from oodkit import (LossWeights, ModelDims, OodClassifier, TrainConfig, fit, lr_at,
                    make_batches, sgd_step)
from oodkit.autodiff import Tensor
from oodkit.errors import ConfigError, DimensionError
from oodkit.seeding import rng_for
from oodkit.train import DecayConfig, EpochMetrics, WarmupConfig, write_metrics_csv

from conftest import train_toy_model


# --- learning-rate schedule ---------------------------------------------

def _paper_scale_config(batch_size):
    return TrainConfig(epochs=200, batch_size=batch_size,
                       decay=DecayConfig(milestones=(150, 180)))


def test_warmup_starts_at_small_lr_for_large_batches():
    cfg = _paper_scale_config(512)
    assert lr_at(cfg, 0, 0, steps_per_epoch=10) == pytest.approx(0.01)


def test_no_warmup_for_small_batches():
    cfg = _paper_scale_config(128)
    assert lr_at(cfg, 0, 0, steps_per_epoch=10) == pytest.approx(0.05)


def test_step_decay_after_milestones():
    cfg = _paper_scale_config(128)
    assert lr_at(cfg, 185, 0, 10) == pytest.approx(0.05 / 100)
    assert lr_at(cfg, 150, 0, 10) == pytest.approx(0.05 / 10)
    assert lr_at(cfg, 149, 0, 10) == pytest.approx(0.05)


def test_warmup_is_linear_per_step_and_reaches_lr_init():
    cfg = _paper_scale_config(512)
    mid = lr_at(cfg, 5, 0, 10)  # halfway through 10 warmup epochs
    assert mid == pytest.approx(0.01 + (0.05 - 0.01) * 0.5)
    assert lr_at(cfg, 10, 0, 10) == pytest.approx(0.05)


def test_lr_strictly_positive_throughout():
    cfg = _paper_scale_config(512)
    lrs = [lr_at(cfg, e, s, 7) for e in range(200) for s in range(7)]
    assert min(lrs) > 0.0


def test_config_validates_milestones():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=30, decay=DecayConfig(milestones=(25, 20)))
    with pytest.raises(ConfigError):
        TrainConfig(epochs=30, decay=DecayConfig(milestones=(30,)))
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)


def test_config_flat_round_trip():
    cfg = TrainConfig(epochs=12, batch_size=32, lr_init=0.02,
                      warmup=WarmupConfig(64, 0.004, 3),
                      decay=DecayConfig(5.0, (4, 8)), momentum=0.8,
                      weight_decay=1e-3,
                      loss_weights=LossWeights(0.5, 2.0, 0.2, 0.3, True),
                      seed=9, augment_noise_sigma=0.01, augment_hflip_prob=0.1)
    again = TrainConfig.from_flat(cfg.to_flat())
    assert again == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_flat({"not_a_key": 1})


# --- SGD step -------------------------------------------------------------

def _param(vals):
    return Tensor(np.asarray(vals, dtype=np.float64), requires_grad=True, name="p")


def test_sgd_plain_gradient_descent_when_momentum_zero():
    p = _param([1.0, 2.0])
    g = np.array([0.5, -0.5])
    v = np.zeros(2)
    sgd_step([p], [g], [v], lr=0.1, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(p.data, [1.0 - 0.05, 2.0 + 0.05], rtol=1e-15)


def test_sgd_zero_gradient_is_fixed_point():
    p = _param([1.0, 2.0])
    sgd_step([p], [np.zeros(2)], [np.zeros(2)], lr=0.1, momentum=0.9, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_sgd_zero_lr_never_moves_parameters():
    p = _param([1.0, 2.0])
    v = np.zeros(2)
    for _ in range(3):
        sgd_step([p], [np.array([5.0, -5.0])], [v], lr=0.0, momentum=0.9,
                 weight_decay=1e-2)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_sgd_none_grad_skips_parameter():
    p = _param([1.0])
    v = np.zeros(1)
    sgd_step([p], [None], [v], lr=0.1, momentum=0.9, weight_decay=0.5)
    np.testing.assert_array_equal(p.data, [1.0])
    np.testing.assert_array_equal(v, [0.0])


def test_sgd_two_steps_match_hand_recurrence_on_quadratic():
    # f(x) = 0.5 * x^2, grad = x; momentum m, weight decay wd, lr
    x0, lr, m, wd = 2.0, 0.1, 0.9, 0.01
    p = _param([x0])
    v = np.zeros(1)
    # hand recurrence
    v1 = m * 0.0 + (x0 + wd * x0)
    x1 = x0 - lr * v1
    v2 = m * v1 + (x1 + wd * x1)
    x2 = x1 - lr * v2
    sgd_step([p], [p.data.copy()], [v], lr, m, wd)
    sgd_step([p], [p.data.copy()], [v], lr, m, wd)
    assert p.data[0] == pytest.approx(x2, abs=1e-12)


def test_sgd_shape_mismatch_raises():
    p = _param([1.0, 2.0])
    with pytest.raises(DimensionError):
        sgd_step([p], [np.zeros(3)], [np.zeros(2)], 0.1, 0.9, 0.0)


# --- batching --------------------------------------------------------------

def test_batches_partition_every_index_exactly_once():
    batches = make_batches(100, 100, 50, rng_for(0, "shuffle"))
    assert len(batches) == 4
    seen = np.concatenate(batches)
    assert sorted(seen.tolist()) == list(range(200))


def test_batches_keep_short_last_batch():
    batches = make_batches(7, 4, 4, rng_for(1, "shuffle"))
    assert [len(b) for b in batches] == [4, 4, 3]


def test_batches_deterministic_given_seed():
    a = make_batches(30, 30, 8, rng_for(2, "shuffle"))
    b = make_batches(30, 30, 8, rng_for(2, "shuffle"))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_batches_reject_tiny_batch_size():
    with pytest.raises(ConfigError):
        make_batches(10, 10, 1, rng_for(0, "shuffle"))


def test_batch_id_fraction_tracks_pool_fraction():
    # ID share per batch is hypergeometric-ish; binomial 3-sigma bound over
    # 100 epochs of full batches
    n_id, n_fake, bs = 60, 140, 50
    p = n_id / (n_id + n_fake)
    rng = rng_for(3, "shuffle")
    fractions = []
    for _ in range(100):
        for idx in make_batches(n_id, n_fake, bs, rng):
            if len(idx) == bs:
                fractions.append(np.mean(idx < n_id))
    sigma = np.sqrt(p * (1 - p) / bs)
    assert abs(np.mean(fractions) - p) < 3 * sigma / np.sqrt(len(fractions))


def test_every_epoch_stream_is_a_permutation():
    rng = rng_for(4, "shuffle")
    for _ in range(20):
        batches = make_batches(13, 9, 5, rng)
        assert sorted(np.concatenate(batches).tolist()) == list(range(22))


# --- fit ---------------------------------------------------------------------

def test_fit_reaches_toy_accuracy(toy_bundle):
    model = train_toy_model(toy_bundle)
    from oodkit.scores import penultimate_features
    test = toy_bundle["test"]
    model.eval()
    _, logits, _ = model.forward(test.inputs())
    preds = np.argmax(logits.data, axis=1) + 1
    acc = float(np.mean(preds == test.labels()))
    assert acc >= 0.9


def test_fit_same_seed_bitwise_identical(toy_bundle):
    a = train_toy_model(toy_bundle, epochs=3)
    b = train_toy_model(toy_bundle, epochs=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    np.testing.assert_array_equal(a.bn.running_mean, b.bn.running_mean)


def test_fit_zero_lr_leaves_parameters_unchanged(toy_bundle):
    dims = ModelDims(toy_bundle["train"].input_dim, 16, 16, 4, hidden=())
    model = OodClassifier.init(dims, 1)
    before = {k: p.data.copy() for k, p in model.params.items()}
    cfg = TrainConfig(epochs=2, batch_size=64, lr_init=1e-300,
                      decay=DecayConfig(milestones=(1,)), seed=0)
    fit(model, toy_bundle["train"], toy_bundle["fake"], toy_bundle["anchors"], cfg)
    for k in before:
        np.testing.assert_allclose(model.params[k].data, before[k], atol=1e-290)


def test_fit_training_makes_progress(toy_bundle):
    model = OodClassifier.init(
        ModelDims(toy_bundle["train"].input_dim, 64, 16, 4, hidden=(64,)), 3)
    cfg = TrainConfig(epochs=30, batch_size=128, decay=DecayConfig(milestones=(20,)), seed=5)
    res = fit(model, toy_bundle["train"], toy_bundle["fake"], toy_bundle["anchors"], cfg)
    first5 = np.mean([m.total for m in res.metrics[:5]])
    last5 = np.mean([m.total for m in res.metrics[-5:]])
    assert last5 <= first5


def test_fit_ce_only_never_sees_fake_label(toy_bundle):
    model = OodClassifier.init(
        ModelDims(toy_bundle["train"].input_dim, 16, 16, 4, hidden=()), 2)
    cfg = TrainConfig(epochs=2, batch_size=64,
                      loss_weights=LossWeights(lambda1=0.0, lambda2=0.0),
                      decay=DecayConfig(milestones=(1,)), seed=1)
    res = fit(model, toy_bundle["train"], None, None, cfg)
    for m in res.metrics:
        assert m.ci == 0.0 and m.sc == 0.0
        assert m.total == pytest.approx(m.ce, abs=1e-12)


def test_fit_rejects_inconsistent_dims(toy_bundle):
    dims = ModelDims(toy_bundle["train"].input_dim + 1, 16, 16, 4, hidden=())
    model = OodClassifier.init(dims, 0)
    with pytest.raises(DimensionError):
        fit(model, toy_bundle["train"], None, None, TrainConfig(epochs=1, decay=DecayConfig(milestones=())))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_aborts_with_diagnostic_on_divergence(toy_bundle):
    from oodkit.errors import NumericalError
    dims = ModelDims(toy_bundle["train"].input_dim, 16, 16, 4, hidden=())
    model = OodClassifier.init(dims, 0)
    cfg = TrainConfig(epochs=3, batch_size=64, lr_init=1e150,
                      decay=DecayConfig(milestones=()), seed=0)
    with pytest.raises(NumericalError, match="epoch"):
        fit(model, toy_bundle["train"], None, None,
            TrainConfig.from_flat({**cfg.to_flat(), "lambda1": 0.0, "lambda2": 0.0}))


def test_metrics_csv_layout(tmp_path, toy_bundle):
    rows = [EpochMetrics(0, 1.0, 0.5, 0.25, 1.75, 0.5)]
    path = str(tmp_path / "m.csv")
    write_metrics_csv(rows, path)
    text = open(path).read().strip().splitlines()
    assert text[0] == "epoch,ce,ci,sc,total,acc"
    assert text[1].startswith("0,1.0,0.5,0.25,1.75,0.5")
