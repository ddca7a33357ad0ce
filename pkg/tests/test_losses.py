import math

import numpy as np
import pytest

from oodkit import BatchView, LossWeights, ce_loss, ci_loss, sc_loss, synth_anchors, total_loss
from oodkit.anchors import AnchorEntry, AnchorSet
from oodkit.autodiff import Tensor
from oodkit.errors import ConfigError, ContractViolation, DomainError
from oodkit.seeding import rng_for

from conftest import TINY, tiny_batch, tiny_model
from gradcheck import check_grads

K = TINY.n_classes


# --- independent reference implementations -----------------------------------

def naive_softmax_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    """Plain softmax + log, no shift trick (numerically naive on purpose)."""
    total = 0.0
    for row, lab in zip(logits, labels):
        p = np.exp(row) / np.exp(row).sum()
        total += -math.log(p[lab - 1])
    return total / len(labels)


def supcon_reference(z: np.ndarray, labels, tau: float, include_self=False) -> float:
    """Triple-loop supervised-contrast reference, straight from the definition."""
    s = len(labels)
    total = 0.0
    for i in range(s):
        contrast = list(range(s)) if include_self else [a for a in range(s) if a != i]
        positives = [p for p in contrast if labels[p] == labels[i]]
        if not positives:
            continue
        inner = 0.0
        for p in positives:
            num = math.exp(np.dot(z[i], z[p]) / tau)
            den = sum(math.exp(np.dot(z[i], z[a]) / tau) for a in contrast)
            inner += math.log(num / den)
        total += inner / len(positives)
    return -total / s


def _unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _batch(logits, projected, labels, k=K):
    return BatchView(Tensor(np.asarray(logits, dtype=np.float64)),
                     Tensor(np.asarray(projected, dtype=np.float64)),
                     np.asarray(labels), k)


# --- defaults ----------------------------------------------------------------

def test_loss_weight_defaults():
    w = LossWeights()
    assert w.lambda1 == 1.0 and w.lambda2 == 1.0
    assert w.tau == 0.1 and w.tau_prime == 0.1
    assert w.sc_include_self is False


def test_loss_weight_validation():
    with pytest.raises(ConfigError):
        LossWeights(lambda1=-0.1)
    with pytest.raises(ConfigError):
        LossWeights(tau=0.0)


# --- cross entropy -------------------------------------------------------

def test_ce_uniform_logits_equals_log_k_plus_one():
    batch = _batch(np.zeros((6, 5)), _unit_rows(rng_for(0, "z"), 6, 4), [1, 2, 3, 4, 4, 1], k=4)
    assert ce_loss(batch).item() == pytest.approx(math.log(5), abs=1e-12)


def test_ce_saturated_correct_logits_vanish():
    logits = np.full((3, K + 1), 0.0)
    labels = np.array([1, 2, 3])
    logits[np.arange(3), labels - 1] = 1e3
    batch = _batch(logits, _unit_rows(rng_for(1, "z"), 3, 4), labels)
    assert ce_loss(batch).item() < 1e-6


def test_ce_matches_naive_oracle():
    rng = rng_for(2, "ce")
    logits = rng.normal(size=(6, K + 1))
    labels = rng.integers(1, K + 2, size=6)
    batch = _batch(logits, _unit_rows(rng, 6, 4), labels)
    assert ce_loss(batch).item() == pytest.approx(naive_softmax_ce(logits, labels), abs=1e-10)


def test_ce_rejects_out_of_range_labels():
    with pytest.raises(DomainError):
        _batch(np.zeros((2, K + 1)), np.zeros((2, 4)), [1, K + 2])


# --- anchor-alignment contrast ---------------------------------------------

def test_ci_orthogonal_embedding_gives_log_k():
    anchors = synth_anchors(K, 8, rng_for(3, "anc"), mode="orthonormal")
    z = np.zeros((2, 8))
    z[:, -1] = 1.0  # orthogonal to the first K basis-ish anchors? ensure truly orthogonal:
    # project out anchor components then renormalize
    m = anchors.matrix()
    for i in range(2):
        for a in m:
            z[i] -= np.dot(z[i], a) * a
        z[i] /= np.linalg.norm(z[i])
    batch = _batch(np.zeros((2, K + 1)), z, [1, 2])
    assert ci_loss(batch, anchors, tau=0.1).item() == pytest.approx(math.log(K), abs=1e-9)


def test_ci_aligned_embedding_closed_form():
    anchors = synth_anchors(K, 8, rng_for(4, "anc"), mode="orthonormal")
    z = anchors.matrix()[0:1]  # exactly the first anchor
    batch = _batch(np.zeros((1, K + 1)), z, [1])
    expected = -math.log(math.exp(10.0) / (math.exp(10.0) + (K - 1) * math.exp(0.0)))
    assert ci_loss(batch, anchors, tau=0.1).item() == pytest.approx(expected, rel=1e-12)


def test_ci_fake_only_batch_contributes_zero():
    anchors = synth_anchors(K, 4, rng_for(5, "anc"))
    batch = _batch(np.zeros((3, K + 1)), _unit_rows(rng_for(5, "z"), 3, 4),
                   [K + 1, K + 1, K + 1])
    assert ci_loss(batch, anchors, tau=0.1).item() == 0.0


def test_ci_excludes_fake_samples_from_the_average():
    rng = rng_for(6, "ci")
    anchors = synth_anchors(K, 4, rng_for(6, "anc"))
    z = _unit_rows(rng, 4, 4)
    mixed = _batch(np.zeros((4, K + 1)), z, [1, K + 1, 2, K + 1])
    id_only = _batch(np.zeros((2, K + 1)), z[[0, 2]], [1, 2])
    assert ci_loss(mixed, anchors, 0.1).item() == pytest.approx(
        ci_loss(id_only, anchors, 0.1).item(), rel=1e-12)


def test_ci_anchor_count_mismatch():
    anchors = synth_anchors(K + 1, 4, rng_for(7, "anc"))
    batch = _batch(np.zeros((2, K + 1)), _unit_rows(rng_for(7, "z"), 2, 4), [1, 2])
    with pytest.raises(ConfigError):
        ci_loss(batch, anchors, tau=0.1)


def test_ci_invariant_to_anchor_reordering_with_label_remap():
    rng = rng_for(8, "ci")
    anchors = synth_anchors(K, 6, rng_for(8, "anc"))
    z = _unit_rows(rng, 5, 6)
    labels = np.array([1, 2, 3, 1, 2])
    base = ci_loss(_batch(np.zeros((5, K + 1)), z, labels), anchors, 0.1).item()
    perm = [2, 0, 1]  # anchors reordered; labels remapped consistently
    permuted = AnchorSet(6, [anchors.entries[i] for i in perm])
    remap = {old + 1: perm.index(old) + 1 for old in range(K)}
    new_labels = np.array([remap[l] for l in labels])
    again = ci_loss(_batch(np.zeros((5, K + 1)), z, new_labels), permuted, 0.1).item()
    assert again == pytest.approx(base, rel=1e-12)


# --- supervised contrast ---------------------------------------------------

def test_sc_identical_pair_is_zero():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    batch = _batch(np.zeros((2, K + 1)), z, [1, 1])
    assert sc_loss(batch, tau_prime=0.1).item() == pytest.approx(0.0, abs=1e-12)


def test_sc_matches_triple_loop_on_two_pair_batch():
    z = _unit_rows(rng_for(9, "sc"), 4, 6)
    labels = [1, 1, 2, 2]
    batch = _batch(np.zeros((4, K + 1)), z, labels)
    got = sc_loss(batch, tau_prime=0.1).item()
    assert got == pytest.approx(supcon_reference(z, labels, 0.1), abs=1e-10)


def test_sc_all_distinct_labels_is_zero():
    z = _unit_rows(rng_for(10, "sc"), 3, 5)
    batch = _batch(np.zeros((3, K + 1)), z, [1, 2, 3])
    assert sc_loss(batch, tau_prime=0.1).item() == 0.0


def test_sc_single_sample_rejected():
    batch = _batch(np.zeros((1, K + 1)), _unit_rows(rng_for(11, "sc"), 1, 4), [1])
    with pytest.raises(ContractViolation):
        sc_loss(batch, tau_prime=0.1)


def test_sc_fake_outliers_form_one_shared_class():
    z = _unit_rows(rng_for(12, "sc"), 4, 6)
    labels = [K + 1, K + 1, 1, 2]
    batch = _batch(np.zeros((4, K + 1)), z, labels)
    assert sc_loss(batch, 0.1).item() == pytest.approx(
        supcon_reference(z, labels, 0.1), abs=1e-10)


def test_sc_include_self_matches_literal_reference():
    z = _unit_rows(rng_for(13, "sc"), 5, 6)
    labels = [1, 1, 2, 2, 2]
    batch = _batch(np.zeros((5, K + 1)), z, labels)
    default = sc_loss(batch, 0.1).item()
    literal = sc_loss(batch, 0.1, include_self=True).item()
    assert literal == pytest.approx(supcon_reference(z, labels, 0.1, include_self=True),
                                    abs=1e-10)
    assert literal != pytest.approx(default, abs=1e-6)


def test_sc_matches_triple_loop_on_50_random_batches():
    rng = rng_for(14, "sc-sweep")
    for trial in range(50):
        s = int(rng.integers(2, 13))
        z = _unit_rows(rng, s, 5)
        labels = rng.integers(1, K + 2, size=s)
        batch = _batch(np.zeros((s, K + 1)), z, labels)
        expected = supcon_reference(z, labels, 0.1)
        assert sc_loss(batch, 0.1).item() == pytest.approx(expected, abs=1e-10), \
            f"trial {trial}"


# --- combined loss ----------------------------------------------------------

def _random_batch(seed, s=6):
    rng = rng_for(seed, "total")
    logits = rng.normal(size=(s, K + 1))
    z = _unit_rows(rng, s, 4)
    labels = rng.integers(1, K + 2, size=s)
    labels[0] = 1
    return _batch(logits, z, labels)


def test_total_reduces_to_ce_when_weights_vanish():
    batch = _random_batch(15)
    total, parts = total_loss(batch, None, LossWeights(lambda1=0.0, lambda2=0.0))
    assert total.item() == ce_loss(batch).item()
    assert parts.ci == 0.0 and parts.sc == 0.0


def test_total_is_weighted_sum_of_components():
    batch = _random_batch(16)
    anchors = synth_anchors(K, 4, rng_for(16, "anc"))
    w = LossWeights(lambda1=0.7, lambda2=1.3)
    total, parts = total_loss(batch, anchors, w)
    assert parts.ce == ce_loss(batch).item()
    assert parts.ci == ci_loss(batch, anchors, w.tau).item()
    assert parts.sc == sc_loss(batch, w.tau_prime).item()
    expected = parts.ce + 0.7 * parts.ci + 1.3 * parts.sc
    assert total.item() == pytest.approx(expected, abs=1e-12)


def test_total_requires_anchors_when_ci_enabled():
    with pytest.raises(ConfigError):
        total_loss(_random_batch(17), None, LossWeights())


def test_all_losses_nonnegative_on_random_batches():
    anchors = synth_anchors(K, 4, rng_for(18, "anc"))
    for seed in range(20):
        batch = _random_batch(100 + seed)
        assert ce_loss(batch).item() >= 0.0
        assert ci_loss(batch, anchors, 0.1).item() >= -1e-12
        assert sc_loss(batch, 0.1).item() >= -1e-12


# --- gradients through the model ---------------------------------------------

def _model_loss_closure(model, x, labels, which, anchors):
    def forward():
        _, logits, projected = model.forward(x)
        batch = BatchView(logits, projected, labels, model.dims.n_classes)
        if which == "ce":
            return ce_loss(batch)
        if which == "ci":
            return ci_loss(batch, anchors, 0.1)
        if which == "sc":
            return sc_loss(batch, 0.1)
        return total_loss(batch, anchors, LossWeights())[0]
    return forward


@pytest.mark.parametrize("which", ["ce", "ci", "sc", "total"])
def test_loss_gradients_match_finite_differences(which):
    model = tiny_model(21)
    model.train()
    x, labels = tiny_batch(21)
    anchors = synth_anchors(K, TINY.embed_dim, rng_for(21, "anc"), mode="orthonormal")
    err = check_grads(model.parameters(), _model_loss_closure(model, x, labels, which, anchors))
    assert err < 1e-4


def test_ce_decreases_under_one_small_gradient_step():
    from oodkit import sgd_step
    from oodkit.autodiff import Tape

    model = tiny_model(22)
    model.train()
    x, labels = tiny_batch(22)
    closure = _model_loss_closure(model, x, labels, "ce", None)
    before = closure().item()
    params = model.parameters()
    model.zero_grads()
    with Tape():
        loss = closure()
    loss.backward()
    velocity = [np.zeros_like(p.data) for p in params]
    sgd_step(params, [p.grad for p in params], velocity, lr=1e-3, momentum=0.0,
             weight_decay=0.0)
    assert closure().item() < before
