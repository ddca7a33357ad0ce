import numpy as np
import pytest

from oodkit import (ModelDims, OodClassifier, ToyConfig, TrainConfig, fit,
                    fit_id_stats, generate_fake_set, make_toy_benchmark,
                    synth_anchors)
from oodkit.seeding import rng_for
from oodkit.train import DecayConfig

TINY = ModelDims(input_dim=6, feature_dim=5, embed_dim=4, n_classes=3, hidden=())


def tiny_model(seed: int = 0) -> OodClassifier:
    return OodClassifier.init(ModelDims(**vars(TINY)), seed)


def tiny_batch(seed: int, n: int = 8):
    """Mixed ID/fake inputs and labels for the tiny model."""
    rng = rng_for(seed, "tiny-batch")
    x = rng.normal(0.5, 0.6, size=(n, TINY.input_dim))
    labels = rng.integers(1, TINY.n_classes + 2, size=n)  # includes fake label K+1
    labels[0] = 1  # keep at least one ID sample
    return x, labels


@pytest.fixture(scope="session")
def toy_bundle():
    """Seed-fixed 200/200/200 arrangement benchmark with fakes and anchors."""
    seed = 101
    rng = rng_for(seed, "toy")
    train, test, ood = make_toy_benchmark(ToyConfig(), rng)
    fake = generate_fake_set(train, 1, rng_for(seed, "fake"))
    anchors = synth_anchors(4, 16, rng_for(seed, "anchors"), mode="orthonormal")
    return {"seed": seed, "train": train, "test": test, "ood": ood,
            "fake": fake, "anchors": anchors}


def train_toy_model(bundle, lambda1=1.0, lambda2=1.0, use_fake=True, epochs=30,
                    seed=None):
    from oodkit import LossWeights
    seed = bundle["seed"] if seed is None else seed
    cfg = TrainConfig(epochs=epochs, batch_size=128,
                      decay=DecayConfig(milestones=(max(epochs - 10, 1),)),
                      loss_weights=LossWeights(lambda1=lambda1, lambda2=lambda2),
                      seed=seed)
    model = OodClassifier.init(
        ModelDims(bundle["train"].input_dim, 64, 16, 4, hidden=(64,)),
        int(rng_for(seed, "init").integers(0, 2**63)))
    fit(model, bundle["train"], bundle["fake"] if use_fake else None,
        bundle["anchors"] if lambda1 > 0 else None, cfg)
    return model


@pytest.fixture(scope="session")
def trained_toy(toy_bundle):
    """Full-method model trained on the toy benchmark, with fitted ID stats."""
    model = train_toy_model(toy_bundle)
    stats = fit_id_stats(model, toy_bundle["train"], p=0.9)
    return {"model": model, "stats": stats, **toy_bundle}
