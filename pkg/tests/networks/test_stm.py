import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.autograd import Parameter, backward, constant, gradient_check, mean, sigmoid
from core.exceptions import ConfigurationError, ShapeError
from core.models import GanMode
from networks.scen import ScenParams
from networks.stm import (
    StmParams,
    StmWeights,
    discriminator_logits,
    discriminator_loss,
    generate,
    generator_adversarial_loss,
    reclassification_loss,
    stm_loss,
    total_loss,
    virtual_features,
)
from services.databases import sample_batch


@pytest.fixture
def tiny_stm(tiny_dims) -> StmParams:
    return StmParams(tiny_dims, np.random.default_rng(1))


@pytest.fixture
def batch(tiny_bundle):
    return sample_batch(tiny_bundle, 6, 3, np.random.default_rng(2))


def zero_discriminator(stm: StmParams) -> None:
    for p in stm.d.parameters().values():
        p.value[...] = 0.0


def zero_heads(scen: ScenParams) -> None:
    for head in (scen.c_a, scen.c_o):
        for p in head.parameters().values():
            p.value[...] = 0.0


def test_generate_with_zero_weights_returns_bias(tiny_stm, rng):
    for p in tiny_stm.g.parameters().values():
        p.value[...] = 0.0
    tiny_stm.g.layers[-1].bias.value[...] = np.arange(8.0)
    x_hat = generate(tiny_stm, constant(rng.normal(size=6)), constant(rng.normal(size=6)))
    np.testing.assert_array_equal(x_hat.value, np.arange(8.0))


def test_generate_rejects_mismatched_prototypes(tiny_stm):
    with pytest.raises(ShapeError):
        generate(tiny_stm, constant(np.zeros(6)), constant(np.zeros(5)))
    with pytest.raises(ShapeError):
        generate(tiny_stm, constant(np.zeros((2, 6))), constant(np.zeros((3, 6))))


def test_generate_gradient_wrt_object_prototype(tiny_stm, rng):
    h_s = constant(rng.normal(size=(2, 6)))
    h_o = Parameter(rng.normal(size=(2, 6)))
    assert gradient_check(lambda: mean(generate(tiny_stm, h_s, h_o)), [h_o]) <= 1e-5


def test_half_confident_discriminator_loss(tiny_stm, rng):
    zero_discriminator(tiny_stm)
    real = rng.normal(size=(4, 8))
    fake = constant(rng.normal(size=(3, 8)))
    np.testing.assert_allclose(sigmoid(discriminator_logits(tiny_stm, real)).value, 0.5)
    assert discriminator_loss(tiny_stm, real, fake).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_discriminator_loss_limits(tiny_stm, rng):
    zero_discriminator(tiny_stm)
    real = rng.normal(size=(4, 8))
    fake = constant(rng.normal(size=(4, 8)))
    tiny_stm.d.layers[-1].bias.value[...] = 50.0
    assert np.all(sigmoid(discriminator_logits(tiny_stm, real)).value > 0.999)
    # everything called real: the fake term dominates
    assert discriminator_loss(tiny_stm, real, fake).item() == pytest.approx(50.0, rel=1e-6)
    tiny_stm.d.layers[-1].bias.value[...] = -50.0
    assert discriminator_loss(tiny_stm, real, fake).item() == pytest.approx(50.0, rel=1e-6)


@pytest.mark.parametrize("mode, expected", [(GanMode.SATURATING, -math.log(2)), (GanMode.NON_SATURATING, math.log(2)), ("non-saturating", math.log(2))])
def test_generator_loss_at_half_confidence(tiny_stm, rng, mode, expected):
    zero_discriminator(tiny_stm)
    fake = constant(rng.normal(size=(5, 8)))
    assert generator_adversarial_loss(tiny_stm, fake, mode).item() == pytest.approx(expected, abs=1e-12)


def test_unknown_gan_mode_rejected(tiny_stm, rng):
    with pytest.raises(ConfigurationError, match="GAN mode"):
        generator_adversarial_loss(tiny_stm, constant(rng.normal(size=(2, 8))), "wasserstein")


@pytest.mark.parametrize("mode", list(GanMode))
def test_generator_step_leaves_discriminator_alone(tiny_bundle, tiny_scen, tiny_stm, batch, mode):
    x_hat = virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle)
    backward(generator_adversarial_loss(tiny_stm, x_hat, mode))
    for name, p in tiny_stm.d.parameters().items():
        assert not p.grad.any(), name
    assert any(p.grad.any() for p in tiny_stm.g.parameters().values())
    assert tiny_scen.e_s.layers[0].weight.grad.any()


def test_discriminator_step_leaves_generator_and_encoders_alone(tiny_bundle, tiny_scen, tiny_stm, batch):
    x_hat = virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle)
    real = tiny_bundle.features[batch.anchors]
    backward(discriminator_loss(tiny_stm, real, x_hat))
    for name, p in {**tiny_stm.g.parameters(), **tiny_scen.parameters()}.items():
        assert not p.grad.any(), name
    assert all(p.grad.any() for name, p in tiny_stm.d.parameters().items() if name.endswith("weight"))


def test_virtual_features_shape(tiny_bundle, tiny_scen, tiny_stm, batch):
    assert virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle).shape == (batch.size, 8)


def test_reclassification_with_uniform_heads(tiny_bundle, tiny_scen, tiny_stm, batch):
    zero_heads(tiny_scen)
    loss = reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle)
    assert loss.item() == pytest.approx(math.log(4) + math.log(5), abs=1e-12)


def test_reclassification_targets_transition_state_and_anchor_object(tiny_bundle, tiny_scen, tiny_stm, batch):
    # heads that only ever answer state 0 / object 0
    zero_heads(tiny_scen)
    tiny_scen.c_a.layers[-1].bias.value[0] = 60.0
    tiny_scen.c_o.layers[-1].bias.value[0] = 60.0
    loss = reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle).item()
    states = tiny_bundle.state_ids[batch.transitions]
    objects = tiny_bundle.object_ids[batch.anchors]
    expected = 60.0 * (np.mean(states != 0) + np.mean(objects != 0))
    assert loss == pytest.approx(expected, abs=1e-6)


def test_generator_descent_lowers_reclassification(tiny_bundle, tiny_scen, tiny_stm, batch):
    x_hat = virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle)
    before = reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle, x_hat=x_hat)
    backward(before)
    assert tiny_scen.e_s.layers[0].weight.grad.any()
    for p in tiny_stm.g.parameters().values():
        p.value -= 1e-3 * p.grad
    assert reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle).item() < before.item()


def test_total_loss_weighting():
    weights = StmWeights(alpha=0.1, beta=0.5)
    assert total_loss(constant(2.0), constant(3.0), weights).item() == pytest.approx(1.7)
    assert total_loss(constant(2.0), constant(3.0), StmWeights(alpha=0.1, beta=0.0)).item() == pytest.approx(0.2)
    assert stm_loss(constant(0.25), constant(1.5)).item() == pytest.approx(1.75)


def test_negative_weights_rejected():
    with pytest.raises(ValidationError):
        StmWeights(alpha=-0.1)


def test_snapshot_is_independent(tiny_stm):
    twin = tiny_stm.snapshot()
    for name, p in twin.parameters().items():
        np.testing.assert_array_equal(p.value, tiny_stm.parameters()[name].value)
    tiny_stm.g.layers[0].weight.value[...] += 1.0
    assert not np.array_equal(twin.g.layers[0].weight.value, tiny_stm.g.layers[0].weight.value)


def weights_of(*mlps):
    return [p for mlp in mlps for name, p in mlp.parameters().items() if name.endswith("weight")]


def test_discriminator_loss_gradient(tiny_bundle, tiny_scen, tiny_stm, batch):
    real = tiny_bundle.features[batch.anchors]

    def loss():
        return discriminator_loss(tiny_stm, real, virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle))

    assert gradient_check(loss, list(tiny_stm.d.parameters().values())) <= 1e-5


@pytest.mark.parametrize("mode", list(GanMode))
def test_generator_adversarial_gradient(tiny_bundle, tiny_scen, tiny_stm, batch, mode):
    def loss():
        return generator_adversarial_loss(tiny_stm, virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle), mode)

    nodes = weights_of(tiny_stm.g, tiny_scen.e_s, tiny_scen.e_o)
    assert gradient_check(loss, nodes) <= 1e-5


def test_reclassification_gradient_through_generator_and_encoders(tiny_bundle, tiny_scen, tiny_stm, batch):
    def loss():
        return reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle)

    nodes = weights_of(tiny_stm.g, tiny_scen.fc, tiny_scen.e_s, tiny_scen.c_o)
    assert gradient_check(loss, nodes) <= 1e-5


def test_state_encoder_feeds_real_and_virtual_paths(tiny_bundle, tiny_scen, tiny_stm, batch):
    x = tiny_bundle.features[batch.anchors]
    real_before = tiny_scen.e_s(tiny_scen.fc(constant(x))).value
    virtual_before = virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle).value
    recls_before = reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle).item()

    tiny_scen.e_s.layers[0].weight.value[...] += 0.25
    assert not np.allclose(tiny_scen.e_s(tiny_scen.fc(constant(x))).value, real_before)
    assert not np.allclose(virtual_features(tiny_scen, tiny_stm, batch, tiny_bundle).value, virtual_before)
    assert reclassification_loss(tiny_scen, tiny_stm, batch, tiny_bundle).item() != recls_before
