"""
State Transition Module: a generator mapping (another state's prototype, object
prototype) to a virtual feature vector, and a discriminator telling real features
from generated ones.
"""
from typing import Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from core.autograd import (
    Node,
    Parameter,
    add,
    concat,
    constant,
    detach,
    log_sigmoid,
    mean,
    reshape,
    scale,
)
from core.bundle import DatasetBundle, TrainBatch
from core.exceptions import ConfigurationError, ShapeError
from core.models import GanMode
from networks.layers import MLP
from networks.scen import ModelDims, ScenParams, classification_loss, encode, encode_batch


class StmWeights(BaseModel):
    alpha: float = Field(default=0.1, ge=0)
    beta: float = Field(default=0.5, ge=0)


class StmParams:
    """G: [2 x proto_dim] -> hidden -> feature_dim, D: feature_dim -> hidden -> 1"""

    def __init__(self, dims: ModelDims, rng: np.random.Generator, hidden: Optional[int] = None):
        self.dims = dims
        self.hidden = hidden or dims.hidden
        self.g = MLP("g", [2 * dims.proto_dim, self.hidden, dims.feature_dim], rng)
        self.d = MLP("d", [dims.feature_dim, self.hidden, 1], rng)

    @property
    def modules(self) -> Dict[str, MLP]:
        return {"g": self.g, "d": self.d}

    def parameters(self) -> Dict[str, Parameter]:
        return {**self.g.parameters(), **self.d.parameters()}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"load {name}", p.shape, arrays[name].shape)
            p.value[...] = arrays[name]

    def snapshot(self) -> "StmParams":
        twin = StmParams(self.dims, np.random.default_rng(0), hidden=self.hidden)
        twin.load_arrays(self.state_arrays())
        return twin


def generate(stm: StmParams, h_tilde_s: Node, h_o: Node) -> Node:
    """x_hat = G(h_tilde_s, h_o)"""
    if h_tilde_s.shape[-1] + h_o.shape[-1] != stm.g.in_dim or h_tilde_s.shape[:-1] != h_o.shape[:-1]:
        raise ShapeError("generate", h_tilde_s.shape, h_o.shape)
    z = concat([h_tilde_s, h_o], axis=-1)
    if z.value.ndim == 1:
        return reshape(stm.g(reshape(z, (1, -1))), (-1,))
    return stm.g(z)


def discriminator_logits(stm: StmParams, x: Union[Node, np.ndarray], frozen: bool = False) -> Node:
    x = x if isinstance(x, Node) else constant(x)
    if x.value.ndim == 1:
        x = reshape(x, (1, -1))
    return reshape(stm.d(x, frozen=frozen), (-1,))


def discriminator_loss(stm: StmParams, real_features: Union[Node, np.ndarray], fake_features: Node) -> Node:
    """
    L_D = -mean log D(x_real) - mean log(1 - D(x_fake))

    Fake inputs are detached so only D receives gradient.
    """
    real = discriminator_logits(stm, real_features)
    fake = discriminator_logits(stm, detach(fake_features))
    return scale(add(mean(log_sigmoid(real)), mean(log_sigmoid(scale(fake, -1.0)))), -1.0)


def generator_adversarial_loss(
    stm: StmParams, fake_features: Node, mode: Union[GanMode, str] = GanMode.NON_SATURATING
) -> Node:
    """
    Generator side of the adversarial objective, with D read as constants

    saturating: mean log(1 - D(x_fake)); non-saturating: -mean log D(x_fake)
    """
    try:
        mode = GanMode(mode)
    except ValueError:
        raise ConfigurationError(f"unknown GAN mode {mode!r}; use one of {[m.value for m in GanMode]}")
    logits = discriminator_logits(stm, fake_features, frozen=True)
    if mode is GanMode.SATURATING:
        return mean(log_sigmoid(scale(logits, -1.0)))
    return scale(mean(log_sigmoid(logits)), -1.0)


def virtual_features(scen: ScenParams, stm: StmParams, batch: TrainBatch, bundle: DatasetBundle) -> Node:
    """G(h_s of each transition partner, h_o of each anchor)"""
    enc = encode_batch(scen, batch, bundle.features, contrastive=False, transitions=True)
    return generate(stm, enc.transition_s, enc.anchor_o)


def reclassification_loss(
    scen: ScenParams,
    stm: StmParams,
    batch: TrainBatch,
    bundle: DatasetBundle,
    x_hat: Optional[Node] = None,
) -> Node:
    """
    CE(C_a(E_s(FC(x_hat))), a~) + CE(C_o(E_o(FC(x_hat))), o)

    Virtual samples are re-encoded through the same FC / E_s / E_o as real data. The
    target state is the transition partner's, the target object the anchor's.
    """
    if x_hat is None:
        x_hat = virtual_features(scen, stm, batch, bundle)
    h_s, h_o = encode(scen, x_hat)
    targets = (bundle.state_ids[batch.transitions], bundle.object_ids[batch.anchors])
    return classification_loss(scen, h_s, h_o, targets)


def stm_loss(l_g_adv: Node, l_cls_re: Node) -> Node:
    """Generator-side L_stm; L_D is minimised in its own step"""
    return add(l_g_adv, l_cls_re)


def total_loss(l_cts: Node, l_stm: Node, weights: StmWeights) -> Node:
    """alpha * L_cts + beta * L_stm"""
    return add(scale(l_cts, weights.alpha), scale(l_stm, weights.beta))
