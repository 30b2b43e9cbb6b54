"""
Adam with bias correction over named Parameters
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np
from loguru import logger

from core.autograd import Parameter, Tensor
from core.exceptions import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor], state: AdamState) -> AdamState:
    """
    One Adam update, in place on `params`

    Args:
        params: name -> parameter array (modified in place)
        grads: name -> gradient, one per parameter
        state: moments and step counter (modified in place)

    Returns:
        The same state with t incremented
    """
    for name, value in params.items():
        if name not in grads:
            raise ShapeError(f"adam_step[{name}] (missing gradient)", value.shape)
        if grads[name].shape != value.shape:
            raise ShapeError(f"adam_step[{name}]", value.shape, grads[name].shape)

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if not g.any():
            # moments still decay, values stay put
            continue
        m_hat = m / bc1
        v_hat = v / bc2
        value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


class Adam:
    """Owns an AdamState for a fixed, ordered set of Parameters"""

    def __init__(
        self,
        params: Mapping[str, Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        logger.debug(f"Adam initialized over {len(self.params)} tensors (lr={lr})")

    def step(self) -> None:
        adam_step(
            {name: p.value for name, p in self.params.items()},
            {name: p.grad for name, p in self.params.items()},
            self.state,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
