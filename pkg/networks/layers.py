from typing import Dict, List, Sequence

import numpy as np

from core.autograd import Node, Parameter, add_bias, matmul, relu
from core.exceptions import ShapeError
from networks.base import BaseModule


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(BaseModule):
    """x @ W + b with W shaped [in, out]"""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__(name)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(xavier_uniform(rng, in_dim, out_dim), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")

    def forward(self, x: Node, frozen: bool = False) -> Node:
        if x.value.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name}", x.shape, (self.in_dim, self.out_dim))
        return add_bias(matmul(x, self._read(self.weight, frozen)), self._read(self.bias, frozen))

    def parameters(self) -> Dict[str, Parameter]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


class MLP(BaseModule):
    """Stack of Linear layers with ReLU between them (none after the last)"""

    def __init__(self, name: str, dims: Sequence[int], rng: np.random.Generator):
        super().__init__(name)
        if len(dims) < 2:
            raise ValueError(f"{name}: an MLP needs at least input and output sizes")
        self.dims = list(dims)
        self.layers: List[Linear] = [
            Linear(f"{name}.{i}", dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)
        ]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def forward(self, x: Node, frozen: bool = False) -> Node:
        for i, layer in enumerate(self.layers):
            x = layer(x, frozen=frozen)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def parameters(self) -> Dict[str, Parameter]:
        params: Dict[str, Parameter] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params
