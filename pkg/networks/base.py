from abc import ABC, abstractmethod
from typing import Dict

import numpy as np

from core.autograd import Node, Parameter, detach


class BaseModule(ABC):
    """Abstract base class for differentiable building blocks"""

    def __init__(self, name: str):
        self.name = name

    @abstractmethod
    def forward(self, x: Node, frozen: bool = False) -> Node:
        """Apply the module; `frozen` reads parameters as constants so no gradient reaches them"""
        pass

    @abstractmethod
    def parameters(self) -> Dict[str, Parameter]:
        """Parameters keyed by dotted name, in a fixed order"""
        pass

    def __call__(self, x: Node, frozen: bool = False) -> Node:
        return self.forward(x, frozen=frozen)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            p.value[...] = arrays[name]

    @staticmethod
    def _read(p: Parameter, frozen: bool) -> Node:
        return detach(p) if frozen else p
