"""Parameter updates: plain SGD and bias-corrected adaptive moments, plus
global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .tensor import MissingGrad, Tensor

GRAD_CLIP_NORM = 5.0


def _param_key(param: Tensor, index: int) -> str:
    return param.name or f"param{index}"


def clip_global_norm(params: list[Tensor], max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class SGD:
    kind = "sgd"

    def __init__(self, learning_rate: float):
        if learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params: list[Tensor]) -> None:
        for i, p in enumerate(params):
            if p.grad is None:
                raise MissingGrad(f"parameter {_param_key(p, i)} has no gradient")
        self.step_count += 1
        for p in params:
            p.data -= self.learning_rate * p.grad
            p.zero_grad()

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "step_count": self.step_count,
        }

    def load_state_dict(self, state: dict) -> None:
        self.learning_rate = float(state["learning_rate"])
        self.step_count = int(state["step_count"])


class AdaptiveMoment:
    """First/second-moment update with bias correction (beta1=0.9,
    beta2=0.998, epsilon=1e-9)."""

    kind = "adaptive-moment"

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.998,
        epsilon: float = 1e-9,
    ):
        if learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: list[Tensor]) -> None:
        for i, p in enumerate(params):
            if p.grad is None:
                raise MissingGrad(f"parameter {_param_key(p, i)} has no gradient")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(params):
            key = _param_key(p, i)
            g = p.grad
            m = self.m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[key] = m
                self.v[key] = np.zeros_like(p.data)
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.epsilon)
            p.data -= self.learning_rate * update
            p.zero_grad()

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.learning_rate = float(state["learning_rate"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.epsilon = float(state["epsilon"])
        self.step_count = int(state["step_count"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


def make_optimizer(kind: str, learning_rate: float):
    if kind == "sgd":
        return SGD(learning_rate)
    if kind in ("adaptive-moment", "adam"):
        return AdaptiveMoment(learning_rate)
    raise ValueError(f"unknown optimizer kind {kind!r}")
