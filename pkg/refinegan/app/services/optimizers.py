"""RMSprop and Adadelta updates.

``optimizer_step`` is the pure functional form used by tests and scalar
references; :class:`SpecOptimizer` runs the same kernel in place on torch
parameters during training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np
import torch

from ..errors import DivergenceError, ShapeMismatchError
from ..schemas import OptimizerSpec


@dataclass(slots=True)
class OptimizerState:
    """Per-parameter accumulators keyed by parameter name."""

    step: int = 0
    square_avg: dict[str, Any] = field(default_factory=dict)
    delta_avg: dict[str, Any] = field(default_factory=dict)


def _sqrt(x):
    return torch.sqrt(x) if isinstance(x, torch.Tensor) else np.sqrt(x)


def _all_finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def _zeros_like(x):
    return torch.zeros_like(x) if isinstance(x, torch.Tensor) else np.zeros_like(x, dtype=np.float64)


def update_one(spec: OptimizerSpec, param, grad, square_avg, delta_avg):
    """One update of a single array; returns ``(param, square_avg, delta_avg)``.

    RMSprop::

        s = rho * s + (1 - rho) * g^2
        p = p - lr * g / sqrt(s + eps)

    Adadelta::

        s  = rho * s + (1 - rho) * g^2
        dx = -sqrt(d + eps) / sqrt(s + eps) * g
        d  = rho * d + (1 - rho) * dx^2
        p  = p + lr * dx
    """

    rho, eps, lr = spec.rho, spec.eps, spec.lr
    square_avg = rho * square_avg + (1.0 - rho) * grad * grad
    if spec.kind == "rmsprop":
        return param - lr * grad / _sqrt(square_avg + eps), square_avg, delta_avg
    delta = -_sqrt(delta_avg + eps) / _sqrt(square_avg + eps) * grad
    delta_avg = rho * delta_avg + (1.0 - rho) * delta * delta
    return param + lr * delta, square_avg, delta_avg


def optimizer_step(
    spec: OptimizerSpec,
    params: Mapping[str, Any],
    grads: Mapping[str, Any],
    state: OptimizerState | None = None,
) -> tuple[dict[str, Any], OptimizerState]:
    """Apply one update to every named parameter without mutating the inputs."""

    state = state or OptimizerState()
    if set(params) != set(grads):
        raise ShapeMismatchError("params and grads must name the same parameters")
    new_params: dict[str, Any] = {}
    new_state = OptimizerState(step=state.step + 1)
    for name, param in params.items():
        grad = grads[name]
        if tuple(np.shape(param)) != tuple(np.shape(grad)):
            raise ShapeMismatchError(f"gradient shape mismatch for {name}")
        if not _all_finite(grad):
            raise DivergenceError(f"non-finite gradient for {name}")
        square_avg = state.square_avg.get(name)
        delta_avg = state.delta_avg.get(name)
        if square_avg is None:
            square_avg = _zeros_like(param)
        if delta_avg is None:
            delta_avg = _zeros_like(param)
        new_params[name], new_state.square_avg[name], new_state.delta_avg[name] = update_one(
            spec, param, grad, square_avg, delta_avg
        )
    return new_params, new_state


class SpecOptimizer(torch.optim.Optimizer):
    """``torch.optim`` wrapper running :func:`update_one` in place."""

    def __init__(self, params: Iterable[torch.nn.Parameter], spec: OptimizerSpec) -> None:
        super().__init__(params, defaults={"lr": spec.lr})
        self.spec = spec

    @torch.no_grad()
    def step(self, closure=None):  # type: ignore[override]
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            for param in group["params"]:
                if param.grad is None:
                    continue
                grad = param.grad
                if not _all_finite(grad):
                    raise DivergenceError("non-finite gradient during optimizer step")
                slot = self.state[param]
                if not slot:
                    slot["square_avg"] = torch.zeros_like(param)
                    slot["delta_avg"] = torch.zeros_like(param)
                updated, slot["square_avg"], slot["delta_avg"] = update_one(
                    self.spec, param, grad, slot["square_avg"], slot["delta_avg"]
                )
                param.copy_(updated)
        return loss


__all__ = ["OptimizerState", "update_one", "optimizer_step", "SpecOptimizer"]
