"""Adam optimizer with bias correction.

Moment buffers are keyed by parameter name, so the set of parameters
passed to ``adam_step`` must match the one the state was built for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-5
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.99, eps=1e-5):
        state = cls(beta1=beta1, beta2=beta2, eps=eps)
        for p in params:
            if p.name in state.m:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def adam_step(params, state, lr):
    """Apply one update in place and advance the step counter."""
    t = state.step_count + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(
                f"non-finite gradient for parameter {p.name!r} at step {t}",
                param_name=p.name,
                iteration=t,
            )
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    state.step_count = t
