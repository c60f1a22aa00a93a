"""One-cycle learning-rate schedule.

Cosine rise from max_lr/start_div to max_lr over the warmup span, then
cosine fall to max_lr/final_div. The three anchor values are returned
exactly (no interpolation rounding at the endpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError


def _cos_interp(a, b, t):
    # exact at both ends by construction
    if t <= 0.0:
        return a
    if t >= 1.0:
        return b
    return b + (a - b) * (0.5 * (1.0 + math.cos(math.pi * t)))


@dataclass(frozen=True)
class OneCycleSchedule:
    total_steps: int
    max_lr: float = 0.002
    warmup_fraction: float = 0.25
    start_div: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError(
                f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}"
            )
        if self.max_lr <= 0 or self.start_div <= 1 or self.final_div <= 1:
            raise ConfigError("max_lr must be positive and divisors greater than 1")

    def lr_at(self, step):
        """Learning rate for a step index in [0, total_steps]."""
        if not 0 <= step <= self.total_steps:
            raise ConfigError(
                f"step {step} outside schedule range [0, {self.total_steps}]"
            )
        peak = self.warmup_fraction * self.total_steps
        if step <= peak:
            return _cos_interp(self.max_lr / self.start_div, self.max_lr, step / peak)
        return _cos_interp(
            self.max_lr, self.max_lr / self.final_div, (step - peak) / (self.total_steps - peak)
        )
