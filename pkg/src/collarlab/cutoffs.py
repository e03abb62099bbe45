"""Smooth cutoff functions built from the degree-7 smoothstep polynomial."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def smoothstep7(t: np.ndarray) -> np.ndarray:
    """C³ step: 0 for t <= 0, 1 for t >= 1, degree-7 polynomial in between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def smoothstep7_deriv(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    d = 140.0 * tc**3 * (1.0 - tc) ** 3
    return np.where(inside, d, 0.0)


@dataclass(frozen=True)
class SmoothCutoff:
    """φ = 1 on [0, flat], φ = 0 on [support, ∞), monotone smoothstep in between."""

    flat: float
    support: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.flat < self.support:
            raise ValueError("cutoff needs 0 <= flat < support")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        t = (np.asarray(x, dtype=float) - self.flat) / (self.support - self.flat)
        return 1.0 - smoothstep7(t)

    def deriv(self, x: np.ndarray) -> np.ndarray:
        w = self.support - self.flat
        t = (np.asarray(x, dtype=float) - self.flat) / w
        return -smoothstep7_deriv(t) / w

    def breakpoints(self) -> tuple[float, float]:
        return (self.flat, self.support)
