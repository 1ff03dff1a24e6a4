"""Multi-step (staircase) quantization functions.

A K-step function is ``q0 + sum_k dq_k * H(x - theta_k)``; with the default
convention ``H(0) = 1`` the level ``q_k`` is taken at ``x == theta_k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MultiStepFn:
    thresholds: tuple[float, ...]
    levels: tuple[float, ...]
    # False selects the strict Heaviside (value q_{k-1} at x == theta_k).
    closed: bool = True

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        lv = tuple(float(q) for q in self.levels)
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "levels", lv)
        if len(lv) != len(th) + 1:
            raise ValueError(
                f"need len(levels) == len(thresholds) + 1, got {len(lv)} and {len(th)}"
            )
        if not all(np.isfinite(th)) or not all(np.isfinite(lv)):
            raise ValueError("thresholds and levels must be finite")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be strictly increasing")

    @property
    def num_steps(self) -> int:
        return len(self.thresholds)

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(np.asarray(self.levels))

    @property
    def total_jump(self) -> float:
        return self.levels[-1] - self.levels[0]

    def __call__(self, x):
        return multistep_eval(self, x)


def ternary(closed: bool = True) -> MultiStepFn:
    return MultiStepFn((-0.5, 0.5), (-1.0, 0.0, 1.0), closed)


def sign() -> MultiStepFn:
    return MultiStepFn((0.0,), (-1.0, 1.0))


def heaviside(theta: float = 0.0, q0: float = 0.0, q1: float = 1.0, closed: bool = True) -> MultiStepFn:
    if not q0 < q1:
        raise ValueError(f"generalized Heaviside needs q0 < q1, got q0={q0}, q1={q1}")
    return MultiStepFn((theta,), (q0, q1), closed)


def from_spec(thresholds: Sequence[float], levels: Sequence[float]) -> MultiStepFn:
    return MultiStepFn(tuple(thresholds), tuple(levels))


def multistep_eval(f: MultiStepFn, x):
    """Evaluate the staircase elementwise.

    The result is gathered from the stored levels, so every output is
    bit-equal to one of ``f.levels``.
    """
    xa = np.asarray(x, dtype=np.float64)
    side = "right" if f.closed else "left"
    idx = np.searchsorted(np.asarray(f.thresholds), xa, side=side)
    out = np.asarray(f.levels)[idx]
    if np.ndim(x) == 0:
        return float(out)
    return out


def heaviside_eval(theta: float, q0: float, q1: float, x):
    return multistep_eval(heaviside(theta, q0, q1), x)


def quantize_tensor(f: MultiStepFn, w) -> np.ndarray:
    return np.asarray(multistep_eval(f, np.asarray(w, dtype=np.float64)))
