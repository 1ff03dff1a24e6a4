"""Layerwise annealing of the noise standard deviation.

Layer ``l`` (1-based) owns the epoch window ``[period*(l-1), period*l)``;
before the window its noise is at ``sigma_init``, after it the noise is gone.
``delayed_linear`` shifts every window by one period.
"""

from __future__ import annotations

from dataclasses import dataclass

from .noise import DEFAULT_SIGMA

MODES = ("synchronous", "asynchronous")
DECAYS = ("linear", "quadratic", "delayed_linear", "constant")
PASSES = ("forward", "backward")


@dataclass(frozen=True)
class AnnealPolicy:
    mode: str = "asynchronous"
    forward_decay: str = "linear"
    backward_decay: str = "constant"
    sigma_init: float = DEFAULT_SIGMA
    period: int = 50
    num_layers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for d in (self.forward_decay, self.backward_decay):
            if d not in DECAYS:
                raise ValueError(f"unknown decay {d!r}; expected one of {DECAYS}")
        if not self.sigma_init > 0:
            raise ValueError(f"sigma_init must be > 0, got {self.sigma_init}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")

    def decay_for(self, pass_: str) -> str:
        if pass_ not in PASSES:
            raise ValueError(f"unknown pass {pass_!r}")
        # Synchronous ANA uses one measure for both passes.
        if self.mode == "synchronous" or pass_ == "forward":
            return self.forward_decay
        return self.backward_decay

    def sigma_at(self, layer: int, epoch: int, pass_: str) -> float:
        return sigma_at(self, layer, epoch, pass_)

    def sigmas(self, epoch: int, pass_: str) -> list[float]:
        return [sigma_at(self, l, epoch, pass_) for l in range(1, self.num_layers + 1)]


def decay_factor(decay: str, layer: int, epoch: float, period: int) -> float:
    if decay == "constant":
        return 1.0
    offset = layer if decay == "delayed_linear" else layer - 1
    elapsed = min(max(0, epoch - period * offset), period)
    factor = 1.0 - elapsed / period
    if decay == "quadratic":
        factor = factor * factor
    return factor


def sigma_at(p: AnnealPolicy, layer: int, epoch: int, pass_: str) -> float:
    if not 1 <= layer <= p.num_layers:
        raise IndexError(f"layer {layer} out of range [1, {p.num_layers}]")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return p.sigma_init * decay_factor(p.decay_for(pass_), layer, epoch, p.period)
