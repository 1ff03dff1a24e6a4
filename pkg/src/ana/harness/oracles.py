"""Independent numerical checks of the closed forms.

Each check compares an analytic path against a brute-force one (midpoint
quadrature, central finite differences, dense sampling) and reports the
worst deviation next to its tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .. import approximator as ap
from .. import noise as nz
from .. import quantizer as qz
from ..engine.losses import get_loss
from ..engine.network import Network, mlp
from ..schedule import AnnealPolicy


@dataclass
class Entry:
    label: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.value <= self.tol


@dataclass
class Report:
    kind: str
    entries: list = field(default_factory=list)

    def add(self, label: str, value: float, tol: float) -> Entry:
        e = Entry(label, float(value), float(tol))
        self.entries.append(e)
        return e

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def worst(self) -> Optional[Entry]:
        if not self.entries:
            return None
        return max(self.entries, key=lambda e: e.value / e.tol if e.tol else math.inf)

    def format(self) -> str:
        lines = [f"{'PASS' if e.ok else 'FAIL'} {self.kind}: {e.label}: {e.value:.3e} (tol {e.tol:.1e})"
                 for e in self.entries]
        w = self.worst
        if w is not None:
            lines.append(f"worst {self.kind}: {w.label}: {w.value:.3e}")
        return "\n".join(lines)


STAIRCASES = {"ternary": qz.ternary, "sign": qz.sign}
DEFAULT_SIGMAS = (nz.SQRT3 / 6.0, nz.SQRT3 / 3.0, 0.05)
DEFAULT_FAMILIES = ("uniform", "gaussian", "triangular")


def _kink_mask(f: qz.MultiStepFn, m: nz.NoiseModel, xs, margin: float) -> np.ndarray:
    """True for points at least ``margin`` away from every density jump."""
    keep = np.ones(xs.shape, dtype=bool)
    for theta in f.thresholds:
        for d in nz.discontinuities(m):
            keep &= np.abs(xs - (theta + d)) >= margin
    return keep


def smoothing_check(families: Iterable[str] = DEFAULT_FAMILIES, sigmas: Iterable[float] = DEFAULT_SIGMAS,
                    staircases: Sequence[str] = ("ternary", "sign"), points: int = 2001,
                    lim: float = 3.0, n: int = 1_000_000, tol: float = 1e-5) -> Report:
    """Closed form vs midpoint quadrature on a grid."""
    rep = Report("smoothing")
    xs = np.linspace(-lim, lim, points)
    for fam in families:
        for s in sigmas:
            m = nz.NoiseModel(fam, float(s))
            for name in staircases:
                f = STAIRCASES[name]()
                dev = np.max(np.abs(nz.smoothed_eval(f, m, xs) - nz.quadrature_grid(f, m, xs, n)))
                rep.add(f"{name} {fam} sigma={s:.6g}", dev, tol)
    return rep


def derivative_check(families: Iterable[str] = DEFAULT_FAMILIES, sigmas: Iterable[float] = DEFAULT_SIGMAS,
                     staircases: Sequence[str] = ("ternary", "sign"), points: int = 2001,
                     lim: float = 3.0, h: float = 1e-6, tol: float = 1e-4) -> Report:
    """Analytic derivative vs central differences, away from density jumps."""
    rep = Report("derivative")
    xs = np.linspace(-lim, lim, points)
    for fam in families:
        for s in sigmas:
            m = nz.NoiseModel(fam, float(s))
            for name in staircases:
                f = STAIRCASES[name]()
                keep = _kink_mask(f, m, xs, 10 * h)
                x = xs[keep]
                fd = (nz.smoothed_eval(f, m, x + h) - nz.smoothed_eval(f, m, x - h)) / (2 * h)
                d = nz.smoothed_derivative(f, m, x)
                dev = np.max(np.abs(d - fd) / np.maximum(1.0, np.abs(d)))
                rep.add(f"{name} {fam} sigma={s:.6g}", dev, tol)
    return rep


def lipschitz_check(families: Iterable[str] = ("uniform", "triangular"),
                    sigmas: Iterable[float] = DEFAULT_SIGMAS,
                    staircases: Sequence[str] = ("ternary", "sign"), points: int = 20001,
                    lim: float = 3.0, slack: float = 1e-6) -> Report:
    """Largest slope of the smoothed staircase against the certified bound.

    The slope is measured twice: as ``max |smoothed_derivative|`` and as the
    largest difference quotient of ``smoothed_eval`` on the grid.  The entry
    value is ``slope - bound`` so the tolerance is the additive slack.
    """
    rep = Report("lipschitz")
    xs = np.linspace(-lim, lim, points)
    for fam in families:
        for s in sigmas:
            m = nz.NoiseModel(fam, float(s))
            for name in staircases:
                f = STAIRCASES[name]()
                bound = nz.lipschitz_bound(f, m)
                dmax = float(np.max(np.abs(nz.smoothed_derivative(f, m, xs))))
                v = nz.smoothed_eval(f, m, xs)
                qmax = float(np.max(np.abs(np.diff(v) / np.diff(xs))))
                rep.add(f"{name} {fam} sigma={s:.6g} (bound {bound:.4g})",
                        max(dmax, qmax) - bound, slack)
    return rep


# -- network gradients -------------------------------------------------------------


def network_loss(net: Network, x, y, sigma_f, loss: str = "cross_entropy") -> float:
    logits, _ = net.forward(x, sigma_f, sigma_f, training=True)
    return get_loss(loss)(logits, y)[0]


def fd_gradients(net: Network, x, y, sigma_f, loss: str = "cross_entropy", h: float = 1e-6) -> dict:
    """Central differences of the smoothed training loss, one parameter at a time."""
    out = {}
    for name, p in net.params().items():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = network_loss(net, x, y, sigma_f, loss)
            p[i] = old - h
            down = network_loss(net, x, y, sigma_f, loss)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def relative_deviation(a, b, floor: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def toy_problem(seed: int = 0, widths=(2, 8, 8, 2), n: int = 16):
    rng = np.random.default_rng(seed)
    net = mlp(widths, rng, qz.ternary())
    x = rng.uniform(-1, 1, (n, widths[0]))
    y = rng.integers(0, widths[-1], n)
    return net, x, y


def gradient_check(seed: int = 0, widths=(2, 8, 8, 2), epoch: int = 0, h: float = 1e-6,
                   tol: float = 1e-3, loss: str = "cross_entropy",
                   policy: Optional[AnnealPolicy] = None) -> Report:
    """Backpropagated gradients vs finite differences of the smoothed loss.

    The check is meaningful only where forward and backward noise coincide,
    since otherwise the backward field is not the gradient of the forward
    loss; the default asynchronous policy satisfies this at epoch 0.
    """
    net, x, y = toy_problem(seed, widths)
    if policy is None:
        policy = AnnealPolicy("asynchronous", "linear", "constant", nz.DEFAULT_SIGMA, 50, net.num_layers)
    sig_f = policy.sigmas(epoch, "forward")
    sig_b = policy.sigmas(epoch, "backward")
    if sig_f != sig_b:
        raise ValueError(f"forward and backward noise differ at epoch {epoch}; no loss to differentiate")
    logits, caches = net.forward(x, sig_f, sig_f, training=True)
    _, g = get_loss(loss)(logits, y)
    analytic = net.backward(caches, g, sig_b, sig_b)
    numeric = fd_gradients(net, x, y, sig_f, loss, h)
    rep = Report("gradient")
    for name in analytic:
        rep.add(name, float(np.max(relative_deviation(analytic[name], numeric[name]))), tol)
    return rep


# -- approximation -------------------------------------------------------------------

TARGETS = {
    "identity": (1, lambda x: x[:, 0]),
    "mean2": (2, lambda x: x.mean(axis=1)),
    "sine": (1, lambda x: np.sin(2 * np.pi * x[:, 0]) / (2 * np.pi)),
}


def approximation_check(target: str = "identity", epsilon: float = 0.1, lam: float = 1.0,
                        n_samples: int = 10_000, tol: Optional[float] = None) -> Report:
    """Sup error of the grid approximator; default tolerance is ``epsilon / 2``."""
    n0, f = TARGETS[target]
    net = ap.build_grid_approximator(f, lam, epsilon, 1.0, n0)
    err = ap.sup_error_estimate(net, f, n_samples)
    rep = Report("approximation")
    rep.add(f"{target} eps={epsilon} n={net.n} N={net.num_cells}", err,
            epsilon / 2 if tol is None else tol)
    return rep


CHECKS: dict[str, Callable[..., Report]] = {
    "smoothing": smoothing_check,
    "derivative": derivative_check,
    "lipschitz": lipschitz_check,
    "gradient": gradient_check,
    "approximation": approximation_check,
}


def oracle_check(kind: str, **params) -> Report:
    if kind not in CHECKS:
        raise ValueError(f"unknown check {kind!r}; expected one of {sorted(CHECKS)}")
    return CHECKS[kind](**params)
