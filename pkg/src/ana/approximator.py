"""Constructive uniform approximation by three-layer ternary networks.

A box ``prod_i [p_i, q_i]`` is the intersection of ``2 n0`` half-spaces, each
detected by one Heaviside neuron with a single +-1 weight; a second neuron
with all-ones weights and bias ``-2 n0`` fires iff all of them do.  Tiling
``[0, S]^n0`` with ``n^n0`` such boxes and reading out one real weight per
box gives a piecewise-constant approximator whose error is bounded by the
Lipschitz constant times the cell diameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.stats import qmc

MAX_CELLS = 10**8
CHUNK_ENTRIES = 1 << 24


@dataclass(frozen=True)
class Box:
    lows: tuple[float, ...]
    highs: tuple[float, ...]
    low_closed: Optional[tuple[bool, ...]] = None
    high_closed: Optional[tuple[bool, ...]] = None

    def __post_init__(self):
        lows = tuple(float(v) for v in np.atleast_1d(self.lows))
        highs = tuple(float(v) for v in np.atleast_1d(self.highs))
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        if len(lows) != len(highs) or not lows:
            raise ValueError("box needs matching, non-empty lows and highs")
        if any(p > q for p, q in zip(lows, highs)):
            raise ValueError(f"degenerate box: some p_i > q_i in {lows} / {highs}")
        n = len(lows)
        for name in ("low_closed", "high_closed"):
            v = getattr(self, name)
            v = (True,) * n if v is None else tuple(bool(c) for c in np.atleast_1d(v))
            if len(v) != n:
                raise ValueError(f"{name} must have one flag per dimension")
            object.__setattr__(self, name, v)

    @property
    def dim(self) -> int:
        return len(self.lows)

    def contains(self, x) -> np.ndarray:
        """Direct interval membership, the reference the network must match."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        p, q = np.array(self.lows), np.array(self.highs)
        lo = np.where(self.low_closed, x >= p, x > p)
        hi = np.where(self.high_closed, x <= q, x < q)
        return np.all(lo & hi, axis=1)


def _heaviside(s, strict):
    """Closed Heaviside, or the strict one (zero at zero) where ``strict``."""
    return np.where(strict, s > 0, s >= 0).astype(np.float64)


@dataclass
class BoxIndicator:
    w1: np.ndarray      # (2 n0, n0) in {-1, 0, +1}
    b1: np.ndarray      # (2 n0,)
    strict: np.ndarray  # (2 n0,) rows using the strict Heaviside
    w2: np.ndarray      # (2 n0,) all ones
    b2: float           # -2 n0

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = _heaviside(x @ self.w1.T + self.b1, self.strict)
        return _heaviside(h @ self.w2 + self.b2, False)


def _half_space_rows(lows, highs, low_closed, high_closed):
    n0 = len(lows)
    eye = np.eye(n0, dtype=np.int8)
    w1 = np.concatenate([eye, -eye])
    b1 = np.concatenate([-np.asarray(lows, dtype=float), np.asarray(highs, dtype=float)])
    strict = ~np.concatenate([np.asarray(low_closed, bool), np.asarray(high_closed, bool)])
    return w1, b1, strict


def build_box_indicator(box: Box) -> BoxIndicator:
    """Row ``i`` tests ``x_i >= p_i``, row ``n0 + i`` tests ``x_i <= q_i``."""
    w1, b1, strict = _half_space_rows(box.lows, box.highs, box.low_closed, box.high_closed)
    n0 = box.dim
    return BoxIndicator(w1, b1, strict, np.ones(2 * n0), -2.0 * n0)


# -- grid approximator -------------------------------------------------------------


@dataclass
class QnnApproximator:
    n0: int
    n: int
    side: float
    w1: np.ndarray          # (2 n0 N, n0) ternary
    b1: np.ndarray          # (2 n0 N,)
    strict: np.ndarray      # (2 n0 N,)
    w2: sparse.csr_matrix   # (N, 2 n0 N) binary
    b2: np.ndarray          # (N,) = -2 n0
    w3: np.ndarray          # (N,) real

    @property
    def num_cells(self) -> int:
        return self.n ** self.n0

    @property
    def delta(self) -> float:
        return self.side / self.n

    def layer2(self, x) -> np.ndarray:
        x = self._check(x)
        w1 = self.w1.T.astype(np.float64)
        # bound the (points x first-layer neurons) intermediate to ~16M entries
        chunk = max(1, CHUNK_ENTRIES // len(self.b1))
        out = np.empty((len(x), self.num_cells))
        for i in range(0, len(x), chunk):
            h1 = _heaviside(x[i:i + chunk] @ w1 + self.b1, self.strict)
            out[i:i + chunk] = _heaviside(np.asarray((self.w2 @ h1.T).T) + self.b2, False)
        return out

    def _check(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n0:
            raise ValueError(f"expected points of dimension {self.n0}, got {x.shape[1]}")
        if np.any(x < 0) or np.any(x > self.side) or not np.all(np.isfinite(x)):
            raise ValueError(f"point outside the domain [0, {self.side}]^{self.n0}")
        return x


def sizing_report(n: int, n0: int) -> str:
    cells = n ** n0
    rows = 2 * n0 * cells
    # w1 int8 + b1/strict + sparse w2 (8-byte value + 4-byte index per nonzero) + w3
    mem = rows * n0 + rows * 9 + rows * 12 + cells * 8
    return f"n={n} per axis, N={cells} cells, {rows} first-layer neurons, ~{mem / 2**20:.1f} MiB"


def cells_per_axis(lam: float, epsilon: float, side: float, n0: int) -> int:
    """Smallest integer ``n >= 2 sqrt(n0) S lam / eps``."""
    target = 2.0 * math.sqrt(n0) * side * lam / epsilon
    n = math.ceil(target)
    # guard against ceil() of a value one ulp above an integer
    if n - 1 >= 1 and math.isclose(n - 1, target, rel_tol=1e-12, abs_tol=0.0):
        n -= 1
    return max(n, 1)


def _cell_index_tuples(n: int, n0: int) -> np.ndarray:
    """Row s-1 holds (i_0, ..., i_{n0-1}) with s-1 = sum_k i_k n^k."""
    s = np.arange(n ** n0)
    return np.stack([(s // n ** k) % n for k in range(n0)], axis=1)


def build_grid_approximator(f: Callable[[np.ndarray], np.ndarray], lam: float, epsilon: float,
                            side: float = 1.0, n0: int = 1) -> QnnApproximator:
    """Ternary approximator of a ``lam``-Lipschitz ``f`` on ``[0, side]^n0``.

    ``f`` maps an ``(m, n0)`` array of points to ``m`` values.  Cells are
    closed below and open above except on the domain's upper face, so every
    point lies in exactly one cell.  Each readout weight is ``f`` at the cell
    centre.
    """
    if not (epsilon > 0 and lam > 0 and side > 0):
        raise ValueError("epsilon, lambda and side must be positive")
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    n = cells_per_axis(lam, epsilon, side, n0)
    if n ** n0 > MAX_CELLS:
        raise ValueError(f"approximator too large (N > {MAX_CELLS}): {sizing_report(n, n0)}")
    cells = n ** n0
    edges = np.arange(n + 1) * side / n
    idx = _cell_index_tuples(n, n0)
    lows, highs = edges[idx], edges[idx + 1]
    high_closed = idx == n - 1
    eye = np.eye(n0, dtype=np.int8)
    w1 = np.tile(np.concatenate([eye, -eye]), (cells, 1))
    b1 = np.concatenate([-lows, highs], axis=1).reshape(-1)
    strict = np.concatenate([np.zeros_like(high_closed), ~high_closed], axis=1).reshape(-1)
    rows = 2 * n0
    w2 = sparse.csr_matrix(
        (np.ones(rows * cells), np.arange(rows * cells), np.arange(0, rows * cells + 1, rows)),
        shape=(cells, rows * cells),
    )
    centres = (lows + highs) / 2.0
    w3 = np.asarray(f(centres), dtype=np.float64).reshape(cells)
    return QnnApproximator(n0, n, float(side), w1, b1, strict, w2,
                           np.full(cells, -float(rows)), w3)


def eval_qnn(net: QnnApproximator, x) -> np.ndarray:
    """Exact three-layer forward pass; returns one value per point."""
    x = net._check(x)
    chunk = max(1, CHUNK_ENTRIES // len(net.b1))
    return np.concatenate([net.layer2(x[i:i + chunk]) @ net.w3 for i in range(0, len(x), chunk)]
                          or [np.zeros(0)])


def sample_points(net_or_dims, n_samples: int, seed: int = 0, side: float = 1.0) -> np.ndarray:
    """Scrambled Sobol points in ``[0, side]^n0``."""
    n0 = net_or_dims.n0 if isinstance(net_or_dims, QnnApproximator) else int(net_or_dims)
    if isinstance(net_or_dims, QnnApproximator):
        side = net_or_dims.side
    sob = qmc.Sobol(d=n0, scramble=True, seed=seed)
    m = int(math.ceil(math.log2(max(n_samples, 2))))
    return sob.random_base2(m)[:n_samples] * side


def sup_error_estimate(net: QnnApproximator, f, n_samples: int = 10_000, seed: int = 0,
                       max_lattice: int = 2_000_000) -> float:
    """Max ``|eval_qnn - f|`` over Sobol points, cell corners and cell centres."""
    if n_samples < 10_000:
        raise ValueError("sup_error_estimate needs n_samples >= 10^4")
    pts = [sample_points(net, n_samples, seed)]
    if (net.n + 1) ** net.n0 <= max_lattice:
        edges = np.arange(net.n + 1) * net.side / net.n
        pts.append(np.stack(np.meshgrid(*[edges] * net.n0, indexing="ij"), -1).reshape(-1, net.n0))
        mids = (edges[:-1] + edges[1:]) / 2
        pts.append(np.stack(np.meshgrid(*[mids] * net.n0, indexing="ij"), -1).reshape(-1, net.n0))
    x = np.concatenate(pts)
    worst = 0.0
    for i in range(0, len(x), 20_000):
        chunk = x[i:i + 20_000]
        worst = max(worst, float(np.max(np.abs(eval_qnn(net, chunk) - np.asarray(f(chunk))))))
    return worst


def certified_bound(net: QnnApproximator, lam: float) -> float:
    """Diameter bound plus the slack from using centre values."""
    return lam * math.sqrt(net.n0) * net.delta + lam * net.delta / 2.0


def to_network(net: QnnApproximator):
    """Export as an engine network with Heaviside activations.

    A strict row ``s > 0`` becomes the closed row ``s + b' >= 0`` with ``b'``
    the next float below ``b``; since the row computes ``+-x + b`` and IEEE
    subtraction has an exact sign, both tests agree on every double.
    """
    from .engine.layers import Dense, QuantLayer
    from .engine.network import Network
    from .quantizer import heaviside, ternary

    rows = len(net.b1)
    cells = net.num_cells
    b1 = np.where(net.strict, np.nextafter(net.b1, -np.inf), net.b1)
    step = heaviside(0.0, 0.0, 1.0)
    l1 = QuantLayer(Dense(net.n0, rows), net.w1.astype(np.float64), b1, ternary(), step)
    l2 = QuantLayer(Dense(rows, cells), net.w2.toarray(), net.b2.copy(), ternary(), step)
    l3 = QuantLayer(Dense(cells, 1), net.w3[None, :].copy(), np.zeros(1))
    return Network([l1, l2, l3])
