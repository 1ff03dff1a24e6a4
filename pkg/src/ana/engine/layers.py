"""Quantized layers with closed-form noisy forward/backward passes.

A layer is ``act(bn(pool(linear(x, E[zeta(w + nu_w)]) + b)) + nu_b)`` with
the expectation over ``nu_b`` taken in closed form.  Expectations are taken
layer by layer, as soon as each staircase is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..noise import NoiseModel, smoothed_derivative, smoothed_eval
from ..quantizer import MultiStepFn

NoiseSpec = Union[float, NoiseModel]


class ZeroBackwardNoiseError(ValueError):
    pass


def as_noise(spec: NoiseSpec, family: str = "uniform") -> NoiseModel:
    if isinstance(spec, NoiseModel):
        return spec
    spec = float(spec)
    if spec < 0:
        raise ValueError(f"noise sigma must be >= 0, got {spec}")
    return NoiseModel.make(family, spec)


# -- linear maps ---------------------------------------------------------------


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out

    @property
    def weight_shape(self):
        return (self.n_out, self.n_in)

    def out_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, x, w):
        x = x.reshape(len(x), -1)
        if x.shape[1] != self.n_in:
            raise ValueError(f"dense layer expects {self.n_in} inputs, got {x.shape[1]}")
        return x @ w.T, x

    def backward(self, g, x_flat, w, input_grad=True):
        return (g @ w if input_grad else None), g.T @ x_flat


class Conv2d:
    kind = "conv"

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding

    @property
    def weight_shape(self):
        return (self.c_out, self.c_in, self.kernel, self.kernel)

    def out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def out_shape(self, in_shape):
        _, h, w = in_shape
        return (self.c_out, *self.out_hw(h, w))

    def forward(self, x, w):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"conv layer expects (N, {self.c_in}, H, W), got {x.shape}")
        n, c, h, wd = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.out_hw(h, wd)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        out = cols @ w.reshape(self.c_out, -1).T
        out = out.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, x.shape)

    def backward(self, g, saved, w, input_grad=True):
        cols, (n, c, h, wd) = saved
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = g.shape[2], g.shape[3]
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        g_w = (g2.T @ cols).reshape(w.shape)
        if not input_grad:
            return None, g_w
        g_cols = (g2 @ w.reshape(self.c_out, -1)).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += g_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gxp[:, :, p:p + h, p:p + wd], g_w


class MaxPool2d:
    def __init__(self, kernel: int, stride: Optional[int] = None):
        self.kernel = kernel
        self.stride = stride or kernel

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k, s = self.kernel, self.stride
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def forward(self, x):
        k, s = self.kernel, self.stride
        _, ho, wo = self.out_shape(x.shape[1:])
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        flat = win.reshape(*win.shape[:4], k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, g, saved):
        arg, shape = saved
        k, s = self.kernel, self.stride
        ho, wo = g.shape[2], g.shape[3]
        gx = np.zeros(shape)
        for i in range(k):
            for j in range(k):
                hit = arg == i * k + j
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += np.where(hit, g, 0.0)
        return gx


class BatchNorm:
    """Per-channel normalization; channel axis is 1 for both 2-D and 4-D input."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, training: bool):
        if training:
            axes = self._axes(x)
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.channels
            if count > 1:
                m = self.momentum
                self.running_mean = (1 - m) * self.running_mean + m * mean
                self.running_var = (1 - m) * self.running_var + m * var * count / (count - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        return self._bcast(self.gamma, x) * xhat + self._bcast(self.beta, x), (xhat, inv, training)

    def backward(self, g, saved):
        xhat, inv, training = saved
        axes = self._axes(g)
        g_gamma = (g * xhat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        scale = self._bcast(self.gamma * inv, g)
        if not training:
            return g * scale, g_gamma, g_beta
        count = g.size // self.channels
        gm = self._bcast(g_beta / count, g)
        gxm = self._bcast(g_gamma / count, g)
        return scale * (g - gm - xhat * gxm), g_gamma, g_beta


# -- the quantized layer ---------------------------------------------------------


@dataclass
class ForwardCache:
    x: np.ndarray
    w_tilde: np.ndarray
    s: np.ndarray
    z: np.ndarray
    sigma_w: NoiseModel
    sigma_b: NoiseModel
    linear_saved: object = None
    pool_saved: object = None
    bn_saved: object = None


@dataclass
class QuantLayer:
    linear: Union[Dense, Conv2d]
    w: np.ndarray
    b: np.ndarray
    weight_q: Optional[MultiStepFn] = None
    act: Optional[MultiStepFn] = None
    pool: Optional[MaxPool2d] = None
    bn: Optional[BatchNorm] = None
    noise_family: str = "uniform"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.shape != self.linear.weight_shape:
            raise ValueError(f"weight shape {self.w.shape} != {self.linear.weight_shape}")
        n_out = self.linear.weight_shape[0]
        if self.b.shape != (n_out,):
            raise ValueError(f"bias shape {self.b.shape} != {(n_out,)}")
        if self.bn is not None and self.bn.channels != n_out:
            raise ValueError("batchnorm channels must match layer outputs")

    @property
    def n_out(self) -> int:
        return self.linear.weight_shape[0]

    def params(self) -> dict[str, np.ndarray]:
        p = {"w": self.w, "b": self.b}
        if self.bn is not None:
            p["bn.gamma"] = self.bn.gamma
            p["bn.beta"] = self.bn.beta
        return p

    def quantized_weights(self) -> np.ndarray:
        if self.weight_q is None:
            return self.w
        return smoothed_eval(self.weight_q, NoiseModel.delta(), self.w)


def _bias(b, s):
    return b if s.ndim == 2 else b[None, :, None, None]


def layer_forward(layer: QuantLayer, x, sigma_wf: NoiseSpec = 0.0, sigma_bf: NoiseSpec = 0.0,
                  training: bool = True):
    """Forward pass with forward noise scales ``sigma_wf`` (weights), ``sigma_bf`` (bias).

    With both scales zero this is the deterministic quantized layer.
    Returns ``(y, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    mw = as_noise(sigma_wf, layer.noise_family)
    mb = as_noise(sigma_bf, layer.noise_family)
    w_tilde = layer.w if layer.weight_q is None else smoothed_eval(layer.weight_q, mw, layer.w)
    lin, lin_saved = layer.linear.forward(x, w_tilde)
    s = lin + _bias(layer.b, lin)
    pool_saved = bn_saved = None
    z = s
    if layer.pool is not None:
        z, pool_saved = layer.pool.forward(z)
    if layer.bn is not None:
        z, bn_saved = layer.bn.forward(z, training)
    y = z if layer.act is None else smoothed_eval(layer.act, mb, z)
    cache = ForwardCache(x, w_tilde, s, z, mw, mb, lin_saved, pool_saved, bn_saved)
    return y, cache


def _backward_factor(f: MultiStepFn, m: NoiseModel, at, stage: str, zero_noise: str):
    if m.is_delta:
        if zero_noise == "zero":
            # derivative of a staircase is zero almost everywhere
            return np.zeros_like(at)
        raise ZeroBackwardNoiseError(
            f"zero backward noise yields zero gradient field ({stage} stage)"
        )
    return smoothed_derivative(f, m, at)


def layer_backward(layer: QuantLayer, cache: ForwardCache, g_out, sigma_wb: NoiseSpec,
                   sigma_bb: NoiseSpec, zero_noise: str = "raise", input_grad: bool = True):
    """Backward pass with backward noise scales; returns ``(g_in, grads)``.

    ``grads`` maps parameter names (as in :meth:`QuantLayer.params`) to
    gradients; ``g_in`` is None when ``input_grad`` is False.  ``zero_noise="zero"`` lets a quantized stage with zero
    backward noise pass a zero gradient instead of raising.
    """
    if zero_noise not in ("raise", "zero"):
        raise ValueError(f"zero_noise must be 'raise' or 'zero', got {zero_noise!r}")
    mw = as_noise(sigma_wb, layer.noise_family)
    mb = as_noise(sigma_bb, layer.noise_family)
    g = np.asarray(g_out, dtype=np.float64)
    if layer.act is not None:
        g = g * _backward_factor(layer.act, mb, cache.z, "activation", zero_noise)
    grads = {}
    if layer.bn is not None:
        g, grads["bn.gamma"], grads["bn.beta"] = layer.bn.backward(g, cache.bn_saved)
    if layer.pool is not None:
        g = layer.pool.backward(g, cache.pool_saved)
    grads["b"] = g.sum(axis=0) if g.ndim == 2 else g.sum(axis=(0, 2, 3))
    g_in, g_wt = layer.linear.backward(g, cache.linear_saved, cache.w_tilde, input_grad)
    if layer.weight_q is not None:
        g_wt = g_wt * _backward_factor(layer.weight_q, mw, layer.w, "weight", zero_noise)
    grads["w"] = g_wt
    if g_in is not None:
        g_in = g_in.reshape(cache.x.shape)
    return g_in, grads


def ste_mask(s) -> np.ndarray:
    """Hard-tanh mask ``1[-1 <= s <= 1]`` of the straight-through estimator."""
    s = np.asarray(s, dtype=np.float64)
    return np.where(np.abs(s) <= 1.0, 1.0, 0.0)


# -- constructors ------------------------------------------------------------------


def dense_layer(n_in: int, n_out: int, rng: np.random.Generator, weight_q=None, act=None,
                batchnorm: bool = False, init_range: float = 1.0, noise_family: str = "uniform"):
    w = rng.uniform(-init_range, init_range, size=(n_out, n_in))
    b = np.zeros(n_out)
    bn = BatchNorm(n_out) if batchnorm else None
    return QuantLayer(Dense(n_in, n_out), w, b, weight_q, act, None, bn, noise_family)


def conv_layer(c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
               padding: int = 0, pool: Optional[int] = None, weight_q=None, act=None,
               batchnorm: bool = True, init_range: float = 1.0, noise_family: str = "uniform"):
    conv = Conv2d(c_in, c_out, kernel, stride, padding)
    w = rng.uniform(-init_range, init_range, size=conv.weight_shape)
    b = np.zeros(c_out)
    mp = MaxPool2d(pool) if pool else None
    bn = BatchNorm(c_out) if batchnorm else None
    return QuantLayer(conv, w, b, weight_q, act, mp, bn, noise_family)
