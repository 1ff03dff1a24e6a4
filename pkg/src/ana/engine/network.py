"""Feedforward quantized networks and the noise-annealing training loop."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..quantizer import MultiStepFn, multistep_eval
from ..schedule import AnnealPolicy
from .layers import QuantLayer, dense_layer, layer_backward, layer_forward
from .losses import get_loss
from .optim import AdamState, adam_step


def _per_layer(v, n: int) -> list:
    if isinstance(v, (list, tuple)):
        if len(v) != n:
            raise ValueError(f"expected {n} per-layer noise values, got {len(v)}")
        return list(v)
    return [v] * n


class Network:
    def __init__(self, layers: Sequence[QuantLayer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        if layers[-1].act is not None:
            raise ValueError("the last layer must be affine (identity activation)")
        self.layers = list(layers)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers, 1):
            for k, v in layer.params().items():
                out[f"l{i}.{k}"] = v
        return out

    def forward(self, x, sigma_wf=0.0, sigma_bf=0.0, training: bool = True):
        n = self.num_layers
        caches = []
        for layer, sw, sb in zip(self.layers, _per_layer(sigma_wf, n), _per_layer(sigma_bf, n)):
            x, cache = layer_forward(layer, x, sw, sb, training)
            caches.append(cache)
        return x, caches

    def backward(self, caches, g, sigma_wb, sigma_bb, zero_noise: str = "raise") -> dict:
        n = self.num_layers
        sws, sbs = _per_layer(sigma_wb, n), _per_layer(sigma_bb, n)
        grads = {}
        for i in range(n - 1, -1, -1):
            g, lg = layer_backward(self.layers[i], caches[i], g, sws[i], sbs[i], zero_noise,
                                   input_grad=i > 0)
            for k, v in lg.items():
                grads[f"l{i + 1}.{k}"] = v
        return grads

    def predict(self, x, sigma_wf=0.0, sigma_bf=0.0) -> np.ndarray:
        """Composed layerwise expectations in evaluation mode."""
        return self.forward(x, sigma_wf, sigma_bf, training=False)[0]


def mlp(widths: Sequence[int], rng: np.random.Generator, quantizer: Optional[MultiStepFn],
        activation: Optional[MultiStepFn] = None, batchnorm: bool = False,
        last_batchnorm: Optional[bool] = None, init_range: float = 1.0,
        noise_family: str = "uniform") -> Network:
    """Dense network; hidden layers use ``activation`` (default: ``quantizer``)."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    act = quantizer if activation is None else activation
    last_bn = batchnorm if last_batchnorm is None else last_batchnorm
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        layers.append(dense_layer(a, b, rng, weight_q=quantizer, act=None if last else act,
                                  batchnorm=last_bn if last else batchnorm,
                                  init_range=init_range, noise_family=noise_family))
    return Network(layers)


# -- quantized inference -------------------------------------------------------------


def quantized_inference(net: Network, x, forward_sigmas=None) -> np.ndarray:
    """Noise-free evaluation using only quantized weights and activations.

    Hidden inputs are levels of the activation staircase, so for integer
    levels every hidden accumulation is a sum of small integers and is exact
    in double precision.  Batchnorm uses its running moments.
    """
    if forward_sigmas is not None and np.any(np.asarray(forward_sigmas, dtype=float) != 0.0):
        raise ValueError("quantized inference requires all forward noise to be annealed to zero")
    x = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        wq = layer.quantized_weights()
        s, _ = layer.linear.forward(x, wq)
        s = s + (layer.b if s.ndim == 2 else layer.b[None, :, None, None])
        if layer.pool is not None:
            s, _ = layer.pool.forward(s)
        if layer.bn is not None:
            s, _ = layer.bn.forward(s, training=False)
        x = s if layer.act is None else multistep_eval(layer.act, s)
    return x


def fold_thresholds(layer: QuantLayer):
    """Per-channel activation thresholds on the pre-batchnorm accumulator.

    Returns ``(thresholds, increasing)`` where ``thresholds[c, k]`` is the
    accumulator value at which channel ``c`` crosses ``act.thresholds[k]``
    and ``increasing[c]`` tells whether the output rises with the
    accumulator.  Channels with zero scale get ``nan`` thresholds.
    """
    if layer.act is None or layer.bn is None:
        raise ValueError("folding needs a batchnorm followed by a staircase activation")
    bn = layer.bn
    scale = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    theta = np.asarray(layer.act.thresholds)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        th = bn.running_mean[:, None] + (theta - bn.beta[:, None]) / scale[:, None]
    th[scale == 0] = np.nan
    return th, scale > 0


# -- training ------------------------------------------------------------------------


def noise_for_epoch(policy: AnnealPolicy, epoch: int):
    """(forward, backward) per-layer sigmas; weights and biases share a policy."""
    return policy.sigmas(epoch, "forward"), policy.sigmas(epoch, "backward")


def train_epoch(net: Network, x, y, policy: AnnealPolicy, optim: AdamState, epoch: int,
                lr: float = 1e-3, batch_size: int = 256, loss: str = "cross_entropy",
                order: Optional[np.ndarray] = None) -> dict:
    """One pass over ``(x, y)`` in ``order`` (default: as stored).

    Noise scales are fetched from ``policy`` for this epoch before the
    forward/backward passes.  In synchronous mode a stage whose noise is fully
    annealed contributes its almost-everywhere derivative, zero.
    """
    if len(x) == 0:
        raise ValueError("empty dataset")
    if policy.num_layers != net.num_layers:
        raise ValueError(f"policy has {policy.num_layers} layers, network has {net.num_layers}")
    loss_fn = get_loss(loss)
    sig_f, sig_b = noise_for_epoch(policy, epoch)
    zero_noise = "zero" if policy.mode == "synchronous" else "raise"
    idx = np.arange(len(x)) if order is None else np.asarray(order)
    params = net.params()
    total, correct = 0.0, 0
    for start in range(0, len(idx), batch_size):
        bi = idx[start:start + batch_size]
        xb, yb = x[bi], y[bi]
        logits, caches = net.forward(xb, sig_f, sig_f, training=True)
        value, g = loss_fn(logits, yb)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch starting {start}")
        grads = net.backward(caches, g, sig_b, sig_b, zero_noise)
        adam_step(optim, params, grads, lr)
        total += value * len(bi)
        correct += int(np.sum(logits.argmax(axis=1) == yb))
    return {"loss": total / len(idx), "accuracy": correct / len(idx)}


def accuracy(logits, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.asarray(logits).argmax(axis=1) == np.asarray(labels)))


def evaluate(net: Network, x, y, sigma_wf=0.0, sigma_bf=0.0, batch_size: int = 1024) -> float:
    out = [net.predict(x[i:i + batch_size], sigma_wf, sigma_bf) for i in range(0, len(x), batch_size)]
    return accuracy(np.concatenate(out) if out else np.zeros((0, 2)), y)


def evaluate_quantized(net: Network, x, y, batch_size: int = 1024) -> float:
    out = [quantized_inference(net, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return accuracy(np.concatenate(out) if out else np.zeros((0, 2)), y)


def ste_reference_step(net: Network, x, y, optim: AdamState, lr: float, loss: str = "hinge"):
    """One BinaryConnect/STE update on a sign network, written independently of
    the noise machinery: hard sign forward, hard-tanh masks backward.

    Used as the reference that ANA must reproduce with delta forward noise
    and U[-1, 1] backward noise.
    """
    from .layers import ste_mask

    loss_fn = get_loss(loss)
    acts, pre = [np.asarray(x, dtype=np.float64)], []
    wq = []
    for layer in net.layers:
        w = np.where(layer.w >= 0, 1.0, -1.0) if layer.weight_q is not None else layer.w
        wq.append(w)
        s = acts[-1].reshape(len(acts[-1]), -1) @ w.T + layer.b
        pre.append(s)
        acts.append(s if layer.act is None else np.where(s >= 0, 1.0, -1.0))
    value, g = loss_fn(acts[-1], y)
    grads = {}
    for i in range(net.num_layers - 1, -1, -1):
        layer = net.layers[i]
        if layer.act is not None:
            g = g * ste_mask(pre[i])
        grads[f"l{i + 1}.b"] = g.sum(axis=0)
        gw = g.T @ acts[i].reshape(len(acts[i]), -1)
        if layer.weight_q is not None:
            gw = gw * ste_mask(layer.w)
        grads[f"l{i + 1}.w"] = gw
        g = g @ wq[i]
    adam_step(optim, net.params(), grads, lr)
    return value, grads
