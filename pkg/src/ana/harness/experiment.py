"""Training orchestration: datasets, network construction, metric CSV."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import quantizer as qz
from ..engine import checkpoint
from ..engine.layers import conv_layer, dense_layer
from ..engine.network import Network, evaluate, evaluate_quantized, train_epoch
from ..engine.optim import AdamState
from ..schedule import AnnealPolicy
from .config import ConfigError, ExperimentConfig
from .data import Dataset, load_cifar_binary, load_mnist, synth_lipschitz

log = logging.getLogger(__name__)

QUANTIZERS = {"ternary": qz.ternary, "binary": qz.sign, "identity": lambda: None}


def get_quantizer(name: str):
    if name not in QUANTIZERS:
        raise ConfigError(f"unknown quantizer {name!r}; expected one of {sorted(QUANTIZERS)}")
    return QUANTIZERS[name]()


def build_network(cfg: ExperimentConfig, input_shape: tuple, rng: np.random.Generator) -> Network:
    q = get_quantizer(cfg.model.quantizer)
    tokens = [t.strip() for t in cfg.model.layers.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("model.layers is empty")
    shape = tuple(input_shape)
    layers = []
    for i, tok in enumerate(tokens):
        last = i == len(tokens) - 1
        act = None if last else q
        parts = tok.split(":")
        try:
            if parts[0] == "dense":
                width = int(parts[1])
                layers.append(dense_layer(int(np.prod(shape)), width, rng, weight_q=q, act=act,
                                          batchnorm=cfg.model.batchnorm,
                                          init_range=cfg.model.init_range))
                shape = (width,)
            elif parts[0] == "conv":
                if len(shape) != 3:
                    raise ConfigError(f"conv layer {tok!r} needs a (C, H, W) input, got {shape}")
                opts = {p[0]: int(p[1:]) for p in parts[2:] if p[0] in "kps" and not p.startswith("pool")}
                pool = next((int(p[4:]) for p in parts[2:] if p.startswith("pool")), None)
                layer = conv_layer(shape[0], int(parts[1]), opts.get("k", 3), rng,
                                   stride=opts.get("s", 1), padding=opts.get("p", 0), pool=pool,
                                   weight_q=q, act=act, batchnorm=cfg.model.batchnorm,
                                   init_range=cfg.model.init_range)
                shape = layer.linear.out_shape(shape)
                if layer.pool is not None:
                    shape = layer.pool.out_shape(shape)
                layers.append(layer)
            else:
                raise ConfigError(f"unknown layer type in {tok!r}")
        except (IndexError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad layer spec {tok!r}") from None
    if layers[-1].linear.kind != "dense":
        raise ConfigError("the last layer must be dense")
    return Network(layers)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.name == "mnist":
        train = load_mnist(d.path, "train", d.mean, d.std)
        val = load_mnist(d.path, "test", d.mean, d.std)
    elif d.name == "cifar":
        p = Path(d.path)
        if p.is_dir():
            files = sorted(p.glob("data_batch_*.bin"))
            parts = [load_cifar_binary(f) for f in files]
            train = Dataset(np.concatenate([t.x for t in parts]), np.concatenate([t.y for t in parts]), "cifar")
            val = load_cifar_binary(p / "test_batch.bin")
        else:
            train = val = load_cifar_binary(p)
    else:
        try:
            train = synth_lipschitz(d.name, d.n_samples, cfg.train.seed)
            val = synth_lipschitz(d.name, d.n_samples, cfg.train.seed + 1)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return train.subset(d.train_limit), val.subset(d.val_limit)


def make_policy(cfg: ExperimentConfig, num_layers: int) -> AnnealPolicy:
    p = cfg.policy
    try:
        return AnnealPolicy(p.mode, p.forward_decay, p.backward_decay, p.sigma_init, p.period, num_layers)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def lr_at(cfg: ExperimentConfig, epoch: int) -> float:
    return cfg.optim.lr if epoch < cfg.optim.lr_drop_epoch else cfg.optim.lr_drop


def csv_columns(num_layers: int) -> list[str]:
    cols = ["epoch", "train_loss", "train_acc", "val_acc_noisy", "val_acc_quantized"]
    cols += [f"sigma_f_l{l}" for l in range(1, num_layers + 1)]
    cols += [f"sigma_b_l{l}" for l in range(1, num_layers + 1)]
    return cols


@dataclass
class ExperimentResult:
    rows: list
    csv_text: str
    checkpoint: bytes
    network: Network

    @property
    def final_quantized_accuracy(self) -> float:
        return self.rows[-1]["val_acc_quantized"]


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None,
                   datasets: Optional[tuple[Dataset, Dataset]] = None) -> ExperimentResult:
    """Train per the config; validation is always also run with noise removed.

    Writes ``metrics.csv`` and ``model.ana`` into ``out_dir`` when given.
    Only weight initialization and data shuffling consume the seed.
    """
    cfg.validate(check_paths=datasets is None)
    train, val = datasets if datasets is not None else load_datasets(cfg)
    rng = np.random.default_rng(cfg.train.seed)
    net = build_network(cfg, train.x.shape[1:], rng)
    policy = make_policy(cfg, net.num_layers)
    optim = AdamState()
    cols = csv_columns(net.num_layers)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    rows = []
    for epoch in range(cfg.train.epochs):
        order = rng.permutation(len(train))
        m = train_epoch(net, train.x, train.y, policy, optim, epoch, lr=lr_at(cfg, epoch),
                        batch_size=cfg.optim.batch_size, loss=cfg.train.loss, order=order)
        if not math.isfinite(m["loss"]):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        sig_f = policy.sigmas(epoch, "forward")
        sig_b = policy.sigmas(epoch, "backward")
        row = {
            "epoch": epoch,
            "train_loss": m["loss"],
            "train_acc": m["accuracy"],
            "val_acc_noisy": evaluate(net, val.x, val.y, sig_f, sig_f),
            "val_acc_quantized": evaluate_quantized(net, val.x, val.y),
        }
        row.update({f"sigma_f_l{l}": s for l, s in enumerate(sig_f, 1)})
        row.update({f"sigma_b_l{l}": s for l, s in enumerate(sig_b, 1)})
        rows.append(row)
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        log.info("epoch %d loss %.4f train %.4f val(noisy) %.4f val(quant) %.4f", epoch,
                 row["train_loss"], row["train_acc"], row["val_acc_noisy"], row["val_acc_quantized"])
    ckpt = checkpoint.dumps(net, cfg.train.epochs)
    result = ExperimentResult(rows, buf.getvalue(), ckpt, net)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(result.csv_text)
        (out / "model.ana").write_bytes(ckpt)
    return result
