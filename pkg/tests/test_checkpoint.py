import struct

import numpy as np
import pytest

from ana import quantizer as qz
from ana.engine import Network, conv_layer, dense_layer, mlp, quantized_inference
from ana.engine.checkpoint import MAGIC, CheckpointError, dumps, load, loads, save


def _net():
    rng = np.random.default_rng(0)
    net = mlp((5, 6, 4, 3), rng, qz.ternary(), batchnorm=True, noise_family="triangular")
    net.layers[0].bn.running_mean = rng.normal(size=6)
    net.layers[0].bn.running_var = rng.uniform(0.5, 2, size=6)
    return net


def _conv_net():
    rng = np.random.default_rng(1)
    c = conv_layer(1, 2, 3, rng, padding=1, pool=2, weight_q=qz.ternary(), act=qz.ternary())
    d = dense_layer(2 * 3 * 3, 4, rng, weight_q=qz.ternary())
    return Network([c, d])


def test_roundtrip_bytes_and_outputs(tmp_path):
    net = _net()
    data = dumps(net, epoch=17)
    assert data[:4] == MAGIC
    back, epoch = loads(data)
    assert epoch == 17
    assert dumps(back, 17) == data
    x = np.random.default_rng(2).normal(size=(50, 5))
    np.testing.assert_array_equal(quantized_inference(back, x), quantized_inference(net, x))
    np.testing.assert_array_equal(back.predict(x, 0.2, 0.2), net.predict(x, 0.2, 0.2))
    assert back.layers[0].noise_family == "triangular"
    save(net, tmp_path / "m.ana", 3)
    again, e = load(tmp_path / "m.ana")
    assert e == 3 and dumps(again, 3) == dumps(net, 3)


def test_conv_roundtrip():
    net = _conv_net()
    back, _ = loads(dumps(net))
    x = np.random.default_rng(3).normal(size=(4, 1, 6, 6))
    np.testing.assert_array_equal(quantized_inference(back, x), quantized_inference(net, x))
    assert back.layers[0].linear.padding == 1 and back.layers[0].pool.kernel == 2


def test_header_layout():
    data = dumps(_net(), epoch=5)
    epoch, n_layers = struct.unpack("<QI", data[4:16])
    assert (epoch, n_layers) == (5, 3)


def test_bad_magic():
    data = dumps(_net())
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"XXXX" + data[4:])


@pytest.mark.parametrize("cut", [3, 10, 40, -1])
def test_truncated(cut):
    data = dumps(_net())
    with pytest.raises(CheckpointError, match="truncated"):
        loads(data[:cut])


def test_trailing_bytes():
    with pytest.raises(CheckpointError, match="trailing"):
        loads(dumps(_net()) + b"\0")
