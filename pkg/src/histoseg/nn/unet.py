"""Configurable micro U-Net: encoder/decoder with skip concatenations.

Each level applies two same-padded 3x3 convolutions with rectifier
activations. Downsampling is 2x2 max pooling; upsampling is nearest-neighbor
2x followed by a 3x3 convolution. A final 1x1 convolution maps to class
logits and the forward pass ends in a per-pixel channel softmax.

Desk-scale defaults (depth 2, 8 base filters, 32x32 input) keep every
gradient check and training run fast on a CPU; full-scale settings are just
configuration.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BadConfig, MissingGrad, ShapeMismatch
from .tensor import (
    Tensor,
    concat_channels,
    conv2d,
    maxpool2x2,
    relu,
    softmax_channels,
    upsample_nearest2x,
)

CHECKPOINT_MAGIC = b"HSN1"


@dataclass
class NetworkConfig:
    depth: int = 2
    base_filters: int = 8
    in_channels: int = 3
    n_classes: int = 4
    input_side: int = 32
    kernel: int = 3  # fixed; present so checkpoints carry it explicitly

    def validate(self) -> None:
        if self.depth < 1:
            raise BadConfig(f"depth must be >= 1, got {self.depth}")
        if self.base_filters < 1 or self.in_channels < 1 or self.n_classes < 2:
            raise BadConfig("base_filters/in_channels >= 1 and n_classes >= 2 required")
        if self.kernel != 3:
            raise BadConfig("only 3x3 level kernels are supported")
        factor = 2**self.depth
        if self.input_side < factor or self.input_side % factor:
            raise BadConfig(
                f"input side {self.input_side} is not divisible by 2^depth = {factor}"
            )


class Network:
    """Named parameter collection plus the fixed U-Net topology."""

    def __init__(self, config: NetworkConfig, parameters: dict[str, Tensor]):
        self.config = config
        self.parameters = parameters

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters.values())

    def zero_grads(self) -> None:
        for p in self.parameters.values():
            p.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; parameters the loss never touched get zeros."""
        return {
            name: (np.zeros_like(p.data) if p.grad is None else p.grad)
            for name, p in self.parameters.items()
        }

    def _block(self, x: Tensor, prefix: str) -> Tensor:
        p = self.parameters
        x = relu(conv2d(x, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"]))
        x = relu(conv2d(x, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"]))
        return x

    def forward(self, batch) -> Tensor:
        """Map a [N, in_ch, S, S] batch to [N, n_classes, S, S] probabilities."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        cfg = self.config
        if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
            raise ShapeMismatch(
                f"expected [N, {cfg.in_channels}, S, S] batch, got {x.data.shape}"
            )
        side = x.data.shape[2]
        if x.data.shape[3] != side or side % (2**cfg.depth):
            raise ShapeMismatch(
                f"spatial dims {x.data.shape[2:]} must be square and divisible by {2 ** cfg.depth}"
            )
        p = self.parameters
        skips: list[Tensor] = []
        for i in range(cfg.depth):
            x = self._block(x, f"enc{i}")
            skips.append(x)
            x = maxpool2x2(x)
        x = self._block(x, "bottleneck")
        for i in reversed(range(cfg.depth)):
            x = upsample_nearest2x(x)
            x = conv2d(x, p[f"dec{i}.up.w"], p[f"dec{i}.up.b"])
            x = concat_channels([skips[i], x])
            x = self._block(x, f"dec{i}")
        logits = conv2d(x, p["head.w"], p["head.b"])
        return softmax_channels(logits)


def _conv_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in their fixed initialization order."""
    shapes: list[tuple[str, tuple[int, ...]]] = []

    def block(prefix: str, c_in: int, c_out: int) -> None:
        shapes.append((f"{prefix}.conv1.w", (c_out, c_in, 3, 3)))
        shapes.append((f"{prefix}.conv1.b", (c_out,)))
        shapes.append((f"{prefix}.conv2.w", (c_out, c_out, 3, 3)))
        shapes.append((f"{prefix}.conv2.b", (c_out,)))

    c_in = cfg.in_channels
    for i in range(cfg.depth):
        c_out = cfg.base_filters * 2**i
        block(f"enc{i}", c_in, c_out)
        c_in = c_out
    block("bottleneck", c_in, cfg.base_filters * 2**cfg.depth)
    for i in reversed(range(cfg.depth)):
        c_hi = cfg.base_filters * 2 ** (i + 1)
        c_lo = cfg.base_filters * 2**i
        shapes.append((f"dec{i}.up.w", (c_lo, c_hi, 3, 3)))
        shapes.append((f"dec{i}.up.b", (c_lo,)))
        block(f"dec{i}", 2 * c_lo, c_lo)
    shapes.append(("head.w", (cfg.n_classes, cfg.base_filters, 1, 1)))
    shapes.append(("head.b", (cfg.n_classes,)))
    return shapes


def build_unet(cfg: NetworkConfig, seed: int) -> Network:
    """Construct a network with He-style fan-in initialization from a seeded PRNG."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in _conv_shapes(cfg):
        if name.endswith(".b"):
            params[name] = Tensor(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            scale = np.sqrt(2.0 / fan_in)
            params[name] = Tensor(rng.standard_normal(shape) * scale)
    return Network(cfg, params)


def sgd_step(net: Network, grads: dict[str, np.ndarray], lr: float) -> Network:
    """Plain gradient step p <- p - lr * g, in place; returns the network."""
    for name, p in net.parameters.items():
        if name not in grads:
            raise MissingGrad(f"no gradient for parameter {name}")
        p.data -= lr * grads[name]
    return net


class MomentumSGD:
    """SGD with classical momentum: v <- mu v + g, p <- p - lr v."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, net: Network, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in net.parameters.items():
            if name not in grads:
                raise MissingGrad(f"no gradient for parameter {name}")
            v = self.velocity.get(name)
            v = grads[name].copy() if v is None else self.momentum * v + grads[name]
            self.velocity[name] = v
            p.data -= lr * v


def save_checkpoint(net: Network, path: str | Path) -> None:
    """Write the HSN1 checkpoint: config header plus named float32 blocks."""
    cfg = net.config
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack(
        "<5I", cfg.depth, cfg.base_filters, cfg.in_channels, cfg.n_classes, cfg.input_side
    )
    out += struct.pack("<I", len(net.parameters))
    for name, p in net.parameters.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", p.data.ndim)
        out += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        out += p.data.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadConfig(f"{path}: not a HSN1 checkpoint")
    offset = 4
    depth, base, in_ch, n_classes, side = struct.unpack_from("<5I", raw, offset)
    offset += 20
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    cfg = NetworkConfig(depth, base, in_ch, n_classes, side)
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape))
        values = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        params[name] = Tensor(values.reshape(shape))
    return Network(cfg, params)
