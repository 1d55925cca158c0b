"""U-Net style encoder-decoder that fuses stacked synchronized grids.

Encoder block k (k = 0..d-1) runs two 3x3 conv + batch-norm + ReLU layers
with ``f * 2**k`` channels and max-pools 2x2 afterwards, except for the last
block: its output is the bottleneck (so a 128 grid with d = 3 has a 32x32
latent) and it is followed by dropout. Each of the d-1 decoder blocks
upsamples x2, applies a 2x2 conv halving the channels, concatenates the
encoder output of the same resolution and runs two 3x3 conv + batch-norm
layers with linear activation. Two more 3x3 conv + batch-norm layers reduce
to the class count, then a softmax.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..grid import NUM_CLASSES
from .layers import BatchNorm, Conv2D, Dropout, MaxPool2, ReLU, Upsample2, softmax, softmax_backward
from .optim import RMSprop


@dataclass(frozen=True)
class EDConfig:
    depth: int = 2
    base_features: int = 16
    in_channels: int = 2 * NUM_CLASSES
    out_channels: int = NUM_CLASSES
    grid_size: int = 64
    dropout_rate: float = 0.5
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.depth < 1 or self.base_features < 1:
            raise ValueError("depth and base_features must be positive")
        if self.grid_size % (2**self.depth):
            raise ValueError(f"grid_size {self.grid_size} not divisible by 2**{self.depth}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @classmethod
    def for_inputs(cls, n_sensors: int, n_frames: int, **kw) -> "EDConfig":
        return cls(in_channels=n_sensors * n_frames * NUM_CLASSES, **kw)

    @property
    def latent_size(self) -> int:
        return self.grid_size // 2 ** (self.depth - 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "EDConfig":
        return cls(**json.loads(s))


def reduction_width(cfg: EDConfig) -> int:
    return max(cfg.out_channels, cfg.base_features // 2)


class EDNetwork:
    def __init__(self, config: EDConfig):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng([config.seed, 1])
        d, f = config.depth, config.base_features

        self.encoder = []
        c_prev = config.in_channels
        for k in range(d):
            c = f * 2**k
            block = [Conv2D(c_prev, c, 3, rng, dtype), BatchNorm(c, dtype), ReLU(),
                     Conv2D(c, c, 3, rng, dtype), BatchNorm(c, dtype), ReLU()]
            self.encoder.append(block)
            c_prev = c
        self.pools = [MaxPool2() for _ in range(d - 1)]
        self.dropout = Dropout(config.dropout_rate)

        self.decoder = []
        for j in range(d - 1):
            c_in = f * 2 ** (d - 1 - j)
            c = c_in // 2
            up = [Upsample2(), Conv2D(c_in, c, 2, rng, dtype)]
            convs = [Conv2D(2 * c, c, 3, rng, dtype), BatchNorm(c, dtype),
                     Conv2D(c, c, 3, rng, dtype), BatchNorm(c, dtype)]
            self.decoder.append((up, convs))
        mid = reduction_width(config)
        self.head = [Conv2D(f, mid, 3, rng, dtype), BatchNorm(mid, dtype),
                     Conv2D(mid, config.out_channels, 3, rng, dtype), BatchNorm(config.out_channels, dtype)]
        self.rms = RMSprop()
        self._audit()

    # -- bookkeeping -----------------------------------------------------

    def layers(self):
        """All layers in a fixed order (defines parameter and checkpoint order)."""
        for block in self.encoder:
            yield from block
        for up, convs in self.decoder:
            yield from up
            yield from convs
        yield from self.head

    def named_params(self):
        for i, layer in enumerate(self.layers()):
            for key in sorted(layer.params):
                yield f"{i}.{type(layer).__name__}.{key}", layer, key

    def named_buffers(self):
        for i, layer in enumerate(self.layers()):
            for key in sorted(getattr(layer, "buffers", {})):
                yield f"{i}.{type(layer).__name__}.{key}", layer, key

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self.named_params()}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def _audit(self):
        cfg = self.config
        size = cfg.grid_size
        enc_sizes = []
        c_prev = cfg.in_channels
        for k, block in enumerate(self.encoder):
            conv = block[0]
            assert conv.c_in == c_prev and conv.params["w"].shape == (3, 3, c_prev, cfg.base_features * 2**k)
            c_prev = conv.c_out
            enc_sizes.append(size)
            if k < cfg.depth - 1:
                size //= 2
        assert size == cfg.latent_size
        for j, (up, convs) in enumerate(self.decoder):
            size *= 2
            skip = enc_sizes[cfg.depth - 2 - j]
            if skip != size:
                raise AssertionError(f"skip connection size {skip} != decoder size {size}")
            assert convs[0].c_in == 2 * up[1].c_out
        assert size == cfg.grid_size

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """(B, H, W, C_in) stacked one-hot grids -> (B, H, W, F) class probabilities."""
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.grid_size, cfg.grid_size, cfg.in_channels):
            raise ValueError(
                f"input shape {x.shape} does not match (B, {cfg.grid_size}, {cfg.grid_size}, {cfg.in_channels})"
            )
        h = x.astype(cfg.dtype, copy=False)
        skips = []
        for k, block in enumerate(self.encoder):
            for layer in block:
                h = layer.forward(h, train)
            if k < cfg.depth - 1:
                skips.append(h)
                h = self.pools[k].forward(h, train)
        h = self.dropout.forward(h, train, rng if rng is not None else self.dropout_rng)
        self._split = []
        for up, convs in self.decoder:
            for layer in up:
                h = layer.forward(h, train)
            self._split.append(h.shape[-1])
            h = np.concatenate([h, skips.pop()], axis=-1)
            for layer in convs:
                h = layer.forward(h, train)
        for layer in self.head:
            h = layer.forward(h, train)
        self.probs = softmax(h)
        return self.probs

    def backward(self, dprobs: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of all parameters given d(loss)/d(probabilities) of the last forward."""
        cfg = self.config
        g = softmax_backward(self.probs, dprobs.astype(cfg.dtype, copy=False))
        for layer in reversed(self.head):
            g = layer.backward(g)
        skip_grads = []
        for (up, convs), c_up in zip(reversed(self.decoder), reversed(self._split)):
            for layer in reversed(convs):
                g = layer.backward(g)
            skip_grads.append(g[..., c_up:])
            g = g[..., :c_up]
            for layer in reversed(up):
                g = layer.backward(g)
        g = self.dropout.backward(g)
        for k in reversed(range(cfg.depth)):
            if k < cfg.depth - 1:
                g = self.pools[k].backward(g) + skip_grads.pop()
            for layer in reversed(self.encoder[k]):
                g = layer.backward(g)
        return {name: layer.grads[key] for name, layer, key in self.named_params()}

    def predict(self, x: np.ndarray, batch_size: int = 16) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0,) + x.shape[1:3] + (self.config.out_channels,))


def build(config: EDConfig) -> EDNetwork:
    return EDNetwork(config)
