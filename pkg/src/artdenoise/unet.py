"""IC-U-Net, IC-U-Net++ and IC-U-Net-Attn denoisers.

Feature maps follow H[i, j] with shape (width * 2**i, t / 2**i) for encoder
level i = 1..depth and grid column j. Level 0 is the full-resolution stem map
(width, t); it feeds every output stage, which upsamples a level-1 map back to
t samples and projects it to the input channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .ops import ShapeError, mse_loss
from .params import ParamStore, glorot_uniform
from .seeding import rng_for
from .tensor import Tensor, as_tensor, concat, no_grad, relu

VARIANTS = ("base", "plus", "attn")


@dataclass
class UNetConfig:
    channels: int
    length: int
    depth: int = 4
    width: int = 32
    variant: str = "base"
    kernel: int = 3
    attn_bypass: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.variant == "attn" and self.channels % 2:
            raise ValueError("the attention variant needs an even channel count for its encoding")

    def level_width(self, i: int) -> int:
        return self.width * 2 ** i


def level_positional_encoding(d: int, t_len: int, d_base: int | None = None) -> np.ndarray:
    """Sinusoidal table: row 2q = sin(p / 10000^(2q/d_base)), row 2q+1 = cos(...)."""
    if d % 2:
        raise ShapeError(f"positional encoding needs an even width, got {d}")
    d_base = d if d_base is None else d_base
    p = np.arange(t_len, dtype=float)[None, :]
    q = np.arange(d // 2, dtype=float)[:, None]
    angle = p / 10000.0 ** (2 * q / d_base)
    pe = np.empty((d, t_len))
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle)
    return pe


def _bn_state(store: ParamStore, prefix: str) -> dict:
    return {k: store.buffers[f"{prefix}.{k}"] for k in ("running_mean", "running_var", "count")}


def grid_nodes(depth: int, variant: str) -> list[tuple[int, int]]:
    """Decoder nodes (i, j) in evaluation order."""
    if variant == "base":
        return [(depth - j + 1, j) for j in range(2, depth + 1)]
    return [(i, j) for j in range(2, depth + 1) for i in range(1, depth - j + 2)]


class UNetDenoiser:
    """1-D U-Net family; ``forward_heads`` returns one (base) or depth-1 (plus/attn) outputs."""

    def __init__(self, config: UNetConfig, seed: int = 0):
        self.config = config
        self.model_id = {"base": "icunet", "plus": "icunetpp", "attn": "icunet-attn"}[config.variant]
        self.store = ParamStore()
        self._build(rng_for(seed, "init"))

    # -- construction -----------------------------------------------------
    def _conv(self, name, cout, cin, k, rng, bias=False):
        self.store.add(f"{name}.w", glorot_uniform((cout, cin, k), rng))
        if bias:
            self.store.add(f"{name}.b", np.zeros(cout))

    def _bn(self, name, ch):
        self.store.add(f"{name}.g", np.ones(ch))
        self.store.add(f"{name}.b", np.zeros(ch))
        for k, v in ops.new_batch_norm_state(ch).items():
            self.store.add_buffer(f"{name}.{k}", v)

    def _build(self, rng):
        cfg = self.config
        K = cfg.kernel
        self._conv("stem", cfg.width, cfg.channels, 1, rng, bias=True)
        for i in range(1, cfg.depth + 1):
            w_in, w = cfg.level_width(i - 1), cfg.level_width(i)
            if cfg.variant == "attn":
                d = w_in
                self.store.add(f"attn{i}.wo", glorot_uniform((d, d), rng))
                self.store.add(f"attn{i}.bo", np.zeros(d))
            self._conv(f"enc{i}.conv1", w, w_in, K, rng)
            self._bn(f"enc{i}.bn1", w)
            self._conv(f"enc{i}.conv2", w, w, K, rng)
            self._bn(f"enc{i}.bn2", w)
        for i, j in grid_nodes(cfg.depth, cfg.variant):
            n_skips = 1 if cfg.variant == "base" else j - 1
            cin = cfg.level_width(i) * n_skips + cfg.level_width(i + 1)
            self._conv(f"dec{i}_{j}.conv", cfg.level_width(i), cin, K, rng)
            self._bn(f"dec{i}_{j}.bn", cfg.level_width(i))
        for j in self.head_columns():
            self._conv(f"head{j}.conv", cfg.width, cfg.width + cfg.level_width(1), K, rng)
            self._bn(f"head{j}.bn", cfg.width)
            self._conv(f"head{j}.out", cfg.channels, cfg.width, 1, rng, bias=True)

    def head_columns(self) -> list[int]:
        d = self.config.depth
        return [d] if self.config.variant == "base" else list(range(2, d + 1))

    # -- blocks -----------------------------------------------------------
    def _conv_bn_relu(self, h, name, bn_name, training):
        s = self.store
        h = ops.conv1d(h, s[f"{name}.w"], None, padding="same")
        h = ops.batch_norm(h, s[f"{bn_name}.g"], s[f"{bn_name}.b"], _bn_state(s, bn_name), training)
        return relu(h)

    def encoder_block(self, h, i: int, training: bool) -> Tensor:
        """Double conv/BN/ReLU doubling the width, then 2x max pooling."""
        if h.shape[-1] % 2:
            raise ShapeError(f"encoder level {i}: odd time length {h.shape[-1]}")
        h = self._conv_bn_relu(h, f"enc{i}.conv1", f"enc{i}.bn1", training)
        h = self._conv_bn_relu(h, f"enc{i}.conv2", f"enc{i}.bn2", training)
        return ops.maxpool1d(h)

    def decoder_block(self, deep, skips, name: str, training: bool) -> Tensor:
        """Upsample ``deep``, concatenate as [*skips, upsampled], then conv/BN/ReLU."""
        up = ops.upsample1d(deep)
        for s in skips:
            if s.shape[-1] != up.shape[-1]:
                raise ShapeError(f"{name}: skip length {s.shape[-1]} != upsampled {up.shape[-1]}")
        h = concat([*skips, up], axis=-2)
        return self._conv_bn_relu(h, f"{name}.conv", f"{name}.bn", training)

    def attn_prelayer(self, h, i: int, weights_out: list | None = None) -> Tensor:
        """Inter-feature self-attention (tokens = feature maps) with residual add."""
        d = h.shape[-2]
        att = ops.scaled_attention(h, h, h, scale=1.0 / np.sqrt(d), weights_out=weights_out)
        return h + ops.linear(att, self.store[f"attn{i}.wo"], self.store[f"attn{i}.bo"])

    def _use_attn(self) -> bool:
        return self.config.variant == "attn" and not self.config.attn_bypass

    # -- forward ----------------------------------------------------------
    def check_input(self, x: Tensor) -> None:
        cfg = self.config
        if x.ndim not in (2, 3) or x.shape[-2] != cfg.channels:
            raise ShapeError(f"expected (..., {cfg.channels}, t) input, got {x.shape}")
        if x.shape[-1] % 2 ** cfg.depth:
            raise ShapeError(f"time length {x.shape[-1]} not divisible by 2**{cfg.depth}")

    def features(self, x, training: bool = False, weights_out: list | None = None) -> dict:
        """All intermediate maps: keys (0, 0) for the stem and (i, j) for grid nodes."""
        cfg, s = self.config, self.store
        x = as_tensor(x)
        self.check_input(x)
        maps: dict[tuple[int, int], Tensor] = {}
        if self._use_attn():
            x = x + level_positional_encoding(cfg.channels, x.shape[-1])
        h0 = ops.conv1d(x, s["stem.w"], s["stem.b"], padding="same")
        maps[(0, 0)] = h0
        h = h0
        for i in range(1, cfg.depth + 1):
            if self._use_attn():
                if i > 1:
                    h = h + level_positional_encoding(h.shape[-2], h.shape[-1])
                h = self.attn_prelayer(h, i, weights_out)
            h = self.encoder_block(h, i, training)
            maps[(i, 1)] = h
        for i, j in grid_nodes(cfg.depth, cfg.variant):
            if cfg.variant == "base":
                skips, deep = [maps[(i, 1)]], maps[(i + 1, j - 1)]
            else:
                skips, deep = [maps[(i, k)] for k in range(1, j)], maps[(i + 1, j - 1)]
            maps[(i, j)] = self.decoder_block(deep, skips, f"dec{i}_{j}", training)
        return maps

    def forward_heads(self, x, training: bool = False, weights_out: list | None = None) -> list[Tensor]:
        maps = self.features(x, training, weights_out)
        s = self.store
        outs = []
        for j in self.head_columns():
            h = self.decoder_block(maps[(1, j)], [maps[(0, 0)]], f"head{j}", training)
            outs.append(ops.conv1d(h, s[f"head{j}.out.w"], s[f"head{j}.out.b"], padding="same"))
        return outs

    def forward(self, x, training: bool = False) -> Tensor:
        return self.forward_heads(x, training)[-1]

    def loss(self, x, target, training: bool = True) -> Tensor:
        """MSE for one head; arithmetic mean of the head MSEs under deep supervision."""
        heads = self.forward_heads(x, training)
        losses = [mse_loss(z, target) for z in heads]
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        return total * (1.0 / len(losses))

    def predict(self, x, reference=None) -> np.ndarray:
        with no_grad():
            return self.forward(x, training=False).data

    def config_dict(self) -> dict:
        return asdict(self.config)
