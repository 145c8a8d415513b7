"""ART: encoder/decoder transformer denoiser with single-pass (non-autoregressive) decoding."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .ops import ShapeError, mse_loss
from .params import ParamStore, glorot_uniform
from .seeding import rng_for
from .tensor import Tensor, as_tensor, no_grad, relu
from .unet import level_positional_encoding

TARGET_MODES = ("clean", "null", "noise")
SITES = ("enc_self", "dec_self", "dec_cross")


class MissingTargetError(ValueError):
    """The clean target sequence was requested without a reference signal."""


@dataclass
class ArtConfig:
    channels: int
    length: int
    d_model: int = 128
    d_ff: int = 512
    heads: int = 8
    layers: int = 2
    target_mode: str = "noise"
    shared_embedding: bool = False
    logsoftmax_axis: str = "channel"
    causal: bool = False  # test-only switch; the decoder never masks in normal use

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the positional encoding")
        if self.d_ff <= self.d_model:
            raise ValueError("d_ff must exceed d_model")
        if self.target_mode not in TARGET_MODES:
            raise ValueError(f"target_mode must be one of {TARGET_MODES}")
        if self.logsoftmax_axis not in ("channel", "time"):
            raise ValueError("logsoftmax_axis must be 'channel' or 'time'")


def art_positional_encoding(d_model: int, t: int) -> np.ndarray:
    return level_positional_encoding(d_model, t, d_base=d_model)


def select_target(mode: str, x, reference=None):
    """Decoder input: the pseudo-clean reference, a zero matrix, or the noisy input."""
    if mode == "clean":
        if reference is None:
            raise MissingTargetError("target mode 'clean' needs a reference signal")
        return as_tensor(reference)
    if mode == "null":
        return Tensor(np.zeros(as_tensor(x).shape))
    if mode == "noise":
        return as_tensor(x)
    raise ValueError(f"unknown target mode {mode!r}")


class ArtDenoiser:
    model_id = "art"

    def __init__(self, config: ArtConfig, seed: int = 0):
        self.config = config
        self.store = ParamStore()
        self._build(rng_for(seed, "init"))

    # -- construction -----------------------------------------------------
    def _linear(self, name, dout, din, rng, bias=True):
        self.store.add(f"{name}.w", glorot_uniform((dout, din), rng))
        if bias:
            self.store.add(f"{name}.b", np.zeros(dout))

    def _ln(self, name, d):
        self.store.add(f"{name}.g", np.ones(d))
        self.store.add(f"{name}.b", np.zeros(d))

    def _mha(self, name, d, rng):
        for k in ops.MHA_KEYS:
            if k.startswith("w"):
                self.store.add(f"{name}.{k}", glorot_uniform((d, d), rng))
            else:
                self.store.add(f"{name}.{k}", np.zeros(d))

    def _build(self, rng):
        cfg = self.config
        d, c = cfg.d_model, cfg.channels
        self._linear("enc_embed", d, c, rng)
        if not cfg.shared_embedding:
            self._linear("dec_embed", d, c, rng)
        for layer in range(cfg.layers):
            p = f"enc{layer}"
            self._mha(f"{p}.self", d, rng)
            self._ln(f"{p}.ln1", d)
            self._linear(f"{p}.ff1", cfg.d_ff, d, rng)
            self._linear(f"{p}.ff2", d, cfg.d_ff, rng)
            self._ln(f"{p}.ln2", d)
        for layer in range(cfg.layers):
            p = f"dec{layer}"
            self._mha(f"{p}.self", d, rng)
            self._ln(f"{p}.ln1", d)
            self._mha(f"{p}.cross", d, rng)
            self._ln(f"{p}.ln2", d)
            self._linear(f"{p}.ff1", cfg.d_ff, d, rng)
            self._linear(f"{p}.ff2", d, cfg.d_ff, rng)
            self._ln(f"{p}.ln3", d)
        self._linear("recon", c, d, rng)

    # -- pieces -----------------------------------------------------------
    def _mha_params(self, name):
        return {k: self.store[f"{name}.{k}"] for k in ops.MHA_KEYS}

    def _add_norm(self, x, sub, name):
        return ops.layer_norm(x + sub, self.store[f"{name}.g"], self.store[f"{name}.b"])

    def _feed_forward(self, x, name):
        s = self.store
        h = relu(ops.linear(x, s[f"{name}.ff1.w"], s[f"{name}.ff1.b"]))
        return ops.linear(h, s[f"{name}.ff2.w"], s[f"{name}.ff2.b"])

    def expand_conv(self, x, which: str = "enc") -> Tensor:
        """Pointwise (1x1) channel expansion c -> d_model."""
        name = "enc_embed" if which == "enc" or self.config.shared_embedding else "dec_embed"
        return ops.linear(x, self.store[f"{name}.w"], self.store[f"{name}.b"])

    def embed(self, x, which: str) -> Tensor:
        h = self.expand_conv(x, which)
        return h + art_positional_encoding(self.config.d_model, h.shape[-1])

    def encoder_stack(self, e0, weights: dict | None = None) -> Tensor:
        h = as_tensor(e0)
        for layer in range(self.config.layers):
            p = f"enc{layer}"
            out = self._site(weights, layer, "enc_self")
            a = ops.multi_head_attention(h, h, self._mha_params(f"{p}.self"), self.config.heads,
                                         weights_out=out)
            h = self._add_norm(h, a, f"{p}.ln1")
            h = self._add_norm(h, self._feed_forward(h, p), f"{p}.ln2")
        return h

    def decoder_stack(self, d0, memory, weights: dict | None = None) -> Tensor:
        cfg = self.config
        h = as_tensor(d0)
        for layer in range(cfg.layers):
            p = f"dec{layer}"
            out = self._site(weights, layer, "dec_self")
            a = ops.multi_head_attention(h, h, self._mha_params(f"{p}.self"), cfg.heads,
                                         causal=cfg.causal, weights_out=out)
            h = self._add_norm(h, a, f"{p}.ln1")
            out = self._site(weights, layer, "dec_cross")
            a = ops.multi_head_attention(h, memory, self._mha_params(f"{p}.cross"), cfg.heads,
                                         weights_out=out)
            h = self._add_norm(h, a, f"{p}.ln2")
            h = self._add_norm(h, self._feed_forward(h, p), f"{p}.ln3")
        return h

    @staticmethod
    def _site(weights, layer, site):
        if weights is None:
            return None
        return weights.setdefault((layer, site), [])

    def reconstructor(self, h) -> Tensor:
        """Linear d_model -> c, LogSoftmax, then per-channel z-score over time."""
        s = self.store
        y = ops.linear(h, s["recon.w"], s["recon.b"])
        y = ops.log_softmax(y, axis=-2 if self.config.logsoftmax_axis == "channel" else -1)
        return ops.zscore(y, axis=-1)

    # -- model API --------------------------------------------------------
    def check_input(self, x: Tensor) -> None:
        if x.ndim not in (2, 3) or x.shape[-2] != self.config.channels:
            raise ShapeError(f"expected (..., {self.config.channels}, t) input, got {x.shape}")

    def forward(self, x, reference=None, weights: dict | None = None, training: bool = False) -> Tensor:
        """One encoder pass and one decoder pass produce every output sample at once."""
        x = as_tensor(x)
        self.check_input(x)
        target = select_target(self.config.target_mode, x, reference)
        if target.shape != x.shape:
            raise ShapeError(f"target shape {target.shape} != input shape {x.shape}")
        memory = self.encoder_stack(self.embed(x, "enc"), weights)
        h = self.decoder_stack(self.embed(target, "dec"), memory, weights)
        return self.reconstructor(h)

    def forward_heads(self, x, training: bool = False, reference=None) -> list[Tensor]:
        return [self.forward(x, reference=reference, training=training)]

    def loss(self, x, target, training: bool = True) -> Tensor:
        return mse_loss(self.forward(x, reference=target, training=training), target)

    def predict(self, x, reference=None) -> np.ndarray:
        with no_grad():
            return self.forward(x, reference=reference).data

    def export_attention(self, x, reference=None) -> dict[tuple[int, int, str], np.ndarray]:
        """Softmaxed score matrices keyed (layer, head, site) for one unbatched segment."""
        x = as_tensor(x)
        if x.ndim != 2:
            raise ShapeError("export_attention expects a single (c, t) segment")
        weights: dict = {}
        with no_grad():
            self.forward(x, reference=reference, weights=weights)
        out = {}
        for (layer, site), mats in weights.items():
            a = mats[0]
            for head in range(a.shape[0]):
                out[(layer, head, site)] = a[head]
        return out

    def config_dict(self) -> dict:
        return asdict(self.config)
