"""Optimizers, training loop, loss curves and binary checkpoints."""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .art import ArtConfig, ArtDenoiser
from .params import ParamStore
from .seeding import rng_for
from .tensor import no_grad
from .unet import UNetConfig, UNetDenoiser

MODEL_IDS = ("icunet", "icunetpp", "icunet-attn", "art")
CKPT_MAGIC = b"ARTC"
CKPT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """Loss became NaN/inf; carries where it happened."""

    def __init__(self, epoch: int, batch: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}, lr {lr:g}")
        self.epoch, self.batch, self.lr, self.loss = epoch, batch, lr, loss


class CorruptCheckpoint(ValueError):
    pass


class UnsupportedVersion(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    lr: float = 0.01
    batch_size: int | None = None  # None: 32 for ART, 128 for the U-Nets
    optimizer: str | None = None  # None: adam for ART, sgd for the U-Nets
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 5.0
    lr_decay_every: int = 0  # 0 keeps the rate constant
    lr_decay_factor: float = 0.5

    def resolved(self, model_id: str) -> "TrainConfig":
        cfg = TrainConfig(**self.__dict__)
        if cfg.batch_size is None:
            cfg.batch_size = 32 if model_id == "art" else 128
        if cfg.optimizer is None:
            cfg.optimizer = "adam" if model_id == "art" else "sgd"
        if cfg.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
        if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.lr <= 0:
            raise ValueError("epochs, batch size and learning rate must be positive")
        return cfg

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def clip_grad_norm(store: ParamStore, max_norm: float | None) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the raw norm."""
    grads = [p.grad for p in store.params.values() if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.0) -> None:
    store.step += 1
    for name, p in store.items():
        if p.grad is None:
            continue
        if momentum:
            buf = store.slots.setdefault(f"momentum/{name}", np.zeros_like(p.data))
            buf *= momentum
            buf += p.grad
            p.data -= lr * buf
        else:
            p.data -= lr * p.grad


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    store.step += 1
    t = store.step
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    for name, p in store.items():
        if p.grad is None:
            continue
        m = store.slots.setdefault(f"adam_m/{name}", np.zeros_like(p.data))
        v = store.slots.setdefault(f"adam_v/{name}", np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * p.grad
        v *= beta2
        v += (1 - beta2) * p.grad ** 2
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# loss curve
# ---------------------------------------------------------------------------

@dataclass
class LossCurve:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)

    def append(self, train: float, val: float, test: float) -> None:
        self.train_mse.append(train)
        self.val_mse.append(val)
        self.test_mse.append(test)

    def __len__(self) -> int:
        return len(self.train_mse)

    def to_csv(self) -> str:
        lines = ["epoch,train_mse,val_mse,test_mse"]
        for e, row in enumerate(zip(self.train_mse, self.val_mse, self.test_mse), start=1):
            lines.append(",".join([str(e)] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "LossCurve":
        curve = cls()
        for line in Path(path).read_text().splitlines()[1:]:
            _, a, b, c = line.split(",")
            curve.append(float(a), float(b), float(c))
        return curve


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def build_model(model_id: str, config: dict, seed: int = 0):
    if model_id == "art":
        return ArtDenoiser(ArtConfig(**config), seed=seed)
    variant = {"icunet": "base", "icunetpp": "plus", "icunet-attn": "attn"}.get(model_id)
    if variant is None:
        raise ValueError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")
    config = dict(config)
    config["variant"] = variant
    return UNetDenoiser(UNetConfig(**config), seed=seed)


def evaluate(model, noisy: np.ndarray, clean: np.ndarray, batch_size: int = 64) -> float:
    """Mean squared error of eval-mode predictions (no batch-norm statistics change)."""
    if len(noisy) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for s in range(0, len(noisy), batch_size):
            x, y = noisy[s:s + batch_size], clean[s:s + batch_size]
            z = model.predict(x, reference=y)
            total += float(np.sum((z - y) ** 2))
    return total / clean.size


def denoise_array(model, noisy: np.ndarray, batch_size: int = 64, reference=None) -> np.ndarray:
    out = []
    for s in range(0, len(noisy), batch_size):
        ref = None if reference is None else reference[s:s + batch_size]
        out.append(model.predict(noisy[s:s + batch_size], reference=ref))
    return np.concatenate(out) if out else np.empty_like(noisy)


@dataclass
class TrainResult:
    curve: LossCurve
    best_epoch: int
    best_val: float


def train(model, data, cfg: TrainConfig, seed: int = 0, log=None) -> TrainResult:
    """Mini-batch training; the model ends holding the best-validation weights.

    ``data`` provides ``subset(name) -> (noisy, clean)`` for train/val/test.
    """
    cfg = cfg.resolved(model.model_id)
    x_tr, y_tr = data.subset("train")
    x_va, y_va = data.subset("val")
    x_te, y_te = data.subset("test")
    if len(x_tr) == 0:
        raise ValueError("empty training split")
    store = model.store
    rng = rng_for(seed, "shuffle")
    curve = LossCurve()
    best_val, best_epoch, best = math.inf, 0, store.snapshot()
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(x_tr))
        total = 0.0
        for b, s in enumerate(range(0, len(order), cfg.batch_size), start=1):
            idx = order[s:s + cfg.batch_size]
            store.zero_grad()
            try:
                loss = model.loss(x_tr[idx], y_tr[idx], training=True)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, b, lr, float("nan")) from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, lr, value)
            loss.backward()
            clip_grad_norm(store, cfg.clip_norm)
            if cfg.optimizer == "adam":
                adam_step(store, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            else:
                sgd_step(store, lr, cfg.momentum)
            total += value * len(idx)
        store.zero_grad()
        val = evaluate(model, x_va, y_va)
        test = evaluate(model, x_te, y_te)
        curve.append(total / len(order), val, test)
        score = val if math.isfinite(val) else total / len(order)
        if score < best_val:
            best_val, best_epoch, best = score, epoch, store.snapshot()
        if log is not None:
            log(f"epoch {epoch}: train {curve.train_mse[-1]:.5f} val {val:.5f} test {test:.5f}")
    store.restore(best)
    return TrainResult(curve, best_epoch, best_val)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def checkpoint_bytes(model, seed: int = 0, epoch: int = 0) -> bytes:
    """Serialize parameters, buffers, optimizer slots, step, seed and epoch (float64 payloads)."""
    blob = json.dumps(model.config_dict(), sort_keys=True)
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), _pack_str(model.model_id), _pack_str(blob)]
    state = model.store.state_arrays()
    state["meta/seed"] = np.array([seed], dtype=np.float64)
    state["meta/epoch"] = np.array([epoch], dtype=np.float64)
    parts.append(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model, path, seed: int = 0, epoch: int = 0) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, seed, epoch))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def parse_checkpoint(buf: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if len(buf) < 12 or buf[:4] != CKPT_MAGIC:
        raise CorruptCheckpoint("not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch")
    r = _Reader(body)
    r.take(4)
    version = r.u32()
    if version != CKPT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, expected {CKPT_VERSION}")
    model_id = r.string()
    config = json.loads(r.string())
    state = {}
    for _ in range(r.u32()):
        name = r.string()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        state[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(body):
        raise CorruptCheckpoint("trailing bytes after records")
    return model_id, config, state


def load_state(model, state: dict[str, np.ndarray]) -> None:
    store = model.store
    for key, arr in state.items():
        kind, name = key.split("/", 1)
        if kind == "param":
            if name not in store.params:
                raise ShapeMismatch(f"unexpected parameter {name!r}")
            target = store.params[name].data
        elif kind == "buffer":
            if name not in store.buffers:
                raise ShapeMismatch(f"unexpected buffer {name!r}")
            target = store.buffers[name]
        elif kind == "slot":
            store.slots[name] = arr.copy()
            continue
        elif key == "meta/step":
            store.step = int(arr[0])
            continue
        elif kind == "meta":
            continue
        else:
            raise CorruptCheckpoint(f"unknown record {key!r}")
        if target.shape != arr.shape:
            raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs model {target.shape}")
        target[...] = arr
    missing = {f"param/{k}" for k in store.params} - set(state)
    if missing:
        raise ShapeMismatch(f"checkpoint lacks {sorted(missing)[:3]}")


def load_checkpoint(path):
    model_id, config, state = parse_checkpoint(Path(path).read_bytes())
    model = build_model(model_id, config)
    load_state(model, state)
    return model
