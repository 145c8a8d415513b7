"""Named parameter storage shared by the models, optimizers and checkpoints."""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, Tensor


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); conv kernels count K in both fans."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 3:
        fan_out, fan_in = shape[0] * shape[2], shape[1] * shape[2]
    else:
        raise ValueError(f"no fan rule for shape {shape}")
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ParamStore:
    """Ordered name -> parameter map plus non-trainable buffers and optimizer slots."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.slots: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=DTYPE)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of parameters and buffers (not optimizer slots)."""
        snap = {f"param/{k}": v.data.copy() for k, v in self.params.items()}
        snap.update({f"buffer/{k}": v.copy() for k, v in self.buffers.items()})
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for key, arr in snap.items():
            kind, name = key.split("/", 1)
            if kind == "param":
                target = self.params[name].data
            elif kind == "buffer":
                target = self.buffers[name]
            else:
                continue
            if target.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}: {target.shape} vs {arr.shape}")
            target[...] = arr

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Everything a checkpoint needs, keyed ``param/``, ``buffer/``, ``slot/``."""
        state = self.snapshot()
        state.update({f"slot/{k}": v.copy() for k, v in self.slots.items()})
        state["meta/step"] = np.array([self.step], dtype=DTYPE)
        return state
