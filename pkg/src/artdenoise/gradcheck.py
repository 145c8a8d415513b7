"""Central finite-difference gradient checking."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import Tensor, NonFiniteError, no_grad


def grad_check(fn: Callable[..., Tensor], inputs: Tensor | Sequence[Tensor], eps: float = 1e-5,
               seed: int = 0, max_probes: int | None = None, retry_above: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``fn(*inputs)`` may return any shape; it is reduced to a scalar by a fixed
    random projection. Relative error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``. With
    ``max_probes`` only that many randomly chosen elements per input are probed.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("grad_check: non-finite output")
    proj = rng.standard_normal(out.shape)
    loss = (out * proj).sum()
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    def scalar() -> float:
        with no_grad():
            o = fn(*inputs)
        if not np.all(np.isfinite(o.data)):
            raise NonFiniteError("grad_check: non-finite output under perturbation")
        return float((o.data * proj).sum())

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = rng.choice(flat.size, size=max_probes, replace=False)
        gflat = ga.reshape(-1)
        for i in idx:
            err = np.inf
            # a probe that straddles a ReLU/max-pool kink is retried with a smaller step;
            # a wrong backward rule disagrees at every step size
            for step in (eps, eps / 10, eps / 100):
                orig = flat[i]
                flat[i] = orig + step
                fp = scalar()
                flat[i] = orig - step
                fm = scalar()
                flat[i] = orig
                num = (fp - fm) / (2 * step)
                err = min(err, abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-8))
                if err < retry_above:
                    break
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# standard case table: primitives and toy-sized models
# ---------------------------------------------------------------------------

TOLERANCE = 1e-4


def _rand(rng, *shape):
    from .tensor import Tensor as T

    return T(rng.standard_normal(shape))


def primitive_cases(seed: int = 0) -> list[tuple[str, Callable[..., Tensor], list[Tensor]]]:
    """(name, fn, inputs) for every differentiable primitive."""
    from . import ops
    from . import tensor as tn

    rng = np.random.default_rng(seed)
    r = lambda *s: _rand(rng, *s)  # noqa: E731
    bn_state = ops.new_batch_norm_state(3)
    mha = {k: r(4, 4) if k.startswith("w") else r(4) for k in ops.MHA_KEYS}
    mha_keys = list(ops.MHA_KEYS)
    return [
        ("add", tn.add, [r(3, 5), r(5)]),
        ("mul", tn.mul, [r(3, 5), r(3, 5)]),
        ("matmul", tn.matmul, [r(2, 3, 4), r(4, 5)]),
        ("relu", tn.relu, [r(4, 6)]),
        ("exp", tn.exp, [r(4, 6)]),
        ("mean", lambda x: tn.mean(x, axis=1), [r(3, 4, 5)]),
        ("index", lambda x: tn.index(x, (slice(None), [0, 2, 2])), [r(3, 4)]),
        ("concat", lambda a, b: tn.concat([a, b], axis=-2), [r(2, 3, 5), r(2, 2, 5)]),
        ("conv1d", lambda x, w, b: ops.conv1d(x, w, b), [r(2, 3, 9), r(4, 3, 3), r(4)]),
        ("maxpool1d", ops.maxpool1d, [r(2, 3, 8)]),
        ("upsample1d", ops.upsample1d, [r(2, 3, 4)]),
        ("linear", ops.linear, [r(2, 3, 5), r(4, 3), r(4)]),
        ("layer_norm", ops.layer_norm, [r(2, 4, 5), r(4), r(4)]),
        ("batch_norm", lambda x, g, b: ops.batch_norm(x, g, b, bn_state, training=True),
         [r(3, 3, 6), r(3), r(3)]),
        ("log_softmax", ops.log_softmax, [r(2, 4, 5)]),
        ("zscore", ops.zscore, [r(2, 3, 8)]),
        ("scaled_attention", ops.scaled_attention, [r(2, 5, 4), r(2, 6, 4), r(2, 6, 3)]),
        ("multi_head_attention",
         lambda xq, xkv, *p: ops.multi_head_attention(xq, xkv, dict(zip(mha_keys, p)), 2),
         [r(2, 4, 5), r(2, 4, 6)] + [mha[k] for k in mha_keys]),
        ("mse_loss", ops.mse_loss, [r(3, 4), r(3, 4)]),
    ]


def toy_models(seed: int = 0) -> list:
    from .art import ArtConfig, ArtDenoiser
    from .unet import UNetConfig, UNetDenoiser

    unets = [UNetDenoiser(UNetConfig(channels=2, length=32, width=4, variant=v), seed=seed)
             for v in ("base", "plus", "attn")]
    art = ArtDenoiser(ArtConfig(channels=2, length=16, d_model=8, d_ff=16, heads=2, layers=1),
                      seed=seed)
    return unets + [art]


def model_case(model, seed: int = 0):
    """(name, fn, inputs): the training loss as a function of input and parameters."""
    rng = np.random.default_rng(seed + 1)
    t = model.config.length
    x = Tensor(rng.standard_normal((3, 2, t)))
    y = rng.standard_normal((3, 2, t))
    y = (y - y.mean(-1, keepdims=True)) / y.std(-1, keepdims=True)
    names = list(model.store.params)

    def fn(x, *params):
        for name, p in zip(names, params):
            model.store.params[name] = p
        return model.loss(x, y, training=True)

    return model.model_id, fn, [x] + [model.store.params[n] for n in names]


def corrupt(fn: Callable[..., Tensor], factor: float = 1.1) -> Callable[..., Tensor]:
    """Same forward values, but the backward pass scales gradients by ``factor``."""
    from .tensor import make_node

    def wrapped(*args):
        out = fn(*args)
        return make_node(out.data.copy(), (out,), lambda g: (g * factor,), "corrupted")

    return wrapped


def run_table(seed: int = 0, max_probes: int = 20, corrupt_name: str | None = None):
    """[(name, max_rel_err, passed)] over all primitives and the four toy models."""
    rows = []
    cases = primitive_cases(seed) + [model_case(m, seed) for m in toy_models(seed)]
    for name, fn, inputs in cases:
        if name == corrupt_name:
            fn = corrupt(fn)
        err = grad_check(fn, inputs, seed=seed, max_probes=max_probes)
        rows.append((name, err, err < TOLERANCE))
    return rows
