"""Desk-scale experiment runners shared by the acceptance tests and scripts/.

One run trains the transformer denoiser and the plain IC-U-Net on the same
synthetic pair set, then replays the downstream scenarios (SSVEP, component
counts, two-class BCI) with the trained transformer.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluation as ev
from . import scenarios as sc
from .synth import PairSet, SynthConfig, generate_pairset, subjects_for
from .train import TrainConfig, TrainResult, build_model, evaluate, train


@dataclass
class DeskConfig:
    """Everything a desk-scale run depends on besides code."""

    channels: int = 8
    fs: float = 256.0
    seconds: float = 0.5
    pairs: int = 2000
    subjects: int = 8
    recording_seconds: float = 2.0
    epochs: int = 30
    lr_decay_every: int = 10
    seed: int = 0
    art: dict = field(default_factory=lambda: dict(d_model=32, d_ff=64, heads=8, layers=1))
    unet: dict = field(default_factory=lambda: dict(width=8, depth=4))

    def synth(self) -> SynthConfig:
        return SynthConfig(channels=self.channels, fs=self.fs, seconds=self.seconds, pairs=self.pairs,
                           subjects=self.subjects, recording_seconds=self.recording_seconds)

    @property
    def t(self) -> int:
        return self.synth().samples

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedRun:
    model: object
    result: TrainResult
    seconds: float
    test_mse: float


def identity_mse(data: PairSet) -> float:
    """Test MSE of returning the contaminated input unchanged."""
    x, y = data.subset("test")
    return float(np.mean((x - y) ** 2))


def train_one(model_id: str, cfg: DeskConfig, data: PairSet, log=None) -> TrainedRun:
    base = dict(channels=cfg.channels, length=cfg.t)
    if model_id == "art":
        model = build_model("art", dict(base, target_mode="noise", **cfg.art), seed=cfg.seed)
    else:
        model = build_model(model_id, dict(base, **cfg.unet), seed=cfg.seed)
    start = time.perf_counter()
    result = train(model, data, TrainConfig(epochs=cfg.epochs, lr_decay_every=cfg.lr_decay_every), seed=cfg.seed, log=log)
    elapsed = time.perf_counter() - start
    return TrainedRun(model, result, elapsed, evaluate(model, *data.subset("test")))


def train_models(cfg: DeskConfig, model_ids=("art", "icunet"), log=None):
    """(pair set, {model_id: TrainedRun}) for one desk-scale configuration."""
    data = generate_pairset(cfg.synth(), cfg.seed)
    return data, {m: train_one(m, cfg, data, log) for m in model_ids}


# ---------------------------------------------------------------------------
# downstream scenarios
# ---------------------------------------------------------------------------

def ssvep_summary(model, cfg: DeskConfig, trials: int = 20) -> dict:
    pairs = np.array(sc.ssvep_gain(model, subjects_for(cfg.synth(), cfg.seed), cfg.fs, cfg.t,
                                   trials=trials, seed=cfg.seed))
    return dict(contaminated=float(pairs[:, 0].mean()), denoised=float(pairs[:, 1].mean()),
                per_trial=pairs)


def component_summary(model, cfg: DeskConfig, recordings: int = 20) -> dict:
    rows = sc.component_counts(model, subjects_for(cfg.synth(), cfg.seed), cfg.fs, cfg.t,
                               recordings=recordings, seed=cfg.seed)
    noisy = sc.category_means([r[2] for r in rows])
    den = sc.category_means([r[3] for r in rows])
    return dict(
        fraction_reduced=float(np.mean([r[0] > r[1] for r in rows])),
        counts=[(r[0], r[1]) for r in rows],
        area_contaminated=ev.shoelace_area(ev.spider_points(noisy)),
        area_denoised=ev.shoelace_area(ev.spider_points(den)),
        categories=noisy, categories_denoised=den,
    )


def bci_summary(model, cfg: DeskConfig, subjects: int = 16, runs: int = 10, **trial_kw) -> dict:
    """Mean holdout accuracy over several subject draws.

    Subjects beyond the synthetic pool reuse its scalp maps with fresh trials;
    per-draw gains vary a lot, so a handful of draws gives a noisy mean.

    ``contaminated`` and ``denoised`` both go through the same windowed
    z-scoring, so the only difference between them is the model; the raw
    (unwindowed) clean and contaminated accuracies are reported alongside.
    """
    pool = subjects_for(cfg.synth(), cfg.seed)
    acc = {"clean": [], "clean_windowed": [], "contaminated_raw": [], "contaminated": [], "denoised": []}
    denoise = sc.trial_denoiser(model, cfg.t)
    for k in range(subjects):
        clean, noisy, labels = sc.bci_trials(pool[k % len(pool)], cfg.fs, cfg.seed * 1000 + k, **trial_kw)
        views = {"clean": clean, "clean_windowed": sc.trial_windows(clean, cfg.t),
                 "contaminated_raw": noisy, "contaminated": sc.trial_windows(noisy, cfg.t),
                 "denoised": denoise(noisy)}
        for name, x in views.items():
            acc[name] += ev.bci_holdout(x[labels == 0], x[labels == 1], runs=runs, seed=cfg.seed + k)
    return {name: float(np.mean(v)) for name, v in acc.items()}
