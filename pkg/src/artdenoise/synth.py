"""Synthetic brain/artifact sources, scalp mixing and noisy/clean segment pairs.

Channels sit on a unit disk (sunflower layout, +y towards the nose). Each
"subject" owns one mixing matrix and label set; recordings draw fresh source
activations for that subject, mix brain sources into the clean signal and brain
plus a random subset of artifact sources into the noisy one, and are cut into
z-scored segments.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .ops import zscore
from .seeding import rng_for
from .tensor import no_grad

LABELS = ("brain", "eye", "muscle", "heart", "channel_noise", "other")
ARTIFACT_KINDS = LABELS[1:]
SPLITS = ("train", "val", "test")


@dataclass
class Source:
    samples: np.ndarray
    label: str
    fs: float
    params: dict = field(default_factory=dict)


@dataclass
class MixingModel:
    A: np.ndarray  # (c, m)
    S: np.ndarray  # (m, T)
    labels: list[str]
    fs: float

    def __post_init__(self):
        if self.A.shape[1] != self.S.shape[0] or len(self.labels) != self.A.shape[1]:
            raise ValueError("mixing matrix, sources and labels disagree in source count")
        if self.A.shape[1] > self.A.shape[0]:
            raise ValueError("more sources than channels")

    @property
    def brain_idx(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == "brain"]

    @property
    def artifact_idx(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab != "brain"]


@dataclass
class SynthConfig:
    channels: int = 8
    fs: float = 256.0
    seconds: float = 4.0
    pairs: int = 2000
    subjects: int = 8
    recording_seconds: float = 20.0
    ratio_low: float = 0.5
    ratio_high: float = 3.0

    @property
    def samples(self) -> int:
        return int(round(self.seconds * self.fs))

    def validate(self) -> None:
        if self.channels < 5:
            raise ValueError("need at least 5 channels (3 brain + eye + muscle)")
        if self.pairs < 1:
            raise ValueError("pairs must be positive")
        if self.samples < 2:
            raise ValueError("segment too short")
        if self.fs < 100:
            raise ValueError("fs must be >= 100 Hz to represent 50 Hz line noise")
        if not 0 <= self.ratio_low <= self.ratio_high:
            raise ValueError("artifact ratio range is invalid")


# ---------------------------------------------------------------------------
# spectral helpers
# ---------------------------------------------------------------------------

def _shaped_noise(n: int, fs: float, rng, gain) -> np.ndarray:
    """White noise filtered in the frequency domain by ``gain(freqs)``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    return np.fft.irfft(spec * gain(f), n)


def _lowpass_noise(n: int, fs: float, cutoff: float, rng) -> np.ndarray:
    x = _shaped_noise(n, fs, rng, lambda f: np.exp(-0.5 * (f / cutoff) ** 2))
    return x / (x.std() + 1e-12)


def _unit(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    sd = x.std()
    return x / sd if sd > 0 else x


def band_fraction(x: np.ndarray, fs: float, lo: float, hi: float) -> float:
    """Fraction of (non-DC) periodogram power with lo <= f <= hi."""
    p = np.abs(np.fft.rfft(x - x.mean())) ** 2
    f = np.fft.rfftfreq(len(x), 1.0 / fs)
    tot = p[1:].sum()
    return float(p[(f >= lo) & (f <= hi)].sum() / tot) if tot > 0 else 0.0


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

def synth_brain_source(t_samples: int, fs: float, rng: np.random.Generator) -> Source:
    """Unit-variance 1/f^beta background plus a wandering alpha (8-12 Hz) rhythm."""
    beta = rng.uniform(0.8, 1.6)
    bg = _shaped_noise(t_samples, fs, rng,
                       lambda f: np.where(f > 0, np.maximum(f, 0.5) ** (-beta / 2), 0.0))
    f_alpha = rng.uniform(8.5, 11.5)
    wander = 0.4 * _lowpass_noise(t_samples, fs, 0.3, rng)
    phase = 2 * np.pi * np.cumsum(f_alpha + wander) / fs + rng.uniform(0, 2 * np.pi)
    env = np.exp(0.5 * _lowpass_noise(t_samples, fs, 0.5, rng))
    alpha = env * np.sin(phase)
    frac = rng.uniform(0.3, 0.6)
    x = np.sqrt(1 - frac) * _unit(bg) + np.sqrt(frac) * _unit(alpha)
    return Source(_unit(x), "brain", fs, {"beta": beta, "alpha_hz": f_alpha})


def _eye(n, fs, rng):
    rate = rng.uniform(0.2, 0.5)
    x = np.zeros(n)
    t = np.arange(n) / fs
    onset = rng.uniform(0, 1.0 / rate)
    while onset < n / fs:
        sigma = rng.uniform(0.08, 0.15)
        amp = rng.uniform(0.7, 1.3) * rng.choice([1.0, -1.0], p=[0.8, 0.2])
        pos = np.exp(-0.5 * ((t - onset) / sigma) ** 2)
        neg = 0.4 * np.exp(-0.5 * ((t - onset - 2.5 * sigma) / (1.5 * sigma)) ** 2)
        x += amp * (pos - neg)
        onset += rng.exponential(1.0 / rate) + 0.3
    x += 0.3 * _lowpass_noise(n, fs, 0.4, rng)  # slow drift, present even without blinks
    return x, {"rate_hz": rate}


def _muscle(n, fs, rng):
    band = _shaped_noise(n, fs, rng, lambda f: ((f >= 20) & (f <= 45)).astype(float))
    env = np.full(n, 0.15)
    t = np.arange(n) / fs
    onset = rng.uniform(0, 1.0)
    while onset < n / fs:
        dur = rng.uniform(0.2, 1.0)
        env += rng.uniform(0.5, 1.5) * np.exp(-0.5 * ((t - onset - dur / 2) / (dur / 3)) ** 2)
        onset += rng.exponential(1.0) + 0.2
    return band * env, {}


def _heart(n, fs, rng):
    rate = rng.uniform(0.9, 1.4)
    period = 1.0 / rate
    t = np.arange(n) / fs
    x = np.zeros(n)
    beat = rng.uniform(0, period)
    while beat < n / fs + period:
        dt = t - beat
        x += (-0.15 * np.exp(-0.5 * ((dt + 0.03) / 0.008) ** 2)
              + 1.0 * np.exp(-0.5 * (dt / 0.01) ** 2)
              - 0.25 * np.exp(-0.5 * ((dt - 0.03) / 0.01) ** 2)
              + 0.2 * np.exp(-0.5 * ((dt - 0.25) / 0.05) ** 2))
        beat += period
    return x, {"beat_period_s": period}


def _channel_noise(n, fs, rng):
    x = 0.2 * rng.standard_normal(n)
    n_spikes = max(1, rng.poisson(2.0 * n / fs))
    idx = rng.integers(0, n, size=n_spikes)
    x[idx] += rng.standard_t(3, size=n_spikes) * 4.0
    n_steps = max(1, rng.poisson(0.3 * n / fs))
    for i in rng.integers(0, n, size=n_steps):
        x[i:] += rng.normal(0, 2.0)
    return x, {}


def _other(n, fs, rng):
    t = np.arange(n) / fs
    line = rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * 50.0 * t + rng.uniform(0, 2 * np.pi))
    return rng.standard_normal(n) + line, {}


_ARTIFACTS = {"eye": _eye, "muscle": _muscle, "heart": _heart,
              "channel_noise": _channel_noise, "other": _other}


def synth_artifact_source(kind: str, t_samples: int, fs: float, rng: np.random.Generator) -> Source:
    if kind not in _ARTIFACTS:
        raise ValueError(f"unknown artifact kind {kind!r}")
    if fs < 100:
        raise ValueError("fs must be >= 100 Hz (muscle band and 50 Hz line noise)")
    x, params = _ARTIFACTS[kind](t_samples, fs, rng)
    return Source(_unit(x), kind, fs, params)


def synth_source(label: str, t_samples: int, fs: float, rng) -> Source:
    if label == "brain":
        return synth_brain_source(t_samples, fs, rng)
    return synth_artifact_source(label, t_samples, fs, rng)


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------

def channel_positions(c: int) -> np.ndarray:
    """(c, 2) electrode coordinates on the unit disk; +y is frontal."""
    k = np.arange(c) + 0.5
    r = np.sqrt(k / c)
    theta = k * np.pi * (3 - np.sqrt(5))
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def frontal_mask(c: int) -> np.ndarray:
    return channel_positions(c)[:, 1] > 0.2


def _pattern(label: str, pos: np.ndarray, rng) -> np.ndarray:
    if label == "eye":
        centre, width = np.array([rng.uniform(-0.3, 0.3), 1.0]), rng.uniform(0.4, 0.6)
    elif label == "muscle":
        centre, width = np.array([rng.choice([-1.0, 1.0]), rng.uniform(-0.3, 0.3)]), rng.uniform(0.3, 0.5)
    elif label == "heart":
        centre, width = np.array([rng.uniform(-0.5, 0.5), -1.1]), rng.uniform(0.8, 1.2)
    else:
        ang, rad = rng.uniform(0, 2 * np.pi), np.sqrt(rng.uniform(0, 0.8))
        centre, width = rad * np.array([np.cos(ang), np.sin(ang)]), rng.uniform(0.3, 0.7)
    d2 = ((pos - centre) ** 2).sum(axis=1)
    col = np.exp(-0.5 * d2 / width ** 2)
    if label in ("brain", "other"):
        direction = rng.standard_normal(2)
        col = col * ((pos - centre) @ direction + rng.uniform(0.2, 1.0))
    # spatially smooth perturbation
    kern = np.exp(-0.5 * ((pos[:, None] - pos[None]) ** 2).sum(-1) / 0.3 ** 2)
    col = col + 0.15 * kern @ rng.standard_normal(len(pos)) / kern.sum(1).mean()
    return col


def make_mixing_matrix(c: int, labels, rng: np.random.Generator, max_cond: float = 1e4,
                       attempts: int = 100) -> np.ndarray:
    """Unit-norm smooth scalp patterns (one-hot for channel noise), cond(A) <= max_cond."""
    labels = list(labels)
    m = len(labels)
    if m > c:
        raise ValueError(f"{m} sources exceed {c} channels")
    pos = channel_positions(c)
    for _ in range(attempts):
        A = np.empty((c, m))
        free = list(rng.permutation(c))
        for j, lab in enumerate(labels):
            if lab == "channel_noise":
                col = np.zeros(c)
                col[free.pop()] = 1.0
            else:
                col = _pattern(lab, pos, rng)
            A[:, j] = col / np.linalg.norm(col)
        if np.linalg.cond(A) <= max_cond:
            return A
    raise RuntimeError(f"no mixing matrix with cond <= {max_cond:g} after {attempts} attempts")


def subject_labels(c: int, rng: np.random.Generator) -> list[str]:
    """3..c-2 brain sources; the rest artifacts with at least one eye and one muscle."""
    n_brain = int(rng.integers(3, c - 1))
    n_art = c - n_brain
    kinds = ["eye", "muscle"] + list(rng.choice(ARTIFACT_KINDS, size=n_art - 2))
    return ["brain"] * n_brain + [str(k) for k in kinds]


@dataclass
class Subject:
    A: np.ndarray
    labels: list[str]

    def record(self, n_samples: int, fs: float, rng) -> MixingModel:
        S = np.stack([synth_source(lab, n_samples, fs, rng).samples for lab in self.labels])
        return MixingModel(self.A, S, list(self.labels), fs)


def make_subject(c: int, rng, labels=None) -> Subject:
    labels = subject_labels(c, rng) if labels is None else list(labels)
    return Subject(make_mixing_matrix(c, labels, rng), labels)


def back_project(A: np.ndarray, S: np.ndarray, selected) -> np.ndarray:
    """Channel-space contribution ``A[:, selected] @ S[selected]``."""
    sel = list(selected)
    if not sel:
        raise ValueError("back_project needs at least one selected source")
    if min(sel) < 0 or max(sel) >= A.shape[1]:
        raise IndexError("selected source index out of range")
    return A[:, sel] @ S[sel]


class PairRecord(NamedTuple):
    noisy: np.ndarray
    clean: np.ndarray
    tag: str
    artifact: np.ndarray
    chosen: list[int]


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def build_pair(model: MixingModel, n_artifacts: int, rng: np.random.Generator,
               ratio_range=(0.5, 3.0), artifact_gain: float = 1.0) -> PairRecord:
    """Clean = brain back-projection; noisy = clean + scaled artifact back-projection."""
    brain, arts = model.brain_idx, model.artifact_idx
    if not brain:
        raise ValueError("mixing model has no brain sources")
    if not 1 <= n_artifacts <= len(arts):
        raise ValueError(f"n_artifacts must be in [1, {len(arts)}], got {n_artifacts}")
    chosen = [int(i) for i in rng.choice(arts, size=n_artifacts, replace=False)]
    clean = back_project(model.A, model.S, brain)
    brain_rms = _rms(clean)
    S = model.S.copy()
    for j in chosen:
        contrib = _rms(np.outer(model.A[:, j], model.S[j]))
        ratio = rng.uniform(*ratio_range)
        S[j] *= artifact_gain * ratio * brain_rms / contrib if contrib > 0 else 0.0
    artifact = back_project(model.A, S, chosen)
    return PairRecord(clean + artifact, clean, model.labels[chosen[0]], artifact, chosen)


def segment(recording: np.ndarray, t: int) -> list[np.ndarray]:
    """Non-overlapping length-t windows (remainder dropped), each z-scored per channel."""
    T = recording.shape[-1]
    if T < t:
        raise ValueError(f"recording length {T} shorter than segment length {t}")
    with no_grad():
        return [zscore(recording[..., k * t:(k + 1) * t]).data for k in range(T // t)]


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class PairSet:
    noisy: np.ndarray  # (n, c, t)
    clean: np.ndarray
    tags: list[str]
    split: np.ndarray  # per-pair "train" / "val" / "test"
    fs: float = 256.0

    def __len__(self) -> int:
        return len(self.tags)

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.split == name)
        return self.noisy[idx], self.clean[idx]


def split_dataset(tags, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> np.ndarray:
    """Seeded split stratified by tag; per stratum counts use largest remainders."""
    tags = list(tags)
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError("ratios must be three values summing to 1")
    if len(tags) < 10:
        raise ValueError("need at least 10 pairs to split")
    rng = rng_for(seed, "split")
    out = np.empty(len(tags), dtype=object)
    for tag in sorted(set(tags)):
        idx = np.array([i for i, t in enumerate(tags) if t == tag])
        idx = idx[rng.permutation(len(idx))]
        exact = np.array(ratios) * len(idx)
        counts = np.floor(exact).astype(int)
        for k in np.argsort(-(exact - counts), kind="stable")[: len(idx) - counts.sum()]:
            counts[k] += 1
        bounds = np.cumsum(counts)
        out[idx[: bounds[0]]] = "train"
        out[idx[bounds[0]: bounds[1]]] = "val"
        out[idx[bounds[1]:]] = "test"
    return out.astype(str)


def generate_pairset(cfg: SynthConfig, seed: int) -> PairSet:
    """Whole dataset as a pure function of (cfg, seed)."""
    cfg.validate()
    rng = rng_for(seed, "data")
    t = cfg.samples
    subjects = [make_subject(cfg.channels, rng) for _ in range(cfg.subjects)]
    n_seg = max(1, int(cfg.recording_seconds * cfg.fs) // t)
    noisy, clean, tags = [], [], []
    k = 0
    while len(tags) < cfg.pairs:
        subj = subjects[k % len(subjects)]
        k += 1
        model = subj.record(n_seg * t, cfg.fs, rng)
        n_art = int(rng.integers(1, len(model.artifact_idx) + 1))
        pair = build_pair(model, n_art, rng, (cfg.ratio_low, cfg.ratio_high))
        for xs, ys in zip(segment(pair.noisy, t), segment(pair.clean, t)):
            if len(tags) == cfg.pairs:
                break
            noisy.append(xs)
            clean.append(ys)
            tags.append(pair.tag)
    split = split_dataset(tags, seed=seed) if len(tags) >= 10 else np.array(["train"] * len(tags))
    return PairSet(np.stack(noisy), np.stack(clean), tags, split, cfg.fs)


def subjects_for(cfg: SynthConfig, seed: int) -> list[Subject]:
    """The subject pool ``generate_pairset`` draws from (same seed, same order)."""
    rng = rng_for(seed, "data")
    return [make_subject(cfg.channels, rng) for _ in range(cfg.subjects)]


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
