"""Downstream scenarios on synthetic subjects: SSVEP, component counts, two-class BCI.

Every scenario draws fresh activations from subjects of a trained dataset, so
the denoiser meets the same scalp geometry but signals it never saw.
"""

from __future__ import annotations

import numpy as np

from . import evaluation as ev
from .seeding import rng_for
from .synth import MixingModel, Subject, back_project, channel_positions, synth_source


def denoise_long(model, x: np.ndarray, t: int, batch_size: int = 64) -> np.ndarray:
    """Denoise a (C, T) recording in consecutive z-scored length-t windows.

    Returns the denoised full windows concatenated (trailing samples dropped).
    """
    from .train import denoise_array

    windows = chunk_zscore(x, t)
    z = denoise_array(model, windows, batch_size)
    return np.concatenate(list(z), axis=-1)


def chunk_zscore(x: np.ndarray, t: int) -> np.ndarray:
    """(C, T) -> (T // t, C, t) windows, each z-scored per channel."""
    n = x.shape[-1] // t
    w = x[:, : n * t].reshape(x.shape[0], n, t).transpose(1, 0, 2)
    return (w - w.mean(axis=-1, keepdims=True)) / w.std(axis=-1, keepdims=True)


def _recording(subject: Subject, n: int, fs: float, rng) -> MixingModel:
    return subject.record(n, fs, rng)


def _scale_artifacts(model: MixingModel, chosen, clean, rng, ratio_range):
    S = model.S.copy()
    brain_rms = np.sqrt(np.mean(clean ** 2))
    for j in chosen:
        contrib = np.sqrt(np.mean(np.outer(model.A[:, j], model.S[j]) ** 2))
        S[j] *= rng.uniform(*ratio_range) * brain_rms / contrib
    return back_project(model.A, S, chosen)


# ---------------------------------------------------------------------------
# SSVEP
# ---------------------------------------------------------------------------

def ssvep_trial(subject: Subject, fs: float, seed: int, f_stim: float = 10.0, seconds: float = 8.0,
                amplitude: float = 0.5, ratio_range=(1.0, 3.0)) -> tuple[np.ndarray, np.ndarray]:
    """(clean, contaminated) recording with a steady-state response at f, 2f, 3f.

    The response entrains the subject's brain sources; muscle sources contaminate.
    """
    rng = rng_for(seed, "ssvep")
    n = int(round(seconds * fs))
    model = _recording(subject, n, fs, rng)
    tt = np.arange(n) / fs
    phase = rng.uniform(0, 2 * np.pi)
    resp = sum(np.sin(2 * np.pi * k * f_stim * tt + k * phase) / k for k in (1, 2, 3))
    resp = resp / resp.std()
    for j in model.brain_idx:
        model.S[j] = model.S[j] + amplitude * resp
    clean = back_project(model.A, model.S, model.brain_idx)
    muscle = [j for j in model.artifact_idx if model.labels[j] == "muscle"]
    return clean, clean + _scale_artifacts(model, muscle, clean, rng, ratio_range)


def ssvep_gain(model, subjects, fs: float, t: int, trials: int = 20, seed: int = 0,
               f_stim: float = 10.0) -> list[tuple[float, float]]:
    """Per trial (contaminated SNR, denoised SNR) in dB."""
    out = []
    for k in range(trials):
        _, noisy = ssvep_trial(subjects[k % len(subjects)], fs, seed * 1000 + k, f_stim)
        noisy_w = np.concatenate(list(chunk_zscore(noisy, t)), axis=-1)
        den = denoise_long(model, noisy, t)
        out.append((ev.ssvep_snr(noisy_w, fs, f_stim), ev.ssvep_snr(den, fs, f_stim)))
    return out


# ---------------------------------------------------------------------------
# component counts
# ---------------------------------------------------------------------------

def contaminated_recording(subject: Subject, fs: float, seed: int, seconds: float = 30.0,
                           ratio_range=(1.0, 3.0)) -> tuple[np.ndarray, np.ndarray]:
    """(clean, contaminated) with every artifact source of the subject active."""
    rng = rng_for(seed, "components")
    model = _recording(subject, int(round(seconds * fs)), fs, rng)
    clean = back_project(model.A, model.S, model.brain_idx)
    return clean, clean + _scale_artifacts(model, model.artifact_idx, clean, rng, ratio_range)


def component_counts(model, subjects, fs: float, t: int, recordings: int = 20, seed: int = 0):
    """Per recording: (non-brain count contaminated, denoised, label lists)."""
    rows = []
    for k in range(recordings):
        _, noisy = contaminated_recording(subjects[k % len(subjects)], fs, seed * 1000 + k)
        noisy_w = np.concatenate(list(chunk_zscore(noisy, t)), axis=-1)
        den = denoise_long(model, noisy, t)
        lab_n = [lab for lab, _ in ev.label_components(noisy_w, fs, seed=k)]
        lab_d = [lab for lab, _ in ev.label_components(den, fs, seed=k)]
        rows.append((sum(lab != "brain" for lab in lab_n), sum(lab != "brain" for lab in lab_d),
                     lab_n, lab_d))
    return rows


def category_means(label_lists, categories=ev.COMPONENT_LABELS[1:]) -> np.ndarray:
    """Mean count per non-brain category across recordings (spider axes)."""
    return np.array([np.mean([labs.count(c) for labs in label_lists]) for c in categories])


# ---------------------------------------------------------------------------
# two-class BCI
# ---------------------------------------------------------------------------

def lateral_sources(subject: Subject) -> tuple[int, int]:
    """Brain sources whose scalp maps weigh most on the left and on the right."""
    pos = channel_positions(subject.A.shape[0])
    brain = [j for j, lab in enumerate(subject.labels) if lab == "brain"]
    centroid = [float((subject.A[:, j] ** 2) @ pos[:, 0]) for j in brain]
    return brain[int(np.argmin(centroid))], brain[int(np.argmax(centroid))]


def bci_trials(subject: Subject, fs: float, seed: int, n_trials: int = 120, seconds: float = 2.0,
               ratio_range=(1.0, 3.0), strong: float = 0.5, weak: float = 0.1):
    """(clean, contaminated, labels) trials with class-dependent 10 Hz lateralization.

    Class 0 drives the left-weighted brain source strongly and the right one weakly;
    class 1 the reverse. Eye and muscle sources contaminate each trial with a
    random per-trial strength.
    """
    rng = rng_for(seed, "bci")
    n = int(round(seconds * fs))
    left, right = lateral_sources(subject)
    tt = np.arange(n) / fs
    labels = np.arange(n_trials) % 2
    rng.shuffle(labels)
    clean, noisy = [], []
    for y in labels:
        model = _recording(subject, n, fs, rng)
        for j, amp in ((left, strong if y == 0 else weak), (right, weak if y == 0 else strong)):
            f = rng.uniform(9.5, 10.5)
            model.S[j] = model.S[j] + 2 * amp * np.sin(2 * np.pi * f * tt + rng.uniform(0, 2 * np.pi))
        c = back_project(model.A, model.S, model.brain_idx)
        arts = [j for j in model.artifact_idx if model.labels[j] in ("eye", "muscle")]
        clean.append(c)
        noisy.append(c + _scale_artifacts(model, arts, c, rng, ratio_range))
    return np.stack(clean), np.stack(noisy), labels


def trial_denoiser(model, t: int):
    def run(trials: np.ndarray) -> np.ndarray:
        return np.stack([denoise_long(model, tr, t) for tr in trials])
    return run


def trial_windows(trials: np.ndarray, t: int) -> np.ndarray:
    """The same windowed z-scoring the denoiser input gets, without denoising."""
    return np.stack([np.concatenate(list(chunk_zscore(tr, t)), axis=-1) for tr in trials])
