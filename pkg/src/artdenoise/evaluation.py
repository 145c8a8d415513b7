"""Evaluation metrics: spectra, SNRs, ICA component labelling, CSP+LDA decoding, spider plots."""

from __future__ import annotations

import warnings
from collections.abc import Callable

import numpy as np
from scipy import linalg

from .seeding import rng_for
from .synth import channel_positions

class ConvergenceWarning(UserWarning):
    """FastICA stopped at max_iter before reaching the requested tolerance."""


COMPONENT_LABELS = ("brain", "eye", "muscle", "heart", "channel_noise", "other")


# ---------------------------------------------------------------------------
# spectra and SNR
# ---------------------------------------------------------------------------

def power_spectrum(x: np.ndarray, fs: float, nfft: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Welch estimate, rectangular window, non-overlapping length-nfft segments (last axis)."""
    x = np.asarray(x, dtype=float)
    T = x.shape[-1]
    if T < nfft:
        raise ValueError(f"signal length {T} shorter than nfft {nfft}")
    n_seg = T // nfft
    segs = x[..., : n_seg * nfft].reshape(x.shape[:-1] + (n_seg, nfft))
    p = np.abs(np.fft.rfft(segs, axis=-1)) ** 2 / (fs * nfft)
    p[..., 1:-1] *= 2
    return np.fft.rfftfreq(nfft, 1.0 / fs), p.mean(axis=-2)


def channel_mse(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-channel mean squared error over every other axis; inputs (..., C, T)."""
    z, y = np.asarray(z, float), np.asarray(y, float)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {y.shape}")
    d = (z - y) ** 2
    return d.reshape(-1, d.shape[-2], d.shape[-1]).mean(axis=(0, 2))


def _bin(freqs, f):
    return int(np.argmin(np.abs(freqs - f)))


def ssvep_snr(x: np.ndarray, fs: float, f_stim: float, nfft: int = 256, band=(1.0, 50.0)) -> float:
    """dB ratio of mean power at f, 2f, 3f to mean power of the other in-band bins.

    Harmonic bins and their immediate neighbours are excluded from the noise set;
    the spectrum is averaged over all leading (channel) axes.
    """
    freqs, p = power_spectrum(x, fs, nfft)
    p = p.reshape(-1, p.shape[-1]).mean(axis=0)
    harm = [_bin(freqs, k * f_stim) for k in (1, 2, 3) if k * f_stim < fs / 2]
    if not harm:
        raise ValueError("stimulation frequency above Nyquist")
    excluded = {h + d for h in harm for d in (-1, 0, 1)}
    noise_bins = [i for i, f in enumerate(freqs)
                  if band[0] <= f <= band[1] and i not in excluded]
    S = p[harm].mean()
    N = p[noise_bins].mean()
    return float(10 * np.log10(S / (N + 1e-12)))


def erp_snr(x: np.ndarray, fs: float, events, window=(0.0, 0.6), baseline: float = 0.5) -> float:
    """dB ratio of post-event power of the averaged epoch to its baseline variance.

    ``x`` is (T,) or (C, T); each epoch is baseline-corrected with the mean of the
    ``baseline`` seconds preceding the event.
    """
    x = np.atleast_2d(np.asarray(x, float))
    nb = int(round(baseline * fs))
    a, b = int(round(window[0] * fs)), int(round(window[1] * fs))
    epochs = []
    for e in events:
        e = int(e)
        if e - nb < 0 or e + b > x.shape[-1]:
            continue
        ep = x[:, e - nb: e + b]
        epochs.append(ep - ep[:, :nb].mean(axis=1, keepdims=True))
    if not epochs:
        raise ValueError("no complete epochs around the given events")
    avg = np.mean(epochs, axis=0)
    S = np.mean(avg[:, nb + a: nb + b] ** 2)
    N = np.mean(avg[:, :nb] ** 2)
    return float(10 * np.log10(S / (N + 1e-12)))


# ---------------------------------------------------------------------------
# ICA
# ---------------------------------------------------------------------------

def whiten(x: np.ndarray, n_components: int | None = None, var_floor: float = 1e-10):
    """Centre and whiten (C, T) data by eigendecomposition of its covariance.

    Components with eigenvalue below ``var_floor`` times the total variance are
    dropped. Returns (z, K, mean) with z = K (x - mean).
    """
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    cov = xc @ xc.T / xc.shape[1]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > var_floor * max(vals.sum(), 1e-300)
    if n_components is not None:
        keep[n_components:] = False
    vals, vecs = vals[keep], vecs[:, keep]
    K = (vecs / np.sqrt(vals)).T
    return K @ xc, K, mean


def _sym_decorrelate(W):
    s, u = np.linalg.eigh(W @ W.T)
    return (u / np.sqrt(s)) @ u.T @ W


def fastica(x: np.ndarray, n_components: int | None = None, seed: int = 0, tol: float = 1e-6,
            max_iter: int = 500, var_floor: float = 1e-10):
    """Symmetric FastICA with the tanh contrast.

    Returns (sources, mixing, unmixing) with sources = unmixing (x - mean) and
    x - mean ~= mixing @ sources.
    """
    x = np.asarray(x, float)
    z, K, _ = whiten(x, n_components, var_floor)
    n = z.shape[0]
    if n == 0:
        return np.zeros((0, x.shape[1])), np.zeros((x.shape[0], 0)), np.zeros((0, x.shape[0]))
    rng = rng_for(seed, "ica")
    W = _sym_decorrelate(rng.standard_normal((n, n)))
    change = np.inf
    for _ in range(max_iter):
        wx = W @ z
        g = np.tanh(wx)
        g_prime = 1 - g ** 2
        W_new = _sym_decorrelate(g @ z.T / z.shape[1] - g_prime.mean(axis=1)[:, None] * W)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1))
        W = W_new
        if change < tol:
            break
    else:
        warnings.warn(f"fastica did not converge: tolerance {change:.2e} after {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)
    unmixing = W @ K
    sources = W @ z
    mixing = np.linalg.pinv(unmixing)
    return sources, mixing, unmixing


# ---------------------------------------------------------------------------
# component labelling
# ---------------------------------------------------------------------------

def _band(freqs, p, lo, hi):
    tot = p[1:].sum()
    return float(p[(freqs >= lo) & (freqs <= hi)].sum() / tot) if tot > 0 else 0.0


def _excess_kurtosis(v):
    v = v - v.mean()
    s2 = np.mean(v ** 2)
    return float(np.mean(v ** 4) / s2 ** 2 - 3) if s2 > 0 else 0.0


def _periodicity(a, fs, lo_hz=0.8, hi_hz=1.5):
    a = a - a.mean()
    n = len(a)
    lo, hi = int(fs / hi_hz), int(np.ceil(fs / lo_hz))
    if hi >= n:
        return 0.0
    spec = np.fft.rfft(a, 2 * n)
    ac = np.fft.irfft(np.abs(spec) ** 2)[:n]
    if ac[0] <= 0:
        return 0.0
    ac = ac / ac[0] * n / (n - np.arange(n))
    return float(ac[lo: hi + 1].max())


def classify_component(activation: np.ndarray, topography: np.ndarray, fs: float,
                       positions: np.ndarray | None = None) -> tuple[str, float]:
    """Heuristic label and confidence score for one independent component.

    The cascade checks channel noise (map concentrated on one electrode), eye
    (low-frequency power, frontal map), muscle (20-45 Hz power), heart (spiky
    activity repeating at 0.8-1.5 Hz), brain (alpha peak over a falling spectrum),
    and falls back to "other".
    """
    a = np.asarray(activation, float)
    topo = np.asarray(topography, float)
    if not np.any(a) or not np.any(topo):
        return "other", 0.0
    pos = channel_positions(len(topo)) if positions is None else positions
    freqs, p = power_spectrum(a, fs, nfft=min(256, len(a)))
    w = topo ** 2 / np.sum(topo ** 2)

    concentration = float(w.max())
    if concentration > 0.9:
        return "channel_noise", concentration
    low = _band(freqs, p, 0, 5)
    frontal = float(w[pos[:, 1] > 0.2].sum())
    if low >= 0.6 and frontal >= 0.5:
        return "eye", low
    emg = _band(freqs, p, 20, 45)
    if emg >= 0.5:
        return "muscle", emg
    periodic = _periodicity(a, fs)
    if periodic > 0.5 and _excess_kurtosis(a) > 2:
        return "heart", periodic
    alpha = p[(freqs >= 8) & (freqs <= 13)].mean()
    flank = p[((freqs >= 4) & (freqs < 7)) | ((freqs > 14) & (freqs <= 20))].mean()
    slow = p[(freqs >= 2) & (freqs <= 6)].mean()
    fast = p[(freqs >= 25) & (freqs <= 40)].mean()
    if alpha > 1.5 * flank and slow > fast:
        return "brain", float(alpha / (alpha + flank))
    return "other", float(1 - max(low, emg))


def label_components(x: np.ndarray, fs: float, seed: int = 0, var_floor: float = 1e-3):
    """FastICA decomposition of (C, T) data followed by per-component labelling.

    Near-Gaussian brain mixtures often stop short of the ICA tolerance; the
    labels are still usable, so the convergence warning is silenced here.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        sources, mixing, _ = fastica(x, seed=seed, var_floor=var_floor)
    return [classify_component(sources[k], mixing[:, k], fs) for k in range(sources.shape[0])]


def count_nonbrain(x: np.ndarray, fs: float, seed: int = 0, var_floor: float = 1e-3) -> int:
    """Number of independent components not labelled brain."""
    return sum(label != "brain" for label, _ in label_components(x, fs, seed, var_floor))


# ---------------------------------------------------------------------------
# CSP + LDA decoding
# ---------------------------------------------------------------------------

def _mean_cov(trials):
    covs = []
    for tr in trials:
        tr = tr - tr.mean(axis=1, keepdims=True)
        c = tr @ tr.T
        covs.append(c / np.trace(c))
    return np.mean(covs, axis=0)


def csp_filters(trials_a: np.ndarray, trials_b: np.ndarray, n_keep: int = 4) -> np.ndarray:
    """Spatial filters (n_keep, C) from the generalized eigenproblem Ca w = l (Ca + Cb) w.

    Half the filters come from each end of the eigenvalue spectrum.
    """
    ca, cb = _mean_cov(trials_a), _mean_cov(trials_b)
    comp = ca + cb
    comp = comp + 1e-6 * np.trace(comp) * np.eye(len(comp))
    vals, vecs = linalg.eigh(ca, comp)
    order = np.argsort(vals)
    half = n_keep // 2
    pick = np.concatenate([order[:half], order[len(order) - (n_keep - half):]])
    return vecs[:, pick].T


def csp_features(filters: np.ndarray, trials: np.ndarray) -> np.ndarray:
    """Log of the normalized variance of each spatially filtered trial."""
    proj = np.einsum("kc,nct->nkt", filters, np.asarray(trials, float))
    var = proj.var(axis=2)
    if np.any(var <= 0):
        raise ValueError("zero-variance filtered signal")
    return np.log(var / var.sum(axis=1, keepdims=True))


def lda_fit(features_a: np.ndarray, features_b: np.ndarray, ridge: float = 1e-6):
    """Two-class Fisher LDA: w = Sw^-1 (mu_a - mu_b), threshold at the projected-mean midpoint."""
    fa, fb = np.atleast_2d(np.asarray(features_a, float)), np.atleast_2d(np.asarray(features_b, float))
    if len(fa) < 2 or len(fb) < 2:
        raise ValueError("lda_fit needs at least two samples per class")
    ma, mb = fa.mean(axis=0), fb.mean(axis=0)
    da, db = fa - ma, fb - mb
    sw = (da.T @ da + db.T @ db) / (len(fa) + len(fb))
    sw = sw + ridge * max(np.trace(sw), 1e-12) * np.eye(len(sw))
    w = np.linalg.solve(sw, ma - mb)
    return w, float(w @ (ma + mb) / 2)


def lda_predict(w: np.ndarray, threshold: float, features: np.ndarray) -> np.ndarray:
    """1 where the sample is assigned to class a, 0 for class b."""
    return (np.asarray(features, float) @ w > threshold).astype(int)


def bci_holdout(trials_a: np.ndarray, trials_b: np.ndarray,
                denoiser: Callable[[np.ndarray], np.ndarray] | None = None, runs: int = 10,
                split: float = 0.8, seed: int = 0, n_keep: int = 4) -> list[float]:
    """CSP+LDA test accuracy over seeded random train/test splits.

    ``denoiser`` (if given) is applied to every trial before any split.
    """
    a, b = np.asarray(trials_a, float), np.asarray(trials_b, float)
    if len(a) < 5 or len(b) < 5:
        raise ValueError("need at least 5 trials per class")
    x = np.concatenate([a, b])
    y = np.concatenate([np.ones(len(a), int), np.zeros(len(b), int)])
    if denoiser is not None:
        x = np.asarray(denoiser(x), float)
    rng = rng_for(seed, "holdout")
    n_train = int(round(split * len(y)))
    accs = []
    for _ in range(runs):
        perm = rng.permutation(len(y))
        tr, te = perm[:n_train], perm[n_train:]
        xa, xb = x[tr][y[tr] == 1], x[tr][y[tr] == 0]
        filt = csp_filters(xa, xb, n_keep)
        w, thr = lda_fit(csp_features(filt, xa), csp_features(filt, xb))
        pred = lda_predict(w, thr, csp_features(filt, x[te]))
        accs.append(float(np.mean(pred == y[te])))
    return accs


# ---------------------------------------------------------------------------
# spider plots
# ---------------------------------------------------------------------------

def spider_points(values) -> np.ndarray:
    """Vertices of a spider (radar) polygon: value k at angle 2*pi*k/n."""
    v = np.asarray(values, float)
    ang = 2 * np.pi * np.arange(len(v)) / len(v)
    return np.stack([v * np.cos(ang), v * np.sin(ang)], axis=1)


def shoelace_area(points) -> float:
    """Area of a simple polygon given its vertices in order."""
    p = np.asarray(points, float)
    if len(p) < 3:
        raise ValueError("a polygon needs at least three vertices")
    x, y = p[:, 0], p[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2)
