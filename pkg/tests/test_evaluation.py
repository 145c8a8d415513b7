import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from artdenoise import evaluation as ev
from artdenoise.ops import mse_loss
from artdenoise.synth import (make_mixing_matrix, make_subject, synth_artifact_source,
                              synth_brain_source)

FS = 256.0


def rng(seed=0):
    return np.random.default_rng(seed)


def tone(f, seconds=4.0, fs=FS, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return np.sin(2 * np.pi * f * t + phase)


# -- spectra -------------------------------------------------------------------------

def test_tone_has_single_dominant_bin():
    freqs, p = ev.power_spectrum(tone(10), FS)
    k = int(np.argmax(p))
    assert freqs[k] == 10
    assert np.all(p[k] >= 100 * np.delete(p, k))


def test_spectrum_matches_scipy_welch():
    x = rng(1).standard_normal((3, 256 * 5 + 17))
    f_ref, p_ref = signal.welch(x, FS, window="boxcar", nperseg=256, noverlap=0,
                                detrend=False, scaling="density")
    freqs, p = ev.power_spectrum(x, FS)
    np.testing.assert_allclose(freqs, f_ref)
    np.testing.assert_allclose(p, p_ref, rtol=1e-10)


def test_zero_signal_and_short_input():
    _, p = ev.power_spectrum(np.zeros(512), FS)
    assert not np.any(p)
    with pytest.raises(ValueError):
        ev.power_spectrum(np.zeros(100), FS)


def test_white_noise_spectrum_is_flat():
    _, p = ev.power_spectrum(rng(2).standard_normal(256 * 100), FS)
    inner = p[1:-1]
    assert inner.max() / np.median(inner) < 10


def test_channel_mse_examples():
    x = rng(3).standard_normal((5, 4, 32))
    np.testing.assert_array_equal(ev.channel_mse(x, x), np.zeros(4))
    y = x.copy()
    y[:, 0] += 1
    np.testing.assert_allclose(ev.channel_mse(y, x), [1, 0, 0, 0], atol=1e-12)
    z = rng(4).standard_normal(x.shape)
    assert ev.channel_mse(z, x).mean() == pytest.approx(mse_loss(z, x).item(), abs=1e-12)
    with pytest.raises(ValueError):
        ev.channel_mse(x, x[:, :3])


# -- SNR -------------------------------------------------------------------------------

def test_noiseless_tone_snr_is_high():
    assert ev.ssvep_snr(tone(10), FS, 10) > 20


def test_white_noise_snr_is_near_zero():
    vals = [ev.ssvep_snr(rng(s).standard_normal(1024), FS, 10) for s in range(20)]
    assert abs(np.mean(vals)) < 3


def test_two_tone_closed_form():
    # stim at 10 Hz plus an equal-power distractor at 40 Hz, away from every harmonic
    x = tone(10) + tone(40)
    _, p = ev.power_spectrum(x, FS)
    excluded = {9, 10, 11, 19, 20, 21, 29, 30, 31}
    noise = [k for k in range(1, 51) if k not in excluded]
    s = p[[10, 20, 30]].mean()
    n = p[noise].mean()
    assert ev.ssvep_snr(x, FS, 10) == pytest.approx(10 * np.log10(s / (n + 1e-12)), abs=1e-9)
    # one live bin among three harmonic bins and one among the noise bins
    assert ev.ssvep_snr(x, FS, 10) == pytest.approx(10 * np.log10(len(noise) / 3), abs=1e-6)


def test_snr_is_monotone_under_contamination():
    noise = rng(5).standard_normal(1024)
    clean = ev.ssvep_snr(tone(10), FS, 10)
    mixed = ev.ssvep_snr(tone(10) + noise, FS, 10)
    pure = ev.ssvep_snr(noise, FS, 10)
    assert clean > mixed > pure


def test_harmonic_above_nyquist():
    with pytest.raises(ValueError):
        ev.ssvep_snr(tone(10), FS, 200)


def _bump_recording(amplitude, n_events=10):
    x = np.zeros(n_events * 768)
    events = np.arange(n_events) * 768 + 256
    bump = np.hanning(64)
    for e in events:
        x[e + 40: e + 104] += amplitude * bump
    return x + 1e-3 * rng(6).standard_normal(len(x)), events


def test_erp_snr_scales_with_bump_power():
    a, ev_a = _bump_recording(1.0)
    b, ev_b = _bump_recording(np.sqrt(10))
    ra, rb = ev.erp_snr(a, FS, ev_a), ev.erp_snr(b, FS, ev_b)
    assert ra > 20
    assert rb - ra == pytest.approx(10.0, abs=0.1)


def test_erp_snr_same_windows_gives_zero():
    x, events = rng(12).standard_normal(20 * 256), np.arange(1, 19) * 256
    assert ev.erp_snr(x, FS, events, window=(-0.5, 0.0), baseline=0.5) == pytest.approx(0.0, abs=1e-9)


def test_erp_snr_noise_tends_to_zero_db():
    x = rng(7).standard_normal(400 * 256)
    events = np.arange(1, 399) * 256
    assert abs(ev.erp_snr(x, FS, events)) < 2


def test_erp_snr_needs_complete_epochs():
    with pytest.raises(ValueError):
        ev.erp_snr(np.zeros(100), FS, [10])


# -- ICA ----------------------------------------------------------------------------

def _best_abs_corr(est, true):
    c = np.abs(np.corrcoef(np.vstack([true, est]))[: len(true), len(true):])
    return c.max(axis=1)


def test_fastica_tone_and_square():
    t = np.arange(2048) / FS
    S = np.vstack([np.sin(2 * np.pi * 3 * t), signal.square(2 * np.pi * 7 * t)])
    X = np.array([[1.0, 0.6], [0.4, 1.0]]) @ S
    est, mixing, unmixing = ev.fastica(X, seed=0)
    assert np.all(_best_abs_corr(est, S) > 0.95)
    np.testing.assert_allclose(mixing @ est, X - X.mean(axis=1, keepdims=True), atol=1e-8)


def test_fastica_recovery_rate_over_seeds():
    hits = 0
    for seed in range(100):
        r = rng(seed)
        n = int(r.integers(2, 5))
        S = np.vstack([r.laplace(size=2000), np.sign(r.standard_normal(2000)) * r.uniform(0.5, 1, 2000),
                       r.uniform(-1, 1, 2000), r.laplace(size=2000) ** 3][:n])
        X = r.standard_normal((n, n)) @ S
        est, _, _ = ev.fastica(X, seed=seed)
        hits += bool(np.all(_best_abs_corr(est, S) > 0.95))
    assert hits >= 95


def test_fastica_whitening_and_determinism():
    X = rng(8).standard_normal((3, 3)) @ rng(9).laplace(size=(3, 3000))
    z, K, _ = ev.whiten(X)
    np.testing.assert_allclose(np.cov(z, bias=True), np.eye(3), atol=1e-6)
    est, _, W1 = ev.fastica(X, seed=4)
    np.testing.assert_allclose(np.cov(est, bias=True), np.eye(3), atol=1e-6)
    _, _, W2 = ev.fastica(X, seed=4)
    np.testing.assert_array_equal(W1, W2)


def test_fastica_reports_non_convergence():
    X = rng(10).standard_normal((3, 500))
    with pytest.warns(ev.ConvergenceWarning):
        ev.fastica(X, max_iter=1)


# -- component labelling --------------------------------------------------------------

def _labelled_rate(kind, label):
    hits = 0
    for seed in range(100):
        r = rng(seed)
        n = int(8 * FS)
        labels = ["brain"] * 6 + ["eye", "muscle"]
        A = make_mixing_matrix(8, labels, r)
        if kind == "brain":
            a, topo = synth_brain_source(n, FS, r).samples, A[:, 0]
        else:
            a, topo = synth_artifact_source(kind, n, FS, r).samples, A[:, labels.index(kind)]
        hits += ev.classify_component(a, topo, FS)[0] == label
    return hits


@pytest.mark.parametrize("kind", ["brain", "eye", "muscle"])
def test_classifier_agrees_with_generator(kind):
    assert _labelled_rate(kind, kind) >= 90


def test_heart_and_channel_noise_labels():
    r = rng(11)
    n = int(8 * FS)
    topo = r.standard_normal(8)
    assert ev.classify_component(synth_artifact_source("heart", n, FS, r).samples, topo, FS)[0] == "heart"
    spike = synth_artifact_source("channel_noise", n, FS, r).samples
    assert ev.classify_component(spike, np.eye(8)[3], FS)[0] == "channel_noise"


def test_zero_component_is_other():
    assert ev.classify_component(np.zeros(1024), np.ones(8), FS) == ("other", 0.0)


def _mixture(labels, seed, seconds=20):
    subj = make_subject(8, rng(seed), labels)
    model = subj.record(int(seconds * FS), FS, rng(seed + 1))
    return model.A @ model.S


def test_brain_only_mixture_has_few_nonbrain_components():
    assert ev.count_nonbrain(_mixture(["brain"] * 8, 0), FS) <= 1


def test_artifact_mixture_has_nonbrain_components():
    x = _mixture(["brain"] * 5 + ["eye", "muscle", "heart"], 1)
    n = ev.count_nonbrain(x, FS)
    assert 2 <= n <= 8


# -- CSP + LDA -------------------------------------------------------------------------

def _two_channel_trials(seed, n=20):
    r = rng(seed)
    a = np.stack([np.vstack([3 * r.standard_normal(200), 0.1 * r.standard_normal(200)]) for _ in range(n)])
    b = np.stack([np.vstack([0.1 * r.standard_normal(200), 3 * r.standard_normal(200)]) for _ in range(n)])
    return a, b


def _unit(v):
    return v / np.linalg.norm(v)


def test_csp_two_channel_alignment():
    a, b = _two_channel_trials(0)
    f = ev.csp_filters(a, b, n_keep=2)
    assert abs(_unit(f[-1]) @ [1, 0]) > 0.99
    assert abs(_unit(f[0]) @ [0, 1]) > 0.99


def test_csp_label_swap_reverses_ends():
    a, b = _two_channel_trials(1)
    f, g = ev.csp_filters(a, b, 2), ev.csp_filters(b, a, 2)
    for i, j in ((0, 1), (1, 0)):
        assert abs(_unit(f[i]) @ _unit(g[j])) > 0.999


def test_csp_matches_whitening_oracle():
    r = rng(2)
    a = np.einsum("ij,njt->nit", r.standard_normal((4, 4)), r.standard_normal((15, 4, 300)))
    b = np.einsum("ij,njt->nit", r.standard_normal((4, 4)), r.standard_normal((15, 4, 300)))
    ca, cb = ev._mean_cov(a), ev._mean_cov(b)
    comp = ca + cb + 1e-6 * np.trace(ca + cb) * np.eye(4)
    vals, vecs = np.linalg.eigh(comp)
    P = vecs / np.sqrt(vals)
    lam, U = np.linalg.eigh(P.T @ ca @ P)
    oracle = (P @ U).T
    f = ev.csp_filters(a, b, n_keep=4)
    for k in range(4):
        assert abs(_unit(f[k]) @ _unit(oracle[k])) > 1 - 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 100))
def test_csp_filters_are_scale_invariant(scale):
    a, b = _two_channel_trials(3, n=10)
    f, g = ev.csp_filters(a, b), ev.csp_filters(scale * a, scale * b)
    for k in range(len(f)):
        assert abs(_unit(f[k]) @ _unit(g[k])) > 1 - 1e-6


def test_csp_features_gain_invariance_and_closed_form():
    a, b = _two_channel_trials(4)
    f = ev.csp_filters(a, b, 2)
    feats = ev.csp_features(f, a[:3])
    assert feats.shape == (3, 2)
    np.testing.assert_allclose(ev.csp_features(f, 7 * a[:3]), feats, atol=1e-12)
    x = np.array([[[1.0, -1, 1, -1], [2, 0, -2, 0]]])
    got = ev.csp_features(np.eye(2), x)
    np.testing.assert_allclose(got, np.log([[1 / 3, 2 / 3]]))
    with pytest.raises(ValueError):
        ev.csp_features(np.eye(2), np.ones((1, 2, 4)))


def test_lda_separable_and_identity_direction():
    r = rng(5)
    fa, fb = r.standard_normal((200, 3)) + 4, r.standard_normal((200, 3)) - 4
    w, thr = ev.lda_fit(fa, fb)
    acc = np.mean(np.concatenate([ev.lda_predict(w, thr, fa), 1 - ev.lda_predict(w, thr, fb)]))
    assert acc > 0.95
    mu_a, mu_b = np.array([1.0, 2, 0]), np.array([-1.0, 0, 1])
    e = np.vstack([np.eye(3), -np.eye(3)]) * np.sqrt(3)
    w, _ = ev.lda_fit(e + mu_a, e + mu_b)
    assert abs(_unit(w) @ _unit(mu_a - mu_b)) > 1 - 1e-6


def test_lda_identical_classes_is_chance():
    r = rng(6)
    w, thr = ev.lda_fit(r.standard_normal((100, 4)), r.standard_normal((100, 4)))
    x, y = r.standard_normal((400, 4)), r.integers(0, 2, 400)
    assert abs(np.mean(ev.lda_predict(w, thr, x) == y) - 0.5) <= 0.1


def test_lda_needs_two_samples():
    with pytest.raises(ValueError):
        ev.lda_fit(np.ones((1, 2)), np.ones((3, 2)))


def _lateral_trials(seed, n=30, gain=3.0):
    r = rng(seed)
    out = []
    for cls in (0, 1):
        trials = r.standard_normal((n, 4, 256))
        trials[:, cls] *= gain
        out.append(trials)
    return out


def test_bci_separable_chance_and_determinism():
    a, b = _lateral_trials(0)
    accs = ev.bci_holdout(a, b, runs=10)
    assert len(accs) == 10 and np.mean(accs) > 0.9
    assert ev.bci_holdout(a, b, runs=10) == accs
    c, d = _lateral_trials(1, gain=1.0)
    assert abs(np.mean(ev.bci_holdout(c, d, runs=10)) - 0.5) <= 0.15


def test_bci_denoiser_is_applied_before_split():
    a, b = _lateral_trials(2)
    seen = []

    def spy(x):
        seen.append(x.shape)
        return x

    ev.bci_holdout(a, b, denoiser=spy, runs=3)
    assert seen == [(60, 4, 256)]
    with pytest.raises(ValueError):
        ev.bci_holdout(a[:4], b)


# -- spider plots ------------------------------------------------------------------------

def test_shoelace_examples():
    assert ev.shoelace_area([(0, 0), (1, 0), (1, 1), (0, 1)]) == 1
    assert ev.shoelace_area([(0, 0), (4, 0), (0, 3)]) == 6
    assert ev.shoelace_area([(0, 3), (4, 0), (0, 0)]) == 6
    with pytest.raises(ValueError):
        ev.shoelace_area([(0, 0), (1, 1)])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=8),
       st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 4))
def test_shoelace_translation_and_scaling(points, dx, dy, s):
    p = np.array(points)
    area = ev.shoelace_area(p)
    assert ev.shoelace_area(p + [dx, dy]) == pytest.approx(area, abs=1e-8)
    assert ev.shoelace_area(s * p) == pytest.approx(s ** 2 * area, rel=1e-9, abs=1e-8)


@pytest.mark.parametrize("r", [0.5, 1.0, 3.0])
def test_spider_square(r):
    assert ev.shoelace_area(ev.spider_points([r] * 4)) == pytest.approx(2 * r ** 2)


def test_spider_zero_values():
    pts = ev.spider_points([2.0, 0.0, 1.0, 3.0])
    np.testing.assert_allclose(pts[1], [0, 0], atol=1e-15)
    assert ev.shoelace_area(ev.spider_points([0.0] * 6)) == 0
