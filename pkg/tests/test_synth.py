from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artdenoise.synth import (ARTIFACT_KINDS, MixingModel, SynthConfig, back_project, band_fraction,
                              build_pair, generate_pairset, make_mixing_matrix, make_subject,
                              segment, split_dataset, subject_labels, synth_artifact_source,
                              synth_brain_source)

FS = 256.0
N = 10 * 256


def rng(seed=0):
    return np.random.default_rng(seed)


def test_brain_source_spectrum():
    x = synth_brain_source(N, FS, rng(1)).samples
    assert x.std() == pytest.approx(1.0)
    f = np.fft.rfftfreq(N, 1 / FS)
    p = np.abs(np.fft.rfft(x)) ** 2
    band = (f >= 1) & (f <= 40)
    slope = np.polyfit(np.log10(f[band]), np.log10(p[band]), 1)[0]
    assert -2 < slope < 0
    assert band_fraction(x, FS, 8, 12) > band_fraction(x, FS, 25, 35)


def test_sources_are_deterministic():
    a = synth_brain_source(N, FS, rng(3)).samples
    b = synth_brain_source(N, FS, rng(3)).samples
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_eye_source_is_slow(seed):
    x = synth_artifact_source("eye", N, FS, rng(seed)).samples
    assert band_fraction(x, FS, 0, 5) >= 0.8


@pytest.mark.parametrize("seed", range(5))
def test_muscle_source_is_in_band(seed):
    x = synth_artifact_source("muscle", N, FS, rng(seed)).samples
    assert band_fraction(x, FS, 20, 45) >= 0.7


@pytest.mark.parametrize("seed", range(5))
def test_heart_autocorrelation_peaks_at_beat_period(seed):
    src = synth_artifact_source("heart", N, FS, rng(seed))
    x = src.samples - src.samples.mean()
    ac = np.correlate(x, x, mode="full")[N - 1:]
    ac /= ac[0]
    lo, hi = int(0.5 * FS), int(1.5 * FS)
    lag = lo + int(np.argmax(ac[lo:hi]))
    assert abs(lag / FS - src.params["beat_period_s"]) < 2 / FS


@pytest.mark.parametrize("kind", ARTIFACT_KINDS)
def test_artifact_sources_have_unit_variance(kind):
    x = synth_artifact_source(kind, N, FS, rng(4)).samples
    assert x.std() == pytest.approx(1.0)


def test_unknown_kind_and_low_rate():
    with pytest.raises(ValueError):
        synth_artifact_source("sneeze", N, FS, rng())
    with pytest.raises(ValueError):
        synth_artifact_source("eye", N, 64.0, rng())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_mixing_matrix_properties(seed):
    r = rng(seed)
    labels = subject_labels(8, r)
    A = make_mixing_matrix(8, labels, r)
    np.testing.assert_allclose(np.linalg.norm(A, axis=0), 1.0, atol=1e-9)
    s = np.linalg.svd(A, compute_uv=False)
    assert s[0] / s[-1] <= 1e4
    for j, lab in enumerate(labels):
        if lab == "channel_noise":
            assert np.count_nonzero(A[:, j]) == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 12))
def test_subject_labels_composition(seed, c):
    labels = subject_labels(c, rng(seed))
    assert len(labels) == c
    assert 3 <= labels.count("brain") <= c - 2
    assert "eye" in labels and "muscle" in labels


def test_mixing_too_many_sources():
    with pytest.raises(ValueError):
        make_mixing_matrix(3, ["brain"] * 4, rng())


def test_back_project_examples():
    S = rng().standard_normal((3, 5))
    np.testing.assert_array_equal(back_project(np.eye(3), S, [0, 1, 2]), S)
    A = rng(1).standard_normal((4, 3))
    np.testing.assert_allclose(back_project(A, S, [1]), np.outer(A[:, 1], S[1]))
    out = back_project(np.array([[1.0, 0], [0, 2]]), np.array([[1.0, 1], [2, 2]]), [0, 1])
    np.testing.assert_array_equal(out, [[1, 1], [4, 4]])
    with pytest.raises(ValueError):
        back_project(A, S, [])


def _model(seed=0, labels=None):
    r = rng(seed)
    subj = make_subject(8, r, labels)
    return subj.record(N, FS, r)


def test_pair_mixing_is_linear():
    model = _model()
    pair = build_pair(model, 2, rng(5))
    np.testing.assert_array_equal(pair.noisy, pair.clean + pair.artifact)
    np.testing.assert_allclose(pair.noisy - pair.clean, pair.artifact, atol=1e-12)
    np.testing.assert_array_equal(pair.clean, back_project(model.A, model.S, model.brain_idx))
    assert pair.tag == model.labels[pair.chosen[0]]


def test_zero_artifact_gain_leaves_clean():
    pair = build_pair(_model(), 2, rng(6), artifact_gain=0.0)
    np.testing.assert_array_equal(pair.noisy, pair.clean)


def test_single_eye_artifact_is_slow_on_peak_channel():
    model = _model(2, ["brain"] * 4 + ["eye", "muscle", "heart", "other"])
    r = rng(7)
    while True:
        pair = build_pair(model, 1, r)
        if pair.tag == "eye":
            break
    diff = pair.noisy - pair.clean
    ch = int(np.argmax((diff ** 2).sum(axis=1)))
    assert band_fraction(diff[ch], FS, 0, 5) >= 0.8


def test_build_pair_errors():
    model = _model()
    with pytest.raises(ValueError):
        build_pair(model, 0, rng())
    no_brain = MixingModel(model.A[:, 3:], model.S[3:], model.labels[3:], FS)
    no_brain.labels = ["eye"] * len(no_brain.labels)
    with pytest.raises(ValueError):
        build_pair(no_brain, 1, rng())


def test_segment_counts_and_standardisation():
    x = rng().standard_normal((3, 201))
    assert len(segment(x[:, :200], 100)) == 2
    segs = segment(x, 100)
    assert len(segs) == 2
    np.testing.assert_allclose(segs[1] * x[:, 100:200].std(1, keepdims=True)
                               + x[:, 100:200].mean(1, keepdims=True), x[:, 100:200])
    for s in segs:
        assert np.all(np.abs(s.mean(axis=1)) < 1e-6)
    with pytest.raises(ValueError):
        segment(x, 300)


def test_split_counts_and_determinism():
    tags = ["eye", "muscle", "heart", "other", "channel_noise"] * 20
    a = split_dataset(tags, seed=3)
    assert Counter(a) == {"train": 80, "val": 10, "test": 10}
    np.testing.assert_array_equal(a, split_dataset(tags, seed=3))
    with pytest.raises(ValueError):
        split_dataset(tags, ratios=(0.8, 0.1, 0.2))
    with pytest.raises(ValueError):
        split_dataset(tags[:9])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(ARTIFACT_KINDS), min_size=10, max_size=200), st.integers(0, 99))
def test_split_is_stratified(tags, seed):
    split = split_dataset(tags, seed=seed)
    for tag in set(tags):
        sub = split[np.array(tags) == tag]
        for name, ratio in zip(("train", "val", "test"), (0.8, 0.1, 0.1)):
            assert abs(np.sum(sub == name) - ratio * len(sub)) <= 1


def test_generated_dataset_is_reproducible():
    cfg = SynthConfig(channels=8, seconds=0.5, pairs=60, subjects=2, recording_seconds=5)
    a, b = generate_pairset(cfg, 11), generate_pairset(cfg, 11)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    np.testing.assert_array_equal(a.clean, b.clean)
    assert a.tags == b.tags and list(a.split) == list(b.split)
    assert a.noisy.shape == (60, 8, 128)
    assert np.all(np.abs(a.clean.mean(axis=-1)) < 1e-6)
    assert not np.array_equal(generate_pairset(cfg, 12).noisy, a.noisy)
