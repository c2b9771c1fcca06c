from dataclasses import replace

import numpy as np
import pytest

from caoloc.signal_core import LEAD_INDEX, CaoClass
from caoloc.synth_ecg import (
    ANTERIOR,
    INFERIOR,
    LATERAL,
    WAVES,
    NoiseConfig,
    SynthConfig,
    generate_beat_template,
    generate_dataset,
    generate_record,
)

FS = 500.0
QUIET = NoiseConfig.silent()


def st_offset(record, gt, lead):
    """Mean over [R+0.06, R+0.14] minus mean over a pre-P window, averaged over interior beats."""
    t = np.arange(record.n_samples) / record.sample_rate_hz
    x = record.lead(lead)
    vals = []
    for r in gt.r_peak_times_s[1:-1]:
        st = x[(t >= r + 0.06) & (t <= r + 0.14)].mean()
        base = x[(t >= r - 0.32) & (t <= r - 0.28)].mean()
        vals.append(st - base)
    return float(np.mean(vals))


def test_template_peak_at_r():
    t, beat = generate_beat_template(FS)
    assert abs(t[np.argmax(beat)]) <= 1 / FS


def test_template_sampling_rates_agree():
    t5, b5 = generate_beat_template(500)
    t10, b10 = generate_beat_template(1000)
    shared = np.intersect1d(np.round(t5 * 1000).astype(int), np.round(t10 * 1000).astype(int))
    i5 = np.searchsorted(np.round(t5 * 1000).astype(int), shared)
    i10 = np.searchsorted(np.round(t10 * 1000).astype(int), shared)
    assert np.max(np.abs(b5[i5] - b10[i10])) < 1e-6
    # analytic oracle
    ts = shared / 1000.0
    ref = sum(a * np.exp(-0.5 * ((ts - mu) / s) ** 2) for a, mu, s in WAVES.values())
    assert np.max(np.abs(b5[i5] - ref)) < 1e-12


def test_template_zero_amplitudes():
    flat = {k: (0.0, mu, s) for k, (_, mu, s) in WAVES.items()}
    _, beat = generate_beat_template(FS, flat)
    assert np.all(beat == 0)


def test_template_rejects_low_fs():
    with pytest.raises(ValueError):
        generate_beat_template(50)


def test_lad_st_elevation_on_v2():
    rec, gt = generate_record(SynthConfig(label=CaoClass.LAD, noise=QUIET, rng_seed=11))
    assert st_offset(rec, gt, "V2") == pytest.approx(0.2, rel=0.05)


def test_rca_st_pattern():
    rec, gt = generate_record(SynthConfig(label=CaoClass.RCA, noise=QUIET, rng_seed=12))
    assert st_offset(rec, gt, "III") == pytest.approx(0.2, rel=0.05)
    assert st_offset(rec, gt, "aVL") == pytest.approx(-0.1, rel=0.05)


def test_same_seed_bit_identical():
    cfg = SynthConfig(label=CaoClass.LCX, rng_seed=99)
    a, ga = generate_record(cfg)
    b, gb = generate_record(cfg)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(ga.r_peak_times_s, gb.r_peak_times_s)
    c, _ = generate_record(replace(cfg, rng_seed=100))
    assert not np.array_equal(a.samples, c.samples)


@pytest.mark.parametrize("seed", range(8))
def test_ground_truth_peaks(seed):
    cfg = SynthConfig(label=CaoClass(seed % 3), noise=QUIET, rng_seed=seed)
    rec, gt = generate_record(cfg)
    times = gt.r_peak_times_s
    assert np.all(np.diff(times) > 0) and times[0] >= 0 and times[-1] <= cfg.duration_s
    rr = np.mean(np.diff(times))
    assert abs(len(times) - np.floor(cfg.duration_s / rr)) <= 1
    lead2 = gt.clean[LEAD_INDEX["II"]]
    for r in times:
        c = int(round(r * FS))
        lo, hi = max(c - 2, 0), min(c + 3, rec.n_samples)
        window = lead2[max(c - 10, 0) : c + 11]
        assert np.argmax(lead2[lo:hi]) + lo - c in range(-2, 3)
        assert lead2[lo:hi].max() == pytest.approx(window.max())


def test_noise_free_has_no_noise_component():
    rec, gt = generate_record(SynthConfig(noise=QUIET, rng_seed=5))
    noise = rec.samples - gt.clean
    n = rec.n_samples
    k = int(round(60 * n / FS))
    assert np.max(np.abs(np.fft.rfft(noise, axis=1)[:, k])) < 1e-9


def test_powerline_bin_amplitude():
    amp = 0.15
    cfg = SynthConfig(noise=NoiseConfig(0.0, 0.2, amp, 60.0, 0.0), rng_seed=6)
    rec, _ = generate_record(cfg)
    n = rec.n_samples
    k = int(round(60 * n / FS))
    mags = np.abs(np.fft.rfft(rec.samples, axis=1)[:, k])
    assert np.allclose(mags, amp / 2 * n, rtol=0.05)


def test_class_signatures_are_separable():
    signs = {}
    for label in CaoClass:
        rec, gt = generate_record(SynthConfig(label=label, noise=QUIET, rng_seed=21))
        triple = [np.mean([st_offset(rec, gt, lead) for lead in group]) for group in (ANTERIOR, LATERAL, INFERIOR)]
        signs[label] = tuple(np.sign(np.round(triple, 2)).astype(int))
    assert len(set(signs.values())) == 3
    assert signs[CaoClass.LAD][0] == 1 and signs[CaoClass.LCX][1] == 1 and signs[CaoClass.RCA][2] == 1


def test_dataset_counts_and_determinism():
    assert generate_dataset((0, 0, 0), seed=1) == []
    small = generate_dataset((3, 1, 2), seed=7)
    labels = [r.label for r, _ in small]
    assert labels.count(CaoClass.LAD) == 3 and labels.count(CaoClass.LCX) == 1 and labels.count(CaoClass.RCA) == 2
    again = generate_dataset((3, 1, 2), seed=7)
    assert all(np.array_equal(a.samples, b.samples) for (a, _), (b, _) in zip(small, again))
    assert len({r.record_id for r, _ in small}) == 6


@pytest.mark.slow
def test_default_dataset_counts():
    data = generate_dataset((120, 20, 80), seed=0)
    labels = [r.label for r, _ in data]
    assert len(data) == 220
    assert (labels.count(CaoClass.LAD), labels.count(CaoClass.LCX), labels.count(CaoClass.RCA)) == (120, 20, 80)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"duration_s": 3.0},
        {"fs_hz": 110.0},
        {"st_elevation_mv": -0.1},
        {"noise": NoiseConfig(white_noise_std_mv=-1.0)},
        {"heart_rate_bpm": (80.0, 60.0)},
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        generate_record(SynthConfig(**kwargs))


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        generate_dataset((-1, 0, 0))
