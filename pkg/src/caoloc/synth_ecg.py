"""Synthetic 12-lead ECG with class-dependent ST-segment shifts.

Each beat is a sum of five Gaussian bumps (P, Q, R, S, T) placed relative
to the R peak. The beat is projected onto the 12 leads with the fixed gains
in :data:`LEAD_GAINS`; an occlusion class adds an ST elevation on its lead
group and a reciprocal depression of half that size on the opposing group.

All randomness comes from numpy's PCG64 generator, so a seed reproduces a
record bit for bit on any platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .signal_core import LEAD_INDEX, LEADS, CaoClass, EcgRecord, write_records

# (amplitude mV, centre s relative to R, sigma s)
WAVES = {
    "P": (0.15, -0.20, 0.025),
    "Q": (-0.10, -0.03, 0.010),
    "R": (1.00, 0.00, 0.012),
    "S": (-0.20, 0.03, 0.010),
    "T": (0.30, 0.25, 0.050),
}

LEAD_GAINS = {
    "I": 0.6, "II": 1.0, "III": 0.5, "aVR": -0.8, "aVL": 0.3, "aVF": 0.7,
    "V1": -0.4, "V2": 0.4, "V3": 0.7, "V4": 0.9, "V5": 0.8, "V6": 0.6,
}

ANTERIOR = ("V1", "V2", "V3", "V4")
LATERAL = ("I", "aVL", "V5", "V6")
INFERIOR = ("II", "III", "aVF")

ST_ELEVATION = {
    CaoClass.LAD: ANTERIOR,
    CaoClass.LCX: LATERAL,
    CaoClass.RCA: INFERIOR,
}
ST_RECIPROCAL = {
    CaoClass.LAD: INFERIOR,
    CaoClass.LCX: ("V1", "V2"),
    CaoClass.RCA: ("I", "aVL"),
}

ST_START, ST_END, ST_RAMP = 0.04, 0.16, 0.02
BEAT_SPAN = (-0.35, 0.55)


@dataclass(frozen=True)
class NoiseConfig:
    baseline_wander_amp_mv: float = 0.3
    baseline_wander_freq_hz: float = 0.2
    powerline_amp_mv: float = 0.15
    powerline_freq_hz: float = 60.0
    white_noise_std_mv: float = 0.05

    @classmethod
    def silent(cls) -> "NoiseConfig":
        return cls(0.0, 0.2, 0.0, 60.0, 0.0)


@dataclass(frozen=True)
class SynthConfig:
    label: CaoClass = CaoClass.LAD
    fs_hz: float = 500.0
    duration_s: float = 12.0
    heart_rate_bpm: tuple = (60.0, 80.0)
    st_elevation_mv: float = 0.2
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    rng_seed: int = 0

    def validate(self) -> None:
        n = self.noise
        amps = (self.st_elevation_mv, n.baseline_wander_amp_mv, n.powerline_amp_mv, n.white_noise_std_mv)
        if min(amps) < 0:
            raise ValueError("amplitudes must be non-negative")
        if not self.fs_hz > 2 * n.powerline_freq_hz:
            raise ValueError(f"fs {self.fs_hz} Hz must exceed twice the powerline frequency {n.powerline_freq_hz} Hz")
        if self.fs_hz < 100:
            raise ValueError("fs must be at least 100 Hz")
        if self.duration_s < 4:
            raise ValueError("duration must be at least 4 s")
        lo, hi = self.heart_rate_bpm
        if not 0 < lo <= hi:
            raise ValueError(f"bad heart-rate range {self.heart_rate_bpm}")


@dataclass
class GroundTruth:
    r_peak_times_s: np.ndarray
    label: CaoClass
    clean: np.ndarray  # (12, N) signal before noise


def _bumps(t, waves):
    out = np.zeros_like(t)
    for amp, mu, sigma in waves.values():
        out += amp * np.exp(-0.5 * ((t - mu) / sigma) ** 2)
    return out


def st_window(t) -> np.ndarray:
    """Raised-cosine plateau over the ST segment, ``t`` relative to R."""
    t = np.asarray(t, dtype=np.float64)
    w = np.zeros_like(t)
    up = (t >= ST_START) & (t < ST_START + ST_RAMP)
    flat = (t >= ST_START + ST_RAMP) & (t <= ST_END - ST_RAMP)
    down = (t > ST_END - ST_RAMP) & (t <= ST_END)
    w[up] = 0.5 * (1 - np.cos(np.pi * (t[up] - ST_START) / ST_RAMP))
    w[flat] = 1.0
    w[down] = 0.5 * (1 + np.cos(np.pi * (t[down] - (ST_END - ST_RAMP)) / ST_RAMP))
    return w


def generate_beat_template(fs: float, waves: dict | None = None):
    """One cardiac cycle sampled at ``fs``; returns ``(t, beat)`` with t=0 at R."""
    if fs < 100:
        raise ValueError(f"fs must be >= 100 Hz, got {fs}")
    waves = WAVES if waves is None else waves
    lo = math.ceil(BEAT_SPAN[0] * fs)
    hi = math.floor(BEAT_SPAN[1] * fs)
    t = np.arange(lo, hi + 1) / fs
    return t, _bumps(t, waves)


def st_shift_per_lead(label: CaoClass, st_elevation_mv: float) -> np.ndarray:
    shift = np.zeros(12)
    for name in ST_ELEVATION[label]:
        shift[LEAD_INDEX[name]] = st_elevation_mv
    for name in ST_RECIPROCAL[label]:
        shift[LEAD_INDEX[name]] = -0.5 * st_elevation_mv
    return shift


def _beat_times(rng, cfg):
    lo, hi = cfg.heart_rate_bpm
    rr = 60.0 / rng.uniform(lo, hi)
    t = rng.uniform(0.35, 0.35 + rr)
    times = []
    while t < cfg.duration_s:
        times.append(t)
        t += rr * (1.0 + rng.uniform(-0.03, 0.03))
    return np.array(times)


def generate_record(config: SynthConfig, record_id: str = "synth") -> tuple[EcgRecord, GroundTruth]:
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    fs = config.fs_hz
    n = int(round(config.duration_s * fs))
    t = np.arange(n) / fs
    r_times = _beat_times(rng, config)

    base = np.zeros(n)
    st = np.zeros(n)
    half = int(math.ceil(max(-BEAT_SPAN[0], BEAT_SPAN[1]) * fs)) + 1
    for r in r_times:
        c = int(round(r * fs))
        sl = slice(max(c - half, 0), min(c + half, n))
        rel = t[sl] - r
        base[sl] += _bumps(rel, WAVES)
        st[sl] += st_window(rel)

    gains = np.array([LEAD_GAINS[name] for name in LEADS])
    shift = st_shift_per_lead(config.label, config.st_elevation_mv)
    clean = gains[:, None] * base[None, :] + shift[:, None] * st[None, :]

    nz = config.noise
    wander_phase = rng.uniform(0, 2 * np.pi, size=12)
    line_phase = rng.uniform(0, 2 * np.pi, size=12)
    white = rng.standard_normal((12, n))
    noisy = (
        clean
        + nz.baseline_wander_amp_mv * np.sin(2 * np.pi * nz.baseline_wander_freq_hz * t[None, :] + wander_phase[:, None])
        + nz.powerline_amp_mv * np.sin(2 * np.pi * nz.powerline_freq_hz * t[None, :] + line_phase[:, None])
        + nz.white_noise_std_mv * white
    )
    record = EcgRecord(record_id=record_id, samples=noisy, sample_rate_hz=fs, label=config.label)
    return record, GroundTruth(r_peak_times_s=r_times, label=config.label, clean=clean)


def generate_dataset(counts=(120, 20, 80), base_config: SynthConfig | None = None, seed: int = 0):
    """Records for (LAD, LCX, RCA) counts; record ``i`` gets the ``i``-th child seed."""
    if any(c < 0 for c in counts):
        raise ValueError(f"counts must be non-negative, got {counts}")
    base = base_config or SynthConfig()
    total = sum(counts)
    children = np.random.SeedSequence(seed).spawn(total)
    out = []
    i = 0
    for label, count in zip(CaoClass, counts):
        for j in range(count):
            child_seed = int(children[i].generate_state(1, dtype=np.uint64)[0])
            cfg = replace(base, label=label, rng_seed=child_seed)
            out.append(generate_record(cfg, record_id=f"{label.name}-{j:04d}"))
            i += 1
    return out


def write_dataset(directory, pairs) -> Path:
    """Records as manifest + CSVs, plus ``ground_truth.jsonl``."""
    directory = Path(directory)
    write_records(directory, [rec for rec, _ in pairs])
    with open(directory / "ground_truth.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec, gt in pairs:
            fh.write(json.dumps({
                "record_id": rec.record_id,
                "r_peak_times_s": [round(float(v), 9) for v in gt.r_peak_times_s],
                "class": gt.label.name,
            }) + "\n")
    return directory


def read_ground_truth(directory) -> dict:
    out = {}
    with open(Path(directory) / "ground_truth.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entry = json.loads(line)
                out[entry["record_id"]] = entry
    return out
