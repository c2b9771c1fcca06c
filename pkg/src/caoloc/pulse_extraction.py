"""R-peak detection and beat segmentation.

``build_dataset`` turns records into fixed-length 12-lead pulses. The
preprocessed arm denoises, finds R peaks on lead II and cuts an aligned
window around each; the raw arm cuts unaligned, back-to-back windows of the
same length from the unfiltered record, so both arms give the classifier
identically shaped inputs.
"""

from __future__ import annotations

import enum
import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .signal_core import (
    CaoClass,
    EcgRecord,
    FilterSpec,
    apply_filter,
    cascade,
    denoise_record,
    design_highpass_butterworth,
    design_lowpass_butterworth,
)

DETECTION_LEAD = "II"
DEFAULT_WINDOW = (0.25, 0.45)
SCALE_FLOOR = 1e-6


class Provenance(enum.IntEnum):
    RAW = 0
    PREPROCESSED = 1


@dataclass
class Pulse:
    source_record_id: str
    leads: np.ndarray  # (12, L)
    r_peak_index: int
    label: CaoClass

    def __post_init__(self):
        self.label = CaoClass(self.label)
        if self.leads.ndim != 2 or self.leads.shape[0] != 12:
            raise ValueError(f"pulse leads must be (12, L), got {self.leads.shape}")
        if not 0 <= self.r_peak_index < self.leads.shape[1]:
            raise ValueError(f"r_peak_index {self.r_peak_index} outside window of {self.leads.shape[1]}")

    @property
    def length(self) -> int:
        return self.leads.shape[1]


@dataclass
class PulseDataset:
    pulses: list
    window_pre_s: float
    window_post_s: float
    sample_rate_hz: float
    provenance: Provenance

    def __post_init__(self):
        lengths = {p.length for p in self.pulses}
        if len(lengths) > 1:
            raise ValueError(f"pulses have mixed lengths {sorted(lengths)}")

    def __len__(self):
        return len(self.pulses)

    @property
    def pulse_length(self) -> int:
        return window_length(self.window_pre_s, self.window_post_s, self.sample_rate_hz)

    def class_counts(self) -> dict:
        c = Counter(p.label for p in self.pulses)
        return {cls.name: c.get(cls, 0) for cls in CaoClass}

    def arrays(self):
        """``(x, labels, record_ids)`` with x of shape (n, 12, L)."""
        if not self.pulses:
            return np.zeros((0, 12, self.pulse_length)), np.zeros(0, dtype=np.int64), []
        x = np.stack([p.leads for p in self.pulses])
        y = np.array([int(p.label) for p in self.pulses], dtype=np.int64)
        return x, y, [p.source_record_id for p in self.pulses]

    def subset(self, record_ids) -> "PulseDataset":
        keep = set(record_ids)
        return PulseDataset(
            [p for p in self.pulses if p.source_record_id in keep],
            self.window_pre_s, self.window_post_s, self.sample_rate_hz, self.provenance,
        )


def window_length(pre_s, post_s, fs) -> int:
    return int(round(pre_s * fs)) + int(round(post_s * fs))


# -- detection -----------------------------------------------------------------

def _qrs_energy(x, fs):
    band = cascade(
        design_highpass_butterworth(5.0, 2, fs),
        design_lowpass_butterworth(15.0, 2, fs),
    )
    bp = apply_filter(x, band, zero_phase=True)
    # five-point derivative, centred
    d = np.convolve(bp, np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * fs / 8.0, mode="same")
    width = max(int(round(0.150 * fs)), 1)
    mwi = np.convolve(d * d, np.ones(width) / width, mode="same")
    return bp, d, mwi


def detect_r_peaks(lead_signal, fs: float) -> np.ndarray:
    """Pan-Tompkins style QRS detector.

    Band-pass 5-15 Hz, five-point derivative, squaring, 150 ms moving-window
    integration, then adaptive signal/noise thresholds with a 200 ms
    refractory period, T-wave rejection and RR search-back. Each detection
    is finally moved to the maximum of ``lead_signal`` within 25 ms.
    """
    x = np.ascontiguousarray(lead_signal, dtype=np.float64)
    if not fs > 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    if x.size < 2 * fs:
        raise ValueError(f"need at least 2 s of signal ({int(2 * fs)} samples), got {x.size}")

    bp, deriv, mwi = _qrs_energy(x, fs)
    refractory = int(round(0.200 * fs))
    cands = kernels.local_maxima(np.ascontiguousarray(mwi), refractory)
    if cands.size == 0:
        return np.zeros(0, dtype=np.intp)

    learn = mwi[: int(2 * fs)]
    spki = learn.max() / 3.0
    npki = learn.mean() / 2.0
    thr1 = npki + 0.25 * (spki - npki)

    slope = np.abs(deriv)
    half_qrs = int(round(0.075 * fs))

    def max_slope(i):
        return slope[max(i - half_qrs, 0) : i + half_qrs + 1].max()

    qrs = []
    for i in cands:
        pk = mwi[i]
        if qrs and len(qrs) >= 2:
            rr_mean = np.mean(np.diff(qrs[-9:]))
            if i - qrs[-1] > 1.66 * rr_mean:
                # search back for a missed beat above the lower threshold
                between = cands[(cands > qrs[-1] + refractory) & (cands < i - refractory)]
                between = between[mwi[between] > 0.5 * thr1]
                if between.size:
                    j = between[np.argmax(mwi[between])]
                    qrs.append(int(j))
                    spki = 0.25 * mwi[j] + 0.75 * spki
        if pk > thr1:
            if qrs and i - qrs[-1] < int(round(0.360 * fs)) and max_slope(i) < 0.5 * max_slope(qrs[-1]):
                npki = 0.125 * pk + 0.875 * npki
            else:
                qrs.append(int(i))
                spki = 0.125 * pk + 0.875 * spki
        else:
            npki = 0.125 * pk + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)

    coarse = int(round(0.100 * fs))
    fine = int(round(0.025 * fs))
    n = x.size
    peaks = []
    for i in qrs:
        lo, hi = max(i - coarse, 0), min(i + coarse + 1, n)
        c = lo + int(np.argmax(np.abs(bp[lo:hi])))
        lo, hi = max(c - fine, 0), min(c + fine + 1, n)
        p = lo + int(np.argmax(x[lo:hi]))
        if peaks and p - peaks[-1] < refractory:
            if x[p] > x[peaks[-1]]:
                peaks[-1] = p
            continue
        peaks.append(p)
    return np.asarray(peaks, dtype=np.intp)


# -- segmentation --------------------------------------------------------------

def normalize_window(window: np.ndarray) -> np.ndarray:
    """Per-lead median removal, then one shared scale so max |x| is 1."""
    centred = window - np.median(window, axis=1, keepdims=True)
    scale = max(float(np.abs(centred).max()), SCALE_FLOOR)
    return centred / scale


def extract_pulses(record: EcgRecord, peaks, window_pre_s: float = DEFAULT_WINDOW[0],
                   window_post_s: float = DEFAULT_WINDOW[1]) -> list[Pulse]:
    fs = record.sample_rate_hz
    peaks = np.asarray(peaks, dtype=np.int64)
    n = record.n_samples
    if peaks.size:
        if np.any(np.diff(peaks) <= 0):
            raise ValueError("peaks must be strictly increasing")
        if peaks[0] < 0 or peaks[-1] >= n:
            raise ValueError(f"peaks must lie in [0, {n})")
    pre = int(round(window_pre_s * fs))
    post = int(round(window_post_s * fs))
    out = []
    for p in peaks:
        lo, hi = p - pre, p + post
        if lo < 0 or hi > n:
            continue
        out.append(Pulse(record.record_id, normalize_window(record.samples[:, lo:hi]), pre, record.label))
    return out


def raw_windows(record: EcgRecord, length: int, nominal_r_index: int) -> list[Pulse]:
    """Back-to-back windows from sample 0 with no filtering or alignment."""
    out = []
    for k in range(record.n_samples // length):
        seg = record.samples[:, k * length : (k + 1) * length]
        out.append(Pulse(record.record_id, normalize_window(seg), nominal_r_index, record.label))
    return out


def record_pulses(record: EcgRecord, preprocess: bool, spec: FilterSpec = FilterSpec(),
                  window=DEFAULT_WINDOW) -> list[Pulse]:
    pre_s, post_s = window
    fs = record.sample_rate_hz
    if preprocess:
        clean = denoise_record(record, spec)
        peaks = detect_r_peaks(clean.lead(DETECTION_LEAD), fs)
        return extract_pulses(clean, peaks, pre_s, post_s)
    return raw_windows(record, window_length(pre_s, post_s, fs), int(round(pre_s * fs)))


def build_dataset(records, preprocess: bool, spec: FilterSpec = FilterSpec(),
                  window=DEFAULT_WINDOW) -> PulseDataset:
    records = list(records)
    if not records:
        raise ValueError("no records given")
    rates = {r.sample_rate_hz for r in records}
    if len(rates) != 1:
        raise ValueError(f"records have mixed sample rates {sorted(rates)}")
    pulses = []
    for rec in sorted(records, key=lambda r: r.record_id):
        pulses.extend(record_pulses(rec, preprocess, spec, window))
    prov = Provenance.PREPROCESSED if preprocess else Provenance.RAW
    return PulseDataset(pulses, window[0], window[1], rates.pop(), prov)


# -- pulses.bin ----------------------------------------------------------------

MAGIC = b"CAOP"
VERSION = 1
_HEADER = struct.Struct("<4sIIQdB")
_PULSE_HEAD = struct.Struct("<BI")


def save_pulses(dataset: PulseDataset, directory, config: dict | None = None) -> Path:
    """Write ``pulses.bin`` and a ``pulses.meta.json`` summary (with ``config`` if given)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    L = dataset.pulse_length
    with open(directory / "pulses.bin", "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, L, len(dataset), float(dataset.sample_rate_hz),
                              int(dataset.provenance)))
        for p in dataset.pulses:
            rid = p.source_record_id.encode("utf-8")
            fh.write(struct.pack("<I", len(rid)))
            fh.write(rid)
            fh.write(_PULSE_HEAD.pack(int(p.label), int(p.r_peak_index)))
            fh.write(np.ascontiguousarray(p.leads, dtype="<f4").tobytes())
    meta = {
        "provenance": dataset.provenance.name,
        "sample_rate_hz": dataset.sample_rate_hz,
        "window_pre_s": dataset.window_pre_s,
        "window_post_s": dataset.window_post_s,
        "pulse_length": L,
        "count": len(dataset),
        "class_counts": dataset.class_counts(),
        "records": len({p.source_record_id for p in dataset.pulses}),
    }
    if config is not None:
        meta["config"] = config
    with open(directory / "pulses.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory / "pulses.bin"


def load_pulses(directory) -> PulseDataset:
    directory = Path(directory)
    with open(directory / "pulses.bin", "rb") as fh:
        data = fh.read()
    magic, version, L, count, fs, prov = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{directory / 'pulses.bin'} is not a pulse file (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"unsupported pulse file version {version}")
    off = _HEADER.size
    pulses = []
    for _ in range(count):
        (nid,) = struct.unpack_from("<I", data, off)
        off += 4
        rid = data[off : off + nid].decode("utf-8")
        off += nid
        label, r_idx = _PULSE_HEAD.unpack_from(data, off)
        off += _PULSE_HEAD.size
        leads = np.frombuffer(data, dtype="<f4", count=12 * L, offset=off).reshape(12, L)
        off += 12 * L * 4
        pulses.append(Pulse(rid, leads.astype(np.float64), r_idx, CaoClass(label)))
    meta_path = directory / "pulses.meta.json"
    pre_s, post_s = DEFAULT_WINDOW
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        pre_s, post_s = meta["window_pre_s"], meta["window_post_s"]
    return PulseDataset(pulses, pre_s, post_s, fs, Provenance(prov))
