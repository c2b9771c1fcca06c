"""ECG record types and the noise-reduction filters.

Filters are stored as second-order sections (one row ``b0 b1 b2 1 a1 a2``
per biquad) and run through :func:`caoloc.kernels.sosfilt`. Everything is
float64.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels

LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
LEAD_INDEX = {name: i for i, name in enumerate(LEADS)}


class CaoClass(enum.IntEnum):
    LAD = 0
    LCX = 1
    RCA = 2


@dataclass
class EcgRecord:
    record_id: str
    samples: np.ndarray
    sample_rate_hz: float
    label: CaoClass
    leads: tuple = LEADS
    denoised: bool = False

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        self.label = CaoClass(self.label)
        if tuple(self.leads) != LEADS:
            raise ValueError(f"leads must be {LEADS}, got {tuple(self.leads)}")
        if self.samples.ndim != 2 or self.samples.shape[0] != 12 or self.samples.shape[1] < 1:
            raise ValueError(f"samples must have shape (12, N>=1), got {self.samples.shape}")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"record {self.record_id!r} contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def lead(self, name: str) -> np.ndarray:
        return self.samples[LEAD_INDEX[name]]


@dataclass(frozen=True)
class FilterSpec:
    notch_freq_hz: float = 60.0
    notch_q: float = 30.0
    highpass_cutoff_hz: float = 0.5
    highpass_order: int = 2
    zero_phase: bool = True

    def validate(self, fs: float) -> None:
        nyq = fs / 2.0
        if not 0 < self.notch_freq_hz < nyq:
            raise ValueError(f"notch frequency {self.notch_freq_hz} Hz outside (0, {nyq})")
        if not 0 < self.highpass_cutoff_hz < nyq:
            raise ValueError(f"high-pass cutoff {self.highpass_cutoff_hz} Hz outside (0, {nyq})")
        if not self.notch_q > 0:
            raise ValueError(f"notch Q must be positive, got {self.notch_q}")
        if int(self.highpass_order) < 1:
            raise ValueError(f"high-pass order must be >= 1, got {self.highpass_order}")


@dataclass(frozen=True)
class SosFilter:
    """A cascade of biquads. ``order`` is the order of the overall filter."""

    sections: np.ndarray
    order: int
    kind: str = field(default="", compare=False)

    @property
    def b(self) -> np.ndarray:
        """Numerator of a single-section filter."""
        self._require_single()
        return self.sections[0, :3].copy()

    @property
    def a(self) -> np.ndarray:
        self._require_single()
        return self.sections[0, 3:].copy()

    def _require_single(self):
        if self.sections.shape[0] != 1:
            raise ValueError("b/a are only defined for single-section filters")

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex frequency response evaluated directly on the unit circle."""
        freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        z = np.exp(1j * 2 * np.pi * freqs / fs)
        zinv = 1.0 / z
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            h = h * (b0 + b1 * zinv + b2 * zinv**2) / (a0 + a1 * zinv + a2 * zinv**2)
        return h

    def steady_state(self) -> np.ndarray:
        """Delay-register values that make a unit step pass with no transient."""
        zi = np.zeros((self.sections.shape[0], 2))
        gain = 1.0
        for k, (b0, b1, b2, _, a1, a2) in enumerate(self.sections):
            dc = (b0 + b1 + b2) / (1.0 + a1 + a2)
            z2 = b2 - a2 * dc
            z1 = b1 - a1 * dc + z2
            zi[k] = (gain * z1, gain * z2)
            gain *= dc
        return zi


def _check_band(freq, fs, what):
    if not fs > 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    if not 0 < freq < fs / 2.0:
        raise ValueError(f"{what} {freq} Hz must lie strictly inside (0, {fs / 2.0}) Hz")


def design_notch(f0: float, q: float, fs: float) -> SosFilter:
    """Second-order notch at ``f0`` with -3 dB bandwidth ``f0 / q`` and unit DC gain."""
    _check_band(f0, fs, "notch frequency")
    if not q > 0:
        raise ValueError(f"quality factor must be positive, got {q}")
    w0 = 2.0 * math.pi * f0 / fs
    beta = math.tan(w0 / q / 2.0)
    gain = 1.0 / (1.0 + beta)
    c = math.cos(w0)
    sos = np.array([[gain, -2.0 * gain * c, gain, 1.0, -2.0 * gain * c, 2.0 * gain - 1.0]])
    return SosFilter(sos, order=2, kind="notch")


def _butter_analog_poles(order):
    k = np.arange(1, order + 1)
    return np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))


def _butterworth(cutoff, order, fs, highpass):
    _check_band(cutoff, fs, "cutoff")
    if int(order) != order or order < 1:
        raise ValueError(f"order must be a positive integer, got {order}")
    order = int(order)
    fs2 = 2.0 * fs
    wc = fs2 * math.tan(math.pi * cutoff / fs)  # pre-warped analog cutoff
    proto = _butter_analog_poles(order)
    poles = wc / proto if highpass else wc * proto
    zpoles = (fs2 + poles) / (fs2 - poles)
    # evaluate each section's gain where the passband is exactly 1
    z_ref = -1.0 if highpass else 1.0
    num = np.array([1.0, -2.0, 1.0]) if highpass else np.array([1.0, 2.0, 1.0])
    num1 = np.array([1.0, -1.0, 0.0]) if highpass else np.array([1.0, 1.0, 0.0])

    rows = []
    upper = sorted((p for p in zpoles if p.imag > 1e-12), key=lambda p: (p.real, p.imag))
    real = [p.real for p in zpoles if abs(p.imag) <= 1e-12]
    for p in upper:
        a = np.array([1.0, -2.0 * p.real, abs(p) ** 2])
        g = (a[0] + a[1] * z_ref + a[2]) / (num[0] + num[1] * z_ref + num[2])
        rows.append(np.concatenate([g * num, a]))
    for p in real:
        a = np.array([1.0, -p, 0.0])
        g = (a[0] + a[1] * z_ref) / (num1[0] + num1[1] * z_ref)
        rows.append(np.concatenate([g * num1, a]))
    return SosFilter(np.array(rows), order=order, kind="highpass" if highpass else "lowpass")


def design_highpass_butterworth(cutoff: float, order: int, fs: float) -> SosFilter:
    """Butterworth high-pass by bilinear transform with cutoff pre-warping."""
    return _butterworth(cutoff, order, fs, highpass=True)


def design_lowpass_butterworth(cutoff: float, order: int, fs: float) -> SosFilter:
    return _butterworth(cutoff, order, fs, highpass=False)


def cascade(*filters: SosFilter) -> SosFilter:
    return SosFilter(
        np.vstack([f.sections for f in filters]),
        order=sum(f.order for f in filters),
        kind="+".join(f.kind for f in filters),
    )


def apply_filter(signal, filt: SosFilter, zero_phase: bool = True) -> np.ndarray:
    """Filter a 1-D signal.

    Single-pass mode starts from rest. Zero-phase mode pads both ends with
    an odd reflection of ``3 * filt.order`` samples, starts each pass from
    the steady state matching its first sample, and runs forward then
    backward.
    """
    x = np.ascontiguousarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"expected a non-empty 1-D signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    sos = np.ascontiguousarray(filt.sections, dtype=np.float64)
    if not zero_phase:
        y, _ = kernels.sosfilt(sos, x, np.zeros((sos.shape[0], 2)))
        return y

    pad = min(3 * filt.order, x.size - 1)
    if pad > 0:
        ext = np.concatenate([2 * x[0] - x[pad:0:-1], x, 2 * x[-1] - x[-2 : -pad - 2 : -1]])
    else:
        ext = x.copy()
    zi = filt.steady_state()
    y, _ = kernels.sosfilt(sos, ext, np.ascontiguousarray(zi * ext[0]))
    y = np.ascontiguousarray(y[::-1])
    y, _ = kernels.sosfilt(sos, y, np.ascontiguousarray(zi * y[0]))
    y = y[::-1]
    return np.ascontiguousarray(y[pad : pad + x.size])


def denoise_record(record: EcgRecord, spec: FilterSpec = FilterSpec()) -> EcgRecord:
    """Notch then high-pass every lead independently."""
    if record.denoised:
        raise ValueError(f"record {record.record_id!r} is already denoised")
    fs = record.sample_rate_hz
    spec.validate(fs)
    notch = design_notch(spec.notch_freq_hz, spec.notch_q, fs)
    hp = design_highpass_butterworth(spec.highpass_cutoff_hz, spec.highpass_order, fs)
    out = np.empty_like(record.samples)
    for i, lead in enumerate(record.samples):
        y = apply_filter(lead, notch, spec.zero_phase)
        out[i] = apply_filter(y, hp, spec.zero_phase)
    return replace(record, samples=out, denoised=True)


# -- dataset directory format -------------------------------------------------

MANIFEST = "manifest.jsonl"


def write_records(directory, records) -> Path:
    """Write ``manifest.jsonl`` plus one ``<record_id>.csv`` per record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST, "w", encoding="utf-8", newline="\n") as mf:
        for rec in records:
            fname = f"{rec.record_id}.csv"
            entry = {
                "record_id": rec.record_id,
                "label": rec.label.name,
                "sample_rate_hz": float(rec.sample_rate_hz),
                "file": fname,
            }
            mf.write(json.dumps(entry, sort_keys=True) + "\n")
            with open(directory / fname, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(LEADS)
                for row in rec.samples.T:
                    w.writerow([f"{v:.6f}" for v in row])
    return directory / MANIFEST


def read_manifest(directory) -> list[dict]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_record(directory, entry: dict) -> EcgRecord:
    path = Path(directory) / entry["file"]
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != LEADS:
                raise ValueError(f"bad header {header}")
            data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
        return EcgRecord(
            record_id=entry["record_id"],
            samples=data.T,
            sample_rate_hz=float(entry["sample_rate_hz"]),
            label=CaoClass[entry["label"]],
        )
    except (OSError, ValueError, StopIteration, KeyError) as exc:
        raise ValueError(f"cannot read record {entry.get('record_id')!r} from {path}: {exc}") from exc


def read_records(directory) -> list[EcgRecord]:
    directory = Path(directory)
    records, errors = [], []
    for entry in read_manifest(directory):
        try:
            records.append(read_record(directory, entry))
        except ValueError as exc:
            errors.append(str(exc))
    if errors:
        raise ValueError("; ".join(errors))
    return records
