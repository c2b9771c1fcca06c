"""Compiled vs pure-Python kernels.

Times the biquad recursion and the peak picker on their own, then the
record-level work that uses them (denoise one 12-lead record and detect its
R peaks), once per backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from caoloc import _fallback, kernels
from caoloc.pulse_extraction import detect_r_peaks
from caoloc.signal_core import cascade, denoise_record, design_highpass_butterworth, design_notch
from caoloc.synth_ecg import SynthConfig, generate_record

try:
    from caoloc import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def use(module):
    kernels.sosfilt = module.sosfilt
    kernels.local_maxima = module.local_maxima


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--samples", type=int, default=6000, help="signal length for the kernel timings")
    args = parser.parse_args(argv)

    fs = 500.0
    sos = cascade(design_notch(60, 30, fs), design_highpass_butterworth(0.5, 2, fs)).sections
    rng = np.random.default_rng(0)
    x = rng.normal(size=args.samples)
    zi = np.zeros((sos.shape[0], 2))
    env = np.convolve(np.abs(x), np.ones(25) / 25, mode="same")
    record, _ = generate_record(SynthConfig(rng_seed=0))

    backends = [("python", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    rows = []
    for name, module in backends:
        use(module)
        rows.append((
            name,
            best_of(lambda: module.sosfilt(sos, x, zi), args.repeat),
            best_of(lambda: module.local_maxima(env, 100), args.repeat),
            best_of(lambda: detect_r_peaks(denoise_record(record).lead("II"), fs), args.repeat),
        ))
    use(_kernels or _fallback)

    print(f"signal {args.samples} samples, {sos.shape[0]} biquads; record 12 x {record.n_samples}")
    print(f"{'backend':<8} {'sosfilt':>12} {'local_maxima':>14} {'denoise+detect':>16}")
    for name, *times in rows:
        print(f"{name:<8} " + " ".join(f"{t * 1e3:>{w}.3f}ms" for t, w in zip(times, (10, 12, 14))))
    if len(rows) == 2:
        speed = [p / c for p, c in zip(rows[0][1:], rows[1][1:])]
        print(f"{'speedup':<8} " + " ".join(f"{s:>{w}.1f}x" for s, w in zip(speed, (11, 13, 15))))


if __name__ == "__main__":
    main()
