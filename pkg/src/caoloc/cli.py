"""``caoloc`` command line: synth, preprocess, train-eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .cascade import save_cascade
from .evaluation import ARMS, RunError, default_workers, run_experiment, write_reports
from .nn import ModelConfig, TrainConfig, Variant
from .pulse_extraction import DEFAULT_WINDOW, build_dataset, save_pulses
from .signal_core import MANIFEST, CaoClass, FilterSpec, read_manifest, read_records
from .synth_ecg import NoiseConfig, SynthConfig, generate_dataset, write_dataset

log = logging.getLogger("caoloc")

SYNTH_CONFIG = "synth_config.json"


class CliError(Exception):
    """User-facing failure; printed without a traceback."""


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _non_negative(kind):
    def parse(text):
        value = kind(text)
        if value < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
        return value

    return parse


def _channels(text):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"need at least one positive width, got {text!r}")
    return values


def _runs(text):
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"--runs must be >= 2 so a standard deviation exists, got {value}")
    return value


def _add_filter_flags(p):
    d = FilterSpec()
    p.add_argument("--notch-hz", type=_positive(float), default=d.notch_freq_hz)
    p.add_argument("--notch-q", type=_positive(float), default=d.notch_q)
    p.add_argument("--highpass-hz", type=_positive(float), default=d.highpass_cutoff_hz)
    p.add_argument("--highpass-order", type=_positive(int), default=d.highpass_order)
    p.add_argument("--window-pre", type=_positive(float), default=DEFAULT_WINDOW[0], help="seconds before the R peak")
    p.add_argument("--window-post", type=_positive(float), default=DEFAULT_WINDOW[1], help="seconds after the R peak")


def _filter_spec(args) -> FilterSpec:
    return FilterSpec(
        notch_freq_hz=args.notch_hz,
        notch_q=args.notch_q,
        highpass_cutoff_hz=args.highpass_hz,
        highpass_order=args.highpass_order,
    )


def _resolved(args) -> dict:
    """Every option that shapes the output; ``--force`` and logging do not."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose", "force")}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caoloc", description="CAO localisation experiments on 12-lead ECG.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    s.add_argument("--n-lad", type=_non_negative(int), default=120)
    s.add_argument("--n-lcx", type=_non_negative(int), default=20)
    s.add_argument("--n-rca", type=_non_negative(int), default=80)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")
    d, n = SynthConfig(), NoiseConfig()
    s.add_argument("--fs", type=_positive(float), default=d.fs_hz)
    s.add_argument("--duration", type=_positive(float), default=d.duration_s)
    s.add_argument("--hr-min", type=_positive(float), default=d.heart_rate_bpm[0])
    s.add_argument("--hr-max", type=_positive(float), default=d.heart_rate_bpm[1])
    s.add_argument("--st-elevation", type=_non_negative(float), default=d.st_elevation_mv)
    s.add_argument("--wander-amp", type=_non_negative(float), default=n.baseline_wander_amp_mv)
    s.add_argument("--wander-hz", type=_positive(float), default=n.baseline_wander_freq_hz)
    s.add_argument("--powerline-amp", type=_non_negative(float), default=n.powerline_amp_mv)
    s.add_argument("--powerline-hz", type=_positive(float), default=n.powerline_freq_hz)
    s.add_argument("--white-std", type=_non_negative(float), default=n.white_noise_std_mv)
    s.add_argument("--no-noise", action="store_true", help="set every noise amplitude to zero")
    s.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="turn records into a pulse dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    arm = p.add_mutually_exclusive_group(required=True)
    arm.add_argument("--raw", dest="preprocess", action="store_false")
    arm.add_argument("--preprocessed", dest="preprocess", action="store_true")
    _add_filter_flags(p)
    p.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train-eval", help="repeated split training and evaluation")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--variant", choices=("1d", "2d", "all"), default="all")
    t.add_argument("--arm", choices=("raw", "preprocessed", "all"), default="all")
    t.add_argument("--runs", type=_runs, default=10)
    t.add_argument("--seed", type=int, required=True)
    tc = TrainConfig()
    t.add_argument("--epochs", type=_positive(int), default=tc.epochs)
    t.add_argument("--batch-size", type=_positive(int), default=tc.batch_size)
    t.add_argument("--lr", type=_positive(float), default=tc.lr)
    t.add_argument("--no-class-weights", action="store_true")
    t.add_argument("--threshold1", type=float, default=0.5)
    t.add_argument("--threshold2", type=float, default=0.5)
    t.add_argument("--workers", type=_positive(int), default=None,
                   help="parallel runs (default: CAO_THREADS or the CPU count)")
    t.add_argument("--no-checkpoints", action="store_true")
    mc = ModelConfig()
    t.add_argument("--stem-channels", type=_positive(int), default=mc.stem_channels)
    t.add_argument("--block-channels", type=_channels, default=mc.block_channels, help="e.g. 16,32,64")
    t.add_argument("--fc-hidden", type=_positive(int), default=mc.fc_hidden)
    _add_filter_flags(t)
    t.set_defaults(func=cmd_train_eval)
    return parser


# -- synth ---------------------------------------------------------------------


def _clear_previous(out: Path):
    """Remove files a previous ``synth`` wrote, leaving anything else alone."""
    if (out / MANIFEST).is_file():
        for entry in read_manifest(out):
            (out / entry["file"]).unlink(missing_ok=True)
    for name in (MANIFEST, "ground_truth.jsonl", SYNTH_CONFIG):
        (out / name).unlink(missing_ok=True)


def cmd_synth(args) -> int:
    out = args.out
    if out.exists() and not out.is_dir():
        raise CliError(f"output path {out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()):
        if not args.force:
            raise CliError(f"output directory {out} is not empty; pass --force to overwrite")
        _clear_previous(out)
    if args.no_noise:
        noise = NoiseConfig.silent()
    else:
        noise = NoiseConfig(args.wander_amp, args.wander_hz, args.powerline_amp, args.powerline_hz, args.white_std)
    base = SynthConfig(
        fs_hz=args.fs,
        duration_s=args.duration,
        heart_rate_bpm=(args.hr_min, args.hr_max),
        st_elevation_mv=args.st_elevation,
        noise=noise,
    )
    try:
        base.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    counts = (args.n_lad, args.n_lcx, args.n_rca)
    pairs = generate_dataset(counts, base, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out, pairs)
    config = {"command": "synth", **_resolved(args), "out": str(out)}
    (out / SYNTH_CONFIG).write_text(json.dumps(config, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    if not pairs:
        print("warning: empty dataset (all class counts are zero)", file=sys.stderr)
    for cls, n in zip(CaoClass, counts):
        print(f"{cls.name}: {n} records")
    print(f"total: {sum(counts)} records -> {out}")
    return 0


# -- preprocess ----------------------------------------------------------------


def _load_records(data: Path):
    try:
        return read_records(data)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from exc
    except ValueError as exc:
        raise CliError(f"unreadable records in {data}: {exc}") from exc


def cmd_preprocess(args) -> int:
    records = _load_records(args.data)
    if not records:
        raise CliError(f"dataset {args.data} has no records")
    spec = _filter_spec(args)
    window = (args.window_pre, args.window_post)
    try:
        spec.validate(records[0].sample_rate_hz)
        dataset = build_dataset(records, args.preprocess, spec, window)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    config = {"command": "preprocess", **_resolved(args), "arm": ARMS[args.preprocess]}
    save_pulses(dataset, args.out, config=json.loads(json.dumps(config, default=str)))
    per_class_records = {c.name: sum(r.label is c for r in records) for c in CaoClass}
    print(f"arm: {ARMS[args.preprocess]}, pulse length {dataset.pulse_length} samples")
    print(f"{'class':<6} {'records':>8} {'pulses':>8} {'per record':>11}")
    for name, n in dataset.class_counts().items():
        n_rec = per_class_records[name]
        mean = n / n_rec if n_rec else 0.0
        print(f"{name:<6} {n_rec:>8} {n:>8} {mean:>11.2f}")
    print(f"{'total':<6} {len(records):>8} {len(dataset):>8} {len(dataset) / len(records):>11.2f}")
    return 0


# -- train-eval ----------------------------------------------------------------


def _choices(value, options):
    return list(options) if value == "all" else [value]


def cmd_train_eval(args) -> int:
    records = _load_records(args.data)
    for t in (args.threshold1, args.threshold2):
        if not 0 < t < 1:
            raise CliError(f"thresholds must lie in (0, 1), got {t}")
    spec = _filter_spec(args)
    window = (args.window_pre, args.window_post)
    train_config = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                               class_weighted=not args.no_class_weights)
    workers = args.workers or default_workers()
    experiment = {"command": "train-eval", **_resolved(args)}
    experiment = json.loads(json.dumps(experiment, default=str))
    reports = []
    for variant_name in _choices(args.variant, ("1d", "2d")):
        variant = Variant.parse(variant_name)
        for arm in _choices(args.arm, ("preprocessed", "raw")):
            preprocess = arm == "preprocessed"
            log.info("%s / %s: %d runs", variant.value, arm, args.runs)
            try:
                report, cascades = run_experiment(
                    records, preprocess, variant, n_runs=args.runs, seed=args.seed,
                    model_config=ModelConfig(variant=variant, stem_channels=args.stem_channels,
                                             block_channels=args.block_channels, fc_hidden=args.fc_hidden),
                    train_config=train_config,
                    filter_spec=spec, window=window, thresholds=(args.threshold1, args.threshold2),
                    workers=workers, return_cascades=True,
                )
            except RunError as exc:
                line = {"error": exc.message, "run": exc.run, "seed": exc.seed, "variant": variant.value,
                        "arm": arm, "experiment_seed": args.seed}
                print(json.dumps(line, sort_keys=True), file=sys.stderr)
                return 1
            except ValueError as exc:
                raise CliError(str(exc)) from exc
            report.config["experiment"] = experiment
            reports.append(report)
            if not args.no_checkpoints:
                for run, cascade in zip(report.runs, cascades):
                    target = args.out / "checkpoints" / f"{variant.value}-{arm}" / f"run-{run['run']:02d}"
                    save_cascade(cascade, target, extra={"experiment": experiment, "run": run["run"],
                                                         "run_seed": run["seed"]})
    text = write_reports(reports, args.out, extra={"experiment": experiment})
    print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "command": args.command}, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
