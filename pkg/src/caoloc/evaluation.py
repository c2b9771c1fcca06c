"""Metrics, repeated record-level splits and mean ± std reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import StageTask, derive_stage_dataset, train_cascade
from .nn import ModelConfig, TrainConfig, Variant, predict_proba
from .pulse_extraction import DEFAULT_WINDOW, record_pulses
from .signal_core import CaoClass, FilterSpec

log = logging.getLogger(__name__)

METRICS = ("accuracy", "sensitivity", "specificity", "auroc")
ARMS = {True: "preprocessed", False: "raw"}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def compute_confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Score >= threshold is a positive call."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be 1-D and equal length")
    if s.size == 0:
        raise ValueError("need at least one sample")
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics_from_confusion(c: ConfusionCounts) -> dict:
    """Accuracy, sensitivity, specificity; a ratio with a zero denominator is ``None``."""
    if c.total <= 0:
        raise ValueError("empty confusion matrix")
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "sensitivity": c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None,
        "specificity": c.tn / (c.tn + c.fp) if c.tn + c.fp > 0 else None,
    }


def midranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def compute_auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midranks (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in shape")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative labels")
    r = midranks(s)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def stage_metrics(scores, labels, threshold=0.5) -> dict:
    out = metrics_from_confusion(compute_confusion(scores, labels, threshold))
    out["auroc"] = compute_auroc(scores, labels)
    return out


def record_level_auroc(scores, labels, record_ids) -> float | None:
    """AUROC after averaging pulse scores within each record."""
    by_rec: dict = {}
    for s, y, r in zip(scores, labels, record_ids):
        by_rec.setdefault(r, ([], y))[0].append(s)
    s = [float(np.mean(v[0])) for v in by_rec.values()]
    y = [v[1] for v in by_rec.values()]
    try:
        return compute_auroc(s, y)
    except ValueError:
        return None


def aggregate(values) -> dict:
    """Mean and sample (n-1) standard deviation over the defined values."""
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(vals, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}


@dataclass
class EvalReport:
    variant: str
    arm: str
    seed: int
    runs: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def run_count(self) -> int:
        return len(self.runs)

    def finalize(self) -> "EvalReport":
        agg = {}
        for stage in ("stage1", "stage2"):
            agg[stage] = {m: aggregate([r[stage][m] for r in self.runs]) for m in METRICS}
            agg[stage]["record_auroc"] = aggregate([r[stage].get("record_auroc") for r in self.runs])
        self.aggregate = agg
        return self

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "arm": self.arm,
            "seed": self.seed,
            "run_count": self.run_count,
            "config": self.config,
            "aggregate": self.aggregate,
            "runs": self.runs,
        }

    @classmethod
    def from_json(cls, d) -> "EvalReport":
        return cls(d["variant"], d["arm"], d["seed"], d["runs"], d["aggregate"], d.get("config", {}))


# -- splits ----------------------------------------------------------------------

def stratified_split(record_ids, labels, rng, test_fraction=0.2):
    """Per-class shuffle of record ids; returns ``(train_ids, test_ids)`` sorted."""
    train, test = [], []
    ids = np.asarray(record_ids)
    labels = np.asarray(labels)
    for cls in CaoClass:
        members = np.sort(ids[labels == cls])
        if members.size == 0:
            continue
        members = members[rng.permutation(members.size)]
        n_test = int(round(test_fraction * members.size))
        if members.size >= 2:
            n_test = min(max(n_test, 1), members.size - 1)
        test.extend(members[:n_test].tolist())
        train.extend(members[n_test:].tolist())
    return sorted(train), sorted(test)


def _has_all_classes(labels):
    return all(np.any(labels == c) for c in CaoClass)


def _stack(pulses_by_record, ids):
    xs, ys, rids = [], [], []
    for rid in ids:
        for p in pulses_by_record[rid]:
            xs.append(p.leads)
            ys.append(int(p.label))
            rids.append(rid)
    x = np.stack(xs) if xs else np.zeros((0, 12, 0))
    return x, np.asarray(ys, dtype=np.int64), rids


def _score_stage(stage, scores_fn, x, labels, rids, threshold):
    xs, ys, ids = derive_stage_dataset(x, labels, stage, rids)
    scores = scores_fn(stage, xs, ys)
    m = stage_metrics(scores, ys, threshold)
    m["record_auroc"] = record_level_auroc(scores, ys, ids)
    m["n_pulses"] = int(ys.size)
    m["n_positive"] = int(ys.sum())
    return m


class RunError(RuntimeError):
    """A single experiment run failed; carries what is needed to replay it."""

    def __init__(self, run: int, seed: int, message: str):
        super().__init__(run, seed, message)
        self.run, self.seed, self.message = run, seed, message

    def __str__(self):
        return f"run {self.run} (seed {self.seed}) failed: {self.message}"


def _one_run(args):
    run, run_seed = args[0], args[1]
    try:
        return _run_body(*args)
    except RunError:
        raise
    except Exception as exc:
        raise RunError(run, run_seed, f"{type(exc).__name__}: {exc}") from exc


def _run_body(run, run_seed, pulses_by_record, rec_ids, rec_labels, model_config, train_config,
              thresholds, score_override):
    rng = np.random.Generator(np.random.PCG64(run_seed))
    for attempt in range(100):
        train_ids, test_ids = stratified_split(rec_ids, rec_labels, rng)
        x_tr, y_tr, r_tr = _stack(pulses_by_record, train_ids)
        x_te, y_te, r_te = _stack(pulses_by_record, test_ids)
        if _has_all_classes(y_tr) and _has_all_classes(y_te):
            break
        log.warning("run %d: split attempt %d lacks a class on one side; redrawing", run, attempt)
    else:
        raise RuntimeError(f"run {run}: could not draw a split with every class on both sides")
    overlap = set(train_ids) & set(test_ids)
    assert not overlap, f"record leakage between train and test: {sorted(overlap)}"

    train_seed = int(rng.integers(0, 2**63 - 1))
    losses = {}
    if score_override is None:
        cascade, losses = train_cascade(x_tr, y_tr, model_config, train_config, seed=train_seed,
                                        threshold1=thresholds[0], threshold2=thresholds[1])
        models = {StageTask.STAGE1: cascade.stage1, StageTask.STAGE2: cascade.stage2}

        def scores_fn(stage, xs, ys):
            return predict_proba(models[stage], xs)
    else:
        cascade = None
        scores_fn = score_override

    result = {
        "run": run,
        "seed": run_seed,
        "train_seed": train_seed,
        "train_records": train_ids,
        "test_records": test_ids,
        "stage1": _score_stage(StageTask.STAGE1, scores_fn, x_te, y_te, r_te, thresholds[0]),
        "stage2": _score_stage(StageTask.STAGE2, scores_fn, x_te, y_te, r_te, thresholds[1]),
        "loss_trace": {k: [float(v) for v in vs] for k, vs in losses.items()},
    }
    return result, cascade


def run_experiment(records, preprocess: bool, variant=Variant.CONV1D, n_runs: int = 10, seed: int = 0,
                   model_config: ModelConfig | None = None, train_config: TrainConfig = TrainConfig(),
                   filter_spec: FilterSpec = FilterSpec(), window=DEFAULT_WINDOW,
                   thresholds=(0.5, 0.5), score_override=None, workers: int = 1,
                   return_cascades: bool = False):
    """Repeated stratified 80/20 record-level splits, one trained cascade per run.

    ``score_override(stage, x, y)`` replaces the trained cascade's scores;
    it exists for injecting reference scorers in tests.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2 so a standard deviation exists")
    records = sorted(records, key=lambda r: r.record_id)
    labels = np.array([int(r.label) for r in records])
    if not _has_all_classes(labels):
        raise ValueError("records must contain LAD, LCX and RCA")
    variant = Variant.parse(variant)
    model_config = model_config or ModelConfig(variant=variant)
    if model_config.variant is not variant:
        raise ValueError(f"model config variant {model_config.variant} differs from {variant}")

    pulses_by_record = {r.record_id: record_pulses(r, preprocess, filter_spec, window) for r in records}
    rec_ids = [r.record_id for r in records]
    run_seeds = [int(s.generate_state(1, dtype=np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n_runs)]
    jobs = [
        (run, run_seeds[run], pulses_by_record, rec_ids, labels, model_config, train_config, thresholds, score_override)
        for run in range(n_runs)
    ]
    if workers > 1 and score_override is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_run, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_one_run(job))
            r = outcomes[-1][0]
            log.info("[run %d] stage1 auroc %.3f stage2 auroc %.3f", r["run"], r["stage1"]["auroc"], r["stage2"]["auroc"])

    report = EvalReport(
        variant=variant.value,
        arm=ARMS[bool(preprocess)],
        seed=seed,
        runs=[o[0] for o in outcomes],
        config={
            "n_runs": n_runs,
            "model": model_config.to_json(),
            "train": train_config.to_json(),
            "filter": filter_spec.__dict__.copy(),
            "window_s": list(window),
            "thresholds": list(thresholds),
            "split": "stratified 80/20 by record",
            "n_records": len(records),
        },
    ).finalize()
    if return_cascades:
        return report, [o[1] for o in outcomes]
    return report


def default_workers() -> int:
    env = os.environ.get("CAO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# -- rendering -------------------------------------------------------------------

HEADERS = ("Accuracy", "Sensitivity", "Specificity", "AUROC")


def format_cell(agg: dict) -> str:
    if agg.get("mean") is None:
        return "undefined"
    return f"{agg['mean']:.3f} ± {agg['std']:.3f}"


def _rows(reports, stage):
    rows = []
    for rep in reports:
        if not rep.aggregate or stage not in rep.aggregate:
            raise ValueError(f"report {rep.variant}/{rep.arm} has no aggregated metrics")
        rows.append((rep.variant, rep.arm) + tuple(format_cell(rep.aggregate[stage][m]) for m in METRICS))
    return rows


def report_render(reports) -> tuple[str, str]:
    """Text tables and CSV, one table per stage, rows (CNN, set)."""
    reports = list(reports)
    if not reports or any(r.run_count == 0 for r in reports):
        raise ValueError("cannot render an empty report")
    text = io.StringIO()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("stage", "cnn", "set") + HEADERS)
    for stage, title in (("stage1", "Performance of stage-1"), ("stage2", "Performance of stage-2")):
        rows = _rows(reports, stage)
        head = ("CNN", "Set") + HEADERS
        widths = [max(len(str(r[i])) for r in rows + [head]) for i in range(len(head))]
        line = "  ".join("-" * w for w in widths)
        text.write(f"{title}\n{line}\n")
        text.write("  ".join(h.ljust(w) for h, w in zip(head, widths)).rstrip() + "\n")
        text.write(line + "\n")
        for r in rows:
            text.write("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")
            writer.writerow((stage,) + r)
        text.write(line + "\n\n")
    return text.getvalue(), buf.getvalue()


def parse_report_csv(text: str) -> dict:
    """``{(stage, cnn, set): {metric: (mean, std)}}`` from :func:`report_render` CSV."""
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        cells = {}
        for h, m in zip(HEADERS, METRICS):
            v = row[h]
            if v == "undefined":
                cells[m] = None
            else:
                mean, std = v.split("±")
                cells[m] = (float(mean), float(std))
        out[(row["stage"], row["cnn"], row["set"])] = cells
    return out


def write_reports(reports, directory, extra: dict | None = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text, table = report_render(reports)
    payload = {"reports": [r.to_json() for r in reports]}
    if extra:
        payload.update(extra)
    (directory / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (directory / "report.csv").write_text(table, encoding="utf-8")
    (directory / "report.txt").write_text(text, encoding="utf-8")
    return text
