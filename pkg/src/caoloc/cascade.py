"""Two-stage occlusion-site classifier.

Stage 1 separates LAD from everything else. Only pulses it rejects reach
stage 2, which separates LCX (positive) from RCA. During training each
stage sees ground-truth routed data, so stage 2 learns from true non-LAD
pulses rather than from stage-1 survivors.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Model, ModelConfig, TrainConfig, load_model, predict_proba, save_model, train
from .signal_core import CaoClass


class StageTask(enum.Enum):
    STAGE1 = 1
    STAGE2 = 2


def derive_stage_dataset(pulses, labels, task: StageTask, record_ids=None):
    """Binary view of a 3-class pulse set.

    Returns ``(x, y)`` or ``(x, y, record_ids)`` when ids are given. STAGE1
    keeps every pulse with LAD -> 1; STAGE2 keeps LCX/RCA only with LCX -> 1.
    """
    x = np.asarray(pulses)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty dataset")
    if task is StageTask.STAGE1:
        keep = np.ones(labels.size, dtype=bool)
        y = (labels == CaoClass.LAD).astype(np.int64)
    else:
        keep = labels != CaoClass.LAD
        if not np.any(labels[keep] == CaoClass.LCX) or not np.any(labels[keep] == CaoClass.RCA):
            raise ValueError("stage-2 needs both LCX and RCA pulses")
        y = (labels[keep] == CaoClass.LCX).astype(np.int64)
    if record_ids is None:
        return x[keep], y
    ids = [r for r, k in zip(record_ids, keep) if k]
    return x[keep], y, ids


@dataclass
class Prediction:
    label: CaoClass
    p1: float
    p2: float | None = None


@dataclass
class Cascade:
    stage1: Model
    stage2: Model
    threshold1: float = 0.5
    threshold2: float = 0.5

    def __post_init__(self):
        for t in (self.threshold1, self.threshold2):
            if not 0 < t < 1:
                raise ValueError(f"thresholds must lie in (0, 1), got {t}")
        if self.stage1.config.variant != self.stage2.config.variant:
            raise ValueError("both stages must use the same CNN variant")

    def _check_trained(self):
        if not (self.stage1.trained and self.stage2.trained):
            raise ValueError("cascade stages are untrained")

    def stage_scores(self, pulses):
        """``(p1, p2)`` for every pulse; p2 is computed for all of them."""
        self._check_trained()
        return predict_proba(self.stage1, pulses), predict_proba(self.stage2, pulses)

    def predict(self, pulses) -> list[Prediction]:
        """Route a batch; stage 2 only runs on pulses stage 1 rejects."""
        self._check_trained()
        x = np.asarray(pulses, dtype=np.float64)
        p1 = predict_proba(self.stage1, x)
        rest = np.flatnonzero(p1 < self.threshold1)
        p2 = predict_proba(self.stage2, x[rest]) if rest.size else np.zeros(0)
        return route(p1, dict(zip(rest.tolist(), p2.tolist())), self.threshold1, self.threshold2)


def route(p1, p2_by_index, threshold1=0.5, threshold2=0.5) -> list[Prediction]:
    out = []
    for i, s1 in enumerate(np.asarray(p1, dtype=np.float64)):
        if s1 >= threshold1:
            out.append(Prediction(CaoClass.LAD, float(s1)))
        else:
            s2 = float(p2_by_index[i])
            out.append(Prediction(CaoClass.LCX if s2 >= threshold2 else CaoClass.RCA, float(s1), s2))
    return out


def cascade_predict(cascade: Cascade, pulse) -> Prediction:
    """Classify one pulse ``(12, L)``."""
    return cascade.predict(np.asarray(pulse)[None])[0]


def stage_seeds(seed: int) -> tuple[int, int, int, int]:
    """(init1, shuffle1, init2, shuffle2) derived from one seed."""
    states = np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64)
    return tuple(int(s) for s in states)


def train_stage(task: StageTask, x, labels, model_config: ModelConfig, train_config: TrainConfig,
                init_seed: int, shuffle_seed: int):
    xs, ys = derive_stage_dataset(x, labels, task)
    model = Model(model_config, seed=init_seed)
    cfg = TrainConfig(**{**train_config.to_json(), "rng_seed": shuffle_seed})
    return train(model, xs, ys, cfg)


def train_cascade(x, labels, model_config: ModelConfig = ModelConfig(),
                  train_config: TrainConfig = TrainConfig(), seed: int = 0,
                  threshold1: float = 0.5, threshold2: float = 0.5):
    """Train both stages independently. Returns ``(cascade, loss_traces)``."""
    labels = np.asarray(labels, dtype=np.int64)
    missing = [c.name for c in CaoClass if not np.any(labels == c)]
    if missing:
        raise ValueError(f"training set lacks classes {missing}")
    i1, s1, i2, s2 = stage_seeds(seed)
    m1, loss1 = train_stage(StageTask.STAGE1, x, labels, model_config, train_config, i1, s1)
    m2, loss2 = train_stage(StageTask.STAGE2, x, labels, model_config, train_config, i2, s2)
    return Cascade(m1, m2, threshold1, threshold2), {"stage1": loss1, "stage2": loss2}


def save_cascade(cascade: Cascade, directory, extra: dict | None = None) -> Path:
    """Write both stage checkpoints and ``cascade.json``; ``extra`` is stored alongside."""
    directory = Path(directory)
    save_model(cascade.stage1, directory / "stage1" / "model.bin")
    save_model(cascade.stage2, directory / "stage2" / "model.bin")
    meta = {
        "threshold1": cascade.threshold1,
        "threshold2": cascade.threshold2,
        "variant": cascade.stage1.config.variant.value,
    }
    if extra:
        meta.update(extra)
    (directory / "cascade.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_cascade(directory) -> Cascade:
    directory = Path(directory)
    meta = json.loads((directory / "cascade.json").read_text(encoding="utf-8"))
    return Cascade(
        load_model(directory / "stage1" / "model.bin"),
        load_model(directory / "stage2" / "model.bin"),
        meta["threshold1"],
        meta["threshold2"],
    )
