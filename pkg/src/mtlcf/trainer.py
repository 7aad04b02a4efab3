"""MTLCF training loop plus the fine-tuning (FT) and retraining (RT) baselines."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .ctc import ctc
from .data import BatchStream, DatasetSplit, FeatureSequence, feasible, model_inputs
from .evaluation import evaluate
from .losses import HyperParams, LossBreakdown, NonFiniteLossError, loss_task1, loss_total, reduce_batch
from .model import ModelConfig, ModelParams, copy_model, forward_batch, init_model, save_checkpoint, set_frozen

log = logging.getLogger(__name__)

METHODS = ("ft", "rt", "mtlcf", "base")


@dataclass(frozen=True)
class Schedule:
    learning_rate: float = 0.001
    clip: float = 5.0
    halve_threshold: float = 0.9  # halve unless dev loss <= 0.9 * previous
    max_halvings: int = 4
    max_epochs: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.max_epochs < 1 or self.max_halvings < 0:
            raise ValueError("max_epochs must be >= 1 and max_halvings >= 0")


@dataclass
class OptimizerState:
    learning_rate: float
    initial_lr: float
    clip_low: float = -5.0
    clip_high: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    halvings_done: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_schedule(cls, schedule: Schedule) -> "OptimizerState":
        return cls(
            learning_rate=schedule.learning_rate,
            initial_lr=schedule.learning_rate,
            clip_low=-schedule.clip,
            clip_high=schedule.clip,
            beta1=schedule.adam_beta1,
            beta2=schedule.adam_beta2,
            eps=schedule.adam_eps,
        )


def clip_gradient(g: np.ndarray, low: float, high: float) -> np.ndarray:
    return np.clip(g, low, high)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: OptimizerState,
    observer: Callable[[str, np.ndarray], None] | None = None,
) -> None:
    """One bias-corrected Adam update, in place, on elementwise-clipped gradients.

    ``observer`` sees every clipped gradient before it enters the moments.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteLossError(f"gradient for {name} is not finite")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        g = clip_gradient(g, state.clip_low, state.clip_high)
        if observer is not None:
            observer(name, g)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def schedule_step(dev_losses: Sequence[float], state: OptimizerState, threshold: float = 0.9) -> bool:
    """Halve the learning rate when the latest dev loss fell by less than 10%; returns True on a halve."""
    if len(dev_losses) < 2:
        return False
    if dev_losses[-1] > threshold * dev_losses[-2]:
        state.halvings_done += 1
        state.learning_rate = state.initial_lr * 2.0 ** (-state.halvings_done)
        return True
    return False


def check_converged(epochs_done: int, state: OptimizerState, schedule: Schedule) -> bool:
    return state.halvings_done >= schedule.max_halvings or epochs_done >= schedule.max_epochs


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    dev_loss: float
    cer_org: float
    cer_tar: float
    sub_loss1: float
    sub_loss2: float
    loss2: float


HISTORY_HEADER = ("epoch", "lr", "dev_loss", "cer_org", "cer_tar", "sub_loss1", "sub_loss2", "loss2")


@dataclass
class TrainRun:
    method: str
    hyper: HyperParams
    seed: int
    history: list[EpochRecord] = field(default_factory=list)
    steps: list[LossBreakdown] = field(default_factory=list)
    params: ModelParams | None = None
    scale_tar: int = 0
    converged: bool = False
    test_key: str = ""
    teacher_digest_start: str = ""
    teacher_digest_end: str = ""

    def write_history(self, path) -> None:
        write_history(self.history, path)

    def write_steps(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LossBreakdown.CSV_HEADER)
            for i, b in enumerate(self.steps, 1):
                w.writerow([_fmt(v) for v in b.csv_row(i)])


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for rec in history:
            w.writerow([_fmt(getattr(rec, h)) for h in HISTORY_HEADER])


def read_history(path) -> list[EpochRecord]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochRecord(int(r["epoch"]), *(float(r[h]) for h in HISTORY_HEADER[1:]))
        for r in rows
    ]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ------------------------------------------------------------------ losses per batch

def _usable(batch: Sequence[FeatureSequence], decimation: int = 3) -> list[FeatureSequence]:
    keep = [u for u in batch if feasible(u, decimation)]
    if len(keep) < len(batch):
        log.warning("skipping %d utterance(s) too short for their labels", len(batch) - len(keep))
    return keep


def _ctc_term(model: ModelParams, batch: Sequence[FeatureSequence], reduction: str):
    outs = forward_batch(model, model_inputs(batch))
    return reduce_batch([ctc(o, u.labels) for o, u in zip(outs, batch)], reduction)


def _mtlcf_term(student, teacher, batch0, batch1, hyper):
    feats0 = model_inputs(batch0)
    teacher_out = forward_batch(teacher, feats0)
    student_out0 = forward_batch(student, feats0)
    loss1, kl, nll = loss_task1(student_out0, teacher_out, [u.labels for u in batch0], hyper)
    loss2 = _ctc_term(student, batch1, hyper.reduction)
    return loss_total(loss1, loss2, hyper, kl, nll)


def dev_objective(method, student, teacher, data0, data1, hyper, chunk: int = 64) -> LossBreakdown:
    """Held-out value of the objective each method optimizes (utterance means)."""
    mean_hyper = HyperParams(hyper.alpha, hyper.beta, hyper.temperature, hyper.batch_size, "mean")

    def chunked(fn, items):
        items = sorted(_usable(items), key=len)
        vals, weights = [], []
        for k in range(0, len(items), chunk):
            part = items[k : k + chunk]
            vals.append(fn(part))
            weights.append(len(part))
        return float(np.dot(vals, weights) / np.sum(weights))

    def ctc_mean(items):
        return chunked(lambda b: _ctc_term(student, b, "mean").item(), items)

    with dc.no_grad():
        if method == "rt":
            pooled = ctc_mean(list(data0) + list(data1))
            return LossBreakdown(math.nan, math.nan, math.nan, pooled, pooled)
        if method == "base":
            own = ctc_mean(data0)
            return LossBreakdown(math.nan, own, math.nan, math.nan, own)
        loss2 = ctc_mean(data1)
        if teacher is None:
            return LossBreakdown(math.nan, math.nan, math.nan, loss2, loss2)

        def task1(b):
            feats = model_inputs(b)
            l1, kl, nll = loss_task1(
                forward_batch(student, feats), forward_batch(teacher, feats), [u.labels for u in b], mean_hyper
            )
            return np.array([l1.item(), kl.item(), nll.item()])

        items = sorted(_usable(data0), key=len)
        parts = [items[k : k + chunk] for k in range(0, len(items), chunk)]
        vals = np.array([task1(p) for p in parts])
        w = np.array([len(p) for p in parts], dtype=float)
        loss1, kl, nll = (vals * w[:, None]).sum(axis=0) / w.sum()
        if method == "ft":
            # diagnostics only; FT optimizes the target CTC alone
            return LossBreakdown(float(kl), float(nll), float(loss1), loss2, loss2)
        _, breakdown = loss_total(loss1, loss2, mean_hyper, kl, nll)
        return breakdown


# ------------------------------------------------------------------ training loop

class Trainer:
    """Shared epoch loop for all three methods."""

    def __init__(
        self,
        method: str,
        student: ModelParams,
        data0: DatasetSplit,
        data1: DatasetSplit,
        hyper: HyperParams,
        schedule: Schedule,
        seed: int = 0,
        teacher: ModelParams | None = None,
        checkpoint_dir: Path | None = None,
        grad_observer: Callable[[str, np.ndarray], None] | None = None,
        on_step: Callable[[int, ModelParams], None] | None = None,
    ):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        self.method = method
        self.student = student
        self.teacher = teacher
        self.data0 = data0
        self.data1 = data1
        self.hyper = hyper
        self.schedule = schedule
        self.seed = seed
        self.state = OptimizerState.from_schedule(schedule)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.grad_observer = grad_observer
        self.on_step = on_step
        m = hyper.batch_size
        # independent streams so the target-domain order never depends on domain-0 sampling
        if method == "rt":
            self.main = BatchStream(list(data0.train) + list(data1.train), m, np.random.default_rng([seed, 2]))
            self.aux = None
        elif method == "base":
            self.main = BatchStream(data0.train, m, np.random.default_rng([seed, 3]))
            self.aux = None
        else:
            self.main = BatchStream(data1.train, m, np.random.default_rng([seed, 1]))
            self.aux = BatchStream(data0.train, m, np.random.default_rng([seed, 0])) if method == "mtlcf" else None
        self.run = TrainRun(method, hyper, seed, scale_tar=len(data1.train), test_key=_test_key(data0, data1))

    def _record(self, epoch: int) -> EpochRecord:
        dev = dev_objective(self.method, self.student, self.teacher, self.data0.dev, self.data1.dev, self.hyper)
        rec = EpochRecord(
            epoch=epoch,
            lr=self.state.learning_rate,
            dev_loss=dev.total,
            cer_org=evaluate(self.student, self.data0.test).mean_cer,
            cer_tar=evaluate(self.student, self.data1.test).mean_cer,
            sub_loss1=dev.sub_loss1,
            sub_loss2=dev.sub_loss2,
            loss2=dev.loss2,
        )
        if not math.isfinite(rec.dev_loss):
            self._abort(f"non-finite dev loss at epoch {epoch}")
        self.run.history.append(rec)
        log.info(
            "%s epoch %d lr=%.2e dev=%.4f cer_org=%.4f cer_tar=%.4f",
            self.method, epoch, rec.lr, rec.dev_loss, rec.cer_org, rec.cer_tar,
        )
        return rec

    def _abort(self, reason: str, breakdown: LossBreakdown | None = None):
        dump = {
            "reason": reason,
            "method": self.method,
            "step": self.state.step,
            "learning_rate": self.state.learning_rate,
            "halvings_done": self.state.halvings_done,
            "breakdown": asdict(breakdown) if breakdown else None,
            "history": [asdict(h) for h in self.run.history],
        }
        if self.checkpoint_dir is not None:
            self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
            (self.checkpoint_dir / "abort_state.json").write_text(json.dumps(dump, indent=2, default=str))
        raise NonFiniteLossError(f"{reason}; state: {json.dumps(dump, default=str)[:400]}")

    def _step(self, batch1: list[FeatureSequence]) -> LossBreakdown | None:
        hyper = self.hyper
        batch1 = _usable(batch1)
        if self.method == "mtlcf":
            batch0 = _usable(self.aux.next())
            if not batch0 or not batch1:
                return None
            try:
                total, breakdown = _mtlcf_term(self.student, self.teacher, batch0, batch1, hyper)
            except NonFiniteLossError as exc:
                self._abort(str(exc))
        else:
            if not batch1:
                return None
            loss2 = _ctc_term(self.student, batch1, hyper.reduction)
            value = loss2.item()
            if not math.isfinite(value):
                self._abort("non-finite training loss", LossBreakdown(math.nan, math.nan, math.nan, value, value))
            total = loss2
            breakdown = LossBreakdown(math.nan, math.nan, math.nan, value, value)
        dc.backward(total)
        params = self.student.named_arrays()
        grads = {k: t.grad for k, t in self.student.tensors.items()}
        try:
            adam_step(params, grads, self.state, self.grad_observer)
        except NonFiniteLossError as exc:
            self._abort(str(exc), breakdown)
        self.student.zero_grad()
        if self.on_step is not None:
            self.on_step(self.state.step, self.student)
        return breakdown

    def train(self) -> TrainRun:
        if self.teacher is not None:
            self.run.teacher_digest_start = self.teacher.digest()
        self._record(0)
        epoch = 0
        while not check_converged(epoch, self.state, self.schedule):
            epoch += 1
            for batch in self.main.epoch():
                b = self._step(batch)
                if b is not None:
                    self.run.steps.append(b)
            self._record(epoch)
            schedule_step([h.dev_loss for h in self.run.history[1:]], self.state, self.schedule.halve_threshold)
            if self.checkpoint_dir is not None:
                self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(self.student, self.checkpoint_dir / f"epoch{epoch:03d}.npz")
        self.run.converged = True
        self.run.params = self.student
        if self.teacher is not None:
            self.run.teacher_digest_end = self.teacher.digest()
            if self.run.teacher_digest_end != self.run.teacher_digest_start:
                raise RuntimeError("the frozen original model changed during training")
        return self.run


def _test_key(data0: DatasetSplit, data1: DatasetSplit) -> str:
    import hashlib

    h = hashlib.sha256()
    for items in (data0.test, data1.test):
        for u in items:
            h.update(np.ascontiguousarray(u.frames).tobytes())
            h.update(bytes(str(u.labels), "ascii"))
    return h.hexdigest()[:16]


def train_mtlcf(model0: ModelParams, data0: DatasetSplit, data1: DatasetSplit, hyper: HyperParams, schedule: Schedule, seed: int = 0, **kw) -> TrainRun:
    teacher = set_frozen(copy_model(model0), True)
    student = set_frozen(copy_model(model0), False)
    return Trainer("mtlcf", student, data0, data1, hyper, schedule, seed, teacher=teacher, **kw).train()


def train_ft(model0: ModelParams, data1: DatasetSplit, hyper: HyperParams, schedule: Schedule, seed: int = 0, data0: DatasetSplit | None = None, **kw) -> TrainRun:
    """Fine-tune a copy of ``model0`` on target data only.

    ``data0`` is used for evaluation (org-CER, dev diagnostics) when given,
    never for gradients.
    """
    original = set_frozen(copy_model(model0), True)
    student = set_frozen(copy_model(model0), False)
    data0 = data0 if data0 is not None else DatasetSplit(data1.train[:1], data1.dev, data1.test)
    return Trainer("ft", student, data0, data1, hyper, schedule, seed, teacher=original, **kw).train()


def train_rt(config: ModelConfig, data0: DatasetSplit, data1: DatasetSplit, hyper: HyperParams, schedule: Schedule, seed: int = 0, **kw) -> TrainRun:
    student = init_model(config)
    return Trainer("rt", student, data0, data1, hyper, schedule, seed, **kw).train()


def train_base(config: ModelConfig, data0: DatasetSplit, hyper: HyperParams, schedule: Schedule, seed: int = 0, data1: DatasetSplit | None = None, **kw) -> TrainRun:
    """Train the original-domain model from random init with CTC on domain 0 only.

    ``data1`` only feeds the ``cer_tar`` column of the history.
    """
    student = init_model(config)
    return Trainer("base", student, data0, data1 if data1 is not None else data0, hyper, schedule, seed, **kw).train()
