"""Multi-task objective: distillation toward the frozen original model plus CTC on both domains.

    task1 = alpha * KL(student || teacher) + (1 - alpha) * CTC(student on domain 0)
    total = beta * task1 + (1 - beta) * CTC(student on domain 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import diffcore as dc
from .ctc import ctc
from .diffcore import Tensor


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.5
    beta: float = 0.5
    temperature: float = 1.0
    batch_size: int = 16
    reduction: str = "mean"  # "mean" or "sum" over the batch

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


@dataclass
class LossBreakdown:
    sub_loss1: float
    sub_loss2: float
    loss1: float
    loss2: float
    total: float

    CSV_HEADER = ("step", "sub_loss1", "sub_loss2", "loss1", "loss2", "total")

    def csv_row(self, step: int) -> list:
        return [step, self.sub_loss1, self.sub_loss2, self.loss1, self.loss2, self.total]


def distill_kl(student_logits: Tensor, teacher_logits: Tensor, temperature: float = 1.0) -> Tensor:
    """``T^2`` times the per-frame mean of KL(softmax(student/T) || softmax(teacher/T))."""
    if student_logits.shape != teacher_logits.shape:
        raise dc.ShapeError(
            f"distill_kl: student {student_logits.shape} and teacher {teacher_logits.shape} differ"
        )
    if teacher_logits.requires_grad:
        teacher_logits = teacher_logits.detach()
    inv_t = 1.0 / temperature
    log_p1 = dc.log_softmax(dc.scale(student_logits, inv_t))
    log_p0 = dc.log_softmax(dc.scale(teacher_logits, inv_t))
    per_elem = dc.exp(log_p1) * (log_p1 - log_p0)
    n_frames = student_logits.shape[0] if student_logits.values.ndim > 1 else 1
    return dc.scale(dc.sum(per_elem), temperature * temperature / n_frames)


def reduce_batch(terms: Sequence[Tensor], reduction: str = "mean") -> Tensor:
    total = dc.sum(dc.stack(list(terms)))
    if reduction == "mean":
        return dc.scale(total, 1.0 / len(terms))
    return total


def loss_task1(student_out, teacher_out, labels0, hyper: HyperParams) -> tuple[Tensor, Tensor, Tensor]:
    """Forgetting penalty over a domain-0 batch; returns ``(loss1, sub_loss1, sub_loss2)``.

    Arguments are parallel lists, one entry per utterance. Single tensors are
    accepted as a batch of one.
    """
    if isinstance(student_out, Tensor):
        student_out, teacher_out, labels0 = [student_out], [teacher_out], [labels0]
    kl = reduce_batch(
        [distill_kl(s, t, hyper.temperature) for s, t in zip(student_out, teacher_out)], hyper.reduction
    )
    nll = reduce_batch([ctc(s, y) for s, y in zip(student_out, labels0)], hyper.reduction)
    loss1 = dc.scale(kl, hyper.alpha) + dc.scale(nll, 1.0 - hyper.alpha)
    return loss1, kl, nll


def loss_task2(student_out_on_data1, labels1, hyper: HyperParams) -> Tensor:
    if isinstance(student_out_on_data1, Tensor):
        student_out_on_data1, labels1 = [student_out_on_data1], [labels1]
    return reduce_batch([ctc(s, y) for s, y in zip(student_out_on_data1, labels1)], hyper.reduction)


class NonFiniteLossError(FloatingPointError):
    pass


def loss_total(task1_value, ctc_on_data1, hyper: HyperParams, sub_loss1=None, sub_loss2=None):
    """``beta * task1 + (1 - beta) * task2`` and the filled-in :class:`LossBreakdown`.

    Works on plain floats as well as tensors; with tensors the returned
    total stays differentiable.
    """
    l1 = _value(task1_value)
    l2 = _value(ctc_on_data1)
    if not (math.isfinite(l1) and math.isfinite(l2)):
        raise NonFiniteLossError(f"non-finite loss terms: loss1={l1}, loss2={l2}")
    if isinstance(task1_value, Tensor) or isinstance(ctc_on_data1, Tensor):
        a = task1_value if isinstance(task1_value, Tensor) else Tensor(l1)
        b = ctc_on_data1 if isinstance(ctc_on_data1, Tensor) else Tensor(l2)
        total = dc.scale(a, hyper.beta) + dc.scale(b, 1.0 - hyper.beta)
        total_value = total.item()
    else:
        total = hyper.beta * l1 + (1.0 - hyper.beta) * l2
        total_value = total
    breakdown = LossBreakdown(
        sub_loss1=_value(sub_loss1) if sub_loss1 is not None else math.nan,
        sub_loss2=_value(sub_loss2) if sub_loss2 is not None else math.nan,
        loss1=l1,
        loss2=l2,
        total=total_value,
    )
    return total, breakdown


def _value(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)
