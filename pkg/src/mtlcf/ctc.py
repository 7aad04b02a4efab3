"""CTC loss over the blank-augmented label lattice, computed in log space.

Blank is always symbol 0. Labels are sequences of ints in ``[1, V-1]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore
from .diffcore import Tensor

BLANK = 0
BRUTE_FORCE_LIMIT = 10**7


class CtcInfeasibleError(ValueError):
    """Raised when an utterance has too few frames for its label sequence."""


@dataclass
class CtcResult:
    loss: float
    grad_logprobs: np.ndarray


def _as_array(logprobs) -> np.ndarray:
    if isinstance(logprobs, Tensor):
        return logprobs.values
    return np.asarray(logprobs, dtype=np.float64)


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit ``labels``: one per symbol plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def validate_labels(labels: Sequence[int], vocab_size: int) -> list[int]:
    out = [int(s) for s in labels]
    for s in out:
        if s == BLANK:
            raise ValueError("label sequence contains the blank symbol 0")
        if not 0 < s < vocab_size:
            raise ValueError(f"label symbol {s} outside [1, {vocab_size - 1}]")
    return out


def collapse(path: Sequence[int]) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for s in path:
        s = int(s)
        if s != prev and s != BLANK:
            out.append(s)
        prev = s
    return out


def _logsumexp(*arrays: np.ndarray) -> np.ndarray:
    stacked = np.stack(arrays)
    m = stacked.max(axis=0)
    finite = np.isfinite(m)
    safe = np.where(finite, m, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(finite, safe + np.log(np.exp(stacked - safe).sum(axis=0)), -np.inf)


def ctc_loss(logprobs, labels: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of ``labels`` and its gradient w.r.t. ``logprobs``.

    ``logprobs`` is a ``T x V`` array of per-frame log-probabilities. The
    gradient treats every entry as a free input, so chaining it through a
    log-softmax gives the usual ``softmax - posterior`` logit gradient.
    """
    lp = _as_array(logprobs)
    if lp.ndim != 2:
        raise ValueError(f"logprobs must be T x V, got shape {lp.shape}")
    n_frames, vocab = lp.shape
    labels = validate_labels(labels, vocab)
    need = min_frames(labels)
    if n_frames < need:
        raise CtcInfeasibleError(
            f"{n_frames} frames cannot emit {len(labels)} labels (need at least {need})"
        )

    if np.isnan(lp).any():
        # NaN inputs propagate so callers can abort on a non-finite loss
        return CtcResult(loss=math.nan, grad_logprobs=np.full_like(lp, math.nan))

    ext = np.full(2 * len(labels) + 1, BLANK, dtype=np.int64)
    ext[1::2] = labels
    n_states = ext.size
    # skip transition s-2 -> s allowed onto a non-blank that differs from the label two back
    skip = np.zeros(n_states, dtype=bool)
    if n_states > 2:
        skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    emit = lp[:, ext]  # T x S
    neg_inf = -np.inf

    alpha = np.full((n_frames, n_states), neg_inf)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([neg_inf], prev[:-1]))
        jump = np.concatenate(([neg_inf, neg_inf], prev[:-2]))[:n_states]
        jump = np.where(skip, jump, neg_inf)
        alpha[t] = _logsumexp(stay, step, jump) + emit[t]

    # beta excludes the emission at its own frame
    beta = np.full((n_frames, n_states), neg_inf)
    beta[-1, -1] = 0.0
    if n_states > 1:
        beta[-1, -2] = 0.0
    skip_from = np.zeros(n_states, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [neg_inf]))
        jump = np.concatenate((nxt[2:], [neg_inf, neg_inf]))[:n_states]
        jump = np.where(skip_from, jump, neg_inf)
        beta[t] = _logsumexp(stay, step, jump)

    tail = [alpha[-1, -1]]
    if n_states > 1:
        tail.append(alpha[-1, -2])
    log_p = float(_logsumexp(*[np.asarray(v) for v in tail]))
    if not np.isfinite(log_p):
        raise CtcInfeasibleError("labels have zero probability under these log-probabilities")

    occupancy = alpha + beta - log_p  # log posterior of being in state s at frame t
    grad = np.zeros_like(lp)
    post = np.exp(occupancy)
    np.add.at(grad, (slice(None), ext), -post)
    return CtcResult(loss=-log_p, grad_logprobs=grad)


def ctc(logprobs: Tensor, labels: Sequence[int]) -> Tensor:
    """Differentiable scalar CTC loss node."""
    result = ctc_loss(logprobs, labels)
    grad = result.grad_logprobs
    return diffcore.custom(np.asarray(result.loss), (logprobs,), lambda g: (g * grad,))


def ctc_brute_force(logprobs, labels: Sequence[int]) -> float:
    """Enumerate every length-T path; returns ``inf`` when no path collapses to ``labels``."""
    lp = _as_array(logprobs)
    n_frames, vocab = lp.shape
    if vocab**n_frames > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{vocab}^{n_frames} paths exceeds the enumeration limit")
    target = [int(s) for s in labels]
    total = 0.0
    frames = range(n_frames)
    for path in itertools.product(range(vocab), repeat=n_frames):
        if collapse(path) == target:
            total += math.exp(sum(lp[t, k] for t, k in zip(frames, path)))
    if total == 0.0:
        return math.inf
    return -math.log(total)


def greedy_decode(logprobs) -> list[int]:
    """Best-path decoding: per-frame argmax (ties to the lowest index), then collapse."""
    lp = _as_array(logprobs)
    return collapse(np.argmax(lp, axis=-1))
