"""Character error rate, test-set evaluation, and comparison tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .ctc import greedy_decode
from .data import FeatureSequence, model_inputs
from .model import ModelParams, forward_batch

EVAL_BATCH = 64


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def cer(hyp: Sequence, ref: Sequence) -> float:
    # empty reference: 0 for an empty hypothesis, otherwise the hypothesis length
    if len(ref) == 0:
        return float(len(hyp))
    return edit_distance(hyp, ref) / len(ref)


@dataclass
class EvalReport:
    dataset_id: str
    utterance_count: int
    mean_cer: float
    per_utterance: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset_id", "utterance", "cer"])
            for i, v in enumerate(self.per_utterance):
                w.writerow([self.dataset_id, i, repr(v)])


def decode_split(model: ModelParams, split: Sequence[FeatureSequence]) -> list[list[int]]:
    """Greedy transcripts in the split's original order."""
    feats = model_inputs(split)
    order = sorted(range(len(split)), key=lambda i: len(feats[i]))
    hyps: list[list[int] | None] = [None] * len(split)
    with dc.no_grad():
        for k in range(0, len(order), EVAL_BATCH):
            idx = order[k : k + EVAL_BATCH]
            outs = forward_batch(model, [feats[i] for i in idx])
            for i, out in zip(idx, outs):
                hyps[i] = greedy_decode(out)
    return hyps  # type: ignore[return-value]


def evaluate(model: ModelParams, split: Sequence[FeatureSequence], dataset_id: str = "") -> EvalReport:
    if not split:
        raise ValueError("cannot evaluate an empty split")
    hyps = decode_split(model, split)
    per = [cer(h, u.labels) for h, u in zip(hyps, split)]
    return EvalReport(dataset_id, len(split), float(np.mean(per)), per)


COMPARISON_HEADER = ("method", "scale_tar", "cer_org", "cer_tar")


def build_comparison(runs) -> list[dict]:
    """Reference row (the original model at epoch 0) followed by one row per run."""
    if not runs:
        raise ValueError("no runs to compare")
    keys = {getattr(r, "test_key", None) for r in runs}
    if len(keys) > 1:
        raise ValueError(f"runs were evaluated on different test sets: {sorted(map(str, keys))}")
    # the original model is epoch 0 of any run started from it, else the end of a base run
    warm = [r for r in runs if r.method in ("ft", "mtlcf")]
    base = [r for r in runs if r.method == "base"]
    start = warm[0].history[0] if warm else (base[0].history[-1] if base else runs[0].history[0])
    rows = [{"method": "original", "scale_tar": 0, "cer_org": start.cer_org, "cer_tar": start.cer_tar}]
    for r in runs:
        last = r.history[-1]
        rows.append({"method": r.method, "scale_tar": r.scale_tar, "cer_org": last.cer_org, "cer_tar": last.cer_tar})
    return rows


def write_rows(rows: Sequence[dict], header: Sequence[str], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def read_rows(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v
