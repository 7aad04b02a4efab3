"""Synthetic two-domain utterances, low-frame-rate stacking, and length-sorted batching.

Each symbol owns a Gaussian prototype in raw feature space. Domain 1
moves every prototype by one shared offset vector of norm
``prototype_shift``, so the two domains are equally hard to recognize yet a
model fitted to domain 0 misreads domain-1 input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .ctc import min_frames

SPLIT_NAMES = ("train", "dev", "test")


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int = 0
    vocab_size: int = 12
    raw_feature_dim: int = 8
    frames_per_symbol: tuple[int, int] = (4, 6)
    utterance_length: tuple[int, int] = (5, 12)
    prototype_shift: float = 0.0
    noise_sigma: float = 1.0
    seed: int = 0
    prototype_seed: int = 1234  # shared by both domains
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    left_context: int = 2
    decimation: int = 3

    def __post_init__(self):
        object.__setattr__(self, "frames_per_symbol", tuple(self.frames_per_symbol))
        object.__setattr__(self, "utterance_length", tuple(self.utterance_length))

    def validate(self) -> None:
        if self.domain_id not in (0, 1):
            raise ValueError("domain_id must be 0 or 1")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must allow at least two symbols besides blank")
        if self.raw_feature_dim < 1:
            raise ValueError("raw_feature_dim must be positive")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.domain_id == 0 and self.prototype_shift != 0:
            raise ValueError("prototype_shift must be 0 for domain 0")
        lo, hi = self.frames_per_symbol
        if not 1 <= lo <= hi:
            raise ValueError("frames_per_symbol must be an increasing range of positive ints")
        lo_u, hi_u = self.utterance_length
        if not 1 <= lo_u <= hi_u:
            raise ValueError("utterance_length must be an increasing range of positive ints")
        # shortest possible utterance must still fit its labels after decimation
        for n_sym in range(lo_u, hi_u + 1):
            if math.ceil(n_sym * lo / self.decimation) < n_sym:
                raise ValueError(
                    f"frames_per_symbol={self.frames_per_symbol} is too short for "
                    f"decimation {self.decimation}: {n_sym} symbols would not fit"
                )
        for n in (self.n_train, self.n_dev, self.n_test):
            if n < 1:
                raise ValueError("split sizes must be positive")


@dataclass
class FeatureSequence:
    frames: np.ndarray  # T_raw x raw_feature_dim
    labels: list[int]
    domain_id: int

    def __len__(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class DatasetSplit:
    train: list[FeatureSequence] = field(default_factory=list)
    dev: list[FeatureSequence] = field(default_factory=list)
    test: list[FeatureSequence] = field(default_factory=list)

    def __getitem__(self, name: str) -> list[FeatureSequence]:
        return getattr(self, name)


def prototypes(spec: DomainSpec) -> np.ndarray:
    """``vocab_size x raw_feature_dim`` class means; row 0 (blank) is unused."""
    rng = np.random.default_rng(spec.prototype_seed)
    base = rng.normal(size=(spec.vocab_size, spec.raw_feature_dim))
    direction = rng.normal(size=spec.raw_feature_dim)
    direction /= np.linalg.norm(direction)
    return base + spec.prototype_shift * direction


def sample_labels(rng: np.random.Generator, spec: DomainSpec) -> list[int]:
    """Uniform symbols with no symbol repeated back to back."""
    n = int(rng.integers(spec.utterance_length[0], spec.utterance_length[1] + 1))
    labels: list[int] = []
    for _ in range(n):
        choices = [s for s in range(1, spec.vocab_size) if not labels or s != labels[-1]]
        labels.append(int(rng.choice(choices)))
    return labels


def render(rng: np.random.Generator, labels: Sequence[int], protos: np.ndarray, spec: DomainSpec) -> np.ndarray:
    chunks = []
    for s in labels:
        n = int(rng.integers(spec.frames_per_symbol[0], spec.frames_per_symbol[1] + 1))
        chunks.append(protos[s] + spec.noise_sigma * rng.normal(size=(n, spec.raw_feature_dim)))
    return np.concatenate(chunks, axis=0)


def gen_domain(spec: DomainSpec) -> DatasetSplit:
    spec.validate()
    protos = prototypes(spec)
    rng = np.random.default_rng([spec.seed, spec.domain_id])
    out = DatasetSplit()
    for name, n in zip(SPLIT_NAMES, (spec.n_train, spec.n_dev, spec.n_test)):
        items = out[name]
        for _ in range(n):
            labels = sample_labels(rng, spec)
            frames = render(rng, labels, protos, spec)
            items.append(FeatureSequence(frames, labels, spec.domain_id))
    return out


def stack_lfr(frames: np.ndarray, left_context: int = 2, decimation: int = 3) -> np.ndarray:
    """Stack each kept frame with its ``left_context`` predecessors, keeping every ``decimation``-th frame.

    Kept frames sit at raw indices 0, d, 2d, ...; missing left context
    repeats frame 0. Output rows are ordered oldest frame first.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"expected a non-empty T x F matrix, got {frames.shape}")
    anchors = np.arange(0, frames.shape[0], decimation)
    offsets = np.arange(-left_context, 1)
    idx = np.clip(anchors[:, None] + offsets[None, :], 0, None)
    return frames[idx].reshape(len(anchors), -1)


def model_inputs(items: Sequence[FeatureSequence], left_context: int = 2, decimation: int = 3) -> list[np.ndarray]:
    return [stack_lfr(u.frames, left_context, decimation) for u in items]


def make_batches(split: Sequence[FeatureSequence], m: int, rng: np.random.Generator | None = None) -> list[list[FeatureSequence]]:
    """Sort by length, cut into consecutive batches of ``m``, then shuffle batch order."""
    if m < 1:
        raise ValueError("batch size must be at least 1")
    if not split:
        raise ValueError("cannot batch an empty split")
    order = sorted(range(len(split)), key=lambda i: len(split[i]))
    batches = [[split[i] for i in order[k : k + m]] for k in range(0, len(order), m)]
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches


class BatchStream:
    """Endless stream of exactly-``m`` batches drawn from one split.

    Every pass reshuffles the length-sorted batches. A short final batch is
    topped up by sampling the split with replacement.
    """

    def __init__(self, split: Sequence[FeatureSequence], m: int, rng: np.random.Generator):
        if not split:
            raise ValueError("cannot stream an empty split")
        self.split = list(split)
        self.m = m
        self.rng = rng
        self._pending: list[list[FeatureSequence]] = []
        self.passes = 0

    def _fill(self, batch: list[FeatureSequence]) -> list[FeatureSequence]:
        if len(batch) < self.m:
            extra = self.rng.integers(0, len(self.split), size=self.m - len(batch))
            batch = batch + [self.split[i] for i in extra]
        return batch

    def epoch(self) -> list[list[FeatureSequence]]:
        """One full pass as a list of filled batches."""
        self.passes += 1
        return [self._fill(b) for b in make_batches(self.split, self.m, self.rng)]

    def next(self) -> list[FeatureSequence]:
        if not self._pending:
            self._pending = self.epoch()
        return self._pending.pop(0)

    def __iter__(self) -> Iterator[list[FeatureSequence]]:
        while True:
            yield self.next()


# ------------------------------------------------------------------ file format

def _record(u: FeatureSequence) -> str:
    return json.dumps(
        {"domain_id": int(u.domain_id), "labels": [int(s) for s in u.labels], "frames": u.frames.tolist()},
        separators=(",", ":"),
    )


def write_sequences(items: Sequence[FeatureSequence], path) -> None:
    """One JSON object per line: ``domain_id``, ``labels``, ``frames`` (row-major list of rows).

    Floats are written with Python's shortest round-trip repr, so reading
    back reproduces every float64 bit for bit.
    """
    with open(Path(path), "w", encoding="utf-8") as fh:
        for u in items:
            fh.write(_record(u))
            fh.write("\n")


def read_sequences(path) -> list[FeatureSequence]:
    items = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frames = np.asarray(rec["frames"], dtype=np.float64)
                items.append(FeatureSequence(frames, [int(s) for s in rec["labels"]], int(rec["domain_id"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return items


def write_split(split: DatasetSplit, directory, domain_id: int) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in SPLIT_NAMES:
        p = directory / f"domain{domain_id}_{name}.jsonl"
        write_sequences(split[name], p)
        paths.append(p)
    return paths


def read_split(directory, domain_id: int) -> DatasetSplit:
    directory = Path(directory)
    return DatasetSplit(*(read_sequences(directory / f"domain{domain_id}_{name}.jsonl") for name in SPLIT_NAMES))


def feasible(u: FeatureSequence, decimation: int = 3) -> bool:
    return math.ceil(len(u) / decimation) >= min_frames(u.labels)
