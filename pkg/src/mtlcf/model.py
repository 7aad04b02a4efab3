"""LDNN acoustic model: stacked bidirectional LSTMs, a ReLU layer, a linear layer, log-softmax.

Utterances of different lengths are run together as a right-padded batch.
The forward direction never sees padding before a valid frame. The
backward direction zeroes its state on padded frames, so each utterance
starts its reverse pass from a clean state at its own last frame. Valid
outputs are therefore the same as running each utterance alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 24
    lstm_layers: int = 2
    lstm_cells: int = 32
    relu_units: int = 64
    vocab_size: int = 12  # includes the blank at index 0
    init_low: float = -0.05
    init_high: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "lstm_layers", "lstm_cells", "relu_units"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2 (one symbol plus blank)")
        if not self.init_low < self.init_high:
            raise ValueError("init_low must be below init_high")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Sizes used for the full-scale ASR system: 240-d input, 3 x 320 Bi-LSTM, 1024 ReLU, 46 outputs."""
        base = dict(input_dim=240, lstm_layers=3, lstm_cells=320, relu_units=1024, vocab_size=46)
        base.update(overrides)
        return cls(**base)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes. Gate columns are laid out input, forget, cell, output."""
    shapes: dict[str, tuple[int, ...]] = {}
    h = config.lstm_cells
    in_dim = config.input_dim
    for layer in range(config.lstm_layers):
        for direction in ("fw", "bw"):
            shapes[f"lstm{layer}.{direction}.w"] = (in_dim + h, 4 * h)
            shapes[f"lstm{layer}.{direction}.b"] = (4 * h,)
        in_dim = 2 * h
    shapes["relu.w"] = (2 * h, config.relu_units)
    shapes["relu.b"] = (config.relu_units,)
    shapes["out.w"] = (config.relu_units, config.vocab_size)
    shapes["out.b"] = (config.vocab_size,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


class ModelParams:
    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor], frozen: bool = False):
        self.config = config
        self.tensors = tensors
        self.frozen = frozen
        for t in tensors.values():
            t.requires_grad = not frozen

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.values for k, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def to_bytes(self) -> bytes:
        """Canonical serialization: config JSON then every tensor, little-endian float64."""
        buf = io.BytesIO()
        buf.write(json.dumps(dataclasses.asdict(self.config), sort_keys=True).encode())
        for name, t in self.tensors.items():
            buf.write(name.encode())
            buf.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def init_model(config: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    tensors = {
        name: Tensor(rng.uniform(config.init_low, config.init_high, size=shape), name=name)
        for name, shape in param_shapes(config).items()
    }
    return ModelParams(config, tensors)


def copy_model(params: ModelParams) -> ModelParams:
    tensors = {k: Tensor(t.values.copy(), name=k) for k, t in params.tensors.items()}
    return ModelParams(params.config, tensors, frozen=params.frozen)


def set_frozen(params: ModelParams, frozen: bool) -> ModelParams:
    params.frozen = bool(frozen)
    for t in params.tensors.values():
        t.requires_grad = not frozen
        if frozen:
            t.grad = None
    return params


def _lstm_direction(params, prefix, inputs, masks, reverse, h_size):
    w = params[f"{prefix}.w"]
    b = params[f"{prefix}.b"]
    batch = inputs[0].shape[0]
    h = Tensor(np.zeros((batch, h_size)))
    c = Tensor(np.zeros((batch, h_size)))
    outputs: list[Tensor | None] = [None] * len(inputs)
    steps = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    for t in steps:
        gates = dc.affine(dc.concat([inputs[t], h], axis=1), w, b)
        i = dc.sigmoid(gates[:, :h_size])
        f = dc.sigmoid(gates[:, h_size : 2 * h_size])
        g = dc.tanh(gates[:, 2 * h_size : 3 * h_size])
        o = dc.sigmoid(gates[:, 3 * h_size :])
        c = f * c + i * g
        h = o * dc.tanh(c)
        if reverse and masks[t] is not None:
            c = c * masks[t]
            h = h * masks[t]
        outputs[t] = h
    return outputs


def encode(params: ModelParams, features: Sequence[np.ndarray]) -> list[list[tuple[Tensor, Tensor]]]:
    """Run the Bi-LSTM stack on a padded batch.

    Returns, per layer, a time-ordered list of ``(forward_h, backward_h)``
    pairs, each ``B x lstm_cells``.
    """
    cfg = params.config
    lengths = [len(f) for f in features]
    if not features:
        raise ValueError("empty batch")
    for f in features:
        f = np.asarray(f)
        if f.ndim != 2 or f.shape[1] != cfg.input_dim:
            raise dc.ShapeError(f"features must be T x {cfg.input_dim}, got {f.shape}")
        if f.shape[0] < 1:
            raise dc.ShapeError("an utterance needs at least one frame")
    n_steps = max(lengths)
    batch = np.zeros((n_steps, len(features), cfg.input_dim))
    for j, f in enumerate(features):
        batch[: len(f), j] = f
    lengths_arr = np.asarray(lengths)
    masks = []
    for t in range(n_steps):
        valid = lengths_arr > t
        if valid.all():
            masks.append(None)
        else:
            masks.append(Tensor(np.repeat(valid[:, None].astype(np.float64), cfg.lstm_cells, axis=1)))

    inputs = [Tensor(batch[t]) for t in range(n_steps)]
    layers = []
    for layer in range(cfg.lstm_layers):
        fw = _lstm_direction(params, f"lstm{layer}.fw", inputs, masks, False, cfg.lstm_cells)
        bw = _lstm_direction(params, f"lstm{layer}.bw", inputs, masks, True, cfg.lstm_cells)
        layers.append(list(zip(fw, bw)))
        inputs = [dc.concat([a, b], axis=1) for a, b in zip(fw, bw)]
    return layers


def forward_batch(params: ModelParams, features: Sequence[np.ndarray]) -> list[Tensor]:
    """Per-frame log-probabilities (``T_i x V``) for each utterance in ``features``."""
    cfg = params.config
    layers = encode(params, features)
    top = [dc.concat([a, b], axis=1) for a, b in layers[-1]]
    n_steps, batch = len(top), top[0].shape[0]
    flat = dc.reshape(dc.stack(top, axis=0), (n_steps * batch, 2 * cfg.lstm_cells))
    hidden = dc.relu(dc.affine(flat, params["relu.w"], params["relu.b"]))
    logits = dc.affine(hidden, params["out.w"], params["out.b"])
    logp = dc.reshape(dc.log_softmax(logits), (n_steps, batch, cfg.vocab_size))
    return [logp[: len(f), j, :] for j, f in enumerate(features)]


def forward(params: ModelParams, features: np.ndarray) -> Tensor:
    return forward_batch(params, [features])[0]


def save_checkpoint(params: ModelParams, path) -> None:
    """Write ``config`` (JSON string) and every tensor into an uncompressed ``.npz``."""
    path = Path(path)
    arrays = {name: t.values for name, t in params.tensors.items()}
    meta = json.dumps({"config": dataclasses.asdict(params.config), "order": list(arrays)})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **arrays)


def load_checkpoint(path) -> ModelParams:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        config = ModelConfig(**meta["config"])
        tensors = {name: Tensor(data[name].astype(np.float64), name=name) for name in meta["order"]}
    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise ValueError(f"checkpoint {path} is missing or misshapes {name}")
    return ModelParams(config, tensors)

