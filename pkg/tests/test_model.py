import numpy as np
import pytest

from mtlcf import diffcore as dc
from mtlcf.ctc import ctc
from mtlcf.model import (
    ModelConfig,
    copy_model,
    encode,
    forward,
    forward_batch,
    init_model,
    load_checkpoint,
    parameter_count,
    param_shapes,
    save_checkpoint,
    set_frozen,
)

SMALL = ModelConfig(input_dim=3, lstm_layers=1, lstm_cells=4, relu_units=5, vocab_size=4, seed=3)


def test_init_within_uniform_bounds():
    params = init_model(ModelConfig())
    for t in params.parameters():
        assert t.values.min() >= -0.05 and t.values.max() <= 0.05


def test_init_is_seeded():
    a, b = init_model(ModelConfig(seed=1)), init_model(ModelConfig(seed=1))
    c = init_model(ModelConfig(seed=2))
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != c.to_bytes()


def test_parameter_count_follows_config():
    cfg = ModelConfig(input_dim=6, lstm_layers=2, lstm_cells=3, relu_units=4, vocab_size=5)
    # per direction: (in + h) * 4h + 4h
    first = 2 * ((6 + 3) * 12 + 12)
    second = 2 * ((6 + 3) * 12 + 12)
    dense = 6 * 4 + 4 + 4 * 5 + 5
    assert parameter_count(cfg) == first + second + dense
    assert set(param_shapes(cfg)) == set(init_model(cfg).tensors)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=1)
    with pytest.raises(ValueError):
        ModelConfig(init_low=0.1, init_high=0.1)


def test_full_scale_preset():
    cfg = ModelConfig.full_scale()
    assert (cfg.input_dim, cfg.lstm_layers, cfg.lstm_cells, cfg.relu_units, cfg.vocab_size) == (240, 3, 320, 1024, 46)


def test_single_frame_output_normalized():
    params = init_model(ModelConfig())
    out = forward(params, np.random.default_rng(0).normal(size=(1, 24)))
    assert out.shape == (1, 12)
    np.testing.assert_allclose(np.exp(out.values).sum(axis=1), 1.0, atol=1e-9)


def test_outputs_finite_and_normalized_for_wild_inputs():
    params = init_model(ModelConfig())
    out = forward(params, 50.0 * np.random.default_rng(1).normal(size=(9, 24)))
    assert np.all(np.isfinite(out.values))
    np.testing.assert_allclose(np.exp(out.values).sum(axis=1), 1.0, atol=1e-9)


def test_dimension_mismatch_rejected():
    with pytest.raises(dc.ShapeError):
        forward(init_model(ModelConfig()), np.zeros((3, 7)))


def test_padded_batch_equals_single_utterance_runs():
    params = init_model(ModelConfig(seed=4))
    rng = np.random.default_rng(2)
    feats = [rng.normal(size=(n, 24)) for n in (3, 7, 1, 5)]
    batched = forward_batch(params, feats)
    for f, out in zip(feats, batched):
        np.testing.assert_allclose(out.values, forward(params, f).values, rtol=0, atol=1e-12)


def test_reversal_swaps_directions_with_symmetric_weights():
    params = init_model(SMALL)
    params["lstm0.bw.w"].values[...] = params["lstm0.fw.w"].values
    params["lstm0.bw.b"].values[...] = params["lstm0.fw.b"].values
    x = np.random.default_rng(5).normal(size=(6, 3))
    fwd = encode(params, [x])[0]
    rev = encode(params, [x[::-1].copy()])[0]
    n = len(x)
    for t in range(n):
        np.testing.assert_allclose(fwd[t][0].values, rev[n - 1 - t][1].values, atol=1e-14)
        np.testing.assert_allclose(fwd[t][1].values, rev[n - 1 - t][0].values, atol=1e-14)


def test_copy_is_storage_disjoint():
    src = init_model(ModelConfig())
    dup = copy_model(src)
    assert src.digest() == dup.digest()
    before = src.to_bytes()
    dup["out.b"].values += 1.0
    assert src.to_bytes() == before


def test_frozen_copy_can_be_unfrozen_independently():
    src = set_frozen(init_model(SMALL), True)
    dup = set_frozen(copy_model(src), False)
    assert src.frozen and all(not t.requires_grad for t in src.parameters())
    assert not dup.frozen and all(t.requires_grad for t in dup.parameters())


def test_freeze_blocks_gradients_and_is_idempotent():
    params = set_frozen(set_frozen(init_model(SMALL), True), True)
    x = np.random.default_rng(0).normal(size=(4, 3))
    out = forward(params, x)
    assert not out.requires_grad
    assert all(t.grad is None for t in params.parameters())

    set_frozen(params, False)
    loss = ctc(forward(params, x), [1, 2])
    dc.backward(loss)
    assert all(t.grad is not None for t in params.parameters())


def test_full_model_ctc_gradient_matches_finite_differences():
    params = init_model(SMALL)
    x = np.random.default_rng(9).normal(size=(4, 3))
    name = "lstm0.bw.w"
    base = params[name].values.copy()

    def loss_of(w: dc.Tensor):
        params.tensors[name] = w
        return ctc(forward(params, x), [1, 2])

    err = dc.finite_difference_check(loss_of, base)
    params.tensors[name] = dc.Tensor(base, requires_grad=True)
    assert err < 1e-4


def test_checkpoint_round_trip_bit_exact(tmp_path):
    params = init_model(ModelConfig(seed=8))
    path = tmp_path / "model.npz"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.config == params.config
    assert loaded.to_bytes() == params.to_bytes()
