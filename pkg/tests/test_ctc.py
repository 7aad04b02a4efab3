import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlcf import diffcore as dc
from mtlcf.ctc import (
    CtcInfeasibleError,
    collapse,
    ctc,
    ctc_brute_force,
    ctc_loss,
    greedy_decode,
    min_frames,
)


def random_logprobs(rng, n_frames, vocab, spread=2.0):
    x = rng.uniform(-spread, spread, size=(n_frames, vocab))
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def test_single_frame_single_label():
    lp = np.log([[0.4, 0.6]])
    assert ctc_loss(lp, [1]).loss == pytest.approx(-math.log(0.6), abs=1e-12)
    assert -math.log(0.6) == pytest.approx(0.51083, abs=1e-5)


def test_empty_labels_is_all_blank_path():
    lp = np.log([[0.7, 0.3], [0.2, 0.8]])
    assert ctc_loss(lp, []).loss == pytest.approx(-(math.log(0.7) + math.log(0.2)), abs=1e-12)


def test_uniform_two_frames_three_paths():
    lp = np.log(np.full((2, 2), 0.5))
    # paths aa, a-, -a out of 4 equally likely paths
    assert ctc_brute_force(lp, [1]) == pytest.approx(-math.log(0.75), abs=1e-12)
    assert ctc_loss(lp, [1]).loss == pytest.approx(-math.log(0.75), abs=1e-12)
    assert -math.log(0.75) == pytest.approx(0.28768, abs=1e-5)


def test_brute_force_t1_v2_both_paths():
    lp = np.log([[0.25, 0.75]])
    assert ctc_brute_force(lp, [1]) == pytest.approx(-math.log(0.75))
    assert ctc_brute_force(lp, []) == pytest.approx(-math.log(0.25))


def test_infeasible_is_an_error_not_inf():
    lp = random_logprobs(np.random.default_rng(0), 2, 3)
    with pytest.raises(CtcInfeasibleError):
        ctc_loss(lp, [1, 1])
    assert ctc_brute_force(lp, [1, 1]) == math.inf
    assert min_frames([1, 1]) == 3


def test_invalid_symbols_rejected():
    lp = random_logprobs(np.random.default_rng(0), 3, 3)
    with pytest.raises(ValueError):
        ctc_loss(lp, [0])
    with pytest.raises(ValueError):
        ctc_loss(lp, [3])


def test_brute_force_guard():
    with pytest.raises(ValueError):
        ctc_brute_force(np.zeros((12, 5)), [1])


def test_oracle_sweep_matches():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(300):
        n_frames, vocab, n_lab = rng.integers(1, 7), rng.integers(2, 5), rng.integers(0, 4)
        labels = [int(s) for s in rng.integers(1, vocab, size=n_lab)]
        lp = random_logprobs(rng, n_frames, vocab)
        if n_frames < min_frames(labels):
            continue
        assert ctc_loss(lp, labels).loss == pytest.approx(ctc_brute_force(lp, labels), abs=1e-9)
        checked += 1
    assert checked > 150


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(10):
        labels = [1, 2, 2]
        x = rng.uniform(-2, 2, size=(6, 4))
        err = dc.finite_difference_check(lambda t: ctc(dc.log_softmax(t), labels), x)
        assert err < 1e-5


def test_gradient_on_raw_logprobs():
    rng = np.random.default_rng(12)
    lp = random_logprobs(rng, 5, 3)
    res = ctc_loss(lp, [1, 2])
    eps = 1e-6
    num = np.zeros_like(lp)
    for idx in np.ndindex(lp.shape):
        up, dn = lp.copy(), lp.copy()
        up[idx] += eps
        dn[idx] -= eps
        num[idx] = (ctc_loss(up, [1, 2]).loss - ctc_loss(dn, [1, 2]).loss) / (2 * eps)
    np.testing.assert_allclose(res.grad_logprobs, num, atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n_frames, vocab = int(rng.integers(1, 8)), int(rng.integers(2, 5))
    labels = [int(s) for s in rng.integers(1, vocab, size=int(rng.integers(0, 4)))]
    if n_frames < min_frames(labels):
        return
    assert ctc_loss(random_logprobs(rng, n_frames, vocab), labels).loss >= 0.0


def test_zero_loss_only_for_certain_alignment():
    lp = np.log(np.array([[1e-300, 1.0], [1.0, 1e-300]]))
    assert ctc_loss(lp, [1]).loss == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_moving_mass_off_unused_symbols_never_hurts(seed, fraction):
    rng = np.random.default_rng(seed)
    labels = [1, 2, 1]
    lp = random_logprobs(rng, 5, 5)  # symbols 3 and 4 never occur in labels
    before = ctc_loss(lp, labels).loss

    swapped = lp.copy()
    swapped[:, [3, 4]] = swapped[:, [4, 3]]
    assert ctc_loss(swapped, labels).loss == pytest.approx(before, abs=1e-12)

    p = np.exp(lp)
    t, dest = int(rng.integers(0, 5)), int(rng.integers(0, 3))
    moved = fraction * p[t, 3]
    p[t, 3] -= moved
    p[t, dest] += moved
    with np.errstate(divide="ignore"):
        after = ctc_loss(np.log(p), labels).loss
    assert after <= before + 1e-12


def test_long_sequence_stays_finite():
    rng = np.random.default_rng(5)
    lp = random_logprobs(rng, 400, 6, spread=8.0)
    labels = [int(s) for s in rng.integers(1, 6, size=60)]
    res = ctc_loss(lp, labels)
    assert np.isfinite(res.loss) and np.all(np.isfinite(res.grad_logprobs))


def test_greedy_decode_rules():
    def onehot(seq, vocab=3):
        out = np.full((len(seq), vocab), -5.0)
        out[np.arange(len(seq)), seq] = 0.0
        return out

    assert greedy_decode(onehot([1, 1, 0, 2])) == [1, 2]
    assert greedy_decode(onehot([0, 0, 0])) == []
    assert greedy_decode(onehot([1, 0, 1])) == [1, 1]
    # ties go to the lowest index
    assert greedy_decode(np.zeros((2, 3))) == []


def test_collapse():
    assert collapse([0, 1, 1, 0, 1, 2, 2]) == [1, 1, 2]


def test_nan_input_propagates_instead_of_infeasible():
    lp = random_logprobs(np.random.default_rng(1), 4, 3)
    lp[2, 1] = np.nan
    res = ctc_loss(lp, [1, 2])
    assert math.isnan(res.loss) and np.all(np.isnan(res.grad_logprobs))
