"""Tests for BPSK/AWGN, the multiplicative-noise view, pre/post-processing and padding."""

import math

import numpy as np
import pytest

from uecct.channel import (
    ChannelParams,
    LlrVector,
    bpsk,
    hard_decision,
    multiplicative_view,
    postprocess,
    preprocess,
    sigma_from_ebn0,
    standardize,
    transmit,
    uncoded_ber,
)
from uecct.errors import DataError
from uecct.gf2core import encode, gf2_matmul
from uecct.maskgen import build_extended
from uecct.registry import BUILTIN_CODES, CodeRegistry, builtin_code


@pytest.fixture
def hamming():
    return builtin_code("hamming74")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_bpsk_and_hard_decision_are_inverse():
    bits = np.array([0, 1, 1, 0], dtype=np.uint8)
    assert bpsk(bits).tolist() == [1.0, -1.0, -1.0, 1.0]
    assert np.array_equal(hard_decision(bpsk(bits)), bits)


def test_hard_decision_zero_counts_as_positive():
    assert hard_decision(np.array([0.0, -0.0, -1e-300])).tolist() == [0, 0, 1]


def test_sigma_from_ebn0_formula():
    assert sigma_from_ebn0(0.0, 1.0) == pytest.approx(math.sqrt(0.5))
    assert sigma_from_ebn0(4.0, 0.5) == pytest.approx(math.sqrt(1.0 / 10 ** 0.4))
    assert ChannelParams(ebn0_db=4.0, rate=0.5).sigma == sigma_from_ebn0(4.0, 0.5)


@pytest.mark.parametrize("rate", [0.0, -0.5, 1.5])
def test_sigma_from_ebn0_rejects_bad_rate(rate):
    with pytest.raises(DataError, match="rate"):
        sigma_from_ebn0(4.0, rate)


def test_sigma_from_ebn0_rejects_non_finite():
    with pytest.raises(DataError, match="finite"):
        sigma_from_ebn0(float("nan"), 0.5)


def test_uncoded_ber_is_gaussian_tail():
    # Q(sqrt(2)) at 0 dB, rate 1
    assert uncoded_ber(0.0, 1.0) == pytest.approx(0.0786496, rel=1e-5)


def test_transmit_noise_statistics(rng):
    y = transmit(np.ones(200_000), 0.7, rng)
    noise = y.values - 1.0
    assert abs(noise.mean()) < 0.01
    assert noise.std() == pytest.approx(0.7, rel=0.01)


def test_transmit_rejects_non_positive_sigma(rng):
    with pytest.raises(DataError, match="positive"):
        transmit(np.ones(4), 0.0, rng)


def test_llr_vector_checks_length(hamming):
    with pytest.raises(DataError, match="does not match n=7"):
        LlrVector(np.zeros(6), hamming)


def test_multiplicative_view_recovers_noise(rng, hamming):
    x_s = bpsk(encode(hamming, [1, 0, 1, 1]))
    y = transmit(x_s, 0.8, rng, hamming)
    z = multiplicative_view(y, x_s)
    assert np.allclose(x_s * z, y.values)


def test_preprocess_layout(hamming):
    y = np.array([0.9, -0.2, 1.1, 0.4, -0.7, 1.0, 0.3])
    pre = preprocess(hamming, y)
    assert pre.shape == (10,)
    assert np.allclose(pre[:7], np.abs(y))
    expected = gf2_matmul(hard_decision(y), hamming.H.bits.T)
    assert np.array_equal(pre[7:], expected)


def test_preprocess_length_mismatch(hamming):
    with pytest.raises(DataError, match="does not match n=7"):
        preprocess(hamming, np.zeros(8))


@pytest.mark.parametrize("name", list(BUILTIN_CODES))
def test_orthogonality_of_hard_bits_and_syndrome(name, rng):
    code = builtin_code(name)
    y = rng.standard_normal((1000, code.n))
    pre = preprocess(code, y)
    bits = np.concatenate([hard_decision(y), pre[:, code.n :].astype(np.uint8)], axis=1)
    assert not gf2_matmul(bits, build_extended(code.H).matrix.bits).any()


def test_preprocessing_is_codeword_invariant(hamming, rng):
    z = 1.0 + 0.9 * rng.standard_normal((50, 7))
    x_s = bpsk(encode(hamming, rng.integers(0, 2, (50, 4))))
    assert np.array_equal(preprocess(hamming, x_s * z), preprocess(hamming, z))


def test_postprocess_with_true_noise_sign_recovers_codeword(hamming, rng):
    x = encode(hamming, [0, 1, 1, 0])
    y = transmit(bpsk(x), 1.0, rng, hamming)
    z_sign = np.sign(multiplicative_view(y, bpsk(x)))
    assert np.array_equal(postprocess(y, z_sign), x)


def test_postprocess_shape_mismatch(hamming):
    with pytest.raises(DataError, match="Shape mismatch"):
        postprocess(np.ones(7), np.ones(6))


def test_standardize_pads_both_blocks(hamming):
    registry = CodeRegistry([hamming, builtin_code("golay24")])
    pre = np.arange(1, 11, dtype=float)
    std = standardize(registry, hamming, pre)
    assert std.features.shape == (36,)
    assert np.array_equal(std.features[std.codeword_slots], pre[:7])
    assert np.array_equal(std.features[std.syndrome_slots], pre[7:])
    assert std.syndrome_slots == slice(24, 27)
    assert std.features[7:24].sum() == 0 and std.features[27:].sum() == 0


def test_standardize_rejects_oversized_code(hamming):
    registry = CodeRegistry([builtin_code("rep2")])
    with pytest.raises(DataError, match="exceeds registry bounds"):
        standardize(registry, hamming, np.zeros(10))
