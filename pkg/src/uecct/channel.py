"""BPSK over AWGN, the multiplicative-noise view, pre/post-processing and padding.

Every function accepts a single word of shape (n,) or a batch of shape
(batch, n); the last axis is always the bit axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from uecct.errors import DataError
from uecct.gf2core import CodeSpec, syndrome
from uecct.registry import CodeRegistry


# =============================================================================
# Types
# =============================================================================


@dataclass(frozen=True, eq=False)
class LlrVector:
    """Received soft symbols y = x_s + noise, tagged with the code that produced them."""

    values: np.ndarray
    code: CodeSpec | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if self.code is not None and values.shape[-1] != self.code.n:
            raise DataError(
                f"Received word length {values.shape[-1]} does not match n={self.code.n} "
                f"of code {self.code.name}"
            )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ChannelParams:
    ebn0_db: float
    rate: float

    @property
    def sigma(self) -> float:
        return sigma_from_ebn0(self.ebn0_db, self.rate)


@dataclass(frozen=True, eq=False)
class StandardizedInput:
    """Zero-padded [|y|, 0_c, s(y), 0_s] of length N_max + S_max."""

    features: np.ndarray
    active_n: int
    active_s: int
    n_max: int

    @property
    def codeword_slots(self) -> slice:
        return slice(0, self.active_n)

    @property
    def syndrome_slots(self) -> slice:
        return slice(self.n_max, self.n_max + self.active_s)


def _values(y) -> np.ndarray:
    return y.values if isinstance(y, LlrVector) else np.asarray(y, dtype=np.float64)


# =============================================================================
# Modulation and channel
# =============================================================================


def bpsk(bits) -> np.ndarray:
    """0 -> +1, 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def hard_decision(y) -> np.ndarray:
    """bin(sign(y)); sign(0) counts as +1, so exact zeros decide bit 0."""
    return (_values(y) < 0).astype(np.uint8)


def sigma_from_ebn0(ebn0_db: float, rate: float) -> float:
    if rate <= 0 or rate > 1:
        raise DataError(f"Code rate must lie in (0, 1], got {rate}")
    if not math.isfinite(ebn0_db):
        raise DataError(f"Eb/N0 must be finite, got {ebn0_db}")
    return math.sqrt(1.0 / (2.0 * rate * 10.0 ** (ebn0_db / 10.0)))


def uncoded_ber(ebn0_db: float, rate: float) -> float:
    """Hard-decision bit error probability Q(1/sigma) at the given Eb/N0 and rate."""
    return float(norm.sf(1.0 / sigma_from_ebn0(ebn0_db, rate)))


def transmit(
    x_s, sigma: float, rng: np.random.Generator, code: CodeSpec | None = None
) -> LlrVector:
    """y = x_s + n, n ~ N(0, sigma^2) i.i.d."""
    if not sigma > 0:
        raise DataError(f"Noise standard deviation must be positive, got {sigma}")
    x_s = np.asarray(x_s, dtype=np.float64)
    return LlrVector(x_s + sigma * rng.standard_normal(x_s.shape), code)


def multiplicative_view(y, x_s) -> np.ndarray:
    """z with y = x_s * z; x_s is bipolar so z = y * x_s."""
    return _values(y) * np.asarray(x_s, dtype=np.float64)


# =============================================================================
# Pre/post-processing and standardization
# =============================================================================


def preprocess(code: CodeSpec, y) -> np.ndarray:
    """[|y|, s(y)] with s(y) = H · bin(sign(y)); length 2n - k."""
    values = _values(y)
    if values.shape[-1] != code.n:
        raise DataError(f"Received word length {values.shape[-1]} does not match n={code.n}")
    s = syndrome(code, hard_decision(values)).astype(np.float64)
    return np.concatenate([np.abs(values), s], axis=-1)


def postprocess(y, z_hat) -> np.ndarray:
    """x_hat = bin(sign(y * z_hat)) for a bipolar noise estimate z_hat."""
    values = _values(y)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if values.shape != z_hat.shape:
        raise DataError(f"Shape mismatch in postprocess: {values.shape} vs {z_hat.shape}")
    return hard_decision(values * z_hat)


def standardize(registry: CodeRegistry, code: CodeSpec, pre) -> StandardizedInput:
    """Pad codeword magnitudes to N_max and syndromes to S_max."""
    pre = np.asarray(pre, dtype=np.float64)
    n, m = code.n, code.m
    if n > registry.n_max or m > registry.s_max:
        raise DataError(
            f"Code {code.name} (n={n}, n-k={m}) exceeds registry bounds "
            f"N_max={registry.n_max}, S_max={registry.s_max}"
        )
    if pre.shape[-1] != n + m:
        raise DataError(f"Preprocessed length {pre.shape[-1]} does not match 2n-k={n + m}")
    out = np.zeros(pre.shape[:-1] + (registry.seq_len,), dtype=np.float64)
    out[..., :n] = pre[..., :n]
    out[..., registry.n_max : registry.n_max + m] = pre[..., n:]
    return StandardizedInput(features=out, active_n=n, active_s=m, n_max=registry.n_max)
