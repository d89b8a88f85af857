"""Decoders behind one interface: ``decode_batch(code, Y, sigma) -> X_hat``.

``HardDecoder`` and ``MlDecoder`` bracket the achievable error rates;
``BpDecoder`` is the classical sum-product baseline; ``ModelDecoder`` wraps a
trained network.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from uecct.channel import bpsk, hard_decision
from uecct.errors import ConfigError, DataError, NumericalError
from uecct.gf2core import CodeSpec, encode, gf2_matmul
from uecct.model import UecctModel, decode

logger = logging.getLogger(__name__)

ML_MAX_K = 20
ML_CHUNK = 1 << 22  # scores evaluated per chunk (rows x codewords)
BP_DEFAULT_ITERS = 20
_TANH_CLIP = 1.0 - 1e-15


class Decoder(Protocol):
    name: str

    def decode_batch(self, code: CodeSpec, Y: np.ndarray, sigma: float) -> np.ndarray: ...


def _as_batch(code: CodeSpec, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.shape[-1] != code.n:
        raise DataError(f"Received word length {Y.shape[-1]} does not match n={code.n} of {code.name}")
    return Y


# =============================================================================
# Hard decision
# =============================================================================


class HardDecoder:
    """Bitwise sign decision, no use of the code structure."""

    name = "hard"

    def decode_batch(self, code: CodeSpec, Y, sigma: float = 1.0) -> np.ndarray:
        return hard_decision(_as_batch(code, Y))


# =============================================================================
# Exhaustive maximum likelihood
# =============================================================================


def all_codewords(code: CodeSpec) -> np.ndarray:
    """Every codeword, row i encoding the message whose big-endian integer value is i."""
    if code.k > ML_MAX_K:
        raise NumericalError(f"Exhaustive ML needs k <= {ML_MAX_K}, code {code.name} has k={code.k}")
    index = np.arange(1 << code.k, dtype=np.int64)
    shifts = np.arange(code.k - 1, -1, -1, dtype=np.int64)
    messages = ((index[:, None] >> shifts) & 1).astype(np.uint8)
    return encode(code, messages)


class MlDecoder:
    """argmin over codewords of ||y - bpsk(c)||^2; ties go to the lowest codeword index."""

    name = "ml"

    def __init__(self):
        self._books: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def codebook(self, code: CodeSpec) -> np.ndarray:
        with self._lock:
            if code.name not in self._books:
                self._books[code.name] = all_codewords(code)
                logger.debug("Enumerated %d codewords of %s", len(self._books[code.name]), code.name)
            return self._books[code.name]

    def decode_batch(self, code: CodeSpec, Y, sigma: float = 1.0) -> np.ndarray:
        Y = _as_batch(code, Y)
        book = self.codebook(code)
        signs = bpsk(book)  # (2^k, n)
        # ||y - c||^2 = ||y||^2 + n - 2 y.c, so the minimum distance is the maximum correlation
        step = max(1, ML_CHUNK // len(book))
        best = np.empty(Y.shape[0], dtype=np.int64)
        for lo in range(0, Y.shape[0], step):
            best[lo : lo + step] = np.argmax(Y[lo : lo + step] @ signs.T, axis=1)
        return book[best]


# =============================================================================
# Sum-product belief propagation
# =============================================================================


@dataclass(frozen=True)
class TannerGraph:
    """Edge list of H plus dense edge-to-node incidence matrices."""

    check: np.ndarray  # (E,)
    var: np.ndarray  # (E,)
    check_incidence: np.ndarray  # (E, m)
    var_incidence: np.ndarray  # (E, n)

    @classmethod
    def from_code(cls, code: CodeSpec) -> TannerGraph:
        check, var = np.nonzero(code.H.bits)
        E = check.size
        ci = np.zeros((E, code.m))
        vi = np.zeros((E, code.n))
        ci[np.arange(E), check] = 1.0
        vi[np.arange(E), var] = 1.0
        return cls(check=check, var=var, check_incidence=ci, var_incidence=vi)


@dataclass(frozen=True)
class BpResult:
    bits: np.ndarray  # (B, n)
    posterior: np.ndarray  # (B, n) LLRs
    iterations: np.ndarray  # (B,) iterations until the syndrome cleared, or max_iters
    converged: np.ndarray  # (B,) bool


def channel_llr(Y: np.ndarray, sigma: float) -> np.ndarray:
    """2y/sigma^2; positive favours bit 0."""
    return 2.0 * np.asarray(Y, dtype=np.float64) / (sigma * sigma)


def bp_decode(code: CodeSpec, llr: np.ndarray, max_iters: int = BP_DEFAULT_ITERS, graph: TannerGraph | None = None) -> BpResult:
    """Flooding sum-product on the Tanner graph of H with per-word early exit."""
    if max_iters < 1:
        raise ConfigError(f"BP needs at least one iteration, got {max_iters}")
    L = _as_batch(code, llr)
    graph = graph or TannerGraph.from_code(code)
    B = L.shape[0]
    H_t = code.H.bits.T

    bits = hard_decision(L)
    posterior = L.copy()
    iterations = np.zeros(B, dtype=np.int64)
    done = ~gf2_matmul(bits, H_t).any(axis=1)

    q = L[:, graph.var]  # variable-to-check messages, (B, E)
    for it in range(1, max_iters + 1):
        if done.all():
            break
        t = np.tanh(0.5 * q)
        log_mag = np.log(np.clip(np.abs(t), 1e-300, None))
        negative = (t < 0).astype(np.float64)
        check_log = log_mag @ graph.check_incidence  # (B, m)
        check_neg = negative @ graph.check_incidence
        ext_log = check_log[:, graph.check] - log_mag
        ext_neg = np.rint(check_neg[:, graph.check] - negative).astype(np.int64)
        ext = np.where(ext_neg % 2 == 1, -1.0, 1.0) * np.exp(ext_log)
        r = 2.0 * np.arctanh(np.clip(ext, -_TANH_CLIP, _TANH_CLIP))  # check-to-variable

        post = L + r @ graph.var_incidence
        q = post[:, graph.var] - r

        live = ~done
        posterior[live] = post[live]
        bits[live] = hard_decision(post[live])
        iterations[live] = it
        done = done | ~gf2_matmul(bits, H_t).any(axis=1)

    return BpResult(bits=bits, posterior=posterior, iterations=iterations, converged=done)


class BpDecoder:
    name = "bp"

    def __init__(self, max_iters: int = BP_DEFAULT_ITERS):
        if max_iters < 1:
            raise ConfigError(f"BP needs at least one iteration, got {max_iters}")
        self.max_iters = max_iters
        self._graphs: dict[str, TannerGraph] = {}

    def run(self, code: CodeSpec, Y, sigma: float) -> BpResult:
        graph = self._graphs.get(code.name)
        if graph is None:
            graph = self._graphs[code.name] = TannerGraph.from_code(code)
        return bp_decode(code, channel_llr(_as_batch(code, Y), sigma), self.max_iters, graph)

    def decode_batch(self, code: CodeSpec, Y, sigma: float) -> np.ndarray:
        return self.run(code, Y, sigma).bits


# =============================================================================
# Trained network
# =============================================================================


class ModelDecoder:
    name = "model"

    def __init__(self, model: UecctModel):
        self.model = model

    def decode_batch(self, code: CodeSpec, Y, sigma: float = 1.0) -> np.ndarray:
        _, x_hat = decode(self.model, code, _as_batch(code, Y))
        return x_hat


DECODERS = ("model", "hard", "ml", "bp")


def make_decoder(name: str, *, model: UecctModel | None = None, bp_iters: int = BP_DEFAULT_ITERS) -> Decoder:
    if name == "hard":
        return HardDecoder()
    if name == "ml":
        return MlDecoder()
    if name == "bp":
        return BpDecoder(bp_iters)
    if name == "model":
        if model is None:
            raise ConfigError("The model decoder needs a checkpoint (--checkpoint)")
        return ModelDecoder(model)
    raise ConfigError(f"Unknown decoder {name!r}; expected one of {', '.join(DECODERS)}")
