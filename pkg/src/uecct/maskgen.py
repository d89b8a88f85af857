"""Extended parity-check matrix, its density, and the sparse attention mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uecct.errors import DataError
from uecct.gf2core import BinaryMatrix

# Stands in for -inf: exp() of anything this negative underflows to exactly 0.0
# in float32 and float64, and unlike -inf it never produces inf - inf = nan.
NEG_INF = -1.0e9


@dataclass(frozen=True, eq=False)
class ExtendedParityCheck:
    """[Hᵀ; I_{n-k}], shape (2n-k) x (n-k)."""

    matrix: BinaryMatrix
    n: int

    @property
    def m(self) -> int:
        return self.matrix.cols


@dataclass(frozen=True, eq=False)
class MaskMatrix:
    """{0, NEG_INF}-valued additive mask with its unmasked positions listed row-major.

    Rows ``[0, n)`` belong to codeword positions and rows
    ``[syndrome_offset, syndrome_offset + m)`` to syndrome positions, matching
    the standardized input layout.
    """

    values: np.ndarray
    active: tuple[tuple[int, int], ...]
    n: int
    m: int
    syndrome_offset: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def active_rows(self) -> np.ndarray:
        return np.array([r for r, _ in self.active], dtype=np.int64)

    @property
    def active_cols(self) -> np.ndarray:
        return np.array([c for _, c in self.active], dtype=np.int64)

    def density(self) -> float:
        return len(self.active) / float(self.values.size)


def build_extended(H: BinaryMatrix) -> ExtendedParityCheck:
    m, n = H.shape
    hbar = np.zeros((n + m, m), dtype=np.uint8)
    hbar[:n, :] = H.bits.T
    hbar[n:, :] = np.eye(m, dtype=np.uint8)
    return ExtendedParityCheck(matrix=BinaryMatrix(hbar), n=n)


def density(hbar: ExtendedParityCheck) -> float:
    rows, cols = hbar.matrix.shape
    return hbar.matrix.ones() / float(rows * cols)


def _active_of(values: np.ndarray) -> tuple[tuple[int, int], ...]:
    rows, cols = np.nonzero(values == 0.0)
    return tuple(zip(rows.tolist(), cols.tolist()))


def build_mask(hbar: ExtendedParityCheck) -> MaskMatrix:
    """(-inf) * (not H̄): 0 where H̄ = 1, NEG_INF elsewhere."""
    values = np.where(hbar.matrix.bits == 1, 0.0, NEG_INF)
    values.setflags(write=False)
    return MaskMatrix(
        values=values, active=_active_of(values), n=hbar.n, m=hbar.m, syndrome_offset=hbar.n
    )


def unmask(mask: MaskMatrix) -> BinaryMatrix:
    return BinaryMatrix((mask.values == 0.0).astype(np.uint8))


def pad_mask(mask: MaskMatrix, n_max: int, s_max: int) -> MaskMatrix:
    """Grow a code's mask to (N_max + S_max) x S_max; every added entry is masked.

    The codeword block stays at the top-left. The syndrome block moves to row
    N_max so each mask row keeps facing the input position it was built for.
    """
    n, m = mask.n, mask.m
    if n > n_max or m > s_max:
        raise DataError(
            f"Cannot pad a mask for n={n}, n-k={m} into N_max={n_max}, S_max={s_max}"
        )
    values = np.full((n_max + s_max, s_max), NEG_INF)
    src = mask.values
    off = mask.syndrome_offset
    values[:n, :m] = src[:n, :m]
    values[n_max : n_max + m, :m] = src[off : off + m, :m]
    values.setflags(write=False)
    return MaskMatrix(values=values, active=_active_of(values), n=n, m=m, syndrome_offset=n_max)


def render(hbar: ExtendedParityCheck) -> str:
    """H̄ as 0/1 rows followed by its density, as printed by ``mask show``."""
    lines = hbar.matrix.to_rows()
    lines.append(f"density {density(hbar):.6f}")
    return "\n".join(lines)
