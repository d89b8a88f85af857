"""GF(2) linear algebra, code specs, encoding and syndromes."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from uecct.errors import DataError

logger = logging.getLogger(__name__)


# =============================================================================
# Binary matrices
# =============================================================================


def _as_bits(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DataError(f"Binary matrix must be 2-D, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DataError("Binary matrix entries must be 0 or 1")
    return np.ascontiguousarray(arr, dtype=np.uint8)


class BinaryMatrix:
    """Dense, immutable bit matrix over GF(2) stored row-major as uint8."""

    __slots__ = ("bits",)

    def __init__(self, values):
        bits = _as_bits(values)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMatrix is immutable")

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def ones(self) -> int:
        return int(self.bits.sum(dtype=np.int64))

    @property
    def T(self) -> BinaryMatrix:
        return BinaryMatrix(self.bits.T)

    def rank(self) -> int:
        return len(row_reduce(self.bits)[1])

    def __matmul__(self, other: BinaryMatrix) -> BinaryMatrix:
        return BinaryMatrix(gf2_matmul(self.bits, other.bits))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.shape, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMatrix({self.rows}x{self.cols}, ones={self.ones()})"

    def to_rows(self) -> list[str]:
        return ["".join(str(int(b)) for b in row) for row in self.bits]


def gf2_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product mod 2. Accumulates in int64 so no intermediate overflows."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape[-1] != b.shape[0]:
        raise DataError(f"GF(2) matmul shape mismatch: {a.shape} @ {b.shape}")
    return ((a @ b) & 1).astype(np.uint8)


def row_reduce(bits: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2); returns (matrix, pivot columns)."""
    mat = np.array(bits, dtype=np.uint8) & 1
    m, n = mat.shape
    pivots: list[int] = []
    row = 0
    for col in range(n):
        if row == m:
            break
        candidates = np.nonzero(mat[row:, col])[0]
        if candidates.size == 0:
            continue
        pivot = row + int(candidates[0])
        if pivot != row:
            mat[[row, pivot]] = mat[[pivot, row]]
        others = np.nonzero(mat[:, col])[0]
        others = others[others != row]
        mat[others] ^= mat[row]
        pivots.append(col)
        row += 1
    return mat, pivots


def independent_rows(bits: np.ndarray) -> list[int]:
    """Indices of a maximal linearly independent subset of rows, greedy in file order.

    Keeps original (sparse) rows instead of their echelon form so masks and
    message passing still see the code's own structure.
    """
    kept: list[int] = []
    basis = np.zeros((0, bits.shape[1]), dtype=np.uint8)
    rank = 0
    for i, row in enumerate(np.asarray(bits, dtype=np.uint8)):
        trial = np.vstack([basis, row[None, :]])
        if len(row_reduce(trial)[1]) > rank:
            basis = trial
            rank += 1
            kept.append(i)
    return kept


def block_diagonal(*blocks: BinaryMatrix) -> BinaryMatrix:
    """Stack parity-check matrices on the diagonal (a synthetic code of equal row weight)."""
    rows = sum(b.rows for b in blocks)
    cols = sum(b.cols for b in blocks)
    out = np.zeros((rows, cols), dtype=np.uint8)
    r = c = 0
    for b in blocks:
        out[r : r + b.rows, c : c + b.cols] = b.bits
        r += b.rows
        c += b.cols
    return BinaryMatrix(out)


# =============================================================================
# Generator derivation
# =============================================================================


def derive_generator(H: BinaryMatrix) -> tuple[BinaryMatrix, tuple[int, ...]]:
    """Derive G with G·Hᵀ = 0 from a parity-check matrix.

    G is returned in H's column order. ``G.bits[:, perm]`` is the systematic
    form [I_k | P]: information bits sit at positions ``perm[:k]`` of every
    codeword.
    """
    reduced, pivots = row_reduce(H.bits)
    rank = len(pivots)
    n = H.cols
    if rank != H.rows:
        raise DataError(
            f"Parity-check matrix is rank deficient: {H.rows} rows, effective rank {rank}"
        )
    if rank == 0 or rank >= n:
        raise DataError(f"Parity-check matrix of effective rank {rank} leaves no code for n={n}")

    pivot_set = set(pivots)
    free = [c for c in range(n) if c not in pivot_set]
    perm = tuple(free + pivots)
    k = len(free)

    # In RREF, row i reads x[pivots[i]] = sum_j reduced[i, free[j]] x[free[j]].
    P = reduced[:rank][:, free].T  # k x rank
    systematic = np.concatenate([np.eye(k, dtype=np.uint8), P], axis=1)
    G = np.zeros((k, n), dtype=np.uint8)
    G[:, list(perm)] = systematic
    return BinaryMatrix(G), perm


# =============================================================================
# Codes
# =============================================================================


@dataclass(frozen=True, eq=False)
class CodeSpec:
    name: str
    n: int
    k: int
    H: BinaryMatrix
    G: BinaryMatrix
    info_positions: tuple[int, ...]
    file_rank_dropped: int = 0

    @property
    def m(self) -> int:
        """Syndrome length n - k."""
        return self.n - self.k

    @property
    def rate(self) -> float:
        return self.k / self.n

    @classmethod
    def from_parity_check(cls, name: str, H: BinaryMatrix, k: int | None = None) -> CodeSpec:
        """Normalize H (drop redundant rows), derive G and validate the declared k."""
        kept = independent_rows(H.bits)
        dropped = H.rows - len(kept)
        if dropped:
            logger.warning(
                "Code %s: dropped %d redundant parity-check rows (effective rank %d)",
                name, dropped, len(kept),
            )
            H = BinaryMatrix(H.bits[kept])
        n = H.cols
        effective_k = n - H.rows
        if k is not None and k != effective_k:
            raise DataError(
                f"Code {name}: declared k={k} but parity-check matrix has effective rank "
                f"{H.rows} (k={effective_k})"
            )
        if not 0 < effective_k < n:
            raise DataError(f"Code {name}: need 0 < k < n, got n={n}, k={effective_k}")
        G, perm = derive_generator(H)
        return cls(
            name=name,
            n=n,
            k=effective_k,
            H=H,
            G=G,
            info_positions=perm[:effective_k],
            file_rank_dropped=dropped,
        )


def _check_bits(values, length: int, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape[-1] != length:
        raise DataError(f"{what} length mismatch: expected {length}, got {arr.shape[-1]}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DataError(f"{what} must contain only 0/1 values")
    return arr.astype(np.uint8)


def encode(code: CodeSpec, m) -> np.ndarray:
    """x = m · G over GF(2); accepts one message or a (batch, k) array."""
    msg = _check_bits(m, code.k, "Message")
    return gf2_matmul(msg, code.G.bits)


def syndrome(code: CodeSpec, hard_bits) -> np.ndarray:
    """s = H · xᵀ over GF(2); accepts one word or a (batch, n) array."""
    bits = _check_bits(hard_bits, code.n, "Hard-decision word")
    return gf2_matmul(bits, code.H.bits.T)


def extract_message(code: CodeSpec, codeword) -> np.ndarray:
    """Read the information bits back out of a codeword."""
    return np.asarray(codeword)[..., list(code.info_positions)].astype(np.uint8)
