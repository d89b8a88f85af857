"""Parity-check matrix ingestion: MacKay alist and dense 0/1 text."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from uecct.errors import DataError, bullet_list
from uecct.gf2core import BinaryMatrix

logger = logging.getLogger(__name__)

FORMATS = ("alist", "dense01")


def _int_tokens(line: str, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError as exc:
        raise DataError(f"alist line {lineno}: non-integer token ({exc})") from exc


def parse_alist(text: str) -> BinaryMatrix:
    """Parse an alist file (1-indexed positions, zero padding allowed)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4:
        raise DataError("alist file too short: need header, max weights and weight lines")

    header = _int_tokens(lines[0], 1)
    if len(header) != 2 or min(header) <= 0:
        raise DataError(f"alist header must be 'n m' with positive values, got {lines[0]!r}")
    n, m = header
    max_weights = _int_tokens(lines[1], 2)
    if len(max_weights) != 2:
        raise DataError(f"alist line 2 must be 'max_col_w max_row_w', got {lines[1]!r}")
    max_col_w, max_row_w = max_weights

    col_weights = _int_tokens(lines[2], 3)
    row_weights = _int_tokens(lines[3], 4)
    if len(lines) < 4 + n + m:
        raise DataError(f"alist file declares {n} column and {m} row lists but is truncated")

    problems: list[str] = []
    if len(col_weights) != n:
        problems.append(f"{len(col_weights)} column weights for n={n}")
    if len(row_weights) != m:
        problems.append(f"{len(row_weights)} row weights for m={m}")
    if col_weights and max(col_weights) != max_col_w:
        problems.append(f"max column weight {max_col_w} but largest listed is {max(col_weights)}")
    if row_weights and max(row_weights) != max_row_w:
        problems.append(f"max row weight {max_row_w} but largest listed is {max(row_weights)}")
    if sum(col_weights) != sum(row_weights):
        problems.append(
            f"column weights sum to {sum(col_weights)}, row weights to {sum(row_weights)}"
        )
    if problems:
        raise DataError(bullet_list("Inconsistent alist weights", problems))

    bits = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        lineno = 5 + j
        positions = [p for p in _int_tokens(lines[4 + j], lineno) if p != 0]
        if len(positions) != col_weights[j]:
            problems.append(f"column {j + 1} lists {len(positions)} rows, weight {col_weights[j]}")
            continue
        for p in positions:
            if not 1 <= p <= m:
                problems.append(f"column {j + 1} references row {p} outside 1..{m}")
            else:
                bits[p - 1, j] = 1

    from_rows = np.zeros_like(bits)
    for i in range(m):
        lineno = 5 + n + i
        positions = [p for p in _int_tokens(lines[4 + n + i], lineno) if p != 0]
        if len(positions) != row_weights[i]:
            problems.append(f"row {i + 1} lists {len(positions)} columns, weight {row_weights[i]}")
            continue
        for p in positions:
            if not 1 <= p <= n:
                problems.append(f"row {i + 1} references column {p} outside 1..{n}")
            else:
                from_rows[i, p - 1] = 1

    if not problems and not np.array_equal(bits, from_rows):
        problems.append("column lists and row lists describe different matrices")
    if problems:
        raise DataError(bullet_list("Malformed alist file", problems))
    return BinaryMatrix(bits)


def parse_dense01(text: str) -> BinaryMatrix:
    """Parse whitespace-separated 0/1 rows."""
    rows: list[list[int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        bad = [t for t in tokens if t not in ("0", "1")]
        if bad:
            raise DataError(f"dense01 line {lineno}: non-binary symbols {bad[:3]}")
        rows.append([int(t) for t in tokens])
    if not rows:
        raise DataError("dense01 file has no rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"dense01 rows have differing lengths: {sorted(widths)}")
    return BinaryMatrix(np.array(rows, dtype=np.uint8))


def load_parity_check(source: str, fmt: str) -> BinaryMatrix:
    """Parse matrix file content in the declared format."""
    if fmt == "alist":
        return parse_alist(source)
    if fmt == "dense01":
        return parse_dense01(source)
    raise DataError(f"Unknown matrix format {fmt!r}; expected one of {', '.join(FORMATS)}")


def guess_format(path: Path) -> str:
    return "alist" if path.suffix.lower() == ".alist" else "dense01"


def read_parity_check(path: str | Path, fmt: str | None = None) -> BinaryMatrix:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Matrix file not found: {path}")
    fmt = fmt or guess_format(path)
    logger.debug("Reading %s matrix from %s", fmt, path)
    return load_parity_check(path.read_text(encoding="utf-8"), fmt)


def dump_dense01(matrix: BinaryMatrix) -> str:
    return "\n".join(" ".join(str(int(b)) for b in row) for row in matrix.bits) + "\n"


def dump_alist(matrix: BinaryMatrix) -> str:
    """Serialize in alist form, zero-padding position lists to the max weight."""
    bits = matrix.bits
    m, n = bits.shape
    col_lists = [list(np.nonzero(bits[:, j])[0] + 1) for j in range(n)]
    row_lists = [list(np.nonzero(bits[i, :])[0] + 1) for i in range(m)]
    max_col = max(len(c) for c in col_lists)
    max_row = max(len(r) for r in row_lists)
    out = [
        f"{n} {m}",
        f"{max_col} {max_row}",
        " ".join(str(len(c)) for c in col_lists),
        " ".join(str(len(r)) for r in row_lists),
    ]
    out += [" ".join(str(p) for p in c + [0] * (max_col - len(c))) for c in col_lists]
    out += [" ".join(str(p) for p in r + [0] * (max_row - len(r))) for r in row_lists]
    return "\n".join(out) + "\n"
