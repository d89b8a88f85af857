"""Code registry: built-in codes, the on-disk code library, and padding bounds."""

from __future__ import annotations

import logging
import re
from collections.abc import Callable, Iterator
from pathlib import Path

import numpy as np

from uecct.errors import DataError
from uecct.gf2core import BinaryMatrix, CodeSpec
from uecct.matrix_io import FORMATS, dump_alist, dump_dense01, read_parity_check

logger = logging.getLogger(__name__)

LIBRARY_SUFFIXES = {"alist": ".alist", "dense01": ".txt"}
_NAME_RE = re.compile(r"^[a-z0-9][a-z0-9_\-]*$")


# =============================================================================
# Built-in codes
# =============================================================================

HAMMING74_H = (
    (1, 1, 1, 0, 1, 0, 0),
    (1, 0, 1, 1, 0, 1, 0),
    (0, 1, 1, 1, 0, 0, 1),
)

GOLAY_B = (
    (1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 0, 1),
    (1, 0, 1, 1, 1, 0, 0, 0, 1, 0, 1, 1),
    (0, 1, 1, 1, 0, 0, 0, 1, 0, 1, 1, 1),
    (1, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 1),
    (1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 1, 1),
    (1, 0, 0, 0, 1, 0, 1, 1, 0, 1, 1, 1),
    (0, 0, 0, 1, 0, 1, 1, 0, 1, 1, 1, 1),
    (0, 0, 1, 0, 1, 1, 0, 1, 1, 1, 0, 1),
    (0, 1, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1),
    (1, 0, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1),
    (0, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1),
    (1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0),
)


def hamming_parity_check(r: int) -> BinaryMatrix:
    """H of the (2^r - 1, 2^r - 1 - r) Hamming code: columns are all non-zero r-bit words."""
    n = 2**r - 1
    cols = [[(j >> (r - 1 - i)) & 1 for i in range(r)] for j in range(1, n + 1)]
    return BinaryMatrix(np.array(cols, dtype=np.uint8).T)


def golay24_parity_check() -> BinaryMatrix:
    b = np.array(GOLAY_B, dtype=np.uint8)
    return BinaryMatrix(np.concatenate([b.T, np.eye(12, dtype=np.uint8)], axis=1))


BUILTIN_CODES: dict[str, Callable[[], BinaryMatrix]] = {
    "hamming74": lambda: BinaryMatrix(HAMMING74_H),
    "rep2": lambda: BinaryMatrix([[1, 1]]),
    "hamming1511": lambda: hamming_parity_check(4),
    "golay24": golay24_parity_check,
}


def builtin_code(name: str) -> CodeSpec:
    try:
        factory = BUILTIN_CODES[name]
    except KeyError:
        raise DataError(f"Unknown built-in code: {name}") from None
    return CodeSpec.from_parity_check(name, factory())


# =============================================================================
# Registry
# =============================================================================


class CodeRegistry:
    """Ordered, read-only set of codes plus the padding bounds N_max and S_max.

    Bounds default to the maxima over the codes; a checkpoint may pin larger
    bounds so new codes can be decoded by a model trained on others.
    """

    def __init__(self, codes: list[CodeSpec], n_max: int | None = None, s_max: int | None = None):
        if not codes:
            raise DataError("Code registry needs at least one code")
        names = [c.name for c in codes]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise DataError(f"Duplicate code names in registry: {', '.join(dupes)}")
        self._codes = tuple(codes)
        self._index = {c.name: i for i, c in enumerate(codes)}
        widest_n = max(c.n for c in codes)
        widest_s = max(c.m for c in codes)
        self.n_max = widest_n if n_max is None else n_max
        self.s_max = widest_s if s_max is None else s_max
        if widest_n > self.n_max or widest_s > self.s_max:
            raise DataError(
                f"Codes need N_max >= {widest_n} and S_max >= {widest_s}, "
                f"registry is pinned to N_max={self.n_max}, S_max={self.s_max}"
            )

    @property
    def codes(self) -> tuple[CodeSpec, ...]:
        return self._codes

    @property
    def names(self) -> list[str]:
        return [c.name for c in self._codes]

    @property
    def seq_len(self) -> int:
        """Standardized input length N_max + S_max."""
        return self.n_max + self.s_max

    def get(self, name: str) -> CodeSpec:
        try:
            return self._codes[self._index[name]]
        except KeyError:
            raise DataError(
                f"Code {name!r} is not registered (have: {', '.join(self.names)})"
            ) from None

    def __iter__(self) -> Iterator[CodeSpec]:
        return iter(self._codes)

    def __len__(self) -> int:
        return len(self._codes)

    def __contains__(self, name: str) -> bool:
        return name in self._index


# =============================================================================
# Code library on disk
# =============================================================================


def _library_files(library_dir: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    if not library_dir.is_dir():
        return found
    for path in sorted(library_dir.iterdir()):
        if path.suffix in LIBRARY_SUFFIXES.values():
            found[path.stem] = path
    return found


def list_library(library_dir: str | Path) -> list[str]:
    return sorted(_library_files(Path(library_dir)))


def resolve_code(name: str, library_dir: str | Path | None = None) -> CodeSpec:
    """Look a code up among the built-ins, then in the library directory."""
    if name in BUILTIN_CODES:
        return builtin_code(name)
    if library_dir is not None:
        files = _library_files(Path(library_dir))
        if name in files:
            return CodeSpec.from_parity_check(name, read_parity_check(files[name]))
    raise DataError(f"Unknown code {name!r}: not built in and not in the code library")


def load_registry(
    names: list[str],
    library_dir: str | Path | None = None,
    *,
    n_max: int | None = None,
    s_max: int | None = None,
) -> CodeRegistry:
    codes = [resolve_code(name, library_dir) for name in names]
    registry = CodeRegistry(codes, n_max=n_max, s_max=s_max)
    for code in registry:
        logger.info("Registered code %s (n=%d, k=%d)", code.name, code.n, code.k)
    return registry


def add_to_library(
    name: str,
    source: str | Path,
    library_dir: str | Path,
    *,
    fmt: str | None = None,
    k: int | None = None,
) -> CodeSpec:
    """Validate a matrix file as a code and store it under ``library_dir/<name>``."""
    if not _NAME_RE.match(name):
        raise DataError(f"Invalid code name {name!r}: use lowercase letters, digits, '_' or '-'")
    if name in BUILTIN_CODES:
        raise DataError(f"Code name {name!r} is reserved for a built-in code")
    if fmt is not None and fmt not in FORMATS:
        raise DataError(f"Unknown matrix format {fmt!r}; expected one of {', '.join(FORMATS)}")
    H = read_parity_check(source, fmt)
    code = CodeSpec.from_parity_check(name, H, k=k)

    library = Path(library_dir)
    library.mkdir(parents=True, exist_ok=True)
    for existing in LIBRARY_SUFFIXES.values():
        (library / f"{name}{existing}").unlink(missing_ok=True)
    fmt = fmt or ("alist" if Path(source).suffix.lower() == ".alist" else "dense01")
    text = dump_alist(code.H) if fmt == "alist" else dump_dense01(code.H)
    target = library / f"{name}{LIBRARY_SUFFIXES[fmt]}"
    target.write_text(text, encoding="utf-8")
    logger.info("Stored code %s (n=%d, k=%d) at %s", name, code.n, code.k, target)
    return code
