"""Checkpoint files: named float64 arrays plus JSON metadata in one ``.npz``."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from uecct.errors import DataError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_META_KEY = "__meta__"
_VERSION_KEY = "__format__"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: np.asarray(value, dtype=np.float64) for name, value in arrays.items()}
    payload[_META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    payload[_VERSION_KEY] = np.array(FORMAT_VERSION)
    with path.open("wb") as fh:
        np.savez(fh, **payload)
    logger.debug("Saved checkpoint %s (%d tensors)", path, len(arrays))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data[_VERSION_KEY]) if _VERSION_KEY in data.files else None
            if version != FORMAT_VERSION:
                raise DataError(f"Unsupported checkpoint format {version} in {path}")
            meta = json.loads(str(data[_META_KEY]))
            arrays = {k: np.array(data[k]) for k in data.files if k not in (_META_KEY, _VERSION_KEY)}
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"Unreadable checkpoint {path}: {exc}") from exc
    return arrays, meta
