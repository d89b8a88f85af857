"""Run manifest: resolved config, seed, command and SHA-256 of every artifact."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from uecct import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def sha256_of(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: str | Path,
    *,
    command: list[str],
    config: dict,
    seed: int,
    artifacts: list[Path],
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "artifacts": {
            str(Path(a).relative_to(out) if Path(a).is_relative_to(out) else a): sha256_of(a)
            for a in sorted(artifacts, key=str)
            if Path(a).is_file()
        },
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info("Wrote run manifest %s (%d artifacts)", path, len(payload["artifacts"]))
    return path
