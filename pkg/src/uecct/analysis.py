"""Attention analyses: head similarity by Jensen-Shannon divergence, numerical rank, dumps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.stats import entropy

from uecct import tensor as T
from uecct.config import TrainConfig
from uecct.errors import DataError
from uecct.model import AttentionRecorder, UecctModel
from uecct.registry import CodeRegistry
from uecct.train import batch_rng, sample_batch

logger = logging.getLogger(__name__)

JSD_EPS = 1e-12
MANIFEST_NAME = "attention_manifest.json"


# =============================================================================
# Divergence
# =============================================================================


def _normalize(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, None) + JSD_EPS
    return p / p.sum(axis=-1, keepdims=True)


def jsd(P, Q):
    """Base-2 Jensen-Shannon divergence along the last axis, in [0, 1].

    Scalar for 1-D inputs, an array of row divergences otherwise.
    """
    p, q = _normalize(P), _normalize(Q)
    if p.shape != q.shape:
        raise DataError(f"jsd: shapes differ, {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    out = 0.5 * (entropy(p, m, base=2, axis=-1) + entropy(q, m, base=2, axis=-1))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def head_similarity(attention: list[np.ndarray]) -> list[float]:
    """Per layer, the mean JSD over head pairs, rows and samples.

    Each entry is a (B, H, N, cols) probability stack. Rows that are fully
    masked (all zeros in every head) are skipped.
    """
    means = []
    for layer, probs in enumerate(attention):
        probs = np.asarray(probs)
        if probs.ndim != 4:
            raise DataError(f"layer {layer}: expected (B, H, N, cols) attention, got {probs.shape}")
        heads = probs.shape[1]
        if heads < 2:
            means.append(0.0)
            continue
        live = probs.sum(axis=-1).max(axis=1) > 0  # (B, N)
        values = [jsd(probs[:, a][live], probs[:, b][live]) for a, b in combinations(range(heads), 2)]
        flat = np.concatenate([np.atleast_1d(v) for v in values]) if values else np.zeros(0)
        means.append(float(flat.mean()) if flat.size else 0.0)
    return means


# =============================================================================
# Numerical rank
# =============================================================================


@dataclass
class RankHistogram:
    ranks: np.ndarray  # one entry per matrix
    size: int  # matrix side N

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.ranks, minlength=self.size + 1)

    def fraction_below(self, threshold: int) -> float:
        return float(np.mean(self.ranks < threshold)) if self.ranks.size else 0.0

    def summary(self) -> dict:
        if not self.ranks.size:
            return {"matrices": 0}
        return {
            "matrices": int(self.ranks.size),
            "min": int(self.ranks.min()),
            "max": int(self.ranks.max()),
            "median": float(np.median(self.ranks)),
            "mean": float(self.ranks.mean()),
        }


def numerical_rank(matrices) -> np.ndarray:
    """Count singular values above eps * sigma_max * max(rows, cols); works on stacks."""
    return np.asarray(np.linalg.matrix_rank(np.asarray(matrices, dtype=np.float64)))


def rank_analysis(scores: list[np.ndarray]) -> RankHistogram:
    """Rank of every Q·Kᵀ matrix in a (B, H, N, N) per-layer dump."""
    if not scores:
        raise DataError("No Q·Kᵀ matrices recorded; rank analysis needs a vanilla-variant dump")
    ranks = np.concatenate([numerical_rank(s).reshape(-1) for s in scores]).astype(np.int64)
    return RankHistogram(ranks=ranks, size=int(scores[0].shape[-1]))


def format_rank_report(hist: RankHistogram) -> str:
    lines = [f"{k} {v}" for k, v in hist.summary().items()]
    lines.append("rank count")
    lines.extend(f"{r} {c}" for r, c in enumerate(hist.counts) if c)
    return "\n".join(lines)


# =============================================================================
# Recording runs and dumps
# =============================================================================


def record_attention(
    model: UecctModel,
    registry: CodeRegistry,
    *,
    ebn0_db: float = 5.0,
    batch_size: int = 16,
    seed: int = 0,
) -> AttentionRecorder:
    """Forward one sampled batch through ``model`` and record its attention."""
    config = TrainConfig(batch_size=batch_size, snr_range_db=(ebn0_db, ebn0_db), seed=seed)
    batch = sample_batch(registry, config, batch_rng(seed, 0, 0))
    recorder = AttentionRecorder()
    with T.no_grad():
        model.forward(batch.features, batch.codes, recorder=recorder)
    return recorder


def dump_attention(recorder: AttentionRecorder, out_dir: str | Path) -> Path:
    """Write each recorded array as raw little-endian float64 plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for kind, arrays in (("attention", recorder.attention), ("scores", recorder.scores)):
        for layer, array in enumerate(arrays):
            name = f"{kind}_layer{layer}.f64"
            np.ascontiguousarray(array, dtype="<f8").tofile(out / name)
            entries.append({"file": name, "kind": kind, "layer": layer, "shape": list(array.shape), "dtype": "<f8"})
    manifest = out / MANIFEST_NAME
    manifest.write_text(json.dumps({"arrays": entries}, indent=2), encoding="utf-8")
    logger.info("Wrote %d attention arrays to %s", len(entries), out)
    return manifest


def load_attention(manifest_path: str | Path) -> AttentionRecorder:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"Attention manifest not found: {manifest_path}")
    try:
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))["arrays"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"Malformed attention manifest {manifest_path}: {exc}") from exc
    recorder = AttentionRecorder()
    for entry in sorted(entries, key=lambda e: (e["kind"], e["layer"])):
        data = np.fromfile(manifest_path.parent / entry["file"], dtype=entry["dtype"])
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise DataError(f"{entry['file']}: {data.size} values do not fill shape {shape}")
        getattr(recorder, entry["kind"]).append(data.reshape(shape))
    return recorder
