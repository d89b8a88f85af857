"""Monte Carlo BER/BLER evaluation, aggregates and report emitters."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from uecct.channel import bpsk, sigma_from_ebn0, transmit
from uecct.decoders import Decoder
from uecct.errors import ConfigError
from uecct.gf2core import CodeSpec, encode

logger = logging.getLogger(__name__)

CI_LEVEL = 0.95
CSV_FIELDS = ["code", "ebn0_db", "ber", "bler", "neg_ln_ber", "blocks", "ci_low", "ci_high"]


# =============================================================================
# Report types
# =============================================================================


@dataclass
class ErrorCounts:
    bit_errors: int = 0
    bits_total: int = 0
    block_errors: int = 0
    blocks_total: int = 0

    def merge(self, other: ErrorCounts) -> None:
        self.bit_errors += other.bit_errors
        self.bits_total += other.bits_total
        self.block_errors += other.block_errors
        self.blocks_total += other.blocks_total

    def tally(self, sent: np.ndarray, decided: np.ndarray) -> None:
        wrong = np.asarray(sent) != np.asarray(decided)
        self.bit_errors += int(wrong.sum())
        self.bits_total += int(wrong.size)
        self.block_errors += int(wrong.any(axis=1).sum())
        self.blocks_total += int(wrong.shape[0])


def binomial_ci(successes: int, trials: int, level: float = CI_LEVEL) -> tuple[float, float]:
    """Clopper-Pearson interval; (0, 1) when there were no trials."""
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


@dataclass
class EvalPoint:
    code: str
    ebn0_db: float
    counts: ErrorCounts = field(default_factory=ErrorCounts)

    @property
    def ber(self) -> float:
        return self.counts.bit_errors / self.counts.bits_total if self.counts.bits_total else 0.0

    @property
    def bler(self) -> float:
        return self.counts.block_errors / self.counts.blocks_total if self.counts.blocks_total else 0.0

    @property
    def neg_ln_ber(self) -> float:
        return -math.log(self.ber) if self.ber > 0 else math.inf

    @property
    def ber_ci(self) -> tuple[float, float]:
        return binomial_ci(self.counts.bit_errors, self.counts.bits_total)

    @property
    def bler_ci(self) -> tuple[float, float]:
        return binomial_ci(self.counts.block_errors, self.counts.blocks_total)


@dataclass
class EvalReport:
    decoder: str
    points: list[EvalPoint] = field(default_factory=list)
    macs: dict[str, dict[str, int]] = field(default_factory=dict)

    def codes(self) -> list[str]:
        return list(dict.fromkeys(p.code for p in self.points))

    def snrs(self) -> list[float]:
        return list(dict.fromkeys(p.ebn0_db for p in self.points))

    def point(self, code: str, ebn0_db: float) -> EvalPoint | None:
        for p in self.points:
            if p.code == code and p.ebn0_db == ebn0_db:
                return p
        return None

    def aggregate(self, ebn0_db: float | None = None) -> ErrorCounts:
        total = ErrorCounts()
        for p in self.points:
            if ebn0_db is None or p.ebn0_db == ebn0_db:
                total.merge(p.counts)
        return total

    def aber(self, ebn0_db: float | None = None) -> float:
        agg = self.aggregate(ebn0_db)
        return agg.bit_errors / agg.bits_total if agg.bits_total else 0.0

    def abler(self, ebn0_db: float | None = None) -> float:
        agg = self.aggregate(ebn0_db)
        return agg.block_errors / agg.blocks_total if agg.blocks_total else 0.0

    def extend(self, other: EvalReport) -> None:
        self.points.extend(other.points)
        self.macs.update(other.macs)


# =============================================================================
# Monte Carlo
# =============================================================================


def _worker_rng(seed: int, point: int, worker: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, point, worker]))


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _simulate(
    decoder: Decoder, code: CodeSpec, sigma: float, blocks: int, batch_blocks: int, rng: np.random.Generator
) -> ErrorCounts:
    counts = ErrorCounts()
    remaining = blocks
    while remaining > 0:
        b = min(batch_blocks, remaining)
        messages = rng.integers(0, 2, size=(b, code.k), dtype=np.uint8)
        sent = encode(code, messages)
        y = transmit(bpsk(sent), sigma, rng, code).values
        counts.tally(sent, decoder.decode_batch(code, y, sigma))
        remaining -= b
    return counts


def monte_carlo(
    decoder: Decoder,
    code: CodeSpec,
    ebn0_list: list[float],
    min_blocks: int,
    seed: int = 0,
    *,
    batch_blocks: int = 1000,
    workers: int = 1,
) -> EvalReport:
    """Transmit random codewords at each Eb/N0 and count decoding errors.

    Each worker owns the seed stream (seed, point index, worker index) and its
    own counters; results depend only on (seed, workers).
    """
    if min_blocks < 1 or workers < 1 or batch_blocks < 1:
        raise ConfigError("min_blocks, workers and batch_blocks must all be positive")
    report = EvalReport(decoder=decoder.name)
    for idx, ebn0 in enumerate(ebn0_list):
        sigma = sigma_from_ebn0(ebn0, code.rate)
        shares = [s for s in _split(min_blocks, workers) if s > 0]
        point = EvalPoint(code=code.name, ebn0_db=float(ebn0))
        if len(shares) == 1:
            point.counts.merge(_simulate(decoder, code, sigma, shares[0], batch_blocks, _worker_rng(seed, idx, 0)))
        else:
            with ThreadPoolExecutor(max_workers=len(shares)) as pool:
                futures = [
                    pool.submit(_simulate, decoder, code, sigma, share, batch_blocks, _worker_rng(seed, idx, w))
                    for w, share in enumerate(shares)
                ]
                for f in futures:
                    point.counts.merge(f.result())
        report.points.append(point)
        lo, hi = point.ber_ci
        logger.info(
            "%s %s @ %.2f dB: BER=%.3e [%.3e, %.3e] BLER=%.3e over %d blocks",
            decoder.name, code.name, ebn0, point.ber, lo, hi, point.bler, point.counts.blocks_total,
        )
    return report


def compare_decoders(
    decoders: list[Decoder],
    code: CodeSpec,
    ebn0_db: float,
    blocks: int,
    seed: int = 0,
    *,
    batch_blocks: int = 1000,
) -> dict[str, tuple[EvalPoint, np.ndarray]]:
    """Run every decoder on the same noise realizations.

    Returns, per decoder name, its error counts and the (blocks, n) decisions.
    """
    rng = _worker_rng(seed, 0, 0)
    sigma = sigma_from_ebn0(ebn0_db, code.rate)
    points = {d.name: EvalPoint(code=code.name, ebn0_db=float(ebn0_db)) for d in decoders}
    decisions: dict[str, list[np.ndarray]] = {d.name: [] for d in decoders}
    remaining = blocks
    while remaining > 0:
        b = min(batch_blocks, remaining)
        sent = encode(code, rng.integers(0, 2, size=(b, code.k), dtype=np.uint8))
        y = transmit(bpsk(sent), sigma, rng, code).values
        for d in decoders:
            decided = d.decode_batch(code, y, sigma)
            points[d.name].counts.tally(sent, decided)
            decisions[d.name].append(decided)
        remaining -= b
    return {name: (points[name], np.concatenate(decisions[name])) for name in points}


# =============================================================================
# Emitters
# =============================================================================


def _num(value: float) -> str:
    return "inf" if math.isinf(value) else repr(float(value))


def write_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for p in report.points:
            lo, hi = p.ber_ci
            writer.writerow(
                [p.code, _num(p.ebn0_db), _num(p.ber), _num(p.bler), _num(p.neg_ln_ber),
                 p.counts.blocks_total, _num(lo), _num(hi)]
            )
    return path


def neg_ln_ber_table(report: EvalReport) -> str:
    """-ln(BER) per code and Eb/N0, followed by -ln(ABER) and -ln(ABLER) rows."""
    snrs = report.snrs()
    names = report.codes() + ["ABER", "ABLER"]
    width = max(len(n) for n in names) + 2
    lines = ["code".ljust(width) + "".join(f"{s:>9.2f}" for s in snrs)]

    def cell(rate: float) -> str:
        return f"{'inf':>9}" if rate <= 0 else f"{-math.log(rate):>9.2f}"

    for code in report.codes():
        row = []
        for s in snrs:
            p = report.point(code, s)
            row.append(f"{'-':>9}" if p is None else cell(p.ber))
        lines.append(code.ljust(width) + "".join(row))
    lines.append("ABER".ljust(width) + "".join(cell(report.aber(s)) for s in snrs))
    lines.append("ABLER".ljust(width) + "".join(cell(report.abler(s)) for s in snrs))
    return "\n".join(lines)
