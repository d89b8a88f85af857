"""Multiply-accumulate accounting and parameter counts for the two attention variants."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from uecct import tensor as T
from uecct.config import ModelConfig
from uecct.gf2core import CodeSpec
from uecct.model import MacTally, UecctModel


@dataclass(frozen=True)
class MacReport:
    code: str
    variant: str
    counts: dict[str, int]
    parameters: int
    attention_parameters: int = 0

    @property
    def attention_core(self) -> int:
        return self.counts.get("attention.core", 0)

    @property
    def attention_core_dense(self) -> int:
        return self.counts.get("attention.core_dense", 0)

    @property
    def sparse_ratio(self) -> float:
        """Attention-core MACs actually spent over the dense equivalent."""
        dense = self.attention_core_dense
        return self.attention_core / dense if dense else 0.0

    @property
    def attention(self) -> int:
        """Core plus the output projection."""
        return self.attention_core + self.counts.get("attention.output", 0)

    @property
    def total(self) -> int:
        return sum(v for k, v in self.counts.items() if k != "attention.core_dense")


ATTENTION_WEIGHTS = ("A_l", "V_l", "Wq", "Wk", "Wv")


def attention_parameter_count(model: UecctModel) -> int:
    """Weights that differ between the variants: the memory pair or the Q/K/V projections."""
    return sum(t.data.size for name, t in model.params.items() if name.rpartition(".")[2] in ATTENTION_WEIGHTS)


def break_even(config: ModelConfig, n_max: int, s_max: int) -> tuple[int, int]:
    """Per-layer attention weights ``(2·N·d_l, 3·H·d_k²)`` with N = n_max + s_max.

    Unified has fewer parameters than vanilla only when the first is smaller.
    """
    d_l = config.d_l if config.d_l is not None else s_max
    return 2 * (n_max + s_max) * d_l, 3 * config.heads * config.d_k**2


def mac_report(model: UecctModel, code: CodeSpec) -> MacReport:
    """Exact MAC counts of one decode of one word of ``code``."""
    tally = MacTally()
    features = np.zeros((1, model.seq_len))
    with T.no_grad():
        model.forward(features, [code], macs=tally)
    return MacReport(
        code=code.name,
        variant=model.config.variant,
        counts=dict(tally.counts),
        parameters=model.parameter_count(),
        attention_parameters=attention_parameter_count(model),
    )


def compare_variants(config: ModelConfig, code: CodeSpec, n_max: int | None = None, s_max: int | None = None) -> dict[str, MacReport]:
    """Unified and vanilla reports at identical (L, H, d_k, d_f)."""
    n_max = n_max if n_max is not None else code.n
    s_max = s_max if s_max is not None else code.m
    reports = {}
    for variant in ("unified", "vanilla"):
        model = UecctModel(replace(config, variant=variant), n_max, s_max, np.random.default_rng(0))
        reports[variant] = mac_report(model, code)
    return reports


def format_report(reports: dict[str, MacReport], per_layer: tuple[int, int] | None = None) -> str:
    """Component table; ``per_layer`` adds the unified/vanilla parameter break-even line."""
    kinds = sorted({k for r in reports.values() for k in r.counts})
    names = list(reports)
    lines = ["component".ljust(24) + "".join(f"{n:>14}" for n in names)]
    for kind in kinds:
        lines.append(kind.ljust(24) + "".join(f"{reports[n].counts.get(kind, 0):>14d}" for n in names))
    lines.append("total".ljust(24) + "".join(f"{reports[n].total:>14d}" for n in names))
    lines.append("parameters".ljust(24) + "".join(f"{reports[n].parameters:>14d}" for n in names))
    lines.append("attention parameters".ljust(24) + "".join(f"{reports[n].attention_parameters:>14d}" for n in names))
    lines.append("sparse/dense core".ljust(24) + "".join(f"{reports[n].sparse_ratio:>14.4f}" for n in names))
    if per_layer is not None:
        memory, projections = per_layer
        verdict = "smaller" if memory < projections else "not smaller"
        lines.append(
            f"unified attention is {verdict} per layer: 2·N·d_l = {memory} vs 3·H·d_k² = {projections}"
        )
    return "\n".join(lines)
