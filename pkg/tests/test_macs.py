"""Tests for multiply-accumulate accounting."""

import os

import pytest

from uecct.config import ModelConfig
from uecct.gf2core import CodeSpec, block_diagonal
from uecct.macs import break_even, compare_variants, format_report, mac_report
from uecct.maskgen import build_extended, density
from uecct.matrix_io import read_parity_check
from uecct.model import UecctModel
from uecct.registry import builtin_code

ONE_HEAD = ModelConfig(layers=1, heads=1, d_k=4)


def unified_for(code, config=ONE_HEAD):
    return UecctModel(config, code.n, code.m)


def test_hamming_core_counts_fifteen_entries_per_dimension():
    report = mac_report(unified_for(builtin_code("hamming74")), builtin_code("hamming74"))
    assert report.attention_core == 15 * 4
    assert report.attention_core_dense == 10 * 3 * 4
    assert report.variant == "unified"


@pytest.mark.parametrize("name", ["hamming74", "hamming1511", "golay24"])
def test_sparse_ratio_equals_mask_density(name):
    code = builtin_code(name)
    report = mac_report(unified_for(code), code)
    assert report.sparse_ratio == pytest.approx(density(build_extended(code.H)), rel=0.01)


def test_unmasked_model_pays_dense_cost():
    code = builtin_code("hamming74")
    report = mac_report(unified_for(code, ModelConfig(layers=1, heads=1, d_k=4, use_mask=False)), code)
    assert report.sparse_ratio == 1.0


def test_block_diagonal_code_doubles_core_macs():
    hamming = builtin_code("hamming74")
    doubled = CodeSpec.from_parity_check("hamming74x2", block_diagonal(hamming.H, hamming.H))
    single = mac_report(unified_for(hamming), hamming)
    double = mac_report(unified_for(doubled), doubled)
    assert double.attention_core == 2 * single.attention_core


def test_core_scales_with_layers_and_heads():
    code = builtin_code("hamming74")
    base = mac_report(unified_for(code), code).attention_core
    bigger = mac_report(unified_for(code, ModelConfig(layers=3, heads=2, d_k=4)), code).attention_core
    assert bigger == 6 * base


def test_compare_variants():
    code = builtin_code("golay24")
    config = ModelConfig(layers=2, heads=2, d_k=16)
    reports = compare_variants(config, code)
    unified, vanilla = reports["unified"], reports["vanilla"]
    assert vanilla.attention_core == 2 * 2 * 36 * 36 * 16
    assert unified.attention_core < vanilla.attention_core
    assert unified.attention_parameters == 2 * (2 * 36 * 12)
    assert vanilla.attention_parameters == 2 * (3 * 2 * 16 * 16)
    assert unified.parameters < vanilla.parameters
    assert vanilla.parameters - unified.parameters == vanilla.attention_parameters - unified.attention_parameters
    assert "attention.qkv" in vanilla.counts and "attention.qkv" not in unified.counts
    text = format_report(reports, break_even(config, code.n, code.m))
    assert text.splitlines()[0].split() == ["component", "unified", "vanilla"]
    assert any(line.startswith("total") for line in text.splitlines())
    assert text.splitlines()[-1] == "unified attention is smaller per layer: 2·N·d_l = 864 vs 3·H·d_k² = 1536"


def test_small_heads_lose_the_parameter_advantage():
    code = builtin_code("golay24")
    config = ModelConfig(layers=2, heads=2, d_k=8)
    memory, projections = break_even(config, code.n, code.m)
    assert (memory, projections) == (864, 384)
    reports = compare_variants(config, code)
    assert reports["unified"].parameters > reports["vanilla"].parameters
    assert "is not smaller per layer" in format_report(reports, (memory, projections))


def test_break_even_uses_configured_memory_width():
    assert break_even(ModelConfig(heads=8, d_k=64, d_l=64), 24, 12) == (2 * 36 * 64, 3 * 8 * 64 * 64)


@pytest.mark.parametrize("name", ["hamming1511", "golay24"])
def test_sparse_kernel_saves_the_masked_share(name):
    code = builtin_code(name)
    report = mac_report(unified_for(code), code)
    assert report.attention_core < report.attention_core_dense
    saved = 1 - report.attention_core / report.attention_core_dense
    assert saved == pytest.approx(1 - density(build_extended(code.H)), rel=0.01)


@pytest.mark.skipif(not os.environ.get("UECCT_LDPC49_ALIST"), reason="UECCT_LDPC49_ALIST not set")
def test_ldpc49_sparse_ratio():
    code = CodeSpec.from_parity_check("ldpc49", read_parity_check(os.environ["UECCT_LDPC49_ALIST"]))
    report = mac_report(unified_for(code), code)
    assert report.sparse_ratio == pytest.approx(density(build_extended(code.H)), rel=0.01)
    assert 1 - report.sparse_ratio > 0.5
