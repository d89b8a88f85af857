"""Command-line entry point: ``uecct <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from uecct.analysis import (
    dump_attention,
    format_rank_report,
    head_similarity,
    load_attention,
    record_attention,
    rank_analysis,
)
from uecct.config import ConfigStore, RunSettings
from uecct.decoders import DECODERS, make_decoder
from uecct.errors import ConfigError, UecctError
from uecct.evaluate import EvalReport, monte_carlo, neg_ln_ber_table, write_csv
from uecct.log import setup_logging
from uecct.macs import break_even, compare_variants, format_report, mac_report
from uecct.manifest import write_manifest
from uecct.maskgen import build_extended, density, render
from uecct.matrix_io import FORMATS
from uecct.model import UecctModel
from uecct.registry import BUILTIN_CODES, CodeRegistry, add_to_library, list_library, load_registry, resolve_code
from uecct.train import fine_tune, train

logger = logging.getLogger(__name__)

EVAL_CSV = "eval.csv"
EVAL_TABLE = "neg_ln_ber.txt"
RESOLVED_CONFIG = "config.ini"


class _Parser(argparse.ArgumentParser):
    """argparse that raises ConfigError instead of exiting."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (INI sections, JSON values)")
    common.add_argument("--profile", help="named profile: toy or full")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--workers", type=int, help="evaluation worker threads (eval.workers)")
    common.add_argument("--output", "-o", help="output directory (run.output_dir)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-dir", help="directory for the rotating log file")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="uecct", description="Unified-attention transformer decoder for linear block codes")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    codes = commands.add_parser("codes", help="inspect or extend the code library")
    codes_cmd = codes.add_subparsers(dest="action", required=True, parser_class=_Parser)
    codes_cmd.add_parser("list", parents=[common], help="list built-in and library codes")
    add = codes_cmd.add_parser("add", parents=[common], help="validate and store a parity-check matrix")
    add.add_argument("name")
    add.add_argument("file")
    add.add_argument("--format", choices=FORMATS)
    add.add_argument("--k", type=int, help="expected dimension; rejected if the matrix disagrees")

    mask = commands.add_parser("mask", help="extended parity-check matrix")
    mask_cmd = mask.add_subparsers(dest="action", required=True, parser_class=_Parser)
    show = mask_cmd.add_parser("show", parents=[common], help="print H̄ and its density")
    show.add_argument("code")

    tr = commands.add_parser("train", parents=[common], help="train a model from scratch")
    tr.add_argument("--codes", help="comma-separated code names (codes.names)")

    ft = commands.add_parser("finetune", parents=[common], help="continue training a checkpoint on new codes")
    ft.add_argument("--checkpoint", required=True)
    ft.add_argument("--codes", required=True, help="comma-separated code names")
    ft.add_argument("--freeze", help="comma-separated parameter patterns or presets (memory, encoder, head)")

    ev = commands.add_parser("eval", parents=[common], help="Monte Carlo BER/BLER")
    ev.add_argument("--decoder", choices=DECODERS)
    ev.add_argument("--code", action="append", required=True, help="code name (repeatable)")
    ev.add_argument("--ebn0", type=float, nargs="+", help="Eb/N0 points in dB")
    ev.add_argument("--blocks", type=int, help="blocks per point (eval.min_blocks)")
    ev.add_argument("--checkpoint", help="trained model, required for --decoder model")

    an = commands.add_parser("analyze", help="attention analyses")
    an_cmd = an.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action, text in (("rank", "numerical rank of Q·Kᵀ"), ("jsd", "mean pairwise head JSD per layer")):
        sub = an_cmd.add_parser(action, parents=[common], help=text)
        source = sub.add_mutually_exclusive_group(required=True)
        source.add_argument("--checkpoint", help="run this model and dump its attention")
        source.add_argument("--dump", help="attention manifest written by an earlier run")
        sub.add_argument("--code", action="append", help="codes to record (default: the checkpoint's codes)")
        sub.add_argument("--ebn0", type=float, default=5.0)
        sub.add_argument("--batch", type=int, default=16)

    mc = commands.add_parser("macs", parents=[common], help="MAC and parameter accounting")
    mc.add_argument("--code", required=True)
    mc.add_argument("--checkpoint", help="count for this model instead of the configured one")
    return parser


# =============================================================================
# Commands
# =============================================================================


def _settings(args) -> tuple[ConfigStore, RunSettings]:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"eval.workers={args.workers}")
    if args.output is not None:
        overrides.append(f"run.output_dir={json.dumps(args.output)}")
    if getattr(args, "codes", None):
        overrides.append(f"codes.names={json.dumps(args.codes.split(','))}")
    if getattr(args, "freeze", None):
        overrides.append(f"train.freeze={json.dumps(args.freeze.split(','))}")
    if getattr(args, "decoder", None):
        overrides.append(f"eval.decoder={json.dumps(args.decoder)}")
    if getattr(args, "blocks", None) is not None:
        overrides.append(f"eval.min_blocks={args.blocks}")
    if getattr(args, "ebn0", None) and args.command == "eval":
        overrides.append(f"eval.ebn0_db={json.dumps(args.ebn0)}")
    store = ConfigStore.resolve(profile=args.profile, path=args.config, overrides=overrides)
    return store, store.build_config()


def _finish(out: Path, argv: list[str], store: ConfigStore, settings: RunSettings, artifacts: list[Path]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = out / RESOLVED_CONFIG
    resolved.write_text(store.as_text(), encoding="utf-8")
    write_manifest(out, command=argv, config=store.get_all(), seed=settings.run.seed, artifacts=[resolved, *artifacts])


def cmd_codes(args, settings: RunSettings) -> None:
    library = settings.run.library_dir
    if args.action == "add":
        code = add_to_library(args.name, args.file, library, fmt=args.format, k=args.k)
        print(f"added {code.name} n={code.n} k={code.k}")
        return
    print(f"{'name':<16}{'n':>6}{'k':>6}{'rate':>8}{'density':>10}  source")
    for name in [*BUILTIN_CODES, *list_library(library)]:
        code = resolve_code(name, library)
        source = "built-in" if name in BUILTIN_CODES else "library"
        print(f"{name:<16}{code.n:>6}{code.k:>6}{code.rate:>8.4f}{density(build_extended(code.H)):>10.4f}  {source}")


def cmd_mask(args, settings: RunSettings) -> None:
    print(render(build_extended(resolve_code(args.code, settings.run.library_dir).H)))


def cmd_train(args, argv, store, settings: RunSettings) -> None:
    registry = load_registry(settings.train.code_names, settings.run.library_dir)
    out = Path(settings.run.output_dir)
    result = train(settings.model, settings.train, registry, out)
    _finish(out, argv, store, settings, [result.loss_csv, result.checkpoint])
    print(f"final loss {result.final_loss:.6f} (initial {result.initial_loss:.6f}); checkpoint {result.checkpoint}")


def cmd_finetune(args, argv, store, settings: RunSettings) -> None:
    codes = [resolve_code(n, settings.run.library_dir) for n in settings.train.code_names]
    out = Path(settings.run.output_dir)
    result = fine_tune(args.checkpoint, codes, settings.train, out)
    _finish(out, argv, store, settings, [result.loss_csv, result.checkpoint])
    print(f"final loss {result.final_loss:.6f} (initial {result.initial_loss:.6f}); checkpoint {result.checkpoint}")


def cmd_eval(args, argv, store, settings: RunSettings) -> None:
    cfg = settings.eval
    model = UecctModel.load(args.checkpoint)[0] if args.checkpoint else None
    decoder = make_decoder(cfg.decoder, model=model, bp_iters=cfg.bp_iters)
    report = EvalReport(decoder=decoder.name)
    for name in args.code:
        code = resolve_code(name, settings.run.library_dir)
        part = monte_carlo(
            decoder, code, cfg.ebn0_db, cfg.min_blocks, settings.run.seed,
            batch_blocks=cfg.batch_blocks, workers=cfg.workers,
        )
        if model is not None:
            part.macs[code.name] = mac_report(model, code).counts
        report.extend(part)
    out = Path(settings.run.output_dir)
    csv_path = write_csv(report, out / EVAL_CSV)
    table = neg_ln_ber_table(report)
    table_path = out / EVAL_TABLE
    table_path.write_text(table + "\n", encoding="utf-8")
    _finish(out, argv, store, settings, [csv_path, table_path])
    for p in report.points:
        lo, hi = p.ber_ci
        print(f"{p.code} {p.ebn0_db:g} dB  BER {p.ber:.4e} [{lo:.4e}, {hi:.4e}]  BLER {p.bler:.4e}  blocks {p.counts.blocks_total}")
    print(table)


def cmd_analyze(args, argv, store, settings: RunSettings) -> None:
    out = Path(settings.run.output_dir)
    if args.dump:
        recorder = load_attention(args.dump)
        artifacts = []
    else:
        model, _ = UecctModel.load(args.checkpoint)
        names = args.code or model.code_names
        if not names:
            raise ConfigError("No codes to record: pass --code or use a checkpoint that records its codes")
        codes = [resolve_code(n, settings.run.library_dir) for n in names]
        registry = CodeRegistry(codes, n_max=model.n_max, s_max=model.s_max)
        recorder = record_attention(model, registry, ebn0_db=args.ebn0, batch_size=args.batch, seed=settings.run.seed)
        manifest = dump_attention(recorder, out / "attention")
        artifacts = [manifest]
    if args.action == "rank":
        print(format_rank_report(rank_analysis(recorder.scores)))
    else:
        for layer, value in enumerate(head_similarity(recorder.attention)):
            print(f"layer {layer} mean_jsd {value:.6f}")
    _finish(out, argv, store, settings, artifacts)


def cmd_macs(args, settings: RunSettings) -> None:
    code = resolve_code(args.code, settings.run.library_dir)
    if args.checkpoint:
        model, _ = UecctModel.load(args.checkpoint)
        config, n_max, s_max = model.config, model.n_max, model.s_max
    else:
        config, n_max, s_max = settings.model, code.n, code.m
    reports = compare_variants(config, code, n_max, s_max)
    print(format_report(reports, break_even(config, n_max, s_max)))


# =============================================================================
# Entry point
# =============================================================================


def run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level, log_dir=args.log_dir)
    store, settings = _settings(args)
    if args.command == "codes":
        cmd_codes(args, settings)
    elif args.command == "mask":
        cmd_mask(args, settings)
    elif args.command == "train":
        cmd_train(args, argv, store, settings)
    elif args.command == "finetune":
        cmd_finetune(args, argv, store, settings)
    elif args.command == "eval":
        cmd_eval(args, argv, store, settings)
    elif args.command == "analyze":
        cmd_analyze(args, argv, store, settings)
    elif args.command == "macs":
        cmd_macs(args, settings)
    return 0


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except UecctError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "DataError", "message": str(exc), "exit_code": 3}), file=sys.stderr)
        return 3
