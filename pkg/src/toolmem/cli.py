"""Command line driver.

Exit codes: 0 ok, 2 usage, 3 data/schema, 4 runtime (gateway, embedder,
build), 5 metric computation failed.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .builder import BuildFailed
from .config import RunConfig, resolve_config
from .dataset import load_dataset
from .errors import (
    EmbeddingError,
    InvalidArgument,
    ModelError,
    ParseError,
    SchemaError,
    TransportError,
)
from .gateway import Gateway, MockBackend
from .harness import (
    EvalReport,
    Harness,
    MetricError,
    make_gateway,
    memory_paths,
    mode_from,
    safe_name,
)
from .memory import create_tool_memory, save_memory
from .predictor import OVERVIEWS, Mode
from .report import ablation_lines, prediction_records, selection_lines, score_lines, write_report, write_text
from .scorer import HttpScorer, SubprocessScorer

log = logging.getLogger("toolmem")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4
EXIT_METRIC = 5

MODES = [m.value for m in Mode]
DEFAULT_ABLATION_KS = "0,2,4,6,8,10,12,14,16,18,20,22,24"


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--backend", choices=["remote", "mock"])
    p.add_argument("--embedder", choices=["remote", "hash"])
    p.add_argument("--model-id", dest="model_id")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--k-build", dest="k_build", type=int)
    p.add_argument("--k-infer", dest="k_infer", type=int)
    p.add_argument("--shots", dest="shot_count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-n", dest="train_n", type=int)
    p.add_argument("--test-n", dest="test_n", type=int)
    p.add_argument("--dataset")
    p.add_argument("--memory-dir", dest="memory_dir")
    p.add_argument("--fixtures")
    p.add_argument("--report-dir", dest="report_dir")
    p.add_argument("--jobs", type=int)
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--dry-run", dest="dry_run", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolmem", description="Tool capability memory: build, predict, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="induce memory for one or all tools from the train split")
    _common(p)
    p.add_argument("--tool", action="append", help="tool id (repeatable; default: every tool)")

    p = sub.add_parser("predict", help="predict scores (or descriptions) on the test split")
    _common(p)
    p.add_argument("--tool", required=True)
    p.add_argument("--mode", choices=MODES, default="toolmem")
    p.add_argument("--task", choices=["score", "description"], default="score")
    p.add_argument("--scorer-cmd", help="alignment scorer command (description task)")
    p.add_argument("--scorer-url", help="alignment scorer endpoint (description task)")

    p = sub.add_parser("select", help="pick the better of two tools per test task")
    _common(p)
    p.add_argument("--tool-a", required=True)
    p.add_argument("--tool-b", required=True)
    p.add_argument("--mode", choices=MODES, default="toolmem")

    p = sub.add_parser("eval", help="score prediction for every tool plus pairwise selection")
    _common(p)
    p.add_argument("--mode", choices=MODES, action="append", help="repeatable; default: all modes")
    p.add_argument("--tool", action="append", help="repeatable; default: every tool")
    p.add_argument("--pair", action="append", help="TOOL_A,TOOL_B (repeatable; default: all pairs)")

    p = sub.add_parser("ablate", help="sweep the number of retrieved entries per category")
    _common(p)
    p.add_argument("--tool", action="append", help="repeatable; default: every tool")
    p.add_argument("--k", default=DEFAULT_ABLATION_KS, help="comma-separated k values")

    p = sub.add_parser("config", help="print the resolved configuration as JSON")
    _common(p)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    return resolve_config(vars(args), args.config)


def _dry_gateway(config: RunConfig) -> Gateway:
    return Gateway(MockBackend(strict=True), model_id=config.model_id,
                   temperature=config.temperature, sample_count=config.sample_count)


def _harness(config: RunConfig) -> Harness:
    if not config.dataset:
        raise UsageError("--dataset is required")
    if not Path(config.dataset).exists():
        raise UsageError(f"dataset not found: {config.dataset}")
    records = load_dataset(config.dataset)
    gateway = _dry_gateway(config) if config.dry_run else make_gateway(config)
    return Harness(records, config, gateway)


def _check_tools(h: Harness, tools: Sequence[str] | None) -> list[str]:
    tools = list(tools or h.tools)
    unknown = [t for t in tools if t not in h.tools]
    if unknown:
        raise UsageError(f"unknown tool(s): {', '.join(unknown)}")
    return tools


def _need_memory(h: Harness, tool_id: str) -> None:
    """ToolMem prediction commands read memory; they never build it implicitly."""
    if memory_paths(h.config.memory_dir, tool_id)["memory"].exists():
        return
    if h.config.dry_run:
        log.warning("no memory for %s; dry run renders prompts against an empty memory", tool_id)
        h.set_memory(create_tool_memory(tool_id, OVERVIEWS[h.modality(tool_id)]))
        return
    raise UsageError(f"no memory file for {tool_id} in {h.config.memory_dir}; run `toolmem build` first")


def _write_prompts(directory: Path, prompts: Sequence[tuple[str, str]]) -> int:
    for key, text in prompts:
        write_text(directory / f"{safe_name(key)}.txt", text + "\n")
    return len(prompts)


# -- commands ------------------------------------------------------------------------


def cmd_build(args, config: RunConfig) -> int:
    h = _harness(config)
    tools = _check_tools(h, args.tool)
    if config.dry_run:
        root = Path(config.report_dir) / "prompts" / "build"
        for tool in tools:
            n = _write_prompts(root / safe_name(tool), h.render_build_prompts(tool))
            print(f"{tool}: {n} prompts written to {root / safe_name(tool)}")
        return EXIT_OK
    for tool in tools:
        paths = memory_paths(config.memory_dir, tool)
        if paths["memory"].exists() and not config.force:
            raise UsageError(f"{paths['memory']} exists; pass --force to overwrite")
    for tool in tools:
        paths = memory_paths(config.memory_dir, tool)

        def checkpoint(memory, step, _path=paths["memory"]):
            save_memory(memory, _path)

        try:
            result = h.build(tool, on_step=checkpoint)
        except BuildFailed as exc:
            save_memory(exc.memory, paths["memory"])
            raise
        h.save(tool)
        rejected = sum(1 for s in result.steps if s.status != "ok")
        sizes = ", ".join(f"{c}={n}" for c, n in result.memory.counts().items())
        print(f"{tool}: version {result.memory.version}, {len(result.memory)} entries ({sizes}), "
              f"{len(result.steps)} steps, {rejected} rejected -> {paths['memory']}")
    return EXIT_OK


def _scorer(args):
    if args.scorer_cmd:
        return SubprocessScorer(args.scorer_cmd)
    if args.scorer_url:
        return HttpScorer(args.scorer_url)
    return None


def cmd_predict(args, config: RunConfig) -> int:
    h = _harness(config)
    (tool,) = _check_tools(h, [args.tool])
    mode = mode_from(args.mode, config)
    if mode.tag is Mode.TOOLMEM:
        _need_memory(h, tool)
    out_dir = Path(config.report_dir)
    if config.dry_run:
        n = _write_prompts(out_dir / "prompts" / "predict" / f"{safe_name(tool)}.{mode.name}",
                           h.render_prediction_prompts(tool, mode))
        print(f"{tool}/{mode.name}: {n} prompts written")
        return EXIT_OK
    if args.task == "description":
        sec = h.description_eval(tool, mode, _scorer(args))
        lines = [json.dumps({"task_id": r.task_id, "tool_id": r.tool_id, "mode": r.mode,
                             "description": r.description, "truncated": r.truncated}, ensure_ascii=False)
                 for r in sorted(sec.results, key=lambda r: r.task_id)]
        write_text(out_dir / "predictions" / f"{safe_name(tool)}.{mode.name}.descriptions.jsonl",
                   "".join(line + "\n" for line in lines))
        write_report(out_dir, EvalReport(Path(config.dataset).name, descriptions=[sec]),
                     stem=f"describe_{safe_name(tool)}_{mode.name}", figures=False)
        print(f"{tool}/{mode.name}: {sec.n} descriptions, {sec.truncated} truncated, {sec.excluded} excluded")
        return EXIT_OK
    sec = h.score_eval(tool, mode)
    write_text(out_dir / "predictions" / f"{safe_name(tool)}.{mode.name}.jsonl",
               prediction_records(sec.predictions, sec.errors))
    print("\n".join(score_lines([sec])))
    return EXIT_OK


def cmd_select(args, config: RunConfig) -> int:
    h = _harness(config)
    tool_a, tool_b = _check_tools(h, [args.tool_a, args.tool_b])
    if tool_a == tool_b:
        raise UsageError("--tool-a and --tool-b must differ")
    mode = mode_from(args.mode, config)
    if mode.tag is Mode.TOOLMEM:
        _need_memory(h, tool_a)
        _need_memory(h, tool_b)
    out_dir = Path(config.report_dir)
    if config.dry_run:
        for tool in (tool_a, tool_b):
            _write_prompts(out_dir / "prompts" / "select" / f"{safe_name(tool)}.{mode.name}",
                           h.render_prediction_prompts(tool, mode))
        print("prompts written")
        return EXIT_OK
    sec = h.selection_eval(tool_a, tool_b, mode)
    rows = "".join(json.dumps(r.__dict__, sort_keys=True) + "\n" for r in sec.rows)
    write_text(out_dir / "selections" / f"{safe_name(tool_a)}__{safe_name(tool_b)}.{mode.name}.jsonl", rows)
    print("\n".join(selection_lines([sec])))
    return EXIT_OK


def _pairs(h: Harness, raw: Sequence[str] | None, tools: Sequence[str]) -> list[tuple[str, str]]:
    if not raw:
        return list(itertools.combinations(sorted(tools), 2))
    pairs = []
    for item in raw:
        parts = item.split(",")
        if len(parts) != 2 or parts[0] == parts[1]:
            raise UsageError(f"bad --pair {item!r}; expected TOOL_A,TOOL_B")
        pairs.append(tuple(_check_tools(h, parts)))
    return pairs


def cmd_eval(args, config: RunConfig) -> int:
    h = _harness(config)
    tools = _check_tools(h, args.tool)
    modes = [mode_from(m, config) for m in (args.mode or MODES)]
    pairs = _pairs(h, args.pair, tools)
    out_dir = Path(config.report_dir)
    if config.dry_run:
        for mode in modes:
            for tool in tools:
                if mode.tag is Mode.TOOLMEM:
                    _need_memory(h, tool)
                _write_prompts(out_dir / "prompts" / "eval" / f"{safe_name(tool)}.{mode.name}",
                               h.render_prediction_prompts(tool, mode))
        print("prompts written")
        return EXIT_OK
    report = EvalReport(Path(config.dataset).name)
    for mode in modes:
        for tool in tools:
            sec = h.score_eval(tool, mode)
            report.scores.append(sec)
            write_text(out_dir / "predictions" / f"{safe_name(tool)}.{mode.name}.jsonl",
                       prediction_records(sec.predictions, sec.errors))
        for a, b in pairs:
            report.selections.append(h.selection_eval(a, b, mode))
    write_report(out_dir, report)
    print("\n".join(score_lines(report.scores)))
    if report.selections:
        print()
        print("\n".join(selection_lines(report.selections)))
    return EXIT_OK


def _parse_ks(raw: str) -> list[int]:
    try:
        ks = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --k list {raw!r}") from None
    if not ks or any(k < 0 for k in ks):
        raise UsageError("--k needs one or more non-negative integers")
    return ks


def cmd_ablate(args, config: RunConfig) -> int:
    h = _harness(config)
    tools = _check_tools(h, args.tool)
    ks = _parse_ks(args.k)
    out_dir = Path(config.report_dir)
    for tool in tools:
        _need_memory(h, tool)
    if config.dry_run:
        for tool in tools:
            for k in ks:
                mode = mode_from(Mode.TOOLMEM, config, k_infer=k)
                _write_prompts(out_dir / "prompts" / "ablate" / f"{safe_name(tool)}.k{k}",
                               h.render_prediction_prompts(tool, mode))
        print("prompts written")
        return EXIT_OK
    report = EvalReport(Path(config.dataset).name)
    for tool in tools:
        report.ablations.extend(h.ablate(tool, ks))
    write_report(out_dir, report, stem="ablation")
    print("\n".join(ablation_lines(report.ablations)))
    return EXIT_OK


def cmd_config(args, config: RunConfig) -> int:
    print(json.dumps(config.dump(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "predict": cmd_predict,
    "select": cmd_select,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "config": cmd_config,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        return COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"toolmem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, SchemaError) as exc:
        print(f"toolmem: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MetricError as exc:
        print(f"toolmem: metric error: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (TransportError, ModelError, EmbeddingError, BuildFailed) as exc:
        print(f"toolmem: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InvalidArgument as exc:
        print(f"toolmem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
