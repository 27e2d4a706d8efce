"""Command-line interface.

Subcommands: list-functions, gen-data, train, scan, fuzz, bench.
Exit codes: 0 success, 1 bugs found (fuzz), 2 usage error.
The SAF_SEED environment variable supplies a default seed; explicit flags
always win over the environment.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from safuzz import __version__
from safuzz.corpus import corpus_manifest
from safuzz.datagen import (
    GenerationConfig,
    build_dataset,
    dataset_load,
    dataset_save,
)
from safuzz.errors import SafuzzError
from safuzz.forest import model_load, model_save, train_forest
from safuzz.fuzzer import FuzzConfig, fuzz_program, scan_for_unstable
from safuzz.program import ProgramSpec, program_parse
from safuzz.registry import default_registry
from safuzz.report import ProgramReport, Report, report_emit


def _env_seed(default: int = 0) -> int:
    raw = os.environ.get("SAF_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise SafuzzError(f"SAF_SEED must be an integer, got {raw!r}") from None


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise SafuzzError(f"cannot parse shape {text!r}; use forms like 3x3") from None
    if not shape:
        raise SafuzzError("shape must have at least one dimension")
    return shape


def _load_models(models_dir: str):
    path = Path(models_dir)
    if not path.is_dir():
        raise SafuzzError(f"models directory {models_dir!r} does not exist")
    models = [model_load(p) for p in sorted(path.glob("*.json"))]
    if not models:
        raise SafuzzError(f"no model files found under {models_dir!r}")
    return models


def _cmd_list_functions(args) -> int:
    reg = default_registry()
    for name in reg.names():
        spec = reg.entries[name]
        marker = "implemented" if spec.implemented else "metadata-only"
        print(f"{name}\t{spec.category}\t{marker}")
    return 0


def _cmd_gen_data(args) -> int:
    config = GenerationConfig(
        shape=_parse_shape(args.shape),
        seed=args.seed if args.seed is not None else _env_seed(),
        target_size=args.samples,
    )
    dataset = build_dataset(args.function, config)
    dataset_save(dataset, args.out)
    counts = dataset.class_counts()
    print(f"{args.function}: {len(dataset)} samples, classes {counts} -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    dataset = dataset_load(args.dataset)
    forest, metrics = train_forest(
        dataset, tree_count=args.trees,
        seed=args.seed if args.seed is not None else _env_seed(42),
        test_split=args.test_split,
    )
    model_save(forest, args.out)
    print(
        f"{dataset.kernel}: macro-F1 {metrics['macro_f1']:.4f}, "
        f"training time {metrics['train_time_seconds'] / 60.0:.3f} min -> {args.out}"
    )
    return 0


def _cmd_scan(args) -> int:
    reg = default_registry()
    spec = program_parse(args.program, reg)
    scan = scan_for_unstable(spec.to_graph(reg), reg)
    for site in scan.sites:
        print(f"site {site.node_id}: {site.kernel} (entry {site.entry_node})")
    for diag in scan.diagnostics:
        print(f"diagnostic: {diag}")
    if not scan.sites and not scan.diagnostics:
        print("no unstable functions found")
    return 0


def _program_config(spec: ProgramSpec, args, seed: int) -> FuzzConfig:
    rate = args.rate if args.rate is not None else (spec.rate or 1.0)
    return FuzzConfig(timeout=args.timeout, rate=rate, seed=seed,
                      max_iters=args.max_iters)


def _cmd_fuzz(args) -> int:
    reg = default_registry()
    spec = program_parse(args.program, reg)
    models = _load_models(args.models)
    seed = args.seed if args.seed is not None else _env_seed()
    config = _program_config(spec, args, seed)
    results, diagnostics = fuzz_program(spec.to_graph(reg), reg, models, config)
    report = Report(
        registry_version=reg.version,
        config={"timeout": config.timeout, "rate": config.rate, "seed": seed,
                "max_iters": config.max_iters},
        programs=[ProgramReport(program=spec.name, seed=seed,
                                expected_failure_class=spec.expected_failure_class,
                                results=results, diagnostics=diagnostics)],
    )
    if args.out:
        report_emit(report, args.out)
    bugs = 0
    for result in results:
        cls = (result.verdict.failure_class.value
               if result.found and result.verdict.failure_class else "-")
        print(f"{spec.name}/{result.site.node_id} [{result.site.kernel}]: "
              f"{result.status} class={cls} iterations={result.iterations} "
              f"time={result.wall_time:.3f}s")
        bugs += int(result.found)
    for diag in diagnostics:
        print(f"diagnostic: {diag}")
    return 1 if bugs else 0


def _cmd_bench(args) -> int:
    reg = default_registry()
    models = _load_models(args.models)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [_env_seed()]
    programs = corpus_manifest(reg)
    report = Report(
        registry_version=reg.version,
        config={"timeout": args.timeout, "seeds": seeds, "max_iters": args.max_iters,
                "rate_override": args.rate},
    )
    for seed in seeds:
        for spec in programs:
            config = _program_config(spec, args, seed)
            results, diagnostics = fuzz_program(spec.to_graph(reg), reg, models, config)
            report.programs.append(
                ProgramReport(program=spec.name, seed=seed,
                              expected_failure_class=spec.expected_failure_class,
                              results=results, diagnostics=diagnostics)
            )
            found = [r for r in results if r.found]
            classes = {r.verdict.failure_class.value for r in found
                       if r.verdict and r.verdict.failure_class}
            status = "found " + "/".join(sorted(classes)) if found else "exhausted"
            print(f"seed {seed} {spec.name}: {status} "
                  f"(expected {spec.expected_failure_class or 'none'})")
    totals = report.totals()
    print(f"total bugs: {totals['bugs_found']}, "
          f"average time: {totals['average_time_seconds']:.4f}s")
    if args.out:
        report_emit(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safuzz",
        description="soft-assertion guided fuzzing for numerical instability",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list-functions", help="print the unstable-function database")

    p = sub.add_parser("gen-data", help="unit-test a kernel into a labeled dataset")
    p.add_argument("--function", required=True)
    p.add_argument("--shape", default="3x3")
    p.add_argument("--samples", type=int, default=40_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a soft assertion from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--test-split", type=float, default=0.3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("scan", help="list unstable sites in a program")
    p.add_argument("program")

    p = sub.add_parser("fuzz", help="search one program for failure-inducing inputs")
    p.add_argument("program")
    p.add_argument("--models", required=True)
    p.add_argument("--timeout", type=float, default=1800.0)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench", help="run the shipped corpus and emit a summary")
    p.add_argument("--models", required=True)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--out", default=None)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    handlers = {
        "list-functions": _cmd_list_functions,
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "scan": _cmd_scan,
        "fuzz": _cmd_fuzz,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except SafuzzError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
