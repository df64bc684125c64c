#!/usr/bin/env python3
"""
Command-line surface: topo, plan, profile, analyze, report

Exit codes: 0 success (partial cell failures included), 2 input error, 3 every cell failed.
"""

import argparse
import asyncio
import json
import shlex
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from loguru import logger
from pydantic import ValidationError

from .analysis import DEFAULT_TIE_REL_TOL
from .binding import build_argv, plan_all, render_plan
from .config import Settings, configure_logging
from .errors import (
    AdapterUnavailableError,
    ConfigError,
    HmsPowerError,
    describe_validation_error,
)
from .kernels import KERNEL_IDS
from .launchers import DryRunAdapter, ExecutionAdapter, LiveAdapter
from .models import (
    BackendConfig,
    ResultSet,
    RunConfig,
    Subdomain,
    Technology,
    Topology,
    WorkloadSpec,
)
from .profiling import merge_results, read_results, run_matrix, save_results, write_results
from .reporting import build_report, render_report_text, render_series_csv, render_power_grid
from .samplers import (
    CounterCsvSampler,
    LiveRaplSampler,
    PcmPowerSampler,
    PerfReportSampler,
    SamplerBackend,
    SyntheticSampler,
)
from .sampling import energy_status_unit, load_synthetic_model
from .topology import (
    enumerate_targets,
    format_cpu_list,
    load_fixture_topology,
    load_topology_file,
    read_live_topology,
    select_targets,
    serialize_topology,
)

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_ALL_FAILED = 3


# Topology sources


def _technology_labels(values: Optional[List[str]]) -> Dict[int, Technology]:
    labels: Dict[int, Technology] = {}
    for value in values or []:
        node, _, tech = value.partition("=")
        try:
            labels[int(node)] = Technology(tech.upper())
        except ValueError as e:
            raise ConfigError(f"expected NODE=TECH, got '{value}'", element="--tech") from e
    return labels


def _load_topology(args: argparse.Namespace, settings: Settings) -> Tuple[Topology, str]:
    """Topology plus the identifier recorded in provenance"""
    if getattr(args, "live", False):
        topo = read_live_topology(
            settings.node_sysfs_path,
            settings.cpu_sysfs_path,
            _technology_labels(getattr(args, "tech", None)),
        )
        return topo, "live"
    if args.snapshot:
        return load_topology_file(args.snapshot), args.snapshot
    return load_fixture_topology(args.fixture), args.fixture


def _add_topology_source(parser: argparse.ArgumentParser, allow_live: bool) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--fixture", default="paper-machine", help="Bundled snapshot name")
    source.add_argument("--snapshot", help="Path to a topology snapshot (JSON)")
    if allow_live:
        source.add_argument("--live", action="store_true", help="Read the host's sysfs")
        parser.add_argument(
            "--tech",
            action="append",
            metavar="NODE=TECH",
            help="Technology label for a live node (repeatable)",
        )
    parser.add_argument("--home-socket", type=int, default=0)


# Commands


def cmd_topo(args: argparse.Namespace, settings: Settings) -> int:
    topo, _ = _load_topology(args, settings)
    targets = enumerate_targets(topo, args.home_socket)

    if args.snapshot_out:
        _write(args.snapshot_out, serialize_topology(topo))

    if args.json:
        print(
            json.dumps(
                {
                    "topology": json.loads(serialize_topology(topo)),
                    "targets": [t.model_dump(mode="json") for t in targets],
                },
                indent=2,
            )
        )
        return EXIT_OK

    print(f"Topology: {topo.sockets} socket(s), {len(topo.nodes)} node(s)")
    for node in topo.nodes:
        cpus = format_cpu_list(node.local_cpus) if node.local_cpus else "memory-only"
        capacity = (
            f"  {node.capacity_bytes / 2**30:.1f} GiB" if node.capacity_bytes is not None else ""
        )
        print(
            f"  node {node.id}  socket {node.socket}  {node.technology.value:<7}  "
            f"cpus {cpus}{capacity}"
        )
    print(f"Targets for home socket {args.home_socket}:")
    width = max(len(t.name) for t in targets)
    for target in targets:
        print(
            f"  {target.name:<{width}}  node {target.node_id}  "
            f"{target.locality.value:<6}  {target.technology.value}"
        )
    return EXIT_OK


def cmd_plan(args: argparse.Namespace, settings: Settings) -> int:
    command = list(args.command or [])
    if command and command[0] == "--":
        command = command[1:]
    if bool(command) == bool(args.builtin):
        raise ConfigError("give exactly one of --builtin ID or -- CMD...", element="workload")

    topo, _ = _load_topology(args, settings)
    targets = select_targets(enumerate_targets(topo, args.home_socket), args.target)
    try:
        workload = WorkloadSpec(
            name=args.workload,
            size_label=args.size,
            threads=args.threads,
            command=tuple(command) if command else None,
            builtin=args.builtin,
        )
    except ValidationError as e:
        element, message = describe_validation_error(e)
        raise ConfigError(message, element=element) from e

    for plan in plan_all(topo, targets, workload):
        print(f"{plan.target.name}: {render_plan(plan)}")
        if args.show_argv:
            print(f"  {shlex.join(build_argv(plan, settings.numactl))}")
    return EXIT_OK


def load_run_config(path: Path) -> RunConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}", element="config") from e
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        element, message = describe_validation_error(e)
        raise ConfigError(message, element=element) from e


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def _energy_units(backend: BackendConfig) -> Dict[Subdomain, int]:
    """Energy-status-unit exponents for replayed native counter units"""
    units: Dict[Subdomain, int] = {}
    if backend.rapl_power_unit is not None:
        units[Subdomain.PACKAGE] = energy_status_unit(backend.rapl_power_unit)
    if backend.dram_energy_unit is not None:
        units[Subdomain.DRAM] = backend.dram_energy_unit
    return units


def _build_backend(
    config: RunConfig, base: Path, settings: Settings, live: bool
) -> Tuple[SamplerBackend, ExecutionAdapter]:
    backend = config.backend
    if backend.live != live:
        raise ConfigError(
            "the live backend must be selected in the config and requested with --live",
            element="backend",
        )

    period_s = config.sample_period_s or settings.sample_period_s
    if backend.live:
        sampler = LiveRaplSampler(Path(settings.powercap_path), period_s, config.subdomain)
        if not sampler.available(config.home_socket):
            raise AdapterUnavailableError(
                f"adapter unavailable: no readable powercap counters under {settings.powercap_path}"
            )
        return sampler, LiveAdapter(settings.numactl, settings.threads_env_var)

    adapter = DryRunAdapter(config.dry_run_duration_s or settings.dry_run_duration_s)
    if backend.synthetic_model is not None:
        assert config.seed is not None
        model = load_synthetic_model(_resolve(base, backend.synthetic_model))
        return SyntheticSampler(model, config.seed, period_s, config.subdomain), adapter

    if backend.perf_report is not None:
        return PerfReportSampler(_resolve(base, backend.perf_report), config.subdomain), adapter
    if backend.pcm_power is not None:
        sampler = PcmPowerSampler(
            _resolve(base, backend.pcm_power),
            backend.pcm_interval_s,
            config.subdomain,
            _energy_units(backend),
        )
        return sampler, adapter

    assert backend.counter_csv is not None
    return CounterCsvSampler(_resolve(base, backend.counter_csv), config.subdomain), adapter


async def _profile(
    config: RunConfig, topo: Topology, topology_id: str, sampler: SamplerBackend, adapter: ExecutionAdapter
) -> ResultSet:
    targets = select_targets(enumerate_targets(topo, config.home_socket), config.targets)
    provenance = {
        "topology": topology_id,
        "home_socket": config.home_socket,
        "tie_tol_percent": config.tie_tol_percent,
    }

    results: Optional[ResultSet] = None
    for workload in config.workloads:
        rs = await run_matrix(
            topo,
            targets,
            [workload.at(workload.threads[0])],
            workload.threads,
            config.reps,
            sampler,
            adapter,
            provenance,
        )
        results = rs if results is None else merge_results(results, rs)
    assert results is not None
    return results


def cmd_profile(args: argparse.Namespace, settings: Settings) -> int:
    config_path = Path(args.config)
    config = load_run_config(config_path)
    overrides = {
        key: value
        for key, value in (("seed", args.seed), ("reps", args.reps))
        if value is not None
    }
    if overrides:
        try:
            config = RunConfig.model_validate({**config.model_dump(), **overrides})
        except ValidationError as e:
            element, message = describe_validation_error(e)
            raise ConfigError(message, element=element) from e

    base = config_path.parent
    if config.snapshot is not None:
        topo, topology_id = load_topology_file(str(_resolve(base, config.snapshot))), config.snapshot
    else:
        assert config.fixture is not None
        topo, topology_id = load_fixture_topology(config.fixture), config.fixture

    sampler, adapter = _build_backend(config, base, settings, args.live)
    logger.info(f"📡 Sampling with the {config.backend.name} backend")
    results = asyncio.run(_profile(config, topo, topology_id, sampler, adapter))

    out = Path(args.out) if args.out else (
        _resolve(base, config.output) if config.output else None
    )
    if out is not None:
        write_results(results, out)
    else:
        print(save_results(results), end="")

    failures = results.failures
    if failures:
        logger.warning(f"⚠️ {len(failures)} cell(s) failed; see provenance.failures")
    if not results.records and failures:
        logger.error("❌ Every cell failed")
        return EXIT_ALL_FAILED
    logger.success(f"✅ Profiled {len(results.records)} cell(s)")
    return EXIT_OK


def _write(path: str, text: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    logger.info(f"💾 Wrote {target}")


def _tie_tol_percent(args: argparse.Namespace, results: ResultSet) -> float:
    """--tie-tol, else the tolerance the profile run recorded, else the default"""
    if args.tie_tol is not None:
        value = args.tie_tol
    else:
        value = results.provenance.get("tie_tol_percent", DEFAULT_TIE_REL_TOL * 100)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
        raise ConfigError(f"must be a non-negative percentage, got {value!r}", element="tie_tol")
    return float(value)


def cmd_analyze(args: argparse.Namespace, settings: Settings) -> int:
    results = read_results(Path(args.results))
    report = build_report(
        results,
        tie_rel_tol=_tie_tol_percent(args, results) / 100.0,
        reference_kind=args.reference,
        weight_power=args.weight,
    )

    grid = render_power_grid(results)
    print(render_report_text(report), end="")
    if grid:
        print()
        print(grid, end="")

    if args.json_out:
        _write(args.json_out, report.model_dump_json(indent=2, by_alias=True) + "\n")
    if args.grid_out:
        _write(args.grid_out, grid)
    logger.success(f"✅ Analyzed {len(results.records)} record(s)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    results = read_results(Path(args.results))
    grid = render_power_grid(results)
    if args.out:
        _write(args.out, grid)
    else:
        print(grid, end="")
    if args.series_out:
        _write(args.series_out, render_series_csv(results))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hms-power",
        description="Rank heterogeneous memory kinds by measured memory power",
    )
    parser.add_argument("--log-level", help="Override HMS_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command_name", required=True)

    topo = sub.add_parser("topo", help="Show nodes and memory targets")
    _add_topology_source(topo, allow_live=True)
    topo.add_argument("--json", action="store_true", help="Emit JSON instead of text")
    topo.add_argument("--snapshot-out", help="Also save the topology as a reloadable snapshot")
    topo.set_defaults(handler=cmd_topo)

    plan = sub.add_parser("plan", help="Print binding directives for a workload")
    _add_topology_source(plan, allow_live=True)
    plan.add_argument("--target", action="append", help="Target name (repeatable; default all)")
    plan.add_argument("--workload", default="workload")
    plan.add_argument("--size", default="default")
    plan.add_argument("--threads", type=int, default=1)
    plan.add_argument("--builtin", choices=KERNEL_IDS)
    plan.add_argument("--show-argv", action="store_true", help="Also print the numactl command")
    plan.add_argument("command", nargs=argparse.REMAINDER, help="-- CMD [ARGS...]")
    plan.set_defaults(handler=cmd_plan)

    profile = sub.add_parser("profile", help="Run a measurement matrix")
    profile.add_argument("--config", required=True, help="RunConfig JSON")
    profile.add_argument("--seed", type=int)
    profile.add_argument("--reps", type=int)
    profile.add_argument("--out", help="Results file (default: config output or stdout)")
    profile.add_argument("--live", action="store_true", help="Allow the live backend")
    profile.set_defaults(handler=cmd_profile)

    analyze = sub.add_parser("analyze", help="Rank kinds and quantify savings")
    analyze.add_argument("results")
    analyze.add_argument(
        "--tie-tol",
        type=float,
        metavar="PERCENT",
        help="Relative tie tolerance in percent (default: the profile run's, else 1)",
    )
    analyze.add_argument("--reference", help="Reference kind for savings (default LocalDRAM)")
    analyze.add_argument("--weight", type=float, help="Power weight for the trade-off table")
    analyze.add_argument("--json-out", help="Write the structured report here")
    analyze.add_argument("--grid-out", help="Write the plain-text grid here")
    analyze.set_defaults(handler=cmd_analyze)

    report = sub.add_parser("report", help="Render the power grid and plot-ready series")
    report.add_argument("results")
    report.add_argument("--out", help="Grid file (default stdout)")
    report.add_argument("--series-out", help="CSV of power vs threads")
    report.set_defaults(handler=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = Settings.from_env()
    except ConfigError as e:
        configure_logging()
        logger.error(f"❌ {e}")
        return EXIT_INPUT_ERROR
    configure_logging(args.log_level or settings.log_level)

    try:
        return args.handler(args, settings)
    except HmsPowerError as e:
        logger.error(f"❌ {e}")
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
