#!/usr/bin/env python3
"""
Measurement matrix orchestration and results persistence

Cells run strictly one at a time: the memory-plane counter is attributed to the single
bound workload, so two cells sampled at once would corrupt each other.
"""

import asyncio
import json
import statistics
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from loguru import logger
from pydantic import ValidationError

from .binding import execute, plan_binding
from .errors import (
    AdapterUnavailableError,
    ExecutionError,
    HmsPowerError,
    PlanError,
    ResultsFormatError,
    describe_validation_error,
)
from .launchers import DryRunAdapter, ExecutionAdapter
from .models import CellKey, MemoryTarget, ProfileRecord, ResultSet, Topology, WorkloadSpec
from .samplers import SamplerBackend, derive_cell_seed
from .sampling import average_power, trace_duration_s, unwrapped_energy_uj

__all__ = [
    "RESULTS_FORMAT",
    "RESULTS_VERSION",
    "RECORD_FIELDS",
    "aggregate_reps",
    "derive_cell_seed",
    "load_results",
    "merge_results",
    "read_results",
    "run_matrix",
    "save_results",
    "write_results",
]

RESULTS_FORMAT = "hms-power-results"
RESULTS_VERSION = 1
RECORD_FIELDS = (
    "app",
    "size",
    "kind",
    "threads",
    "rep",
    "duration_s",
    "energy_j",
    "avg_power_w",
    "socket",
    "subdomain",
)

_cell_lock = asyncio.Lock()


def _failure(cell: CellKey, error: str) -> Dict[str, Any]:
    return {
        "app": cell.app,
        "size": cell.size,
        "kind": cell.kind,
        "threads": cell.threads,
        "rep": cell.rep,
        "error": error,
    }


async def _run_cell(
    topo: Topology,
    target: MemoryTarget,
    workload: WorkloadSpec,
    cell: CellKey,
    sampler: SamplerBackend,
    adapter: ExecutionAdapter,
) -> ProfileRecord:
    plan = plan_binding(topo, target, workload)

    async with _cell_lock:
        await sampler.start(plan, cell)
        try:
            handle = await execute(plan, adapter)
        except (ExecutionError, AdapterUnavailableError):
            await sampler.abort(plan, cell)
            raise
        if not handle.ok:
            await sampler.abort(plan, cell)
            raise ExecutionError(handle.error or f"exit status {handle.exit_code}")
        trace = await sampler.stop(plan, cell, handle)

    avg_power_w = average_power(trace)
    energy_j = unwrapped_energy_uj(trace) / 1_000_000
    return ProfileRecord(
        app=cell.app,
        size_label=cell.size,
        kind=cell.kind,
        threads=cell.threads,
        rep=cell.rep,
        duration_s=trace_duration_s(trace),
        energy_j=energy_j,
        avg_power_w=avg_power_w,
        socket=trace.domain.socket,
        subdomain=trace.domain.subdomain,
    )


async def run_matrix(
    topo: Topology,
    targets: Sequence[MemoryTarget],
    workloads: Sequence[WorkloadSpec],
    thread_counts: Sequence[int],
    reps: int,
    sampler: SamplerBackend,
    adapter: Optional[ExecutionAdapter] = None,
    provenance: Optional[Dict[str, Any]] = None,
) -> ResultSet:
    """
    One record per (workload, target, threads, rep), iterated in that order

    Failed cells are left out of the records and listed under provenance["failures"].
    An unavailable adapter aborts the whole matrix.
    """
    if not targets:
        raise PlanError("targets must not be empty")
    if not workloads:
        raise PlanError("workloads must not be empty")
    if not thread_counts:
        raise PlanError("thread_counts must not be empty")
    if reps < 1:
        raise PlanError(f"reps must be >= 1, got {reps}")

    adapter = adapter or DryRunAdapter()
    records: List[ProfileRecord] = []
    failures: List[Dict[str, Any]] = []
    total = len(workloads) * len(targets) * len(thread_counts) * reps
    logger.info(f"📋 Running {total} cell(s) with {sampler.name} sampler on {adapter.name}")

    for workload in workloads:
        for target in targets:
            for threads in thread_counts:
                spec = workload.model_copy(update={"threads": threads})
                for rep in range(reps):
                    cell = CellKey(workload.name, workload.size_label, target.name, threads, rep)
                    try:
                        record = await _run_cell(topo, target, spec, cell, sampler, adapter)
                    except AdapterUnavailableError:
                        raise
                    except HmsPowerError as e:
                        logger.warning(
                            f"⚠️ Cell {cell.label} {cell.kind} t={threads} r={rep} failed: {e}"
                        )
                        failures.append(_failure(cell, str(e)))
                        continue
                    logger.info(
                        f"✅ {cell.label} {cell.kind} t={threads} r={rep}: "
                        f"{record.avg_power_w:.2f} W"
                    )
                    records.append(record)

    merged = {
        **sampler.provenance(),
        "subdomain": sampler.subdomain.value,
        **(provenance or {}),
        "failures": failures,
    }
    return ResultSet(records=tuple(records), provenance=merged)


def aggregate_reps(rs: ResultSet) -> ResultSet:
    """Collapse repetitions: mean watts and mean duration per (app, size, kind, threads)"""
    groups: Dict[Tuple[str, str, str, int], List[ProfileRecord]] = {}
    for record in rs.records:
        key = (record.app, record.size_label, record.kind, record.threads)
        groups.setdefault(key, []).append(record)

    records: List[ProfileRecord] = []
    stats: List[Dict[str, Any]] = []
    for (app, size, kind, threads), group in groups.items():
        if len(group) == 1:
            records.append(group[0].model_copy(update={"rep": 0}))
            power_std = duration_std = 0.0
        else:
            power = statistics.fmean(r.avg_power_w for r in group)
            duration = statistics.fmean(r.duration_s for r in group)
            records.append(
                group[0].model_copy(
                    update={
                        "rep": 0,
                        "avg_power_w": power,
                        "duration_s": duration,
                        "energy_j": power * duration,
                    }
                )
            )
            power_std = statistics.stdev(r.avg_power_w for r in group)
            duration_std = statistics.stdev(r.duration_s for r in group)
        stats.append(
            {
                "app": app,
                "size": size,
                "kind": kind,
                "threads": threads,
                "n": len(group),
                "power_std_w": power_std,
                "duration_std_s": duration_std,
            }
        )

    provenance = dict(rs.provenance)
    if stats:
        provenance["rep_stats"] = stats
    return ResultSet(records=tuple(records), provenance=provenance)


def merge_results(a: ResultSet, b: ResultSet) -> ResultSet:
    """Union of two result sets; a duplicate record key is an error"""
    keys = {record.key for record in a.records}
    for record in b.records:
        if record.key in keys:
            raise ResultsFormatError(f"duplicate record key {record.key}", element="records")

    provenance = {**b.provenance, **a.provenance}
    provenance["failures"] = a.failures + b.failures
    if "rep_stats" in a.provenance or "rep_stats" in b.provenance:
        provenance["rep_stats"] = list(a.provenance.get("rep_stats", [])) + list(
            b.provenance.get("rep_stats", [])
        )
    return ResultSet(records=a.records + b.records, provenance=provenance)


# Results file


def _compact(obj: Any, sort_keys: bool = False) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=sort_keys)


def save_results(rs: ResultSet) -> str:
    """Header line with format and provenance, then one compact JSON record per line"""
    header = {"format": RESULTS_FORMAT, "provenance": rs.provenance, "version": RESULTS_VERSION}
    lines = [_compact(header, sort_keys=True)]
    lines.extend(_compact(record.model_dump(mode="json", by_alias=True)) for record in rs.records)
    return "\n".join(lines) + "\n"


def _no_duplicate_keys(line: int):
    def hook(pairs: List[Tuple[str, Any]]) -> Dict[str, Any]:
        obj: Dict[str, Any] = {}
        for key, value in pairs:
            if key in obj:
                raise ResultsFormatError(f"duplicate field '{key}'", element=key, line=line)
            obj[key] = value
        return obj

    return hook


def _parse_line(text: str, line: int) -> Dict[str, Any]:
    try:
        obj = json.loads(text, object_pairs_hook=_no_duplicate_keys(line))
    except json.JSONDecodeError as e:
        raise ResultsFormatError(f"malformed JSON: {e.msg}", line=line) from e
    if not isinstance(obj, dict):
        raise ResultsFormatError("expected a JSON object", line=line)
    return obj


def load_results(text: str) -> ResultSet:
    lines = [(n, raw) for n, raw in enumerate(text.splitlines(), start=1) if raw.strip()]
    if not lines:
        return ResultSet()

    header_line, header_text = lines[0]
    header = _parse_line(header_text, header_line)
    if set(header) != {"format", "provenance", "version"}:
        raise ResultsFormatError(
            f"header must have keys format, provenance, version; got {sorted(header)}",
            element="header",
            line=header_line,
        )
    if header["format"] != RESULTS_FORMAT:
        raise ResultsFormatError(
            f"unknown format '{header['format']}'", element="format", line=header_line
        )
    if header["version"] != RESULTS_VERSION:
        raise ResultsFormatError(
            f"unsupported version {header['version']}", element="version", line=header_line
        )
    if not isinstance(header["provenance"], dict):
        raise ResultsFormatError("must be an object", element="provenance", line=header_line)

    records: List[ProfileRecord] = []
    seen: Dict[Tuple[str, str, str, int, int], int] = {}
    for line, raw in lines[1:]:
        obj = _parse_line(raw, line)
        if tuple(sorted(obj)) != tuple(sorted(RECORD_FIELDS)):
            unknown = sorted(set(obj) - set(RECORD_FIELDS))
            missing = sorted(set(RECORD_FIELDS) - set(obj))
            raise ResultsFormatError(
                f"unknown fields {unknown}, missing fields {missing}", element="record", line=line
            )
        try:
            record = ProfileRecord.model_validate(obj)
        except ValidationError as e:
            element, message = describe_validation_error(e)
            raise ResultsFormatError(message, element=element, line=line) from e
        if record.key in seen:
            raise ResultsFormatError(
                f"duplicate record key {record.key} (first on line {seen[record.key]})",
                element="record",
                line=line,
            )
        seen[record.key] = line
        records.append(record)

    return ResultSet(records=tuple(records), provenance=header["provenance"])


def write_results(rs: ResultSet, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(save_results(rs), encoding="utf-8")
    logger.info(f"💾 Wrote {len(rs.records)} record(s) to {path}")


def read_results(path: Path) -> ResultSet:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ResultsFormatError(f"cannot read {path}: {e}", element="results") from e
    return load_results(text)
