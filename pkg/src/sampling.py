#!/usr/bin/env python3
"""
Cumulative energy counters: unwrapping, power derivation, interchange formats and synthetic traces

All backends normalize to integer microjoules at ingestion. At most one counter wrap is
assumed between consecutive samples; more than one is undetectable by construction.
"""

import csv
import io
import itertools
import math
import re
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import ValidationError

from .errors import AnalysisError, ConfigError, CounterFormatError, describe_validation_error
from .models import (
    DEFAULT_MAX_RANGE_UJ,
    CounterDomain,
    EnergySample,
    EnergyTrace,
    Subdomain,
    SyntheticPowerModel,
)

COUNTER_CSV_HEADER = ["t_s", "socket", "subdomain", "energy_uj"]

PERF_EVENT_SUBDOMAINS = {
    "energy-ram": Subdomain.DRAM,
    "energy-pkg": Subdomain.PACKAGE,
}


def unwrap_delta(prev_raw: int, cur_raw: int, max_range_uj: int) -> int:
    """Energy between two raw readings of a counter that wraps from max_range_uj to 0"""
    if max_range_uj <= 0:
        raise CounterFormatError("must be > 0", element="max_range_uj")
    if not 0 <= prev_raw <= max_range_uj:
        raise CounterFormatError(
            f"raw value {prev_raw} outside [0, {max_range_uj}]", element="prev_raw"
        )
    if not 0 <= cur_raw <= max_range_uj:
        raise CounterFormatError(
            f"raw value {cur_raw} outside [0, {max_range_uj}]", element="cur_raw"
        )
    if cur_raw >= prev_raw:
        return cur_raw - prev_raw
    return (max_range_uj - prev_raw) + cur_raw + 1


def unwrapped_energy_uj(trace: EnergyTrace) -> int:
    """Total energy over the trace, summing unwrap_delta over consecutive samples"""
    max_range = trace.domain.max_range_uj
    samples = trace.samples
    return sum(
        unwrap_delta(prev.raw_uj, cur.raw_uj, max_range)
        for prev, cur in zip(samples, samples[1:])
    )


def trace_duration_s(trace: EnergyTrace) -> float:
    if len(trace.samples) < 2:
        return 0.0
    return trace.samples[-1].t - trace.samples[0].t


def average_power(trace: EnergyTrace) -> float:
    """Average watts: (sum of unwrapped deltas, in joules) / (t_last - t_first)"""
    if len(trace.samples) < 2:
        raise AnalysisError(
            f"average power needs at least 2 samples, got {len(trace.samples)}"
        )
    duration = trace_duration_s(trace)
    if duration <= 0:
        raise AnalysisError(f"trace duration must be > 0, got {duration}")
    energy_j = unwrapped_energy_uj(trace) / 1_000_000
    return energy_j / duration


def energy_status_unit(power_unit_register: int) -> int:
    """Energy-status-unit exponent (bits 12:8) of a RAPL power-unit register"""
    return (power_unit_register >> 8) & 0x1F


def energy_units_to_uj(raw_ticks: int, esu: int) -> int:
    """Convert native energy-status ticks (1 tick = 2^-esu J) to microjoules"""
    if raw_ticks < 0:
        raise CounterFormatError(f"negative tick count {raw_ticks}", element="raw_ticks")
    if not 0 <= esu <= 31:
        raise CounterFormatError(f"exponent {esu} outside [0, 31]", element="esu")
    return round(raw_ticks * 1_000_000 / (1 << esu))


# Counter CSV


def parse_counter_csv(
    text: str,
    max_range_uj: int = DEFAULT_MAX_RANGE_UJ,
    meta: Optional[Dict[str, str]] = None,
) -> List[EnergyTrace]:
    """One trace per (socket, subdomain), in order of first appearance"""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as e:
        raise CounterFormatError("missing header", element="header", line=1) from e
    if [column.strip() for column in header] != COUNTER_CSV_HEADER:
        raise CounterFormatError(
            f"expected header {','.join(COUNTER_CSV_HEADER)}, got {','.join(header)}",
            element="header",
            line=1,
        )

    grouped: Dict[Tuple[int, Subdomain], List[EnergySample]] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise CounterFormatError(f"expected 4 fields, got {len(row)}", line=line)
        t_text, socket_text, subdomain_text, energy_text = (cell.strip() for cell in row)
        try:
            t = float(t_text)
            socket = int(socket_text)
            subdomain = Subdomain(subdomain_text)
            energy = int(energy_text)
        except ValueError as e:
            raise CounterFormatError(f"malformed row: {e}", line=line) from e
        if not math.isfinite(t):
            raise CounterFormatError(f"non-finite timestamp {t_text}", line=line)
        if socket < 0:
            raise CounterFormatError(f"negative socket {socket}", element="socket", line=line)
        if not 0 <= energy <= max_range_uj:
            raise CounterFormatError(
                f"energy {energy} outside [0, {max_range_uj}]",
                element="energy_uj",
                line=line,
            )

        samples = grouped.setdefault((socket, subdomain), [])
        if samples and not t > samples[-1].t:
            raise CounterFormatError(
                f"timestamp {t_text} does not increase for socket {socket} {subdomain.value}",
                element="t_s",
                line=line,
            )
        samples.append(EnergySample(t=t, raw_uj=energy))

    return [
        EnergyTrace(
            domain=CounterDomain(
                socket=socket, subdomain=subdomain, max_range_uj=max_range_uj
            ),
            samples=tuple(samples),
            meta=dict(meta or {"backend": "counter-csv"}),
        )
        for (socket, subdomain), samples in grouped.items()
    ]


def serialize_counter_csv(traces: List[EnergyTrace]) -> str:
    """Inverse of parse_counter_csv; timestamps use the shortest round-trip repr"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COUNTER_CSV_HEADER)
    for trace in traces:
        for sample in trace.samples:
            writer.writerow(
                [
                    repr(float(sample.t)),
                    trace.domain.socket,
                    trace.domain.subdomain.value,
                    sample.raw_uj,
                ]
            )
    return buffer.getvalue()


def _read_report(path: Path, element: str) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        raise CounterFormatError(f"cannot read {path}: {e}", element=element) from e


def load_counter_csv(path: Path, max_range_uj: int = DEFAULT_MAX_RANGE_UJ) -> List[EnergyTrace]:
    text = _read_report(path, "counter_csv")
    return parse_counter_csv(text, max_range_uj, meta={"backend": "counter-csv", "file": path.name})


# perf stat reports

_PERF_ENERGY_LINE = re.compile(r"^\s*(\S+)\s+Joules\s+(\S+)")
_PERF_NUMBER = re.compile(r"^\d{1,3}(,\d{3})*(\.\d+)?$|^\d+(\.\d+)?$")
_PERF_ELAPSED = re.compile(r"^\s*(\S+)\s+seconds time elapsed")


def _report_number(text: str, line: int) -> float:
    if not _PERF_NUMBER.match(text):
        raise CounterFormatError(f"unparseable number '{text}'", line=line)
    try:
        return float(Decimal(text.replace(",", "")))
    except InvalidOperation as e:
        raise CounterFormatError(f"unparseable number '{text}'", line=line) from e


def parse_perf_energy_output(text: str) -> Dict[str, float]:
    """Map event name -> joules from `perf stat -e power/energy-*/` output"""
    totals: Dict[str, float] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        match = _PERF_ENERGY_LINE.match(line)
        if not match:
            continue
        number, event = match.groups()
        if event in totals:
            raise CounterFormatError(f"duplicate event {event}", line=line_no)
        totals[event] = _report_number(number, line_no)

    if not totals:
        raise CounterFormatError("no '<n> Joules <event>' lines found", element="perf")
    return totals


def parse_perf_elapsed(text: str) -> float:
    for line_no, line in enumerate(text.splitlines(), start=1):
        match = _PERF_ELAPSED.match(line)
        if match:
            return _report_number(match.group(1), line_no)
    raise CounterFormatError("no 'seconds time elapsed' line found", element="perf")


def perf_report_to_traces(text: str, socket: int = 0) -> List[EnergyTrace]:
    """Two-sample traces (0 at t=0, total at t=elapsed) for the energy events perf reported"""
    totals = parse_perf_energy_output(text)
    elapsed = parse_perf_elapsed(text)
    if elapsed <= 0:
        raise CounterFormatError(f"elapsed time must be > 0, got {elapsed}", element="perf")

    traces = []
    for event, joules in totals.items():
        subdomain = next(
            (sub for key, sub in PERF_EVENT_SUBDOMAINS.items() if key in event), None
        )
        if subdomain is None:
            logger.debug(f"Ignoring perf event {event}")
            continue
        total_uj = round(joules * 1_000_000)
        traces.append(
            EnergyTrace(
                domain=CounterDomain(
                    socket=socket,
                    subdomain=subdomain,
                    max_range_uj=max(DEFAULT_MAX_RANGE_UJ, total_uj),
                ),
                samples=(
                    EnergySample(t=0.0, raw_uj=0),
                    EnergySample(t=elapsed, raw_uj=total_uj),
                ),
                meta={"backend": "perf", "event": event},
            )
        )
    return traces


def load_perf_report(path: Path, socket: int = 0) -> List[EnergyTrace]:
    return perf_report_to_traces(_read_report(path, "perf_report"), socket)


# pcm-power reports

_PCM_ENERGY_LINE = re.compile(
    r"^S(?P<socket>\d+); Consumed (?P<dram>DRAM )?energy units: (?P<units>\d+); "
    r"Consumed (?:DRAM )?Joules: (?P<joules>\S+);"
)


def parse_pcm_power_output(
    text: str,
    interval_s: float,
    energy_units: Optional[Dict[Subdomain, int]] = None,
) -> List[EnergyTrace]:
    """
    Cumulative traces from `pcm-power <interval_s>` output, one per (socket, subdomain)

    Every interval prints one line per socket and plane; each line becomes a sample at the
    end of its interval. Planes with an energy-status-unit exponent in `energy_units` are
    converted from the native unit count, the others from the printed joules.
    """
    if interval_s <= 0:
        raise CounterFormatError(f"must be > 0, got {interval_s}", element="pcm_interval_s")
    energy_units = energy_units or {}

    readings: Dict[Tuple[int, Subdomain], List[Tuple[int, float]]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        match = _PCM_ENERGY_LINE.match(line.strip())
        if not match:
            continue
        subdomain = Subdomain.DRAM if match["dram"] else Subdomain.PACKAGE
        joules = _report_number(match["joules"], line_no)
        readings.setdefault((int(match["socket"]), subdomain), []).append(
            (int(match["units"]), joules)
        )

    if not readings:
        raise CounterFormatError("no 'S<n>; Consumed ... energy units' lines found", element="pcm")

    traces = []
    for (socket, subdomain), rows in readings.items():
        esu = energy_units.get(subdomain)
        if esu is not None:
            totals = [
                energy_units_to_uj(units, esu)
                for units in itertools.accumulate(units for units, _ in rows)
            ]
        else:
            totals = list(itertools.accumulate(round(joules * 1_000_000) for _, joules in rows))
        samples = [EnergySample(t=0.0, raw_uj=0)] + [
            EnergySample(t=interval_s * k, raw_uj=total) for k, total in enumerate(totals, start=1)
        ]
        traces.append(
            EnergyTrace(
                domain=CounterDomain(
                    socket=socket,
                    subdomain=subdomain,
                    max_range_uj=max(DEFAULT_MAX_RANGE_UJ, totals[-1]),
                ),
                samples=tuple(samples),
                meta={"backend": "pcm-power", "units": "native" if esu is not None else "joules"},
            )
        )
    return traces


def load_pcm_power(
    path: Path, interval_s: float, energy_units: Optional[Dict[Subdomain, int]] = None
) -> List[EnergyTrace]:
    return parse_pcm_power_output(_read_report(path, "pcm_power"), interval_s, energy_units)


# Synthetic traces


def load_synthetic_model(path: Path) -> SyntheticPowerModel:
    try:
        return SyntheticPowerModel.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read model {path}: {e}", element="synthetic_model") from e
    except ValidationError as e:
        element, message = describe_validation_error(e)
        raise ConfigError(message, element=element) from e


def synthetic_trace(
    model: SyntheticPowerModel,
    kind: str,
    threads: int,
    duration_s: float,
    period_s: float,
    seed: int,
    workload: Optional[str] = None,
    socket: int = 0,
    subdomain: Subdomain = Subdomain.DRAM,
) -> EnergyTrace:
    """
    Cumulative counter samples for P = base_w + slope * threads + noise(seed), one per period

    The counter starts at a seeded origin and wraps at the model's max range, so synthetic
    traces exercise the same unwrap path as recorded ones.
    """
    if duration_s <= 0:
        raise ConfigError(f"must be > 0, got {duration_s}", element="duration_s")
    if period_s <= 0:
        raise ConfigError(f"must be > 0, got {period_s}", element="period_s")
    if threads < 1:
        raise ConfigError(f"must be >= 1, got {threads}", element="threads")
    try:
        params = model.parameters(kind, workload)
    except KeyError as e:
        raise ConfigError(f"unknown kind '{kind}'", element="kind") from e

    max_range = model.max_range_uj
    power_w = params.base_w + params.slope_w_per_thread * threads
    periods = max(1, round(duration_s / period_s))
    if power_w * (duration_s / periods) * 1_000_000 > max_range:
        raise ConfigError(
            f"period too long: more than one counter wrap per sample at {power_w} W",
            element="period_s",
        )

    rng = np.random.default_rng(seed)
    origin = int(rng.integers(0, max_range + 1))
    times = duration_s * np.arange(periods + 1) / periods
    times[-1] = duration_s

    cumulative_j = power_w * times
    if params.noise_sigma_w > 0:
        noise_w = rng.normal(0.0, params.noise_sigma_w, periods)
        noise_j = np.concatenate(([0.0], np.cumsum(noise_w * np.diff(times))))
        cumulative_j = np.maximum.accumulate(np.maximum(cumulative_j + noise_j, 0.0))

    cumulative_uj = np.rint(cumulative_j * 1_000_000)
    modulus = max_range + 1
    samples = tuple(
        EnergySample(t=float(t), raw_uj=(origin + int(uj)) % modulus)
        for t, uj in zip(times, cumulative_uj)
    )
    return EnergyTrace(
        domain=CounterDomain(socket=socket, subdomain=subdomain, max_range_uj=max_range),
        samples=samples,
        meta={
            "backend": "synthetic",
            "kind": kind,
            "threads": str(threads),
            "workload": workload or "",
        },
    )
