#!/usr/bin/env python3
"""
Sampler backends: produce one EnergyTrace per measurement cell

The profiler calls start() right before a cell's execution and stop() right after it.
Synthetic and replay backends build the trace at stop(); the live backend polls
powercap counters in a background task for the duration of the run.
"""

import asyncio
import hashlib
import json
import re
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

from .errors import ConfigError, CounterFormatError, SamplerError
from .models import (
    DEFAULT_MAX_RANGE_UJ,
    BindingPlan,
    CellKey,
    CounterDomain,
    EnergySample,
    EnergyTrace,
    RunHandle,
    Subdomain,
    SyntheticPowerModel,
)
from .sampling import load_counter_csv, load_pcm_power, load_perf_report, synthetic_trace

_PACKAGE_ZONE = re.compile(r"^intel-rapl:\d+$")
_SUB_ZONE = re.compile(r"^intel-rapl:\d+:\d+$")


def derive_cell_seed(seed: int, cell: CellKey) -> int:
    """Per-cell seed so synthetic results do not depend on iteration order"""
    payload = json.dumps([seed, *cell], separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "big")


def cell_filename(cell: CellKey, suffix: str = ".csv") -> str:
    return f"{cell.label}__{cell.kind}__t{cell.threads}__r{cell.rep}{suffix}"


class SamplerBackend(ABC):
    """Acquires the energy trace of one cell"""

    name: str = "sampler"
    subdomain: Subdomain = Subdomain.DRAM

    async def start(self, plan: BindingPlan, cell: CellKey) -> None:
        """Called immediately before the cell executes"""

    @abstractmethod
    async def stop(self, plan: BindingPlan, cell: CellKey, handle: RunHandle) -> EnergyTrace:
        """Called after the cell executed successfully; returns its trace"""

    async def abort(self, plan: BindingPlan, cell: CellKey) -> None:
        """Called instead of stop() when the execution failed"""

    def provenance(self) -> Dict[str, object]:
        return {"backend": self.name}


class SyntheticSampler(SamplerBackend):
    """Integrates a SyntheticPowerModel over the run's duration"""

    name = "synthetic"

    def __init__(
        self,
        model: SyntheticPowerModel,
        seed: int,
        period_s: float = 0.1,
        subdomain: Subdomain = Subdomain.DRAM,
    ):
        if period_s <= 0:
            raise ConfigError(f"must be > 0, got {period_s}", element="sample_period_s")
        self.model = model
        self.seed = seed
        self.period_s = period_s
        self.subdomain = subdomain

    async def stop(self, plan: BindingPlan, cell: CellKey, handle: RunHandle) -> EnergyTrace:
        trace = synthetic_trace(
            self.model,
            kind=plan.target.name,
            threads=plan.workload.threads,
            duration_s=handle.duration_s,
            period_s=self.period_s,
            seed=derive_cell_seed(self.seed, cell),
            workload=cell.label,
            socket=plan.memory_socket,
            subdomain=self.subdomain,
        )
        logger.debug(f"🧪 {cell.label} {cell.kind} t={cell.threads}: {len(trace.samples)} samples")
        return trace

    def provenance(self) -> Dict[str, object]:
        return {
            "backend": self.name,
            "seed": self.seed,
            "model_hash": self.model.config_hash(),
        }


class ReplaySampler(SamplerBackend):
    """
    Replays one recorded report per cell from a directory

    Reports may cover several sockets; the trace of the socket holding the plan's memory
    node is the one attributed to the cell.
    """

    config_key: str = "replay"
    suffix: str = ".csv"

    def __init__(self, directory: Path, subdomain: Subdomain = Subdomain.DRAM):
        if not directory.is_dir():
            raise ConfigError(f"directory not found: {directory}", element=self.config_key)
        self.directory = directory
        self.subdomain = subdomain

    @abstractmethod
    def load(self, path: Path, plan: BindingPlan) -> List[EnergyTrace]:
        """Parse one report into traces"""

    async def stop(self, plan: BindingPlan, cell: CellKey, handle: RunHandle) -> EnergyTrace:
        path = self.directory / cell_filename(cell, self.suffix)
        if not path.is_file():
            raise SamplerError(f"no recorded counters for this cell: {path.name}")

        try:
            traces = self.load(path, plan)
        except CounterFormatError as e:
            raise SamplerError(f"{path.name}: {e}") from e

        socket = plan.memory_socket
        for trace in traces:
            if trace.domain.socket == socket and trace.domain.subdomain == self.subdomain:
                return trace
        raise SamplerError(
            f"{path.name}: no {self.subdomain.value} counter for socket {socket}"
        )

    def provenance(self) -> Dict[str, object]:
        return {"backend": self.name, "source": str(self.directory)}


class CounterCsvSampler(ReplaySampler):
    """Replays recorded counter CSVs"""

    name = "counter-csv"
    config_key = "counter_csv"

    def __init__(
        self,
        directory: Path,
        subdomain: Subdomain = Subdomain.DRAM,
        max_range_uj: int = DEFAULT_MAX_RANGE_UJ,
    ):
        super().__init__(directory, subdomain)
        self.max_range_uj = max_range_uj

    def load(self, path: Path, plan: BindingPlan) -> List[EnergyTrace]:
        return load_counter_csv(path, self.max_range_uj)


class PerfReportSampler(ReplaySampler):
    """Replays saved `perf stat -e power/energy-*/` reports"""

    name = "perf-report"
    config_key = "perf_report"
    suffix = ".perf.txt"

    def load(self, path: Path, plan: BindingPlan) -> List[EnergyTrace]:
        # perf sums the plane over every socket; attribute it to the memory node's socket
        return load_perf_report(path, plan.memory_socket)


class PcmPowerSampler(ReplaySampler):
    """Replays saved pcm-power interval reports"""

    name = "pcm-power"
    config_key = "pcm_power"
    suffix = ".pcm.txt"

    def __init__(
        self,
        directory: Path,
        interval_s: float,
        subdomain: Subdomain = Subdomain.DRAM,
        energy_units: Optional[Dict[Subdomain, int]] = None,
    ):
        if interval_s <= 0:
            raise ConfigError(f"must be > 0, got {interval_s}", element="pcm_interval_s")
        super().__init__(directory, subdomain)
        self.interval_s = interval_s
        self.energy_units = dict(energy_units or {})

    def load(self, path: Path, plan: BindingPlan) -> List[EnergyTrace]:
        return load_pcm_power(path, self.interval_s, self.energy_units)

    def provenance(self) -> Dict[str, object]:
        return {
            **super().provenance(),
            "interval_s": self.interval_s,
            "energy_units": {sub.value: esu for sub, esu in sorted(self.energy_units.items())},
        }


def _read_int(path: Path) -> int:
    try:
        return int(path.read_text().strip())
    except (OSError, ValueError) as e:
        raise SamplerError(f"cannot read {path}: {e}") from e


def _zone_name(zone: Path) -> str:
    try:
        return (zone / "name").read_text().strip()
    except OSError:
        return ""


def find_rapl_zone(powercap_path: Path, socket: int, subdomain: Subdomain) -> Path:
    """The powercap zone counting `subdomain` energy of one socket"""
    packages = [
        zone
        for zone in sorted(powercap_path.glob("intel-rapl:*"))
        if _PACKAGE_ZONE.match(zone.name) and _zone_name(zone) == f"package-{socket}"
    ]
    if not packages:
        raise SamplerError(f"no powercap package zone for socket {socket} under {powercap_path}")
    package = packages[0]
    if subdomain == Subdomain.PACKAGE:
        return package

    for zone in sorted(package.glob("intel-rapl:*")):
        if _SUB_ZONE.match(zone.name) and _zone_name(zone) == "dram":
            return zone
    raise SamplerError(f"no dram zone under {package}")


class LiveRaplSampler(SamplerBackend):
    """Polls powercap energy_uj of the memory node's socket while the workload runs"""

    name = "live"

    def __init__(
        self,
        powercap_path: Path,
        period_s: float = 0.1,
        subdomain: Subdomain = Subdomain.DRAM,
    ):
        if period_s <= 0:
            raise ConfigError(f"must be > 0, got {period_s}", element="sample_period_s")
        self.powercap_path = powercap_path
        self.period_s = period_s
        self.subdomain = subdomain
        self._samples: List[EnergySample] = []
        self._task: Optional[asyncio.Task] = None
        self._zone: Optional[Path] = None

    def available(self, socket: int = 0) -> bool:
        try:
            zone = find_rapl_zone(self.powercap_path, socket, self.subdomain)
            _read_int(zone / "energy_uj")
        except SamplerError as e:
            logger.info(f"Powercap counters unavailable: {e}")
            return False
        return True

    def _record(self) -> None:
        assert self._zone is not None
        t = time.monotonic()
        raw = _read_int(self._zone / "energy_uj")
        if self._samples and t <= self._samples[-1].t:
            return
        self._samples.append(EnergySample(t=t, raw_uj=raw))

    async def _poll(self) -> None:
        while True:
            await asyncio.sleep(self.period_s)
            try:
                self._record()
            except SamplerError as e:
                logger.warning(f"⚠️ Dropped counter sample: {e}")

    async def start(self, plan: BindingPlan, cell: CellKey) -> None:
        self._zone = find_rapl_zone(self.powercap_path, plan.memory_socket, self.subdomain)
        self._samples = []
        self._record()
        self._task = asyncio.create_task(self._poll())

    async def _cancel(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None

    async def stop(self, plan: BindingPlan, cell: CellKey, handle: RunHandle) -> EnergyTrace:
        if self._zone is None:
            raise SamplerError("stop() called before start()")
        await self._cancel()
        self._record()

        max_file = self._zone / "max_energy_range_uj"
        max_range = _read_int(max_file) if max_file.exists() else DEFAULT_MAX_RANGE_UJ
        return EnergyTrace(
            domain=CounterDomain(
                socket=plan.memory_socket,
                subdomain=self.subdomain,
                max_range_uj=max_range,
            ),
            samples=tuple(self._samples),
            meta={"backend": self.name, "zone": str(self._zone), "workload": cell.label},
        )

    async def abort(self, plan: BindingPlan, cell: CellKey) -> None:
        await self._cancel()
        self._samples = []

    def provenance(self) -> Dict[str, object]:
        return {"backend": self.name, "powercap_path": str(self.powercap_path)}
