#!/usr/bin/env python3
"""
Pydantic models for the heterogeneous-memory power profiler
Defines topology, binding, energy trace, result and analysis schemas with validation
"""

import hashlib
import json
import math
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Literal, NamedTuple, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveInt,
    field_serializer,
    model_validator,
)

from .kernels import KERNEL_IDS

DEFAULT_MAX_RANGE_UJ = 2**32 - 1

# Exported to every launched workload and rendered in its directive
APP_ENV_VAR = "HMS_APP"
SIZE_ENV_VAR = "HMS_SIZE"


class Technology(str, Enum):
    DRAM = "DRAM"
    NVM = "NVM"
    HBM = "HBM"
    CXL = "CXL"
    UNKNOWN = "UNKNOWN"


class Locality(str, Enum):
    LOCAL = "LOCAL"
    REMOTE = "REMOTE"


class BindPolicy(str, Enum):
    STRICT_BIND = "STRICT_BIND"


class Subdomain(str, Enum):
    PACKAGE = "PACKAGE"
    DRAM = "DRAM"


# Topology


class NumaNode(BaseModel):
    """One OS-visible memory region; empty local_cpus means memory-only"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    id: NonNegativeInt
    socket: NonNegativeInt
    local_cpus: FrozenSet[NonNegativeInt] = Field(alias="cpus")
    technology: Technology
    capacity_bytes: Optional[NonNegativeInt] = None

    @field_serializer("local_cpus")
    def _sorted_cpus(self, cpus: FrozenSet[int]) -> List[int]:
        return sorted(cpus)

    @property
    def memory_only(self) -> bool:
        return not self.local_cpus


class Topology(BaseModel):
    """Sockets, NUMA nodes and the node distance matrix (indexed by node position)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sockets: PositiveInt
    nodes: Tuple[NumaNode, ...]
    distances: Tuple[Tuple[PositiveInt, ...], ...]

    @model_validator(mode="after")
    def _check_invariants(self) -> "Topology":
        if not self.nodes:
            raise ValueError("nodes: at least one node is required")

        seen_ids = set()
        for node in self.nodes:
            if node.id in seen_ids:
                raise ValueError(f"nodes: duplicate node id {node.id}")
            seen_ids.add(node.id)
            if node.socket >= self.sockets:
                raise ValueError(
                    f"nodes: node {node.id} refers to socket {node.socket} "
                    f"but only {self.sockets} socket(s) exist"
                )

        owner: Dict[int, int] = {}
        for node in self.nodes:
            for cpu in node.local_cpus:
                if cpu in owner:
                    raise ValueError(
                        f"nodes: cpu {cpu} listed in node {owner[cpu]} and node {node.id}"
                    )
                owner[cpu] = node.id

        if not owner:
            raise ValueError("nodes: at least one node must have local cpus")

        n = len(self.nodes)
        if len(self.distances) != n or any(len(row) != n for row in self.distances):
            raise ValueError(
                f"distances: expected a {n}x{n} matrix, got "
                f"{len(self.distances)} row(s) of lengths "
                f"{[len(row) for row in self.distances]}"
            )
        for i, row in enumerate(self.distances):
            if row[i] > min(row):
                raise ValueError(
                    f"distances: self-distance of row {i} ({row[i]}) is not minimal"
                )
        return self

    def node(self, node_id: int) -> NumaNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def socket_cpus(self, socket: int) -> FrozenSet[int]:
        cpus: set = set()
        for node in self.nodes:
            if node.socket == socket:
                cpus |= node.local_cpus
        return frozenset(cpus)

    @property
    def memory_only_nodes(self) -> List[NumaNode]:
        return [node for node in self.nodes if node.memory_only]


class MemoryTarget(BaseModel):
    """A profile-addressable memory kind: one node seen from a home socket"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    node_id: NonNegativeInt
    home_socket: NonNegativeInt
    locality: Locality
    technology: Technology


# Binding


class WorkloadSpec(BaseModel):
    """An application run at one thread count: external command or builtin kernel"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    name: str = Field(min_length=1)
    size_label: str = Field(alias="size")
    threads: PositiveInt
    command: Optional[Tuple[str, ...]] = None
    builtin: Optional[str] = None
    env: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _one_launch_mode(self) -> "WorkloadSpec":
        if (self.command is None) == (self.builtin is None):
            raise ValueError("exactly one of command / builtin must be set")
        if self.command is not None and not self.command:
            raise ValueError("command must not be empty")
        if self.builtin is not None and self.builtin not in KERNEL_IDS:
            raise ValueError(
                f"unknown builtin kernel '{self.builtin}' (known: {', '.join(KERNEL_IDS)})"
            )
        if self.command is not None and "=" in self.command[0]:
            raise ValueError(f"program name must not contain '=': {self.command[0]!r}")
        for key in self.env:
            if not key or "=" in key:
                raise ValueError(f"invalid environment variable name {key!r}")
            if key in (APP_ENV_VAR, SIZE_ENV_VAR):
                raise ValueError(f"{key} is set by the launcher")
        return self

    @property
    def label(self) -> str:
        return f"{self.name}.{self.size_label}"

    @property
    def launch_env(self) -> Dict[str, str]:
        """Variables exported on top of the thread count"""
        return {APP_ENV_VAR: self.name, SIZE_ENV_VAR: self.size_label, **self.env}

    @property
    def argv(self) -> Tuple[str, ...]:
        """Argument vector as rendered in directives"""
        if self.command is not None:
            return self.command
        return (f"builtin:{self.builtin}",)


class BindingPlan(BaseModel):
    """CPU set and memory node set that confine a whole process to one memory kind"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    workload: WorkloadSpec
    target: MemoryTarget
    cpu_set: FrozenSet[NonNegativeInt]
    memory_nodes: FrozenSet[NonNegativeInt]
    # socket whose memory-plane counter sees the bound pages
    memory_socket: NonNegativeInt
    policy: BindPolicy = BindPolicy.STRICT_BIND

    @model_validator(mode="after")
    def _check_sets(self) -> "BindingPlan":
        if not self.cpu_set:
            raise ValueError("cpu_set must not be empty")
        if self.memory_nodes != frozenset({self.target.node_id}):
            raise ValueError(
                f"memory_nodes must be {{{self.target.node_id}}}, got {sorted(self.memory_nodes)}"
            )
        if (self.memory_socket == self.target.home_socket) != (self.target.locality == Locality.LOCAL):
            raise ValueError(
                f"memory_socket {self.memory_socket} contradicts {self.target.locality.value} target"
            )
        return self

    @field_serializer("cpu_set", "memory_nodes")
    def _sorted_sets(self, values: FrozenSet[int]) -> List[int]:
        return sorted(values)


class RunHandle(BaseModel):
    """Outcome of one execution; nonzero exit codes are kept, not raised"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    adapter: str
    directive: str
    argv: Tuple[str, ...]
    started_at: float
    finished_at: float
    duration_s: float = Field(ge=0)
    exit_code: int
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and self.error is None


# Sampling


class CounterDomain(BaseModel):
    """A per-socket cumulative energy counter (normalized to microjoules)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    socket: NonNegativeInt
    subdomain: Subdomain
    unit: Literal["uJ"] = "uJ"
    max_range_uj: PositiveInt = DEFAULT_MAX_RANGE_UJ


class EnergySample(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    t: float
    raw_uj: NonNegativeInt


class EnergyTrace(BaseModel):
    """Ordered cumulative-energy samples for one counter domain"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    domain: CounterDomain
    samples: Tuple[EnergySample, ...] = ()
    meta: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_samples(self) -> "EnergyTrace":
        previous: Optional[float] = None
        for i, sample in enumerate(self.samples):
            if sample.raw_uj > self.domain.max_range_uj:
                raise ValueError(
                    f"samples[{i}]: raw_uj {sample.raw_uj} exceeds max_range_uj "
                    f"{self.domain.max_range_uj}"
                )
            if previous is not None and not sample.t > previous:
                raise ValueError(
                    f"samples[{i}]: timestamp {sample.t} does not increase (previous {previous})"
                )
            previous = sample.t
        return self


class KindParameters(BaseModel):
    """Linear-in-threads power with gaussian noise"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_w: float = Field(ge=0)
    slope_w_per_thread: float = 0.0
    noise_sigma_w: float = Field(default=0.0, ge=0)


class SyntheticPowerModel(BaseModel):
    """Per-kind parameters with optional per-workload (<app>.<size>) overrides"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kinds: Dict[str, KindParameters] = Field(default_factory=dict)
    workloads: Dict[str, Dict[str, KindParameters]] = Field(default_factory=dict)
    max_range_uj: PositiveInt = DEFAULT_MAX_RANGE_UJ

    def parameters(self, kind: str, workload: Optional[str] = None) -> KindParameters:
        if workload is not None and kind in self.workloads.get(workload, {}):
            return self.workloads[workload][kind]
        if kind in self.kinds:
            return self.kinds[kind]
        raise KeyError(kind)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, first 16 hex chars"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# Profiling


class CellKey(NamedTuple):
    """Identity of one measurement cell in the matrix"""

    app: str
    size: str
    kind: str
    threads: int
    rep: int

    @property
    def label(self) -> str:
        return f"{self.app}.{self.size}"


class ProfileRecord(BaseModel):
    """One (application, memory kind, thread count, repetition) measurement"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    app: str
    size_label: str = Field(alias="size")
    kind: str
    threads: PositiveInt
    rep: NonNegativeInt
    duration_s: float = Field(gt=0)
    energy_j: float = Field(ge=0)
    avg_power_w: float = Field(ge=0)
    socket: NonNegativeInt
    subdomain: Subdomain

    @model_validator(mode="after")
    def _power_matches_energy(self) -> "ProfileRecord":
        expected = self.energy_j / self.duration_s
        if not math.isclose(self.avg_power_w, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(
                f"avg_power_w {self.avg_power_w} != energy_j/duration_s {expected}"
            )
        return self

    @property
    def label(self) -> str:
        return f"{self.app}.{self.size_label}"

    @property
    def key(self) -> Tuple[str, str, str, int, int]:
        return (self.app, self.size_label, self.kind, self.threads, self.rep)

    @property
    def domain(self) -> Tuple[int, Subdomain]:
        return (self.socket, self.subdomain)


class ResultSet(BaseModel):
    """Records plus provenance (backend, topology, failures, statistics)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    records: Tuple[ProfileRecord, ...] = ()
    provenance: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _unique_keys(self) -> "ResultSet":
        seen = set()
        for record in self.records:
            if record.key in seen:
                raise ValueError(f"duplicate record key {record.key}")
            seen.add(record.key)
        return self

    @property
    def failures(self) -> List[Dict[str, Any]]:
        return list(self.provenance.get("failures", []))

    @property
    def kinds(self) -> List[str]:
        return list(dict.fromkeys(record.kind for record in self.records))


# Analysis


class Ranking(BaseModel):
    """Tie-aware ascending-power ordering of memory kinds for one application"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    app: str
    size_label: str = Field(alias="size")
    threads: PositiveInt
    groups: Tuple[Tuple[str, ...], ...]
    values: Dict[str, float]

    @model_validator(mode="after")
    def _groups_partition_kinds(self) -> "Ranking":
        flat = [kind for group in self.groups for kind in group]
        if len(flat) != len(set(flat)):
            raise ValueError("groups must be disjoint")
        if set(flat) != set(self.values):
            raise ValueError("groups must cover exactly the ranked kinds")
        if any(not group for group in self.groups):
            raise ValueError("groups must not be empty")
        return self

    @property
    def label(self) -> str:
        return f"{self.app}.{self.size_label}"

    @property
    def order(self) -> List[str]:
        return [kind for group in self.groups for kind in group]


class AggregateRanking(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: str = "mean fractional rank"
    # shared thread count of the aggregated rankings, None when they mix thread counts
    threads: Optional[PositiveInt] = None
    mean_rank: Dict[str, float]
    mean_watts: Dict[str, float]
    order: Tuple[str, ...]


class PowerModel(BaseModel):
    """Ordinary least squares fit of average watts against thread count"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: str
    intercept_w: float
    slope_w_per_thread: float
    r2: float = Field(ge=0, le=1)
    min_threads: PositiveInt
    max_threads: PositiveInt
    n_points: int = Field(ge=2)


class Prediction(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    threads: PositiveInt
    watts: float
    extrapolated: bool


class SecondRankEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    app: str
    size_label: str = Field(alias="size")
    threads: PositiveInt
    second: Optional[Tuple[str, ...]] = None


class SecondRankReport(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    consistent: bool
    entries: Tuple[SecondRankEntry, ...]
    insufficient: Tuple[str, ...] = ()


class TradeoffBounds(BaseModel):
    """Min/max of power and runtime across the kinds of one application"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    power_min: float
    power_max: float
    runtime_min: float
    runtime_max: float

    @model_validator(mode="after")
    def _ordered(self) -> "TradeoffBounds":
        if self.power_max < self.power_min or self.runtime_max < self.runtime_min:
            raise ValueError("bounds must satisfy max >= min")
        return self


class TradeoffEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: str
    power_w: float
    runtime_s: float
    score: float


class TradeoffTable(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    app: str
    size_label: str = Field(alias="size")
    threads: PositiveInt
    weight_power: float
    entries: Tuple[TradeoffEntry, ...]


class ThreadTrend(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    app: str
    size_label: str = Field(alias="size")
    kind: str
    rho: Optional[float] = None
    model: PowerModel


class SavingsRow(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    app: str
    size_label: str = Field(alias="size")
    threads: PositiveInt
    reference: str
    savings: Dict[str, float]


class AnalysisReport(BaseModel):
    """Structured analysis document emitted by `analyze`"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tie_rel_tol: float
    reference_kind: Optional[str] = None
    rankings: Tuple[Ranking, ...] = ()
    aggregates: Tuple[AggregateRanking, ...] = ()
    trends: Tuple[ThreadTrend, ...] = ()
    savings: Tuple[SavingsRow, ...] = ()
    second_rank: Optional[SecondRankReport] = None
    tradeoff: Tuple[TradeoffTable, ...] = ()
    failures: Tuple[Dict[str, Any], ...] = ()


# Run configuration


class WorkloadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    name: str = Field(min_length=1)
    size_label: str = Field(alias="size")
    threads: Tuple[PositiveInt, ...] = Field(min_length=1)
    command: Optional[Tuple[str, ...]] = None
    builtin: Optional[str] = None
    env: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _valid_launch(self) -> "WorkloadConfig":
        self.at(self.threads[0])
        return self

    def at(self, threads: int) -> WorkloadSpec:
        return WorkloadSpec(
            name=self.name,
            size_label=self.size_label,
            threads=threads,
            command=self.command,
            builtin=self.builtin,
            env=self.env,
        )


class BackendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    synthetic_model: Optional[str] = None
    counter_csv: Optional[str] = None
    perf_report: Optional[str] = None
    pcm_power: Optional[str] = None
    live: bool = False
    pcm_interval_s: float = Field(default=1.0, gt=0)
    # raw MSR_RAPL_POWER_UNIT value; its energy-status unit applies to the package plane
    rapl_power_unit: Optional[NonNegativeInt] = None
    dram_energy_unit: Optional[int] = Field(default=None, ge=0, le=31)

    def _choices(self) -> List[Tuple[str, bool]]:
        return [
            ("synthetic", self.synthetic_model is not None),
            ("counter-csv", self.counter_csv is not None),
            ("perf-report", self.perf_report is not None),
            ("pcm-power", self.pcm_power is not None),
            ("live", self.live),
        ]

    @model_validator(mode="after")
    def _exactly_one(self) -> "BackendConfig":
        if sum(selected for _, selected in self._choices()) != 1:
            raise ValueError(
                "exactly one backend (synthetic_model, counter_csv, perf_report, pcm_power, live)"
                " must be selected"
            )
        return self

    @property
    def name(self) -> str:
        return next(name for name, selected in self._choices() if selected)


class RunConfig(BaseModel):
    """Everything `profile` needs to run a measurement matrix"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    fixture: Optional[str] = None
    snapshot: Optional[str] = None
    home_socket: NonNegativeInt = 0
    targets: Optional[Tuple[str, ...]] = None
    workloads: Tuple[WorkloadConfig, ...] = Field(min_length=1)
    backend: BackendConfig
    reps: PositiveInt = 1
    seed: Optional[int] = None
    tie_tol_percent: float = Field(default=1.0, ge=0)
    subdomain: Subdomain = Subdomain.DRAM
    output: Optional[str] = None
    dry_run_duration_s: Optional[float] = Field(default=None, gt=0)
    sample_period_s: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_sources(self) -> "RunConfig":
        if (self.fixture is None) == (self.snapshot is None):
            raise ValueError("exactly one of fixture / snapshot must be set")
        if self.backend.synthetic_model is not None and self.seed is None:
            raise ValueError("seed is required for the synthetic backend")
        return self
