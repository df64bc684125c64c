#!/usr/bin/env python3
"""
Topology snapshots: loading, validation, live discovery and memory-target enumeration
"""

import json
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from loguru import logger
from pydantic import ValidationError

from .errors import TopologyError, describe_validation_error
from .models import Locality, MemoryTarget, NumaNode, Technology, Topology

FIXTURES_DIR = Path(__file__).parent / "fixtures"

TOPOLOGY_FIXTURES = {
    "paper-machine": "paper-machine.json",
    "single-node": "single-node.json",
}


def parse_cpu_list(text: str) -> List[int]:
    """Parse the sysfs cpulist grammar ("0-3,8,10-11") into sorted CPU indices"""
    cpus = set()
    for part in text.strip().split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            start, end = part.split("-", 1)
            lo, hi = int(start), int(end)
            if hi < lo:
                raise ValueError(f"descending cpu range '{part}'")
            cpus.update(range(lo, hi + 1))
        else:
            cpus.add(int(part))
    return sorted(cpus)


def format_cpu_list(cpus: Iterable[int]) -> str:
    """Compress CPU indices into ranges: {0,1,2,5} -> "0-2,5" """
    ordered = sorted(set(cpus))
    if not ordered:
        return ""
    ranges = []
    start = prev = ordered[0]
    for cpu in ordered[1:]:
        if cpu == prev + 1:
            prev = cpu
            continue
        ranges.append(f"{start}-{prev}" if prev != start else f"{start}")
        start = prev = cpu
    ranges.append(f"{start}-{prev}" if prev != start else f"{start}")
    return ",".join(ranges)


def load_topology_snapshot(text: str) -> Topology:
    """Parse and validate a snapshot document"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise TopologyError(
            f"not valid JSON: {e.msg}", element="snapshot", line=e.lineno
        ) from e
    if not isinstance(data, dict):
        raise TopologyError("top level must be an object", element="snapshot")

    try:
        topo = Topology.model_validate(data)
    except ValidationError as e:
        element, message = describe_validation_error(e)
        raise TopologyError(message, element=element) from e

    logger.debug(
        f"Loaded topology: {topo.sockets} socket(s), {len(topo.nodes)} node(s), "
        f"{len(topo.memory_only_nodes)} memory-only"
    )
    return topo


def serialize_topology(topo: Topology) -> str:
    """Canonical snapshot text; load_topology_snapshot(serialize_topology(t)) == t"""
    payload = topo.model_dump(mode="json", by_alias=True, exclude_none=True)
    return json.dumps(payload, indent=2) + "\n"


def load_fixture_topology(name: str) -> Topology:
    """Load one of the bundled snapshots by name"""
    if name not in TOPOLOGY_FIXTURES:
        raise TopologyError(
            f"unknown fixture '{name}' (available: {', '.join(sorted(TOPOLOGY_FIXTURES))})",
            element="fixture",
        )
    path = FIXTURES_DIR / TOPOLOGY_FIXTURES[name]
    return load_topology_snapshot(path.read_text(encoding="utf-8"))


def load_topology_file(path: str) -> Topology:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise TopologyError(f"cannot read snapshot {path}: {e}", element="snapshot") from e
    return load_topology_snapshot(text)


def enumerate_targets(topo: Topology, home_socket: int) -> List[MemoryTarget]:
    """One memory target per node, LOCAL before REMOTE, then ascending node id"""
    if home_socket < 0 or home_socket >= topo.sockets:
        raise TopologyError(
            f"unknown socket {home_socket} (topology has {topo.sockets})",
            element="home_socket",
        )
    if not topo.socket_cpus(home_socket):
        raise TopologyError(
            f"socket {home_socket} has no local cpus", element="home_socket"
        )

    def locality_of(node: NumaNode) -> Locality:
        return Locality.LOCAL if node.socket == home_socket else Locality.REMOTE

    def base_name(node: NumaNode) -> str:
        prefix = "Local" if locality_of(node) is Locality.LOCAL else "Remote"
        return f"{prefix}{node.technology.value}"

    ordered = sorted(
        topo.nodes,
        key=lambda node: (locality_of(node) is not Locality.LOCAL, node.id),
    )
    counts: Dict[str, int] = {}
    for node in ordered:
        counts[base_name(node)] = counts.get(base_name(node), 0) + 1

    targets = []
    for node in ordered:
        name = base_name(node)
        if counts[name] > 1:
            name = f"{name}{node.id}"
        targets.append(
            MemoryTarget(
                name=name,
                node_id=node.id,
                home_socket=home_socket,
                locality=locality_of(node),
                technology=node.technology,
            )
        )
    return targets


def select_targets(
    targets: List[MemoryTarget], names: Optional[Iterable[str]]
) -> List[MemoryTarget]:
    """Keep the named targets (in enumeration order); None keeps all"""
    if names is None:
        return list(targets)
    wanted = list(names)
    known = {target.name for target in targets}
    unknown = [name for name in wanted if name not in known]
    if unknown:
        raise TopologyError(
            f"unknown target(s) {', '.join(unknown)} (available: {', '.join(sorted(known))})",
            element="targets",
        )
    return [target for target in targets if target.name in wanted]


# Live discovery (sysfs)


def _read(path: Path) -> Optional[str]:
    try:
        return path.read_text(encoding="utf-8").strip()
    except OSError:
        return None


def _mem_total_bytes(meminfo: Optional[str]) -> Optional[int]:
    if not meminfo:
        return None
    match = re.search(r"MemTotal:\s+(\d+)\s*kB", meminfo)
    return int(match.group(1)) * 1024 if match else None


def read_live_topology(
    node_root: str = "/sys/devices/system/node",
    cpu_root: str = "/sys/devices/system/cpu",
    technology_labels: Optional[Dict[int, Technology]] = None,
) -> Topology:
    """Build a Topology from sysfs; technologies come from labels only (default UNKNOWN)"""
    root = Path(node_root)
    if not root.is_dir():
        raise TopologyError(f"NUMA sysfs not available at {node_root}", element="live")

    node_ids = sorted(
        int(entry.name[4:])
        for entry in root.iterdir()
        if entry.name.startswith("node") and entry.name[4:].isdigit()
    )
    if not node_ids:
        raise TopologyError(f"no NUMA nodes under {node_root}", element="live")

    labels = technology_labels or {}
    cpus_by_node: Dict[int, List[int]] = {}
    distances: List[List[int]] = []
    capacity: Dict[int, Optional[int]] = {}
    for node_id in node_ids:
        node_dir = root / f"node{node_id}"
        cpulist = _read(node_dir / "cpulist") or ""
        try:
            cpus_by_node[node_id] = parse_cpu_list(cpulist)
        except ValueError as e:
            raise TopologyError(
                f"bad cpulist for node {node_id}: {e}", element="live"
            ) from e
        row = (_read(node_dir / "distance") or "").split()
        distances.append([int(value) for value in row])
        capacity[node_id] = _mem_total_bytes(_read(node_dir / "meminfo"))

    packages: Dict[int, int] = {}
    for node_id, cpus in cpus_by_node.items():
        if not cpus:
            continue
        package = _read(
            Path(cpu_root) / f"cpu{cpus[0]}" / "topology" / "physical_package_id"
        )
        packages[node_id] = int(package) if package is not None else 0

    if not packages:
        raise TopologyError("no node has local cpus", element="live")

    socket_index = {pkg: i for i, pkg in enumerate(sorted(set(packages.values())))}
    position = {node_id: i for i, node_id in enumerate(node_ids)}

    nodes = []
    for node_id in node_ids:
        if node_id in packages:
            socket = socket_index[packages[node_id]]
        else:
            # memory-only node: attach to the nearest cpu-bearing node
            row = distances[position[node_id]]
            nearest = min(
                packages,
                key=lambda other: (
                    row[position[other]] if position[other] < len(row) else 1 << 30,
                    other,
                ),
            )
            socket = socket_index[packages[nearest]]
        nodes.append(
            NumaNode(
                id=node_id,
                socket=socket,
                local_cpus=frozenset(cpus_by_node[node_id]),
                technology=labels.get(node_id, Technology.UNKNOWN),
                capacity_bytes=capacity[node_id],
            )
        )

    try:
        topo = Topology(
            sockets=len(socket_index),
            nodes=tuple(nodes),
            distances=tuple(tuple(row) for row in distances),
        )
    except ValidationError as e:
        element, message = describe_validation_error(e)
        raise TopologyError(message, element=element) from e

    logger.info(
        f"🔎 Discovered {len(topo.nodes)} NUMA node(s) on {topo.sockets} socket(s)"
    )
    return topo
