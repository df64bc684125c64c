#!/usr/bin/env python3
"""
Binding plans: confine a whole process's CPUs and pages to realize one memory kind

CPUs always stay on the target's home socket; only the memory side moves. Binding a
home-socket process to another socket's DRAM node is how remote DRAM is emulated.
"""

import shlex
import sys
from typing import TYPE_CHECKING, List

from loguru import logger

from .errors import AdapterUnavailableError, PlanError
from .models import BindingPlan, Locality, MemoryTarget, RunHandle, Topology, WorkloadSpec
from .topology import format_cpu_list

if TYPE_CHECKING:
    from .launchers import ExecutionAdapter


def plan_binding(
    topo: Topology, target: MemoryTarget, workload: WorkloadSpec
) -> BindingPlan:
    """Strict-bind plan: all home-socket CPUs, memory on the target node only"""
    try:
        node = topo.node(target.node_id)
    except KeyError as e:
        raise PlanError(f"target node {target.node_id} is not in the topology") from e

    if (node.socket == target.home_socket) != (target.locality == Locality.LOCAL):
        raise PlanError(
            f"target {target.name} is {target.locality.value} but node {node.id} "
            f"sits on socket {node.socket}"
        )

    if target.home_socket >= topo.sockets:
        raise PlanError(f"home socket {target.home_socket} is not in the topology")

    cpus = topo.socket_cpus(target.home_socket)
    if not cpus:
        raise PlanError(f"home socket {target.home_socket} has no cpus")

    return BindingPlan(
        workload=workload,
        target=target,
        cpu_set=cpus,
        memory_nodes=frozenset({target.node_id}),
        memory_socket=node.socket,
    )


def plan_all(
    topo: Topology, targets: List[MemoryTarget], workload: WorkloadSpec
) -> List[BindingPlan]:
    return [plan_binding(topo, target, workload) for target in targets]


def render_plan(plan: BindingPlan) -> str:
    """
    Canonical launcher directive, byte-identical for equal plans

    The command is prefixed with `env` and the exported variables in sorted order, so
    plans differing only in workload identity or environment render differently.
    """
    membind = ",".join(str(node) for node in sorted(plan.memory_nodes))
    exported = [f"{key}={value}" for key, value in sorted(plan.workload.launch_env.items())]
    return (
        f"policy={plan.policy.value} "
        f"cpus={format_cpu_list(plan.cpu_set)} "
        f"membind={membind} "
        f"threads={plan.workload.threads} "
        f"cmd={shlex.join(['env', *exported, *plan.workload.argv])}"
    )


def launch_argv(workload: WorkloadSpec) -> List[str]:
    """The program the live launcher actually starts"""
    if workload.command is not None:
        return list(workload.command)
    return [
        sys.executable,
        "-m",
        "src.kernels",
        str(workload.builtin),
        "--threads",
        str(workload.threads),
    ]


def build_argv(plan: BindingPlan, numactl: str = "numactl") -> List[str]:
    """numactl invocation realizing the plan"""
    membind = ",".join(str(node) for node in sorted(plan.memory_nodes))
    return [
        numactl,
        f"--physcpubind={format_cpu_list(plan.cpu_set)}",
        f"--membind={membind}",
        "--",
        *launch_argv(plan.workload),
    ]


async def execute(plan: BindingPlan, adapter: "ExecutionAdapter") -> RunHandle:
    """Run the plan through an adapter; nonzero exits come back in the handle"""
    if not adapter.available():
        raise AdapterUnavailableError(
            f"adapter unavailable: {adapter.name} cannot run on this host"
        )

    logger.debug(f"▶️ {adapter.name}: {render_plan(plan)}")
    handle = await adapter.run(plan)
    if not handle.ok:
        logger.warning(
            f"⚠️ {plan.workload.label} on {plan.target.name} exited with "
            f"{handle.exit_code}: {handle.error}"
        )
    return handle
