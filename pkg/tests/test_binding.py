#!/usr/bin/env python3
"""
Tests for binding plans, directives and plan execution
"""

import sys

import pytest

from src.binding import build_argv, execute, launch_argv, plan_all, plan_binding, render_plan
from src.errors import AdapterUnavailableError, PlanError
from src.launchers import DryRunAdapter
from src.models import Locality, MemoryTarget, Technology, WorkloadSpec
from src.topology import enumerate_targets, load_fixture_topology


class TestPlanBinding:
    """Test strict-bind plan construction"""

    def setup_method(self):
        """Set up test fixtures"""
        self.topo = load_fixture_topology("paper-machine")
        self.targets = {t.name: t for t in enumerate_targets(self.topo, 0)}
        self.workload = WorkloadSpec(
            name="BT", size_label="A", threads=18, command=("./bin/bt.A.x",)
        )

    def test_local_nvm_plan(self):
        """Test local NVM keeps home-socket CPUs and binds memory to node 2"""
        # Act
        plan = plan_binding(self.topo, self.targets["LocalNVM"], self.workload)

        # Assert
        assert plan.cpu_set == frozenset(range(18))
        assert plan.memory_nodes == frozenset({2})

    def test_remote_dram_emulation(self):
        """Test remote DRAM keeps socket 0 CPUs while memory moves to node 1"""
        plan = plan_binding(self.topo, self.targets["RemoteDRAM"], self.workload)

        assert plan.cpu_set == frozenset(range(18))
        assert plan.memory_nodes == frozenset({1})
        assert plan.memory_socket == 1

    def test_memory_socket_follows_node(self):
        """Test each plan records the socket of the node holding its memory"""
        sockets = {
            name: plan_binding(self.topo, target, self.workload).memory_socket
            for name, target in self.targets.items()
        }

        assert sockets == {"LocalDRAM": 0, "LocalNVM": 0, "RemoteDRAM": 1, "RemoteNVM": 1}

    def test_locality_mismatch(self):
        """Test a target whose locality contradicts the node's socket"""
        target = self.targets["RemoteDRAM"].model_copy(update={"locality": Locality.LOCAL})

        with pytest.raises(PlanError):
            plan_binding(self.topo, target, self.workload)

    def test_unknown_node(self):
        """Test a target naming a node absent from the topology"""
        # Arrange
        target = MemoryTarget(
            name="LocalHBM",
            node_id=9,
            home_socket=0,
            locality=Locality.LOCAL,
            technology=Technology.HBM,
        )

        # Act & Assert
        with pytest.raises(PlanError):
            plan_binding(self.topo, target, self.workload)

    def test_plan_all_keeps_target_order(self):
        """Test one plan per target in the given order"""
        targets = list(self.targets.values())

        plans = plan_all(self.topo, targets, self.workload)

        assert [p.target.name for p in plans] == [t.name for t in targets]


class TestRenderPlan:
    """Test launcher directive rendering"""

    def setup_method(self):
        """Set up test fixtures"""
        self.topo = load_fixture_topology("paper-machine")
        self.target = enumerate_targets(self.topo, 0)[1]

    def test_directive_format(self):
        """Test the canonical directive string"""
        # Arrange
        workload = WorkloadSpec(
            name="XSBench", size_label="large", threads=18, command=("./XSBench", "-s", "large")
        )

        # Act
        directive = render_plan(plan_binding(self.topo, self.target, workload))

        # Assert
        assert directive == (
            "policy=STRICT_BIND cpus=0-17 membind=2 threads=18 "
            "cmd=env HMS_APP=XSBench HMS_SIZE=large ./XSBench -s large"
        )

    def test_equal_plans_render_identically(self):
        """Test two equal plans give byte-identical directives"""
        a = WorkloadSpec(name="a", size_label="s", threads=4, builtin="triad")
        b = WorkloadSpec(name="a", size_label="s", threads=4, builtin="triad")

        assert render_plan(plan_binding(self.topo, self.target, a)) == render_plan(
            plan_binding(self.topo, self.target, b)
        )

    def test_builtin_and_quoting(self):
        """Test builtin kernels and shell-quoted arguments"""
        builtin = WorkloadSpec(name="k", size_label="s", threads=2, builtin="gather")
        spaced = WorkloadSpec(name="k", size_label="s", threads=2, command=("run", "a b"))

        assert render_plan(plan_binding(self.topo, self.target, builtin)).endswith(
            "cmd=env HMS_APP=k HMS_SIZE=s builtin:gather"
        )
        assert render_plan(plan_binding(self.topo, self.target, spaced)).endswith(
            "cmd=env HMS_APP=k HMS_SIZE=s run 'a b'"
        )

    def test_workload_env_is_rendered(self):
        """Test extra environment variables appear sorted after the workload identity"""
        workload = WorkloadSpec(
            name="k", size_label="s", threads=2, builtin="triad", env={"OMP_PROC_BIND": "true", "A": "1"}
        )

        directive = render_plan(plan_binding(self.topo, self.target, workload))

        assert directive.endswith("cmd=env A=1 HMS_APP=k HMS_SIZE=s OMP_PROC_BIND=true builtin:triad")

    def test_distinct_plans_render_distinctly(self):
        """Test no two distinct plans over the bundled machine share a directive"""
        # Arrange
        workloads = [
            WorkloadSpec(name="BT", size_label="A", threads=4, builtin="triad"),
            WorkloadSpec(name="CG", size_label="W", threads=4, builtin="triad"),
            WorkloadSpec(name="BT", size_label="B", threads=4, builtin="triad"),
            WorkloadSpec(name="BT", size_label="A", threads=18, builtin="triad"),
            WorkloadSpec(name="BT", size_label="A", threads=4, builtin="gather"),
            WorkloadSpec(name="BT", size_label="A", threads=4, builtin="triad", env={"X": "1"}),
            WorkloadSpec(name="BT", size_label="A", threads=4, builtin="triad", env={"X": "2"}),
            WorkloadSpec(name="BT", size_label="A", threads=4, command=("./bt",)),
            WorkloadSpec(name="BT", size_label="A", threads=4, command=("./bt", "X=1")),
            WorkloadSpec(name="B", size_label="T.A", threads=4, command=("./bt",)),
        ]
        plans = [
            plan_binding(self.topo, target, workload)
            for home_socket in (0, 1)
            for target in enumerate_targets(self.topo, home_socket)
            for workload in workloads
        ]

        # Act
        directives = {render_plan(plan) for plan in plans}

        # Assert
        assert len(plans) == len(workloads) * 8
        assert len(directives) == len(plans)

    def test_build_argv(self):
        """Test the numactl argument vector"""
        workload = WorkloadSpec(name="k", size_label="s", threads=3, builtin="triad")

        argv = build_argv(plan_binding(self.topo, self.target, workload), "numactl")

        assert argv[:4] == ["numactl", "--physcpubind=0-17", "--membind=2", "--"]
        assert argv[4:] == [sys.executable, "-m", "src.kernels", "triad", "--threads", "3"]

    def test_launch_argv_for_command(self):
        """Test external commands are launched verbatim"""
        workload = WorkloadSpec(name="k", size_label="s", threads=1, command=("echo", "hi"))

        assert launch_argv(workload) == ["echo", "hi"]


class TestWorkloadSpec:
    """Test workload validation"""

    def test_requires_exactly_one_launch_mode(self):
        """Test command and builtin are mutually exclusive and one is required"""
        with pytest.raises(ValueError):
            WorkloadSpec(name="a", size_label="s", threads=1)
        with pytest.raises(ValueError):
            WorkloadSpec(name="a", size_label="s", threads=1, command=("x",), builtin="triad")

    def test_reserved_and_malformed_env(self):
        """Test launcher-owned and malformed variable names are rejected"""
        for env in ({"HMS_APP": "x"}, {"": "x"}, {"A=B": "x"}):
            with pytest.raises(ValueError):
                WorkloadSpec(name="a", size_label="s", threads=1, builtin="triad", env=env)

    def test_program_name_without_assignment(self):
        """Test a program name that env would read as an assignment"""
        with pytest.raises(ValueError):
            WorkloadSpec(name="a", size_label="s", threads=1, command=("X=1", "./a"))

    def test_unknown_builtin(self):
        """Test builtins must name a registered kernel"""
        with pytest.raises(ValueError):
            WorkloadSpec(name="a", size_label="s", threads=1, builtin="stream")


class TestExecute:
    """Test plan execution through adapters"""

    def setup_method(self):
        """Set up test fixtures"""
        topo = load_fixture_topology("paper-machine")
        self.plan = plan_binding(
            topo,
            enumerate_targets(topo, 0)[0],
            WorkloadSpec(name="BT", size_label="A", threads=18, builtin="triad"),
        )

    async def test_dry_run_records_directive(self):
        """Test the dry-run adapter records the directive and returns a successful handle"""
        # Arrange
        adapter = DryRunAdapter(duration_s=10.0)

        # Act
        handle = await execute(self.plan, adapter)

        # Assert
        assert handle.ok
        assert handle.duration_s == 10.0
        assert adapter.directives == [render_plan(self.plan)]

    async def test_nonzero_exit_is_returned_not_raised(self):
        """Test injected failures come back in the handle"""
        adapter = DryRunAdapter(fail_exit_code=3)

        handle = await execute(self.plan, adapter)

        assert not handle.ok
        assert handle.exit_code == 3

    async def test_unavailable_adapter(self, mocker):
        """Test an unavailable adapter raises before running"""
        # Arrange
        adapter = DryRunAdapter()
        mocker.patch.object(adapter, "available", return_value=False)

        # Act & Assert
        with pytest.raises(AdapterUnavailableError) as exc_info:
            await execute(self.plan, adapter)
        assert "adapter unavailable" in str(exc_info.value)
        assert adapter.directives == []
