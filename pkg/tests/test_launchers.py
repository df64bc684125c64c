#!/usr/bin/env python3
"""
Tests for execution adapters
"""

from unittest.mock import AsyncMock, MagicMock, patch

import pytest

from src.binding import plan_binding
from src.errors import ExecutionError
from src.launchers import DryRunAdapter, LiveAdapter
from src.models import WorkloadSpec
from src.topology import enumerate_targets, load_fixture_topology


def _plan(name="BT", env=None):
    topo = load_fixture_topology("paper-machine")
    target = enumerate_targets(topo, 0)[1]
    workload = WorkloadSpec(
        name=name, size_label="A", threads=18, command=("./bin/bt.A.x",), env=env or {}
    )
    return plan_binding(topo, target, workload)


class TestDryRunAdapter:
    """Test the simulated launcher"""

    async def test_virtual_clock_advances(self):
        """Test consecutive runs occupy consecutive clock intervals"""
        # Arrange
        adapter = DryRunAdapter(duration_s=2.5)

        # Act
        first = await adapter.run(_plan())
        second = await adapter.run(_plan())

        # Assert
        assert (first.started_at, first.finished_at) == (0.0, 2.5)
        assert (second.started_at, second.finished_at) == (2.5, 5.0)
        assert len(adapter.directives) == 2

    async def test_failure_predicate(self):
        """Test failure injection restricted by a predicate"""
        adapter = DryRunAdapter(fail_exit_code=1, fail_when=lambda p: p.workload.name == "CG")

        ok = await adapter.run(_plan("BT"))
        failed = await adapter.run(_plan("CG"))

        assert ok.ok
        assert failed.exit_code == 1
        assert "injected" in failed.error

    def test_rejects_non_positive_duration(self):
        """Test the simulated duration must be positive"""
        with pytest.raises(ValueError):
            DryRunAdapter(duration_s=0)


class TestLiveAdapter:
    """Test the numactl launcher with the subprocess boundary mocked"""

    def setup_method(self):
        """Set up test fixtures"""
        self.adapter = LiveAdapter(numactl="numactl", threads_env_var="OMP_NUM_THREADS")

    def test_available_requires_linux_and_numactl(self):
        """Test capability detection"""
        with patch("src.launchers.platform.system", return_value="Linux"), patch(
            "src.launchers.shutil.which", return_value="/usr/bin/numactl"
        ):
            assert self.adapter.available()
        with patch("src.launchers.platform.system", return_value="Darwin"):
            assert not self.adapter.available()
        with patch("src.launchers.platform.system", return_value="Linux"), patch(
            "src.launchers.shutil.which", return_value=None
        ):
            assert not self.adapter.available()

    async def test_run_passes_argv_and_thread_env(self):
        """Test numactl argv and the thread-count environment variable"""
        # Arrange
        process = MagicMock()
        process.communicate = AsyncMock(return_value=(b"done", b""))
        process.returncode = 0

        with patch(
            "src.launchers.asyncio.create_subprocess_exec", AsyncMock(return_value=process)
        ) as spawn:
            # Act
            handle = await self.adapter.run(_plan(env={"KMP_AFFINITY": "compact"}))

        # Assert
        args, kwargs = spawn.call_args
        assert list(args[:4]) == ["numactl", "--physcpubind=0-17", "--membind=2", "--"]
        assert args[4:] == ("./bin/bt.A.x",)
        assert kwargs["env"]["OMP_NUM_THREADS"] == "18"
        assert kwargs["env"]["KMP_AFFINITY"] == "compact"
        assert kwargs["env"]["HMS_APP"] == "BT"
        assert kwargs["env"]["HMS_SIZE"] == "A"
        assert handle.ok
        assert handle.duration_s >= 0

    async def test_nonzero_exit_keeps_stderr_tail(self):
        """Test a failing workload returns its exit code and stderr"""
        process = MagicMock()
        process.communicate = AsyncMock(return_value=(b"", b"segfault\n"))
        process.returncode = 139

        with patch(
            "src.launchers.asyncio.create_subprocess_exec", AsyncMock(return_value=process)
        ):
            handle = await self.adapter.run(_plan())

        assert handle.exit_code == 139
        assert handle.error == "exit status 139: segfault"

    async def test_launch_failure_raises(self):
        """Test an OS-level launch failure becomes ExecutionError"""
        with patch(
            "src.launchers.asyncio.create_subprocess_exec",
            AsyncMock(side_effect=FileNotFoundError("numactl")),
        ):
            with pytest.raises(ExecutionError):
                await self.adapter.run(_plan())
