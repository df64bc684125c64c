#!/usr/bin/env python3
"""
Execution adapters: a dry-run launcher for tests/synthetic runs and a numactl launcher for real hosts
"""

import asyncio
import os
import platform
import shutil
import time
from abc import ABC, abstractmethod
from typing import Callable, List, Optional

from loguru import logger

from .binding import build_argv, render_plan
from .errors import ExecutionError
from .models import BindingPlan, RunHandle


class ExecutionAdapter(ABC):
    """Runs one binding plan and reports what happened"""

    name: str = "adapter"

    @abstractmethod
    def available(self) -> bool:
        """Whether this adapter can run on the current host"""

    @abstractmethod
    async def run(self, plan: BindingPlan) -> RunHandle:
        """Execute the plan; raise ExecutionError only when nothing could be launched"""


class DryRunAdapter(ExecutionAdapter):
    """
    Records directives and simulates runs of a fixed duration on a virtual clock
    Failure injection: fail_exit_code applies to plans matched by fail_when (all when omitted)
    """

    name = "dry-run"

    def __init__(
        self,
        duration_s: float = 10.0,
        fail_exit_code: Optional[int] = None,
        fail_when: Optional[Callable[[BindingPlan], bool]] = None,
    ):
        if duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        self.duration_s = duration_s
        self.fail_exit_code = fail_exit_code
        self.fail_when = fail_when
        self.directives: List[str] = []
        self._clock = 0.0

    def available(self) -> bool:
        return True

    async def run(self, plan: BindingPlan) -> RunHandle:
        directive = render_plan(plan)
        self.directives.append(directive)

        started = self._clock
        self._clock = started + self.duration_s

        exit_code = 0
        error = None
        if self.fail_exit_code is not None and (
            self.fail_when is None or self.fail_when(plan)
        ):
            exit_code = self.fail_exit_code
            error = f"exit status {exit_code} (injected)"

        return RunHandle(
            adapter=self.name,
            directive=directive,
            argv=plan.workload.argv,
            started_at=started,
            finished_at=self._clock,
            duration_s=self.duration_s,
            exit_code=exit_code,
            error=error,
        )


class LiveAdapter(ExecutionAdapter):
    """Launches the workload under numactl with strict CPU and memory binding"""

    name = "live"

    def __init__(self, numactl: str = "numactl", threads_env_var: str = "OMP_NUM_THREADS"):
        self.numactl = numactl
        self.threads_env_var = threads_env_var

    def available(self) -> bool:
        return platform.system() == "Linux" and shutil.which(self.numactl) is not None

    async def run(self, plan: BindingPlan) -> RunHandle:
        argv = build_argv(plan, self.numactl)
        env = {
            **os.environ,
            **plan.workload.launch_env,
            self.threads_env_var: str(plan.workload.threads),
        }

        started = time.monotonic()
        try:
            process = await asyncio.create_subprocess_exec(
                *argv,
                env=env,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.PIPE,
            )
        except OSError as e:
            raise ExecutionError(f"failed to launch {argv[0]}: {e}") from e

        stdout, stderr = await process.communicate()
        finished = time.monotonic()
        exit_code = process.returncode if process.returncode is not None else -1

        if stdout:
            logger.debug(f"{plan.workload.label} stdout: {stdout.decode(errors='replace')[-500:]}")
        error = None
        if exit_code != 0:
            tail = stderr.decode(errors="replace").strip()[-500:]
            error = f"exit status {exit_code}" + (f": {tail}" if tail else "")

        return RunHandle(
            adapter=self.name,
            directive=render_plan(plan),
            argv=tuple(argv),
            started_at=started,
            finished_at=finished,
            duration_s=finished - started,
            exit_code=exit_code,
            error=error,
        )
