#!/usr/bin/env python3
"""
Runtime settings loaded from the environment (and an optional .env file)
"""

import os
import sys
from dataclasses import dataclass

from dotenv import load_dotenv
from loguru import logger

from .errors import ConfigError


@dataclass(frozen=True)
class Settings:
    """Process-wide knobs; none of them is required"""

    log_level: str = "INFO"
    threads_env_var: str = "OMP_NUM_THREADS"
    sample_period_s: float = 0.1
    dry_run_duration_s: float = 10.0
    powercap_path: str = "/sys/class/powercap/intel-rapl"
    node_sysfs_path: str = "/sys/devices/system/node"
    cpu_sysfs_path: str = "/sys/devices/system/cpu"
    numactl: str = "numactl"
    kernel_seconds: float = 5.0

    @classmethod
    def from_env(cls) -> "Settings":
        """Build settings from HMS_* environment variables"""
        load_dotenv()
        try:
            settings = cls(
                log_level=os.getenv("HMS_LOG_LEVEL", cls.log_level).upper(),
                threads_env_var=os.getenv("HMS_THREADS_ENV_VAR", cls.threads_env_var),
                sample_period_s=float(
                    os.getenv("HMS_SAMPLE_PERIOD_S", str(cls.sample_period_s))
                ),
                dry_run_duration_s=float(
                    os.getenv("HMS_DRY_RUN_DURATION_S", str(cls.dry_run_duration_s))
                ),
                powercap_path=os.getenv("HMS_POWERCAP_PATH", cls.powercap_path),
                node_sysfs_path=os.getenv("HMS_NODE_SYSFS_PATH", cls.node_sysfs_path),
                cpu_sysfs_path=os.getenv("HMS_CPU_SYSFS_PATH", cls.cpu_sysfs_path),
                numactl=os.getenv("HMS_NUMACTL", cls.numactl),
                kernel_seconds=float(os.getenv("HMS_KERNEL_SECONDS", str(cls.kernel_seconds))),
            )
        except ValueError as e:
            raise ConfigError(f"invalid numeric setting: {e}", element="env") from e

        if settings.sample_period_s <= 0:
            raise ConfigError("must be > 0", element="HMS_SAMPLE_PERIOD_S")
        if settings.dry_run_duration_s <= 0:
            raise ConfigError("must be > 0", element="HMS_DRY_RUN_DURATION_S")
        if settings.kernel_seconds <= 0:
            raise ConfigError("must be > 0", element="HMS_KERNEL_SECONDS")
        return settings


def configure_logging(level: str = "INFO") -> None:
    """Send loguru output to stderr at the given level"""
    logger.remove()
    logger.add(sys.stderr, level=level.upper())
