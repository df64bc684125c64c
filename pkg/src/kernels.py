#!/usr/bin/env python3
"""
Built-in memory-bound kernels used as workloads when no external program is given

Run as a module so the live launcher can confine it like any other command:
    python -m src.kernels triad --threads 18 --seconds 10 --size-mb 512
"""

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from .config import Settings
from .errors import ConfigError

KernelFn = Callable[[int, float, int, int], Dict[str, float]]
StepFn = Callable[[slice], None]

# three 8-byte arrays per element in both kernels
BYTES_PER_ELEMENT = 3 * 8


def _split(n: int, parts: int) -> List[slice]:
    bounds = np.linspace(0, n, parts + 1, dtype=np.int64)
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def _elements(size_mb: int) -> int:
    return max(1, size_mb * 1024 * 1024 // BYTES_PER_ELEMENT)


def _run_workers(step: StepFn, n: int, threads: int, seconds: float) -> Dict[str, float]:
    """Repeat step over one chunk per thread until the deadline; ufuncs release the GIL"""

    def worker(chunk: slice) -> int:
        iterations = 0
        deadline = time.monotonic() + seconds
        while time.monotonic() < deadline:
            step(chunk)
            iterations += 1
        return iterations

    started = time.monotonic()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        counts = list(pool.map(worker, _split(n, threads)))
    elapsed = time.monotonic() - started

    iterations = sum(counts)
    return {
        "iterations": float(iterations),
        "elapsed_s": elapsed,
        "bytes_moved": float(iterations * BYTES_PER_ELEMENT * (n / threads)),
    }


def triad(threads: int, seconds: float, size_mb: int, seed: int = 0) -> Dict[str, float]:
    """STREAM-style triad a = b + s*c over three arrays sharing size_mb"""
    n = _elements(size_mb)
    rng = np.random.default_rng(seed)
    a = np.zeros(n)
    b = rng.random(n)
    c = rng.random(n)

    def step(chunk: slice) -> None:
        np.multiply(c[chunk], 3.0, out=a[chunk])
        np.add(a[chunk], b[chunk], out=a[chunk])

    return _run_workers(step, n, threads, seconds)


def gather(threads: int, seconds: float, size_mb: int, seed: int = 0) -> Dict[str, float]:
    """Random-index gather out = src[idx]; latency bound rather than bandwidth bound"""
    n = _elements(size_mb)
    rng = np.random.default_rng(seed)
    src = rng.random(n)
    idx = rng.integers(0, n, size=n)
    out = np.empty(n)

    def step(chunk: slice) -> None:
        np.take(src, idx[chunk], out=out[chunk])

    return _run_workers(step, n, threads, seconds)


KERNELS: Dict[str, KernelFn] = {
    "triad": triad,
    "gather": gather,
}

KERNEL_IDS = tuple(sorted(KERNELS))


def run_kernel(
    kernel_id: str, threads: int, seconds: float, size_mb: int = 256, seed: int = 0
) -> Dict[str, float]:
    """Run a registered kernel and return its counters"""
    if kernel_id not in KERNELS:
        raise ValueError(
            f"unknown builtin kernel '{kernel_id}' (known: {', '.join(KERNEL_IDS)})"
        )
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if seconds <= 0:
        raise ValueError("seconds must be > 0")
    return KERNELS[kernel_id](threads, seconds, size_mb, seed)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = Settings.from_env()
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return 2

    parser = argparse.ArgumentParser(
        prog="python -m src.kernels", description="Run a built-in memory kernel"
    )
    parser.add_argument("kernel", choices=KERNEL_IDS)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seconds", type=float, default=settings.kernel_seconds)
    parser.add_argument("--size-mb", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    logger.info(
        f"🏃 kernel={args.kernel} threads={args.threads} seconds={args.seconds}"
    )
    try:
        result = run_kernel(
            args.kernel, args.threads, args.seconds, args.size_mb, args.seed
        )
    except ValueError as e:
        logger.error(str(e))
        return 2

    print(json.dumps({"kernel": args.kernel, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
