"""Runs training seeds as child processes of the entry script."""
from __future__ import annotations

import logging
import re
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from utils.errors import ForecastError

logger = logging.getLogger(__name__)

ENTRY_SCRIPT = Path(__file__).resolve().parent.parent / "InterGAT Pipeline.py"

EPOCH_LINE = re.compile(r"epoch (\d+)/(\d+) loss=([-+0-9.eEinfa]+) val_mae=([-+0-9.eEinfa]+)")


@dataclass
class ProcessResult:
    returncode: int
    stdout: str = ""
    stderr: str = ""
    seed: int | None = None
    out: str | None = None

    @property
    def ok(self) -> bool:
        return self.returncode == 0


@dataclass
class RunProgress:
    epoch: int = 0
    epochs: int = 0
    loss: float = float("nan")
    val_mae: float = float("nan")
    early_stop: bool = False
    failed: bool = False
    last_message: str = ""


class SeedProcessError(ForecastError):
    """A child training process exited with a non-zero code."""

    def __init__(self, failed: list[ProcessResult]):
        first = failed[0]
        super().__init__(f"{len(failed)} seed process(es) failed, first: seed {first.seed} "
                         f"(exit code {first.returncode})")
        self.failed = failed
        self.exit_code = first.returncode if first.returncode > 0 else 1


def run_script(script_path, args=(), timeout: float | None = None) -> ProcessResult:
    """Run ``script_path`` with the current interpreter and capture its output."""
    cmd = [sys.executable, str(script_path), *map(str, args)]
    logger.debug("Running %s", " ".join(cmd))
    try:
        completed = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout, check=False)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise ForecastError(f"could not run {script_path}: {e}") from e
    return ProcessResult(completed.returncode, completed.stdout, completed.stderr)


def run_train_seed(config_path, seed: int, out_dir, script_path=ENTRY_SCRIPT,
                   verbose: bool = False) -> ProcessResult:
    """One `train` command for a single seed."""
    args = ["train", "--config", config_path, "--seed", seed, "--out", out_dir]
    if verbose:
        args.append("--verbose")
    result = run_script(script_path, args)
    result.seed = seed
    result.out = str(out_dir)
    return result


def run_seed_processes(config_path, seeds, out_root, threads: int = 1,
                       script_path=ENTRY_SCRIPT) -> list[ProcessResult]:
    """Train every seed in a child process, at most ``threads`` at a time.

    Each seed writes to ``out_root/seed_<s>``; results come back in seed order.
    Raises SeedProcessError if any child fails.
    """
    out_root = Path(out_root)
    jobs = [(seed, out_root / f"seed_{seed}") for seed in seeds]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run_train_seed, config_path, seed, out, script_path) for seed, out in jobs]
        results = [f.result() for f in futures]
    for result in results:
        progress = get_run_progress(result.stderr)
        if not result.ok:
            logger.error("seed %s failed with exit code %d: %s", result.seed, result.returncode,
                         progress.last_message if progress else "")
        elif progress:
            logger.info("seed %s finished after %d/%d epochs (val_mae=%.6f)", result.seed,
                        progress.epoch, progress.epochs, progress.val_mae)
    failed = [r for r in results if not r.ok]
    if failed:
        raise SeedProcessError(failed)
    return results


def get_run_progress(output: str | None) -> RunProgress | None:
    """Last epoch, early stop and failure markers from a child's log output."""
    if not output:
        return None
    progress = RunProgress()
    for line in output.strip().splitlines():
        line = line.strip()
        if not line:
            continue
        match = EPOCH_LINE.search(line)
        if match:
            progress.epoch, progress.epochs = int(match.group(1)), int(match.group(2))
            progress.loss, progress.val_mae = float(match.group(3)), float(match.group(4))
        if "Early stop" in line:
            progress.early_stop = True
        if "ERROR" in line or "Traceback" in line:
            progress.failed = True
        progress.last_message = line
    return progress
