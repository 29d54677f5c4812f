"""
Benchmark campaigns: every fixture of a suite under full guidance and the
three ablations, for a number of rng seeds.

Each campaign runs in its own worker process; results are collected into
pandas frames. Generations-to-target is censored at the number of
generations run when the expected target is never reached.
"""
import logging
import pathlib
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import pandas as pd

from sdfuzz.abi import read_abi
from sdfuzz.bytecode import read_bytecode
from sdfuzz.config import CampaignConfig
from sdfuzz.fuzzer import run_campaign
from sdfuzz.report import metrics_frame

logger = logging.getLogger(__name__)

# Configuration label to ablation.
CONFIGURATIONS = {"full": None, "A": "code", "B": "state", "C": "both"}
ABI_SUFFIX = ".abi.json"
BYTECODE_SUFFIXES = (".easm", ".hex")


class Fixture(NamedTuple):
    name: str
    bytecode_path: pathlib.Path
    abi_path: pathlib.Path
    expected_target: str


class BenchResult(NamedTuple):
    runs: pd.DataFrame
    summary: pd.DataFrame
    metrics: pd.DataFrame


def discover(suite: Union[str, pathlib.Path]) -> List[Fixture]:
    """
    Pair every ``<name>.abi.json`` in ``suite`` with ``<name>.easm`` or
    ``<name>.hex``. Fixtures without bytecode or without an expected target
    are skipped with a warning.
    """
    suite = pathlib.Path(suite)
    if not suite.is_dir():
        raise FileNotFoundError(f"Benchmark suite directory not found: {suite}")

    fixtures = []
    for abi_path in sorted(suite.glob(f"*{ABI_SUFFIX}")):
        name = abi_path.name[: -len(ABI_SUFFIX)]
        candidates = [suite / f"{name}{suffix}" for suffix in BYTECODE_SUFFIXES]
        bytecode_path = next((p for p in candidates if p.exists()), None)
        if bytecode_path is None:
            logger.warning("Skipping %s: no bytecode file", name)
            continue
        abi = read_abi(abi_path)
        if abi.expected_target is None:
            logger.warning("Skipping %s: no expected target", name)
            continue
        fixtures.append(Fixture(name, bytecode_path, abi_path, abi.expected_target))
    return fixtures


def _run_one(
    fixture: Fixture, label: str, rng_seed: int, base: CampaignConfig
) -> Tuple[Dict, pd.DataFrame]:
    bytecode = read_bytecode(fixture.bytecode_path)
    abi = read_abi(fixture.abi_path)
    config = base.replace(rng_seed=rng_seed, ablation=CONFIGURATIONS[label])
    result = run_campaign(bytecode, abi, config)

    hits = [
        generation
        for index, generation in result.reached.items()
        if result.static.code_targets[index].bug_class.value == fixture.expected_target
    ]
    row = {
        "fixture": fixture.name,
        "configuration": label,
        "rng_seed": rng_seed,
        "generations_to_target": result.generations_to_target(fixture.expected_target),
        "reached": bool(hits),
        "executed": result.executed,
    }
    metrics = metrics_frame(result.metrics)
    metrics.insert(0, "rng_seed", rng_seed)
    metrics.insert(0, "configuration", label)
    metrics.insert(0, "fixture", fixture.name)
    return row, metrics


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Median generations-to-target per fixture and configuration, plus the
    speedup of full guidance over each ablation.

    With a single rng seed per cell the raw values are reported and no
    speedups are computed.
    """
    if runs.empty:
        return pd.DataFrame(columns=["fixture"] + list(CONFIGURATIONS))

    table = runs.pivot_table(
        index="fixture",
        columns="configuration",
        values="generations_to_target",
        aggfunc="median",
    )
    table = table.reindex(columns=[c for c in CONFIGURATIONS if c in table.columns])
    if runs.groupby(["fixture", "configuration"]).size().max() > 1:
        for label in ("A", "B", "C"):
            if label in table.columns and "full" in table.columns:
                table[f"speedup_{label}"] = table[label] / table["full"]
    table.columns.name = None
    return table.reset_index()


def run_bench(
    suite: Union[str, pathlib.Path],
    seeds: int = 10,
    workers: Optional[int] = None,
    config: Optional[CampaignConfig] = None,
    configurations: Tuple[str, ...] = tuple(CONFIGURATIONS),
) -> BenchResult:
    """
    Run every fixture of a suite under each configuration and rng seed.

    Parameters
    ----------
    suite: str or pathlib.Path
        Directory of fixtures.
    seeds: int
        Number of rng seeds, 0 up to ``seeds - 1``.
    workers: int, optional
        Worker processes; one campaign per worker at a time.
    config: CampaignConfig, optional
        Base configuration; rng seed and ablation are overridden per run.
    configurations: tuple of str
        Subset of "full", "A", "B", "C".

    Returns
    -------
    result: BenchResult
    """
    if seeds < 1:
        raise ValueError(f"seeds must be at least 1, received: {seeds}")
    unknown = set(configurations) - set(CONFIGURATIONS)
    if unknown:
        raise ValueError(f"Unknown configurations: {', '.join(sorted(unknown))}")

    base = config or CampaignConfig()
    fixtures = discover(suite)
    tasks = [
        (fixture, label, rng_seed)
        for fixture in fixtures
        for label in configurations
        for rng_seed in range(seeds)
    ]
    logger.info("Benchmark: %d fixtures, %d campaigns", len(fixtures), len(tasks))

    results = []
    if workers == 1:
        results = [_run_one(*task, base) for task in tasks]
    elif tasks:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_one, *task, base) for task in tasks]
            results = [future.result() for future in futures]

    runs = pd.DataFrame(
        [row for row, _ in results],
        columns=[
            "fixture",
            "configuration",
            "rng_seed",
            "generations_to_target",
            "reached",
            "executed",
        ],
    )
    frames = [frame for _, frame in results]
    metrics = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    return BenchResult(runs=runs, summary=summarize(runs), metrics=metrics)
