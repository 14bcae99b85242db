"""Configuration-driven experiment harness: seeded single runs, grid sweeps
over (alpha, leaf-privacy-fraction, train-fraction) x repeats, streaming CSV
output, and a summarizer producing per-cell means and standard errors.

Per-run seeds are hashes of (base seed, cell indices, run index), so any cell
is reproducible in isolation and runs can execute in any worker layout; rows
are always written in grid order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dp_core import RandomSource
from .data_io import (
    DataError,
    PartitionSpec,
    build_splitting_class,
    load_csv,
    load_schema,
    partition,
    train_test_split,
)
from .dp_topdown import DPTopDownConfig, dp_topdown, schedule_from_name
from .split_strategies import (
    EntityPool,
    LocalRNMSplitter,
    NoisyCountsSplitter,
    SingleMachineRNMSplitter,
)
from .tree_learning import Criterion, topdown_nonprivate, tree_error

ALGORITHMS = ("baseline", "single-rnm", "noisy-counts", "local-rnm")
DEFAULT_ALPHAS = [2.0**e for e in range(-3, 10)]
CSV_HEADER = (
    "algorithm,alpha,lpf,train_fraction,run,seed,train_acc,test_acc,depth,nodes,ledger_cost,wall_ms"
)

OUTPUT_DIR_ENV = "DPTREE_OUTPUT_DIR"
WORKERS_ENV = "DPTREE_WORKERS"


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


@dataclass
class ExperimentConfig:
    schema_path: str
    train_path: str | None = None
    test_path: str | None = None
    csv_path: str | None = None
    ratio: tuple = (9, 1)
    split_seed: int = 0
    algorithm: str = "single-rnm"
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    lpfs: list = field(default_factory=lambda: [0.5])
    train_fractions: list = field(default_factory=lambda: [1.0])
    entities: int = 4
    max_nodes: int = 512
    error: float = 0.1
    delta: float = 0.1
    criterion: str = "entropy"
    schedule: str = "decay"
    min_gain: float = 0.01
    runs: int = 100
    seed: int = 0
    zero_noise: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.alphas or not self.lpfs or not self.train_fractions:
            raise ConfigError("alphas, lpfs, and train_fractions must be nonempty")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if (self.csv_path is None) == (self.train_path is None):
            raise ConfigError("provide either data.csv (+ratio) or data.train/data.test")
        if self.train_path is not None and self.test_path is None:
            raise ConfigError("data.train requires data.test")
        for fraction in self.train_fractions:
            if not 0.0 < fraction <= 1.0:
                raise ConfigError(f"train fractions must lie in (0, 1], got {fraction}")

    @property
    def grid(self):
        return [
            (ai, li, fi)
            for ai in range(len(self.alphas))
            for li in range(len(self.lpfs))
            for fi in range(len(self.train_fractions))
        ]


def config_from_dict(doc: dict) -> ExperimentConfig:
    data = doc.get("data", {})
    try:
        return ExperimentConfig(
            schema_path=doc["schema"],
            train_path=data.get("train"),
            test_path=data.get("test"),
            csv_path=data.get("csv"),
            ratio=tuple(data.get("ratio", (9, 1))),
            split_seed=int(data.get("split_seed", 0)),
            algorithm=doc.get("algorithm", "single-rnm"),
            alphas=[float(a) for a in doc.get("alphas", DEFAULT_ALPHAS)],
            lpfs=[float(v) for v in doc.get("lpfs", [0.5])],
            train_fractions=[float(v) for v in doc.get("train_fractions", [1.0])],
            entities=int(doc.get("entities", 4)),
            max_nodes=int(doc.get("max_nodes", 512)),
            error=float(doc.get("error", 0.1)),
            delta=float(doc.get("delta", 0.1)),
            criterion=doc.get("criterion", "entropy"),
            schedule=doc.get("schedule", "decay"),
            min_gain=float(doc.get("min_gain", 0.01)),
            runs=int(doc.get("runs", 100)),
            seed=int(doc.get("seed", 0)),
            zero_noise=bool(doc.get("zero_noise", False)),
        )
    except KeyError as missing:
        raise ConfigError(f"config is missing required key {missing}")


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return config_from_dict(doc)


def derive_seed(base_seed: int, *indices) -> int:
    """Stable 63-bit per-run seed from the base seed and cell coordinates."""
    text = ":".join(str(part) for part in (base_seed, *indices))
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass
class ResultRow:
    algorithm: str
    alpha: float
    lpf: float
    train_fraction: float
    run: int
    seed: int
    train_acc: float
    test_acc: float
    depth: int
    nodes: int
    ledger_cost: float
    wall_ms: float

    def to_csv(self) -> str:
        return ",".join(
            [
                self.algorithm,
                repr(self.alpha),
                repr(self.lpf),
                repr(self.train_fraction),
                str(self.run),
                str(self.seed),
                repr(self.train_acc),
                repr(self.test_acc),
                str(self.depth),
                str(self.nodes),
                repr(self.ledger_cost),
                repr(self.wall_ms),
            ]
        )


_data_cache: dict = {}


def prepare_data(config: ExperimentConfig):
    """(train, test, schema, splitting class), cached per config paths."""
    key = (config.schema_path, config.train_path, config.test_path, config.csv_path,
           config.ratio, config.split_seed)
    if key in _data_cache:
        return _data_cache[key]
    schema = load_schema(config.schema_path)
    if config.csv_path is not None:
        full = load_csv(config.csv_path, schema)
        train, test = train_test_split(full, config.ratio, RandomSource(config.split_seed, ("split",)))
    else:
        train = load_csv(config.train_path, schema)
        test = load_csv(config.test_path, schema)
    splits = build_splitting_class(schema)
    _data_cache[key] = (train, test, schema, splits)
    return _data_cache[key]


def run_single(config: ExperimentConfig, alpha_i: int, lpf_i: int, fraction_i: int, run_i: int) -> ResultRow:
    """One seeded train/evaluate cycle for one grid cell."""
    train_full, test, schema, splits = prepare_data(config)
    alpha = config.alphas[alpha_i]
    lpf = config.lpfs[lpf_i]
    fraction = config.train_fractions[fraction_i]
    seed = derive_seed(config.seed, alpha_i, lpf_i, fraction_i, run_i)
    source_rng = RandomSource(seed)

    train = train_full
    if fraction < 1.0:
        size = max(1, int(train_full.n * fraction))
        rows = np.sort(source_rng.substream("subsample").choice(train_full.n, size=size, replace=False))
        train = train_full.subset(rows)

    criterion = Criterion.from_name(config.criterion)
    started = time.perf_counter()
    if config.algorithm == "baseline":
        # Non-private control with the same pruning and weight filter, so
        # large-alpha private runs converge to it like for like.
        tree = topdown_nonprivate(
            train, splits, config.max_nodes, criterion,
            min_gain=config.min_gain, min_weight=config.error / config.max_nodes,
        )
        ledger_cost = 0.0
        depth, nodes = tree.depth, tree.internal_count
    else:
        dp_config = DPTopDownConfig(
            alpha=alpha,
            max_nodes=config.max_nodes,
            error=config.error,
            delta=config.delta,
            leaf_privacy_fraction=lpf,
            schedule=schedule_from_name(config.schedule, config.max_nodes),
            criterion=criterion,
            min_gain=config.min_gain,
            seed=seed,
        )
        if config.algorithm == "single-rnm":
            source = train
            splitter = SingleMachineRNMSplitter(train, splits, criterion)
        else:
            shards = partition(train, PartitionSpec(config.entities), source_rng.substream("partition"))
            source = EntityPool.from_shards(shards, source_rng.substream("entities"), splits, criterion)
            maker = NoisyCountsSplitter if config.algorithm == "noisy-counts" else LocalRNMSplitter
            splitter = maker(source, splits, criterion)
        tree, ledger, stats = dp_topdown(source, dp_config, splitter, source_rng.substream("mechanisms"))
        ledger_cost = stats.ledger_effective_cost
        depth, nodes = stats.depth, stats.internal_nodes
    wall_ms = (time.perf_counter() - started) * 1000.0

    return ResultRow(
        algorithm=config.algorithm,
        alpha=alpha,
        lpf=lpf,
        train_fraction=fraction,
        run=run_i,
        seed=seed,
        train_acc=1.0 - tree_error(tree, train),
        test_acc=1.0 - tree_error(tree, test) if test.n else float("nan"),
        depth=depth,
        nodes=nodes,
        ledger_cost=ledger_cost,
        wall_ms=wall_ms,
    )


def _cell_worker(args):
    config_doc, indices = args
    config = config_from_dict(config_doc)
    if config.zero_noise:
        from .dp_core import set_zero_noise

        set_zero_noise(True)
    return run_single(config, *indices)


def resolve_output_path(path) -> Path:
    base = os.environ.get(OUTPUT_DIR_ENV)
    path = Path(path)
    if base and not path.is_absolute():
        return Path(base) / path
    return path


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def run_sweep(config: ExperimentConfig, out_path, resume: bool = False) -> Path:
    """Execute the full grid x runs, streaming one CSV row per run.

    Rows appear in deterministic grid order regardless of worker count, and
    each row is flushed as written, so an interrupted sweep can resume by
    skipping the rows already on disk.
    """
    out_path = resolve_output_path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tasks = [
        (alpha_i, lpf_i, fraction_i, run_i)
        for (alpha_i, lpf_i, fraction_i) in config.grid
        for run_i in range(config.runs)
    ]

    done = 0
    if resume and out_path.exists():
        with open(out_path, "r", encoding="utf-8") as fh:
            existing = [line for line in fh.read().splitlines() if line.strip()]
        if existing and existing[0] != CSV_HEADER:
            raise DataError(f"{out_path}: existing file has a different header")
        done = max(0, len(existing) - 1)
    pending = tasks[done:]

    mode = "a" if resume and done else "w"
    workers = worker_count()
    with open(out_path, mode, encoding="utf-8", newline="") as fh:
        if mode == "w":
            fh.write(CSV_HEADER + "\n")
            fh.flush()
        if workers == 1:
            if config.zero_noise:
                from .dp_core import set_zero_noise

                set_zero_noise(True)
            try:
                for indices in pending:
                    fh.write(run_single(config, *indices).to_csv() + "\n")
                    fh.flush()
            finally:
                if config.zero_noise:
                    set_zero_noise(False)
        else:
            doc = _config_to_dict(config)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_cell_worker, [(doc, indices) for indices in pending]):
                    fh.write(row.to_csv() + "\n")
                    fh.flush()
    return out_path


def _config_to_dict(config: ExperimentConfig) -> dict:
    data = (
        {"csv": config.csv_path, "ratio": list(config.ratio), "split_seed": config.split_seed}
        if config.csv_path is not None
        else {"train": config.train_path, "test": config.test_path}
    )
    return {
        "schema": config.schema_path,
        "data": data,
        "algorithm": config.algorithm,
        "alphas": config.alphas,
        "lpfs": config.lpfs,
        "train_fractions": config.train_fractions,
        "entities": config.entities,
        "max_nodes": config.max_nodes,
        "error": config.error,
        "delta": config.delta,
        "criterion": config.criterion,
        "schedule": config.schedule,
        "min_gain": config.min_gain,
        "runs": config.runs,
        "seed": config.seed,
        "zero_noise": config.zero_noise,
    }


def summarize(csv_path) -> dict:
    """Per-cell means and standard errors of the mean (std / sqrt(runs))."""
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise DataError(f"{csv_path}: unexpected header {reader.fieldnames}")
        cells: dict = {}
        for record in reader:
            key = (record["algorithm"], record["alpha"], record["lpf"], record["train_fraction"])
            cells.setdefault(key, []).append(record)

    def sem(values) -> float:
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1) / np.sqrt(len(values)))

    summary = []
    for (algorithm, alpha, lpf, fraction), records in sorted(cells.items()):
        train = [float(r["train_acc"]) for r in records]
        test = [float(r["test_acc"]) for r in records]
        summary.append(
            {
                "algorithm": algorithm,
                "alpha": float(alpha),
                "lpf": float(lpf),
                "train_fraction": float(fraction),
                "runs": len(records),
                "train_acc_mean": float(np.mean(train)),
                "train_acc_sem": sem(train),
                "test_acc_mean": float(np.mean(test)),
                "test_acc_sem": sem(test),
                "depth_mean": float(np.mean([int(r["depth"]) for r in records])),
                "nodes_mean": float(np.mean([int(r["nodes"]) for r in records])),
                "ledger_cost_max": max(float(r["ledger_cost"]) for r in records),
            }
        )
    return {"cells": summary}
