"""Scenario x method x replication benchmark with resumable shards.

Each replication is one task: simulate, fit every method, store per-subject
estimates in ``shards/<scenario>/rep_<r>.npz``. Workers only compute; the
parent process is the single writer. Aggregation reads the shards back in
replication order, so the reported numbers do not depend on worker count or
completion order.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import time
import zlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..iste import estimate_iste
from ..metrics import (MetricsTable, coverage_by_subclass, pct_increase_pehe, pehe,
                       regret_by_subclass, relbias_by_subclass, rmse_by_subclass,
                       subclass_assign)
from ..simgen import simulate
from ..survcore import default_grid
from .config import RunConfig

log = logging.getLogger(__name__)

METRICS_CSV = "metrics.csv"
METRICS_JSON = "metrics.json"
MANIFEST = "manifest.json"


def method_seed(rep_seed: int, label: str) -> int:
    """Seed for one method in one replication, independent of method order."""
    seq = np.random.SeedSequence(rep_seed, spawn_key=(zlib.crc32(label.encode()),))
    return int(seq.generate_state(1, np.uint64)[0] % (2 ** 63))


def run_replication(scenario, methods: dict, rep: int, K: int, grid_size: int,
                    summary: str, level: float, fitters=None) -> dict:
    """Simulate replication ``rep`` of ``scenario`` and fit every method.

    Returns a flat dict of arrays suitable for ``np.savez``. A failing method
    is recorded with status ``failed`` and never touches the others.
    """
    cfg = scenario.replicate(rep)
    sim = simulate(cfg)
    grid = default_grid(sim.y, grid_size)
    out = {"seed": np.array(cfg.seed, dtype=np.uint64), "e_true": sim.e_true, "z": sim.z,
           "truth": sim.iste_capped(grid.horizon), "grid_step": np.array(grid.step)}
    for label, spec in methods.items():
        spec = replace(spec, seed=method_seed(cfg.seed, label))
        fitter = (fitters or {}).get(label)
        try:
            res = estimate_iste(sim.observed, spec, grid, summary=summary, fitter=fitter,
                                level=level)
            if not np.all(np.isfinite(res.point)):
                raise FloatingPointError("non-finite ISTE estimate")
        except Exception as exc:     # failure isolation: record and continue
            log.warning("rep %d method %s failed: %s", rep, label, exc)
            out[f"{label}__status"] = np.array(f"failed: {type(exc).__name__}: {exc}")
            continue
        nan = np.full(len(res.point), np.nan)
        out[f"{label}__status"] = np.array("ok")
        out[f"{label}__est"] = res.point
        out[f"{label}__lower"] = res.lower if res.lower is not None else nan
        out[f"{label}__upper"] = res.upper if res.upper is not None else nan
        out[f"{label}__capped"] = res.capped.astype(np.int8)
    return out


def _shard_path(out: Path, scenario: str, rep: int) -> Path:
    return out / "shards" / scenario / f"rep_{rep:05d}.npz"


def _write_shard(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **payload)
    os.replace(tmp, path)


def _load_shard(path: Path) -> dict:
    with np.load(path, allow_pickle=False) as f:
        return {k: f[k] for k in f.files}


def _manifest(cfg: RunConfig, started: float) -> dict:
    return {
        "config_hash": cfg.config_hash(),
        "software": {"package": "survhte", "version": __version__},
        "master_seed": cfg.seed,
        "scenarios": list(cfg.scenarios),
        "methods": list(cfg.methods),
        "replication_substreams": {
            name: {"spawn_keys": list(range(sc.reps)),
                   "seeds": [str(sc.replicate(r).seed) for r in range(sc.reps)]}
            for name, sc in cfg.scenarios.items()},
        "effective_config": cfg.effective(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
    }


def _check_resume(out: Path, cfg: RunConfig, resume: bool) -> None:
    path = out / MANIFEST
    if resume and path.exists():
        old = json.loads(path.read_text(encoding="utf-8"))
        if old.get("config_hash") != cfg.config_hash():
            raise ValueError(f"cannot resume: {path} was written for a different config")
    elif (out / "shards").exists():
        shutil.rmtree(out / "shards")


def run_benchmark(cfg: RunConfig, out_dir, threads: int | None = None, resume: bool = False,
                  fitters=None, limit: int | None = None, plots: bool = False) -> dict:
    """Execute the benchmark grid described by ``cfg`` into ``out_dir``.

    Parameters
    ----------
    threads
        Worker processes (defaults to ``cfg.threads``); 1 runs in-process.
    resume
        Reuse completed shards from an earlier run with the same config hash.
    fitters
        Optional ``{method label: fitter}`` overrides (in-process runs only).
    limit
        Stop after computing this many new shards; aggregation is skipped
        and the run can be completed later with ``resume=True``.

    Returns the per-scenario summary that is also written to ``metrics.json``,
    or ``{}`` when stopped early by ``limit``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = cfg.threads if threads is None else int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if fitters and threads > 1:
        raise ValueError("fitter overrides require threads = 1")
    started = time.time()
    _check_resume(out, cfg, resume)
    manifest = _manifest(cfg, started)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding="utf-8")

    todo = [(name, r) for name, sc in cfg.scenarios.items() for r in range(sc.reps)
            if not _shard_path(out, name, r).exists()]
    if limit is not None:
        todo = todo[:limit]
    args = lambda name, r: (cfg.scenarios[name], cfg.methods, r, cfg.K, cfg.grid_size,
                            cfg.summary, cfg.level)
    log.info("%d replication shards to compute with %d worker(s)", len(todo), threads)
    if threads == 1:
        for name, r in todo:
            _write_shard(_shard_path(out, name, r), run_replication(*args(name, r), fitters))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(run_replication, *args(name, r)): (name, r)
                       for name, r in todo}
            for fut in as_completed(futures):
                name, r = futures[fut]
                _write_shard(_shard_path(out, name, r), fut.result())
    if limit is not None and any(not _shard_path(out, name, r).exists()
                                 for name, sc in cfg.scenarios.items()
                                 for r in range(sc.reps)):
        return {}

    tables = {name: aggregate(out, name, cfg) for name in cfg.scenarios}
    write_metrics_csv(out / METRICS_CSV, [t for ts in tables.values() for t in ts.values()])
    summary = metrics_summary(tables)
    (out / METRICS_JSON).write_text(json.dumps(summary, indent=2), encoding="utf-8")
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    if plots:
        from .plots import emit_plots
        emit_plots(out)
    return summary


def aggregate(out: Path, scenario: str, cfg: RunConfig) -> dict:
    """MetricsTable per method for one scenario, reading shards in order."""
    sc = cfg.scenarios[scenario]
    shards = [_load_shard(_shard_path(out, scenario, r)) for r in range(sc.reps)]
    labels = list(cfg.methods)
    ok = {m: [s for s in shards if str(s[f"{m}__status"]) == "ok"] for m in labels}
    tables = {}
    for m in labels:
        reps = ok[m]
        nan = np.full(cfg.K, np.nan)
        if not reps:
            tables[m] = MetricsTable(scenario, m, np.empty(0), nan, nan, nan, nan,
                                     n_failed=len(shards))
            continue
        est = [s[f"{m}__est"] for s in reps]
        truth = [s["truth"] for s in reps]
        index = [subclass_assign(s["e_true"], cfg.K) for s in reps]
        lower = [s[f"{m}__lower"] for s in reps]
        has_intervals = not np.isnan(lower[0]).all()
        coverage = (coverage_by_subclass(lower, [s[f"{m}__upper"] for s in reps], truth,
                                         index) if has_intervals else nan)
        tables[m] = MetricsTable(
            scenario, m,
            pehe=np.array([pehe(e, t) for e, t in zip(est, truth)]),
            relbias=relbias_by_subclass(est, truth, index),
            rmse=rmse_by_subclass(est, truth, index),
            regret=regret_by_subclass(est, truth, index),
            coverage=coverage,
            n_failed=len(shards) - len(reps),
            capped_rate=float(np.mean([s[f"{m}__capped"].mean() for s in reps])),
        )
    complete = [s for s in shards if all(str(s[f"{m}__status"]) == "ok" for m in labels)]
    if len(labels) >= 2 and complete:
        P = np.array([[pehe(s[f"{m}__est"], s["truth"]) for m in labels] for s in complete])
        inc = pct_increase_pehe(P)
        for j, m in enumerate(labels):
            tables[m].pct_increase = inc[:, j]
    return tables


def _fmt(v) -> str:
    return repr(float(v))


def write_metrics_csv(path, tables) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "metric", "k", "value"])
        for t in tables:
            for scen, meth, metric, k, value in t.long_rows():
                w.writerow([scen, meth, metric, k, _fmt(value)])


def _finite_list(a):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]


def metrics_summary(tables: dict) -> dict:
    out = {"_metadata": {
        "pehe_sd": "across-replication standard deviation of PEHE",
        "coverage": "subjects pooled across replications within each subclass",
        "subclassing": "quantiles of the true propensity score",
        "failed_replications": "excluded from all metric denominators",
        "truth": "median contrast with each arm truncated at the grid horizon",
    }}
    for scen, ts in tables.items():
        out[scen] = {}
        for m, t in ts.items():
            n_ok = len(t.pehe)
            out[scen][m] = {
                "pehe_mean": None if n_ok == 0 else t.pehe_mean,
                "pehe_sd": None if n_ok < 2 else t.pehe_sd,
                "pehe": _finite_list(t.pehe),
                "n_ok": n_ok,
                "n_failed": t.n_failed,
                "failure_rate": t.n_failed / max(n_ok + t.n_failed, 1),
                "capped_rate": None if n_ok == 0 else t.capped_rate,
                "relbias": _finite_list(t.relbias),
                "rmse": _finite_list(t.rmse),
                "regret": _finite_list(t.regret),
                "coverage": _finite_list(t.coverage),
                "pct_increase": _finite_list(t.pct_increase),
            }
    return out


def read_metrics_csv(path) -> list:
    """Rows of a metrics CSV as ``(scenario, method, metric, k, value)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(s, m, metric, int(k) if k else None, float(v)) for s, m, metric, k, v in reader]
