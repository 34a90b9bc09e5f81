"""Pipeline stages behind the CLI: layout, evolve, gram, benchmark, rank.

Every stage reads the previous stage's files from the run directory, so an
interrupted run resumes where it stopped. All artifacts are written with
sorted keys and carry the config digest; no timestamps are recorded, so
exact-estimator reruns are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .graph_core import AttributedGraph, IngestionError, load_tudataset, read_mass_table, shortest_path_distances
from .kernels import GramMatrix, KernelSpec, assemble_gram
from .layout import LayoutError, embed_unit_disk, read_registers, validate_register, write_registers
from .ml import cross_validate, pool_search, stratified_baseline_f1, stratified_splits
from .propagator import EvolutionRecord, run_pipeline

log = logging.getLogger(__name__)

WORKERS_ENV = "RYDKERNEL_WORKERS"
SCHEMA_VERSION = 1


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    return max(1, n)


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_manifest(cfg: RunConfig) -> None:
    _dump(
        {
            "schema_version": SCHEMA_VERSION,
            "config_digest": cfg.digest(),
            "config": {k: v for k, v in cfg.to_dict().items() if k != "output"},
            "seeds": {
                "layout": cfg.registers.seed,
                "estimator": cfg.estimator.seed if cfg.estimator.kind == "shots" else None,
                "cv": cfg.cv.seed,
                "pooling": cfg.pooling.seed,
            },
        },
        cfg.out / "manifest.json",
    )


# --------------------------------------------------------------------------
# Dataset


def load_dataset(cfg: RunConfig):
    table = read_mass_table(cfg.mass_table) if cfg.mass_table else None
    graphs, report = load_tudataset(cfg.dataset, table, with_report=True)
    if not graphs:
        raise IngestionError(f"dataset {cfg.dataset} contains no usable graphs")
    return graphs, report


def binary_labels(graphs) -> np.ndarray:
    """Map the two dataset classes to -1 (smaller label) and +1."""
    raw = [g.graph_label for g in graphs]
    classes = sorted(set(raw))
    if len(classes) != 2:
        raise ConfigError(f"binary classification needs exactly two classes, found {classes}")
    return np.array([-1 if r == classes[0] else 1 for r in raw])


# --------------------------------------------------------------------------
# layout


def stage_layout(cfg: RunConfig) -> dict:
    graphs, ingestion = load_dataset(cfg)
    write_manifest(cfg)
    rc = cfg.registers
    accepted, rejected = {}, {}
    if rc.source == "file":
        given = read_registers(rc.path)
        for g in graphs:
            reg = given.get(g.id)
            if reg is None:
                rejected[g.id] = {"reason": "no register in file"}
                continue
            try:
                rep = validate_register(g, reg, rc.contrast_threshold)
            except ValueError as exc:
                rejected[g.id] = {"reason": str(exc)}
                continue
            if rep.valid:
                accepted[g.id] = reg
            else:
                rejected[g.id] = {"reason": "contrast below threshold", "report": rep.to_dict()}
    else:
        for g in graphs:
            try:
                accepted[g.id] = embed_unit_disk(
                    g, cfg.constants.r_nn_um, rc.seed, rc.max_attempts, rc.contrast_threshold, qubit_cap=10**6
                )
            except LayoutError as exc:
                rejected[g.id] = {"reason": str(exc), "report": exc.report.to_dict() if exc.report else None}
    write_registers(accepted, cfg.out / "registers.json", extra={"config_digest": cfg.digest()})
    report = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": cfg.digest(),
        "seed": rc.seed,
        "source": rc.source,
        "accepted": len(accepted),
        "rejected": rejected,
        "ingestion": ingestion.to_dict(),
    }
    _dump(report, cfg.out / "layout_report.json")
    return report


def _load_registers(cfg: RunConfig):
    path = cfg.out / "registers.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run the layout stage first")
    return read_registers(path)


# --------------------------------------------------------------------------
# evolve


def _record_path(cfg: RunConfig, gid: str, mode: str) -> Path:
    return cfg.out / "records" / f"{gid}__{mode}.json"


def _evolve_one(args):
    g, reg, mode, cfg = args
    rec = run_pipeline(
        g, reg, cfg.constants.physical(), mode, cfg.time_grid.times(), cfg.estimator.as_dict(), cfg.tolerance, cfg.qubit_cap
    )
    rec.provenance["evolution_digest"] = cfg.evolution_digest()
    rec.write(_record_path(cfg, g.id, mode))
    return g.id, mode


def _usable_record(path: Path, cfg: RunConfig) -> bool:
    if not path.exists():
        return False
    try:
        rec = EvolutionRecord.read(path)
    except (json.JSONDecodeError, KeyError):
        return False
    return rec.provenance.get("evolution_digest") == cfg.evolution_digest()


def stage_evolve(cfg: RunConfig) -> dict:
    graphs, _ = load_dataset(cfg)
    regs = _load_registers(cfg)
    write_manifest(cfg)
    (cfg.out / "records").mkdir(parents=True, exist_ok=True)
    violations, todo = {}, []
    for g in graphs:
        if g.id not in regs:
            continue
        if g.node_count > cfg.qubit_cap:
            violations[g.id] = g.node_count
            continue
        for mode in cfg.modes:
            if not _usable_record(_record_path(cfg, g.id, mode), cfg):
                todo.append((g, regs[g.id], mode, cfg))
    log.info("evolve: %d records to compute", len(todo))
    workers = worker_count()
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_evolve_one, todo))
    else:
        for task in todo:
            _evolve_one(task)
    done = sorted(p.name for p in (cfg.out / "records").glob("*.json"))
    report = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": cfg.digest(),
        "estimator": cfg.estimator.as_dict(),
        "records": done,
        "qubit_cap": cfg.qubit_cap,
        "qubit_cap_violations": violations,
    }
    _dump(report, cfg.out / "evolve_report.json")
    return report


@dataclass
class Evolved:
    graphs: list
    records: dict  # mode -> list of records aligned with graphs
    distances: dict


def load_evolved(cfg: RunConfig) -> Evolved:
    """Graphs that have a record for every configured mode, in dataset order."""
    graphs, _ = load_dataset(cfg)
    keep, records = [], {m: [] for m in cfg.modes}
    for g in graphs:
        paths = {m: _record_path(cfg, g.id, m) for m in cfg.modes}
        if all(p.exists() for p in paths.values()):
            keep.append(g)
            for m, p in paths.items():
                records[m].append(EvolutionRecord.read(p))
    if not keep:
        raise ConfigError("no evolution records found; run the evolve stage first")
    return Evolved(keep, records, {g.id: shortest_path_distances(g) for g in keep})


# --------------------------------------------------------------------------
# gram


def _kernel_specs(cfg: RunConfig):
    specs = [k.spec() for k in cfg.kernels]
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate kernels in config: {labels}")
    return specs


def _gram_path(cfg: RunConfig, label: str, mode: str, k: int) -> Path:
    return cfg.out / "grams" / f"{label}__{mode}__t{k:03d}.json"


def stage_gram(cfg: RunConfig) -> dict:
    ev = load_evolved(cfg)
    write_manifest(cfg)
    times = cfg.time_grid.times()
    d_max = int(max(d.max() for d in ev.distances.values()))
    index = []
    for spec in _kernel_specs(cfg):
        if spec.kind == "gdqc":
            spec = dataclasses.replace(spec, d_max=d_max)
        for mode in cfg.modes:
            for k, t in enumerate(times):
                gram = assemble_gram(ev.records[mode], spec, float(t), ev.distances)
                gram.descriptor["config_digest"] = cfg.digest()
                path = _gram_path(cfg, spec.label, mode, k)
                path.parent.mkdir(parents=True, exist_ok=True)
                gram.write(path)
                index.append(
                    {"file": path.name, "kernel": spec.label, "mode": mode, "time_us": float(t), "min_eigenvalue": gram.min_eigenvalue, "rank": gram.rank}
                )
    _dump({"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest(), "graph_ids": [g.id for g in ev.graphs], "grams": index}, cfg.out / "gram_index.json")
    return {"grams": len(index)}


def _load_grams(cfg: RunConfig, label: str, mode: str) -> list[GramMatrix]:
    out = []
    for k in range(cfg.time_grid.n_steps):
        path = _gram_path(cfg, label, mode, k)
        if not path.exists():
            raise ConfigError(f"{path} not found; run the gram stage first")
        out.append(GramMatrix.read(path))
    return out


# --------------------------------------------------------------------------
# benchmark


def stage_benchmark(cfg: RunConfig) -> dict:
    graphs, _ = load_dataset(cfg)
    by_id = {g.id: g for g in graphs}
    write_manifest(cfg)
    times = cfg.time_grid.times()
    c_grid = cfg.cv.c_grid()
    workers = worker_count()
    summary, pointwise = [], []
    labels = None
    for spec in _kernel_specs(cfg):
        for mode in cfg.modes:
            grams = _load_grams(cfg, spec.label, mode)
            y = binary_labels([by_id[i] for i in grams[0].graph_ids])
            labels = y
            splits = stratified_splits(y, cfg.cv.folds, cfg.cv.reps, cfg.cv.seed)
            best = None
            for k, (t, gram) in enumerate(zip(times, grams)):
                rep = cross_validate(gram, y, c_grid, cfg.cv.folds, cfg.cv.reps, cfg.cv.seed, splits=splits, workers=workers)
                _dump(rep.to_dict(), cfg.out / "cv" / f"{spec.label}__{mode}__t{k:03d}.json")
                pointwise.append([spec.label, mode, float(t), rep.mean_f1, rep.std_f1, rep.best_c])
                if best is None or rep.mean_f1 > best[1].mean_f1:
                    best = (float(t), rep)
            summary.append([spec.label, mode, "none", f"{best[0]!r}", best[1].mean_f1, best[1].std_f1])
            for rule in cfg.pooling.rules:
                for size in cfg.pooling.tuple_sizes:
                    results = pool_search(grams, y, size, cfg.pooling.n_samples, rule, cfg.pooling.seed, c_grid, cfg.cv.folds, cfg.cv.reps)
                    path = cfg.out / "pools" / f"{spec.label}__{mode}__{rule}{size}.jsonl"
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results))
                    top = results[0]
                    summary.append([spec.label, mode, rule, " ".join(repr(t) for t in top.times), top.report.mean_f1, top.report.std_f1])
    baseline = stratified_baseline_f1(labels)
    summary.append(["stratified_baseline", "-", "none", "", baseline, 0.0])
    _write_csv(cfg.out / "pointwise.csv", ["kernel", "mode", "time_us", "mean_f1", "std_f1", "best_c"], pointwise)
    _write_csv(cfg.out / "summary.csv", ["kernel", "mode", "pooling", "times", "mean_f1", "std_f1"], summary)
    return {"rows": len(summary), "baseline": baseline}


# --------------------------------------------------------------------------
# rank


def stage_rank(cfg: RunConfig, bin_grid=None) -> dict:
    ev = load_evolved(cfg)
    write_manifest(cfg)
    bin_grid = list(bin_grid or cfg.rank.bin_grid)
    if any(int(b) < 1 for b in bin_grid):
        raise ConfigError("bin counts must be positive")
    times = cfg.time_grid.times()
    c_grid = cfg.cv.c_grid()
    y = binary_labels(ev.graphs) if cfg.rank.with_f1 else None
    splits = stratified_splits(y, cfg.cv.folds, cfg.cv.reps, cfg.cv.seed) if y is not None else None
    d_max = int(max(d.max() for d in ev.distances.values()))
    n = len(ev.graphs)
    rows = []

    def row(kernel, mode, nb, t, gram):
        f1 = ""
        if y is not None:
            f1 = cross_validate(gram, y, c_grid, cfg.cv.folds, cfg.cv.reps, cfg.cv.seed, splits=splits).mean_f1
        rows.append([kernel, mode, nb, float(t), gram.rank / n, gram.rank, n, f1])

    for mode in cfg.modes:
        for t in times:
            row("qek", mode, "", t, assemble_gram(ev.records[mode], KernelSpec("qek"), float(t)))
        for nb in bin_grid:
            spec = KernelSpec("gdqc", n_bins_c=int(nb), d_max=d_max)
            for t in times:
                row("gdqc", mode, int(nb), t, assemble_gram(ev.records[mode], spec, float(t), ev.distances))
    _write_csv(cfg.out / "rank.csv", ["kernel", "mode", "n_bins_c", "time_us", "relative_rank", "rank", "n_data", "mean_f1"], rows)
    return {"rows": len(rows)}
