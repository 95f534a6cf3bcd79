"""Throughput harness: queries per second against an IVF-PQ index.

Only search wall time is measured. Store generation, index build and query
generation are timed separately and reported under ``phase_times``.
"""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import AnalysisReport, analyze, append_csv, imbalance_factor
from .dispersion import DispersionConfig, disperse
from .errors import EmptyIndex
from .ivfpq import (
    DEFAULT_CENTROIDS,
    DEFAULT_KMEANS_ITERS,
    DEFAULT_NPROBE,
    DEFAULT_PQ_BITS,
    DEFAULT_PQ_M,
    DEFAULT_TRAIN_SAMPLE,
    IvfPqIndex,
    build_index,
    pq_decode,
    search_batch,
)
from .store import VectorStore
from .synth import SWEEP_KAPPAS, SynthSpec, make_synthetic_store


@dataclass
class BenchSpec:
    query_count: int = 10_000
    batch_size: int = 10
    nprobe: int = DEFAULT_NPROBE
    k: int = 8
    workers: int = 1
    warmup_batches: int = 10
    repeats: int = 3
    noise: float = 0.01
    query_mode: str = "store"  # or "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.query_count < 1 or self.batch_size < 1 or self.k < 1 or self.nprobe < 1:
            raise ValueError("query_count, batch_size, k and nprobe must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.query_mode not in ("store", "uniform"):
            raise ValueError(f"unknown query mode {self.query_mode!r}")


@dataclass
class BuildConfig:
    K: int = DEFAULT_CENTROIDS
    M: int = DEFAULT_PQ_M
    bits: int = DEFAULT_PQ_BITS
    train_sample: int = DEFAULT_TRAIN_SAMPLE
    seed: int = 0
    max_iters: int = DEFAULT_KMEANS_ITERS

    def build(self, store: VectorStore) -> IvfPqIndex:
        return build_index(store, self.K, self.M, self.bits, self.train_sample, self.seed, self.max_iters)


@dataclass
class BenchResult:
    qps: float
    qps_runs: list[float]
    spec: BenchSpec
    imbalance_factor: float
    K: int
    N: int
    phase_times: dict = field(default_factory=dict)

    def csv_row(self) -> dict:
        row = {"qps": self.qps, "imbalance_factor": self.imbalance_factor, "K": self.K, "N": self.N}
        for name in ("query_count", "batch_size", "nprobe", "k", "workers", "repeats"):
            row[name] = getattr(self.spec, name)
        row["qps_runs"] = ";".join(f"{v:.3f}" for v in self.qps_runs)
        return row


BENCH_FIELDS = ["run_id", "query_count", "batch_size", "nprobe", "k", "workers", "repeats",
                "qps", "qps_runs", "imbalance_factor", "K", "N"]
SWEEP_FIELDS = ["kappa", "qps", "imbalance_factor", "K", "N", "dim"]


def reconstruct_keys(index: IvfPqIndex, ids) -> np.ndarray:
    """Approximate keys (centroid + decoded residual) for the given key ids."""
    ids = np.asarray(ids, dtype=np.int64)
    lists = index.assignments[ids]
    out = np.empty((ids.size, index.dim))
    for c in np.unique(lists):
        sel = np.flatnonzero(lists == c)
        pos = np.searchsorted(index.list_ids[c], ids[sel])
        if index.raw:
            resid = index.list_residuals[c][pos]
        else:
            resid = pq_decode(index.codebooks, index.list_codes[c][pos])
        out[sel] = index.centroids[c] + resid
    return out


def make_queries(index: IvfPqIndex, spec: BenchSpec, rng: np.random.Generator,
                 store: VectorStore | None = None) -> np.ndarray:
    """Bench queries: stored keys perturbed by Gaussian noise.

    The noise has standard deviation ``spec.noise * ||key|| / sqrt(d)`` per
    coordinate, i.e. about ``spec.noise`` of the key norm in total. Without a
    store, keys are reconstructed from the index. In ``uniform`` mode the
    direction is replaced by a uniform one and only the norm is kept.
    """
    ids = rng.integers(0, index.ntotal, size=spec.query_count)
    base = store.keys[ids] if store is not None else reconstruct_keys(index, ids)
    norms = np.linalg.norm(base, axis=1, keepdims=True)
    d = base.shape[1]
    if spec.query_mode == "uniform":
        g = rng.standard_normal(base.shape)
        return g / np.linalg.norm(g, axis=1, keepdims=True) * norms
    return base + rng.standard_normal(base.shape) * (spec.noise * norms / np.sqrt(d))


def _run_batches(index, batches, spec):
    if spec.workers == 1:
        for b in batches:
            search_batch(index, b, spec.k, spec.nprobe)
        return
    with ThreadPoolExecutor(max_workers=spec.workers) as pool:
        list(pool.map(lambda b: search_batch(index, b, spec.k, spec.nprobe), batches))


def run_bench(index: IvfPqIndex, spec: BenchSpec | None = None, rng: np.random.Generator | None = None,
              store: VectorStore | None = None, queries=None) -> BenchResult:
    """Median queries/second over ``spec.repeats`` timed passes."""
    if spec is None:
        spec = BenchSpec()
    if index.ntotal == 0:
        raise EmptyIndex("index holds no keys")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    t0 = time.perf_counter()
    if queries is None:
        queries = make_queries(index, spec, rng, store)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    phase = {"query_gen": time.perf_counter() - t0}
    batches = [queries[i : i + spec.batch_size] for i in range(0, queries.shape[0], spec.batch_size)]

    t0 = time.perf_counter()
    _run_batches(index, batches[: spec.warmup_batches], spec)
    phase["warmup"] = time.perf_counter() - t0

    runs, search_times = [], []
    for _ in range(spec.repeats):
        t0 = time.perf_counter()
        _run_batches(index, batches, spec)
        elapsed = time.perf_counter() - t0
        search_times.append(elapsed)
        runs.append(queries.shape[0] / elapsed)
    phase["search"] = search_times
    return BenchResult(
        qps=statistics.median(runs),
        qps_runs=runs,
        spec=spec,
        imbalance_factor=imbalance_factor(index.list_sizes()),
        K=index.K,
        N=index.ntotal,
        phase_times=phase,
    )


def sweep_concentration(spec: BenchSpec, kappa_list=SWEEP_KAPPAS, store_size: int = 200_000,
                        dim: int = 128, K: int = 512, components: int = 5, seed: int = 0,
                        build: BuildConfig | None = None, out=None) -> list[dict]:
    """For each kappa: generate a store, build an index, bench it.

    Returns one row per kappa with keys ``SWEEP_FIELDS``; appends them to the
    CSV at ``out`` when given.
    """
    kappa_list = list(kappa_list)
    if not kappa_list:
        raise ValueError("kappa_list is empty")
    if build is None:
        build = BuildConfig(K=K, seed=seed)
    rows = []
    for kappa in kappa_list:
        t0 = time.perf_counter()
        store = make_synthetic_store(SynthSpec(dim, store_size, components, float(kappa), seed=seed))
        t1 = time.perf_counter()
        index = build.build(store)
        t2 = time.perf_counter()
        res = run_bench(index, spec, np.random.default_rng(spec.seed), store=store)
        res.phase_times.update(generate=t1 - t0, build=t2 - t1)
        rows.append({"kappa": float(kappa), "qps": res.qps, "imbalance_factor": res.imbalance_factor,
                     "K": res.K, "N": res.N, "dim": dim, "_result": res})
    if out is not None:
        append_csv(out, SWEEP_FIELDS, [{k: r[k] for k in SWEEP_FIELDS} for r in rows])
    return rows


@dataclass
class PipelineSide:
    report: AnalysisReport
    bench: BenchResult
    store: VectorStore
    index: IvfPqIndex


def pipeline_experiment(store: VectorStore, disp_cfg: DispersionConfig, build_cfg: BuildConfig,
                        spec: BenchSpec, enp_queries: int = 1000, seed: int = 0):
    """Build, bench and analyze the raw store, then the dispersed one.

    Both sides use identical build and bench settings and the same query
    key ids. Returns ``(before, after, trace)``.
    """
    sides = []
    dispersed, trace = disperse(store, disp_cfg)
    for s in (store, dispersed):
        index = build_cfg.build(s)
        bench = run_bench(index, spec, np.random.default_rng(spec.seed), store=s)
        report = analyze(index, s, enp_queries=enp_queries, k=spec.k, seed=seed)
        sides.append(PipelineSide(report, bench, s, index))
    return sides[0], sides[1], trace
