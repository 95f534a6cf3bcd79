import csv

import numpy as np
import pytest

from dispknn.analysis import imbalance_factor
from dispknn.bench import (
    BENCH_FIELDS,
    SWEEP_FIELDS,
    BenchSpec,
    BuildConfig,
    make_queries,
    pipeline_experiment,
    reconstruct_keys,
    run_bench,
    sweep_concentration,
)
from dispknn.dispersion import DispersionConfig
from dispknn.errors import EmptyIndex
from dispknn.ivfpq import IvfPqIndex, PqCodebooks, build_index, pq_decode
from dispknn.synth import SynthSpec, make_synthetic_store


@pytest.fixture(scope="module")
def store():
    return make_synthetic_store(SynthSpec(dim=16, count=4000, kappa=50, seed=3))


@pytest.fixture(scope="module")
def index(store):
    return build_index(store, K=16, M=4, bits=6, seed=0)


SMALL = dict(query_count=200, repeats=3, warmup_batches=2)


class TestSpec:
    def test_defaults(self):
        s = BenchSpec()
        assert (s.query_count, s.batch_size, s.nprobe, s.k) == (10000, 10, 32, 8)
        assert s.workers == 1 and s.repeats == 3 and s.warmup_batches == 10

    @pytest.mark.parametrize("kw", [{"workers": 0}, {"repeats": 0}, {"batch_size": 0}, {"query_mode": "x"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BenchSpec(**kw)


class TestRunBench:
    def test_defaults_echoed(self, index):
        res = run_bench(index, BenchSpec(repeats=1, warmup_batches=1))
        row = res.csv_row()
        assert (row["query_count"], row["batch_size"], row["nprobe"], row["k"]) == (10000, 10, 32, 8)

    def test_median_and_stats(self, index, store):
        res = run_bench(index, BenchSpec(**SMALL), store=store)
        assert len(res.qps_runs) == 3 and res.qps > 0
        assert min(res.qps_runs) <= res.qps <= max(res.qps_runs)
        assert res.imbalance_factor == imbalance_factor(index.list_sizes())
        assert (res.K, res.N) == (16, 4000)

    def test_phase_timers(self, index, store):
        res = run_bench(index, BenchSpec(**SMALL), store=store)
        assert set(res.phase_times) >= {"query_gen", "warmup", "search"}
        assert len(res.phase_times["search"]) == 3

    def test_workers(self, index, store):
        res = run_bench(index, BenchSpec(workers=3, **SMALL), store=store)
        assert res.qps > 0

    def test_empty(self):
        index = IvfPqIndex(np.zeros((2, 4)), PqCodebooks(np.zeros((2, 2, 2))),
                           [np.zeros(0, np.int64)] * 2, [np.zeros((0, 2), np.uint8)] * 2, np.zeros(0))
        with pytest.raises(EmptyIndex):
            run_bench(index, BenchSpec(**SMALL))


class TestQueries:
    def test_seeded(self, index, store):
        spec = BenchSpec(**SMALL)
        a = make_queries(index, spec, np.random.default_rng(1), store)
        b = make_queries(index, spec, np.random.default_rng(1), store)
        np.testing.assert_array_equal(a, b)

    def test_noise_scale(self, index, store):
        spec = BenchSpec(query_count=3000)
        rng = np.random.default_rng(2)
        ids = np.random.default_rng(2).integers(0, index.ntotal, 3000)
        q = make_queries(index, spec, rng, store)
        rel = np.linalg.norm(q - store.keys[ids], axis=1) / np.linalg.norm(store.keys[ids], axis=1)
        assert rel.mean() == pytest.approx(0.01, rel=0.1)

    def test_uniform_keeps_norm(self, index, store):
        spec = BenchSpec(query_count=100, query_mode="uniform")
        ids = np.random.default_rng(0).integers(0, index.ntotal, 100)
        q = make_queries(index, spec, np.random.default_rng(0), store)
        np.testing.assert_allclose(np.linalg.norm(q, axis=1), np.linalg.norm(store.keys[ids], axis=1))

    def test_reconstruct(self, index):
        ids = np.array([5, 1, 3000])
        rec = reconstruct_keys(index, ids)
        for i, r in zip(ids, rec):
            c = index.assignments[i]
            pos = np.searchsorted(index.list_ids[c], i)
            np.testing.assert_allclose(r, index.centroids[c] + pq_decode(index.codebooks, index.list_codes[c][pos]))


class TestSweep:
    def test_single_row(self, tmp_path):
        out = tmp_path / "s.csv"
        rows = sweep_concentration(BenchSpec(**SMALL), [10], store_size=2000, dim=8, K=8,
                                   build=BuildConfig(K=8, M=2, bits=4), out=out)
        assert len(rows) == 1 and rows[0]["kappa"] == 10.0
        lines = list(csv.reader(open(out)))
        assert lines[0] == SWEEP_FIELDS and len(lines) == 2

    def test_header_stable_on_append(self, tmp_path):
        out = tmp_path / "s.csv"
        for _ in range(2):
            sweep_concentration(BenchSpec(**SMALL), [1, 100], store_size=1000, dim=8, K=4,
                                build=BuildConfig(K=4, M=2, bits=4), out=out)
        lines = list(csv.reader(open(out)))
        assert lines[0] == SWEEP_FIELDS and len(lines) == 5
        assert sum(line == SWEEP_FIELDS for line in lines) == 1

    def test_empty_list(self):
        with pytest.raises(ValueError):
            sweep_concentration(BenchSpec(), [])

    def test_bench_fields(self, index, store):
        row = run_bench(index, BenchSpec(**SMALL), store=store).csv_row()
        assert set(row) <= set(BENCH_FIELDS)


class TestPipeline:
    def test_zero_steps(self, store):
        before, after, trace = pipeline_experiment(
            store, DispersionConfig(steps=0), BuildConfig(K=16, M=4, bits=6), BenchSpec(**SMALL), enp_queries=50)
        b, a = before.report.to_dict(), after.report.to_dict()
        assert a == b
        assert len(trace.loss) == 1

    def test_dispersion_changes_store(self, store):
        before, after, trace = pipeline_experiment(
            store, DispersionConfig(steps=30, step_size=0.1), BuildConfig(K=16, M=4, bits=6),
            BenchSpec(**SMALL), enp_queries=50)
        np.testing.assert_allclose(np.linalg.norm(after.store.keys, axis=1),
                                   np.linalg.norm(store.keys, axis=1), rtol=1e-9)
        assert after.report.spherical_variance > before.report.spherical_variance
        assert len(trace.loss) == 31
