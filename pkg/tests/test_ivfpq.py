import heapq
import itertools

import numpy as np
import pytest

from dispknn import ivfpq
from dispknn.errors import BadShape, EmptyIndex, EmptyStore, FormatError, InsufficientData
from dispknn.ivfpq import (
    IvfPqIndex,
    PqCodebooks,
    adc_table,
    assign,
    build_index,
    exact_search,
    index_from_bytes,
    index_to_bytes,
    kmeans_train,
    pq_decode,
    pq_encode,
    pq_train,
    recall_at_k,
    search,
    search_batch,
)
from dispknn.store import VectorStore
from dispknn.synth import SynthSpec, make_synthetic_store


def _store(rng, n, d, labels=None):
    keys = rng.standard_normal((n, d))
    return VectorStore(keys, labels if labels is not None else rng.integers(0, 50, n))


def _heap_scan(keys, q, k):
    """Second, independent exact scan: pure Python heap over (distance, id)."""
    items = []
    for i, row in enumerate(keys.tolist()):
        d = sum((a - b) ** 2 for a, b in zip(row, q.tolist()))
        items.append((d, i))
    return heapq.nsmallest(k, items)


class TestKMeans:
    def test_single_cluster_is_mean(self, rng):
        X = rng.standard_normal((200, 5))
        model = kmeans_train(X, 1)
        np.testing.assert_allclose(model.centroids[0], X.mean(axis=0), atol=1e-12)

    def test_one_cluster_per_point(self, rng):
        X = rng.standard_normal((30, 4))
        model = kmeans_train(X, 30, seed=3)
        got = sorted(map(tuple, np.round(model.centroids, 12)))
        want = sorted(map(tuple, np.round(X, 12)))
        assert got == want

    def test_objective_nonincreasing(self, rng):
        X = rng.standard_normal((1000, 8))
        hist = kmeans_train(X, 16, max_iters=50, seed=1).objective_history
        assert len(hist) >= 2
        assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))

    def test_duplicates_keep_k(self):
        X = np.repeat(np.eye(3), 10, axis=0)
        model = kmeans_train(X, 5, seed=0)
        assert model.K == 5
        assert np.all(np.isfinite(model.centroids))

    def test_insufficient(self, rng):
        with pytest.raises(InsufficientData):
            kmeans_train(rng.standard_normal((3, 2)), 4)

    def test_deterministic(self, rng):
        X = rng.standard_normal((500, 6))
        a, b = kmeans_train(X, 8, seed=4), kmeans_train(X, 8, seed=4)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_subsampling_cap(self, rng):
        X = rng.standard_normal((5000, 3))
        model = kmeans_train(X, 4, seed=0, max_points_per_centroid=100)
        assert model.K == 4


class TestAssign:
    C = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [-3.0, 2.0], [1.0, 2.0]])

    def test_exact_hit(self):
        assert assign(ivfpq.KMeansModel(self.C), self.C[3]) == 3

    def test_tie_lowest_index(self):
        # (1, 1) is at distance 1 from centroid 1 and from centroid 4
        assert assign(ivfpq.KMeansModel(self.C), [1.0, 1.0]) == 1

    def test_random_matches_scan(self, rng):
        C = rng.standard_normal((40, 7))
        H = rng.standard_normal((300, 7))
        got = assign(ivfpq.KMeansModel(C), H)
        want = [min(range(40), key=lambda j: (float(np.sum((h - C[j]) ** 2)), j)) for h in H]
        np.testing.assert_array_equal(got, want)


class TestPQ:
    def test_two_clusters(self, rng):
        a = rng.normal(-5.0, 0.1, (50, 1))
        b = rng.normal(3.0, 0.1, (70, 1))
        cb = pq_train(np.vstack([a, b]), M=1, bits=1, seed=0)
        got = np.sort(cb.codewords[0, :, 0])
        np.testing.assert_allclose(got, [a.mean(), b.mean()], atol=1e-12)

    def test_zero_residuals(self):
        R = np.zeros((300, 8))
        cb = pq_train(R, M=4, bits=8)
        assert np.all(cb.codewords == 0)
        np.testing.assert_array_equal(pq_decode(cb, pq_encode(cb, R)), R)

    def test_subspace_shape(self, rng):
        cb = pq_train(rng.standard_normal((300, 128)), M=8, bits=8, max_iters=3)
        assert cb.codewords.shape == (8, 256, 16)
        assert cb.L == 256 and cb.bits == 8 and cb.sub_dim == 16

    def test_bad_shape(self, rng):
        with pytest.raises(BadShape):
            pq_train(rng.standard_normal((300, 10)), M=3, bits=2)

    def test_insufficient(self, rng):
        with pytest.raises(InsufficientData):
            pq_train(rng.standard_normal((100, 8)), M=2, bits=8)

    @pytest.fixture
    def cb(self, rng):
        return pq_train(rng.standard_normal((400, 12)), M=3, bits=4, seed=2)

    def test_encode_codeword(self, cb):
        for j in (0, 5, 15):
            r = np.concatenate([cb.codewords[m, j] for m in range(cb.M)])
            np.testing.assert_array_equal(pq_encode(cb, r), [j] * cb.M)

    def test_encode_matches_scan(self, cb, rng):
        R = rng.standard_normal((200, 12))
        codes = pq_encode(cb, R)
        for r, code in zip(R, codes):
            for m in range(cb.M):
                sub = r[4 * m : 4 * m + 4]
                d = [float(np.sum((sub - w) ** 2)) for w in cb.codewords[m]]
                assert code[m] == int(np.argmin(d))

    def test_reconstruction_beats_other_codes(self, cb, rng):
        R = rng.standard_normal((200, 12))
        err = np.sum((pq_decode(cb, pq_encode(cb, R)) - R) ** 2, axis=1)
        for _ in range(20):
            other = rng.integers(0, cb.L, (200, cb.M))
            assert np.all(err <= np.sum((pq_decode(cb, other) - R) ** 2, axis=1) + 1e-12)


class TestADC:
    @pytest.fixture
    def cb(self, rng):
        return pq_train(rng.standard_normal((300, 6)), M=3, bits=2, seed=1)

    def test_zero_query(self, cb):
        table = adc_table(cb, np.zeros(6))
        np.testing.assert_allclose(table, np.sum(cb.codewords ** 2, axis=2), atol=1e-15)

    def test_encode_minimizes_table_sum(self, cb, rng):
        q = rng.standard_normal(6)
        table = adc_table(cb, q)
        code = pq_encode(cb, q)
        best = min(itertools.product(range(cb.L), repeat=cb.M),
                   key=lambda c: sum(table[m, c[m]] for m in range(cb.M)))
        assert sum(table[m, code[m]] for m in range(cb.M)) == pytest.approx(
            sum(table[m, best[m]] for m in range(cb.M)), abs=1e-12)

    def test_table_sum_equals_direct(self, cb, rng):
        for _ in range(50):
            q = rng.standard_normal(6) * 3
            code = rng.integers(0, cb.L, cb.M)
            table = adc_table(cb, q)
            direct = np.sum((q - pq_decode(cb, code)) ** 2)
            assert table[np.arange(cb.M), code].sum() == pytest.approx(direct, abs=1e-8)


@pytest.fixture(scope="module")
def synth_store():
    return make_synthetic_store(SynthSpec(dim=16, count=3000, kappa=10, seed=11))


@pytest.fixture(scope="module")
def synth_index(synth_store):
    return build_index(synth_store, K=16, M=4, bits=8, seed=2)


class TestBuild:
    def test_partition(self, rng):
        store = _store(rng, 1000, 8)
        index = build_index(store, K=16, M=2, bits=8, seed=0)
        all_ids = np.concatenate(index.list_ids)
        assert index.list_sizes().sum() == 1000 == index.ntotal
        np.testing.assert_array_equal(np.sort(all_ids), np.arange(1000))

    def test_keys_in_nearest_list(self, synth_store, synth_index):
        np.testing.assert_array_equal(
            synth_index.assignments, assign(ivfpq.KMeansModel(synth_index.centroids), synth_store.keys))

    def test_defaults(self):
        assert ivfpq.DEFAULT_CENTROIDS == 2048
        assert ivfpq.DEFAULT_NPROBE == 32
        assert ivfpq.DEFAULT_PQ_BITS == 8

    def test_same_seed_same_lists(self, synth_store, synth_index):
        again = build_index(synth_store, K=16, M=4, bits=8, seed=2)
        for a, b in zip(synth_index.list_ids, again.list_ids):
            np.testing.assert_array_equal(a, b)
        assert index_to_bytes(again) == index_to_bytes(synth_index)

    def test_train_sample(self, synth_store):
        index = build_index(synth_store, K=8, M=4, bits=8, train_sample=500, seed=0)
        assert index.ntotal == len(synth_store)

    def test_empty_store(self):
        with pytest.raises(InsufficientData):
            build_index(VectorStore.empty(4), K=2)


class TestExactSearch:
    def test_self_hit(self, rng):
        store = _store(rng, 100, 5)
        res = exact_search(store, store.keys[42], 1)
        assert res.ids.tolist() == [42] and res.distances[0] == 0.0
        assert res.labels[0] == store.labels[42]

    def test_all_sorted(self, rng):
        store = _store(rng, 60, 3)
        res = exact_search(store, rng.standard_normal(3), 60)
        assert sorted(res.ids.tolist()) == list(range(60))
        assert np.all(np.diff(res.distances) >= 0)

    def test_against_heap_scan(self, rng):
        for _ in range(5):
            n = int(rng.integers(50, 2000))
            store = _store(rng, n, 6)
            q = rng.standard_normal(6)
            res = exact_search(store, q, 10)
            ref = _heap_scan(store.keys, q, 10)
            assert res.ids.tolist() == [i for _, i in ref]
            np.testing.assert_allclose(res.distances, [d for d, _ in ref], rtol=1e-12)

    def test_ties_by_id(self):
        store = VectorStore(np.array([[1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0]]), [0, 1, 2, 3])
        assert exact_search(store, np.zeros(2), 3).ids.tolist() == [0, 1, 2]

    def test_empty(self):
        with pytest.raises(EmptyStore):
            exact_search(VectorStore.empty(3), np.zeros(3), 1)


class TestSearch:
    def test_raw_mode_is_exact(self, rng):
        store = _store(rng, 800, 8)
        index = build_index(store, K=10, seed=0, raw_residuals=True)
        for q in rng.standard_normal((30, 8)):
            a, e = search(index, q, 5, nprobe=10), exact_search(store, q, 5)
            assert a.ids.tolist() == e.ids.tolist()
            np.testing.assert_allclose(a.distances, e.distances, atol=1e-9)

    def test_stored_key_first(self, rng):
        store = _store(rng, 800, 8)
        index = build_index(store, K=10, seed=0, raw_residuals=True)
        res = search(index, store.keys[17], 3, nprobe=10)
        assert res.ids[0] == 17 and res.distances[0] == pytest.approx(0.0, abs=1e-12)

    def test_single_probe_can_miss(self):
        # true neighbour sits just across a cell boundary
        keys = np.array([[-1.0, 0.0], [-1.1, 0.0], [-0.9, 0.0], [1.0, 0.0], [1.1, 0.0], [0.9, 0.0],
                         [0.05, 0.0]])
        store = VectorStore(keys, np.arange(7))
        index = build_index(store, K=2, seed=0, raw_residuals=True)
        q = np.array([-0.2, 0.0])
        assert search(index, q, 1, nprobe=1).ids[0] != 6
        assert search(index, q, 1, nprobe=2).ids[0] == 6

    def test_sorted_and_sized(self, synth_store, synth_index, rng):
        res = search(synth_index, synth_store.keys[5], 8, nprobe=4)
        assert len(res) == 8
        assert np.all(np.diff(res.distances) >= 0)
        assert np.all(res.distances >= 0)
        np.testing.assert_array_equal(res.labels, synth_store.labels[res.ids])

    def test_fewer_candidates_than_k(self, rng):
        store = _store(rng, 300, 4)
        index = build_index(store, K=30, M=2, bits=4, seed=0)
        res = search(index, store.keys[0], 300, nprobe=1)
        assert len(res) == index.list_sizes()[index.rank_centroids(store.keys[0])[0]]

    def test_adc_distance_matches_table(self, synth_store, synth_index):
        q = synth_store.keys[3] * 0.9
        res = search(synth_index, q, 4, nprobe=synth_index.K)
        for i, d in zip(res.ids, res.distances):
            c = synth_index.assignments[i]
            pos = np.searchsorted(synth_index.list_ids[c], i)
            code = synth_index.list_codes[c][pos]
            table = adc_table(synth_index.codebooks, q - synth_index.centroids[c])
            assert d == pytest.approx(table[np.arange(len(code)), code].sum(), rel=1e-9, abs=1e-9)

    def test_pq_error_bound(self, synth_store, synth_index, rng):
        recon = np.empty_like(synth_store.keys)
        for c, ids in enumerate(synth_index.list_ids):
            recon[ids] = synth_index.centroids[c] + pq_decode(synth_index.codebooks, synth_index.list_codes[c])
        eps = np.linalg.norm(recon - synth_store.keys, axis=1).max()
        for q in synth_store.keys[rng.integers(0, 3000, 20)]:
            res = search(synth_index, q, 8, nprobe=synth_index.K)
            exact = np.sqrt(np.sum((synth_store.keys[res.ids] - q) ** 2, axis=1))
            assert np.all(np.sqrt(res.distances) >= exact - eps - 1e-9)

    def test_recall_monotone_in_nprobe(self, synth_store, synth_index, rng):
        Q = synth_store.keys[rng.integers(0, 3000, 100)] + rng.normal(0, 0.5, (100, 16))
        exact = [exact_search(synth_store, q, 8) for q in Q]
        recalls = [recall_at_k(search_batch(synth_index, Q, 8, p), exact) for p in (1, 2, 4, 8, 16)]
        assert all(a <= b for a, b in zip(recalls, recalls[1:]))

    def test_repeatable(self, synth_store, synth_index):
        q = synth_store.keys[9]
        a, b = search(synth_index, q, 8, 3), search(synth_index, q, 8, 3)
        assert a.hits == b.hits

    def test_batch_matches_single(self, synth_store, synth_index):
        Q = synth_store.keys[:7]
        batch = search_batch(synth_index, Q, 5, 3)
        for q, r in zip(Q, batch):
            assert search(synth_index, q, 5, 3).hits == r.hits

    def test_empty_index(self):
        index = IvfPqIndex(np.zeros((2, 4)), PqCodebooks(np.zeros((2, 2, 2))),
                           [np.zeros(0, np.int64)] * 2, [np.zeros((0, 2), np.uint8)] * 2, np.zeros(0))
        with pytest.raises(EmptyIndex):
            search(index, np.zeros(4), 1)

    def test_bad_args(self, synth_index):
        with pytest.raises(ValueError):
            search(synth_index, np.zeros(16), 0)
        with pytest.raises(ValueError):
            search(synth_index, np.zeros(16), 1, nprobe=0)


class TestIndexFormat:
    def test_roundtrip_bit_exact(self, synth_index):
        buf = index_to_bytes(synth_index)
        again = index_from_bytes(buf)
        assert index_to_bytes(again) == buf
        assert again.K == synth_index.K and again.ntotal == synth_index.ntotal

    def test_loaded_index_searches_identically(self, synth_store, synth_index, tmp_path):
        path = tmp_path / "a.idx"
        synth_index.save(path)
        loaded = IvfPqIndex.load(path)
        for q in synth_store.keys[:20]:
            assert search(loaded, q, 8, 4).hits == search(synth_index, q, 8, 4).hits

    def test_header_layout(self, synth_index):
        buf = index_to_bytes(synth_index)
        assert buf[:4] == b"DIVF"
        version, d, K, M, bits = np.frombuffer(buf[4:24], "<u4")
        (N,) = np.frombuffer(buf[24:32], "<u8")
        assert (version, d, K, M, bits, N) == (1, 16, 16, 4, 8, 3000)

    def test_bad_magic(self, synth_index):
        buf = bytearray(index_to_bytes(synth_index))
        buf[:4] = b"XXXX"
        with pytest.raises(FormatError):
            index_from_bytes(bytes(buf))

    def test_truncated(self, synth_index):
        with pytest.raises(FormatError):
            index_from_bytes(index_to_bytes(synth_index)[:-3])

    def test_raw_not_serializable(self, rng):
        index = build_index(_store(rng, 100, 4), K=4, raw_residuals=True)
        with pytest.raises(ValueError):
            index_to_bytes(index)


class TestConcentrationRecall:
    def test_uniform_store_recall_not_below_concentrated(self):
        recalls = {}
        for kappa in (1, 1000):
            store = make_synthetic_store(SynthSpec(dim=32, count=100_000, kappa=kappa, seed=0))
            index = build_index(store, K=256, M=8, bits=8, seed=0)
            rng = np.random.default_rng(1)
            Q = store.keys[rng.choice(len(store), 200, replace=False)]
            Q = Q + rng.standard_normal(Q.shape) * 0.01 * np.linalg.norm(Q, axis=1, keepdims=True) / np.sqrt(32)
            recalls[kappa] = recall_at_k(search_batch(index, Q, 8, 32), [exact_search(store, q, 8) for q in Q])
        assert recalls[1] >= recalls[1000], recalls
