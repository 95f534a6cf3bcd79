"""IVF-PQ approximate nearest-neighbour index.

Coarse k-means partitions the keys into Voronoi cells (inverted lists).
Inside each list, key residuals (key minus cell centroid) are product
quantized, and queries are scored with asymmetric distance tables. All
distances are squared Euclidean.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import BadShape, EmptyIndex, EmptyStore, FormatError, InsufficientData
from .store import VectorStore

INDEX_MAGIC = b"DIVF"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<4sIIIIIQ")

DEFAULT_CENTROIDS = 2048
DEFAULT_NPROBE = 32
DEFAULT_PQ_M = 8
DEFAULT_PQ_BITS = 8
DEFAULT_TRAIN_SAMPLE = 1_000_000
DEFAULT_KMEANS_ITERS = 25

_CHUNK = 8192
MAX_POINTS_PER_CENTROID = 256


def _sqnorms(X):
    return np.einsum("ij,ij->i", X, X)


def _nearest(X, C, c_sqnorms=None):
    """Index of the nearest row of ``C`` for every row of ``X``.

    Candidates are ranked by ``|c|^2/2 - x.c``. Rows whose two best scores are
    within rounding of each other are re-scored with direct differences so
    that exact ties resolve to the lower index. Returns
    ``(ids, squared_distances)``.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if c_sqnorms is None:
        c_sqnorms = _sqnorms(C)
    half = 0.5 * c_sqnorms
    neg_ct = np.ascontiguousarray(-C.T)
    n, K = X.shape[0], C.shape[0]
    ids = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    cmax = float(c_sqnorms.max()) if K else 0.0
    for lo in range(0, n, _CHUNK):
        x = X[lo : lo + _CHUNK]
        score = x @ neg_ct
        score += half
        best = np.argmin(score, axis=1)
        if K > 1:
            rows = np.arange(x.shape[0])
            top = score[rows, best]
            score[rows, best] = np.inf
            gap = score.min(axis=1) - top
            tol = 1e-9 * (_sqnorms(x) + cmax) + 1e-300
            for r in np.flatnonzero(gap <= tol):
                score[r, best[r]] = top[r]
                cand = np.flatnonzero(score[r] <= top[r] + tol[r])
                exact = np.sum((C[cand] - x[r]) ** 2, axis=1)
                best[r] = cand[int(np.argmin(exact))]
        ids[lo : lo + _CHUNK] = best
        dist[lo : lo + _CHUNK] = np.sum((x - C[best]) ** 2, axis=1)
    return ids, dist


# --------------------------------------------------------------------------
# k-means


@dataclass
class KMeansModel:
    centroids: np.ndarray
    max_iters: int = DEFAULT_KMEANS_ITERS
    seed: int = 0
    objective_history: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]


def _kmeanspp(X, K, rng):
    n = X.shape[0]
    sq = _sqnorms(X)
    centers = np.empty(K, dtype=np.int64)
    centers[0] = rng.integers(n)
    closest = np.sum((X - X[centers[0]]) ** 2, axis=1)
    chosen = np.zeros(n, dtype=bool)
    chosen[centers[0]] = True
    for i in range(1, K):
        cum = np.cumsum(closest)
        if cum[-1] > 0:
            c = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            c = min(c, n - 1)
        else:
            # remaining points duplicate the chosen centres
            c = int(rng.choice(np.flatnonzero(~chosen)))
        centers[i] = c
        chosen[c] = True
        d = sq - 2.0 * (X @ X[c]) + sq[c]
        np.maximum(d, 0.0, out=d)
        d[c] = 0.0
        np.minimum(closest, d, out=closest)
    return X[centers].copy()


def kmeans_train(X, K: int, max_iters: int = DEFAULT_KMEANS_ITERS, seed: int = 0,
                 max_points_per_centroid: int | None = MAX_POINTS_PER_CENTROID) -> KMeansModel:
    """Lloyd's algorithm from k-means++ seeding.

    When ``X`` has more than ``max_points_per_centroid * K`` rows, a uniform
    subsample of that size is clustered instead.

    Empty clusters are refilled with the member farthest from the centroid
    of the currently largest cluster, so ``K`` never shrinks. The objective
    recorded after each assignment step is nonincreasing.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise BadShape("X must be 2-D")
    if K < 1:
        raise ValueError("K must be >= 1")
    if X.shape[0] < K:
        raise InsufficientData(f"{X.shape[0]} points cannot make {K} clusters")
    rng = np.random.default_rng(seed)
    if max_points_per_centroid and X.shape[0] > max_points_per_centroid * K:
        X = X[np.sort(rng.choice(X.shape[0], max_points_per_centroid * K, replace=False))]
    C = _kmeanspp(X, K, rng)
    history: list[float] = []
    labels = None
    for _ in range(max_iters):
        new_labels, dist = _nearest(X, C)
        history.append(float(dist.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        C = _update_centroids(X, labels, dist, C)
    return KMeansModel(C, max_iters, seed, history)


def _update_centroids(X, labels, dist, C_old):
    K, d = C_old.shape
    counts = np.bincount(labels, minlength=K)
    sums = np.zeros((K, d))
    order = np.argsort(labels, kind="stable")
    present = np.flatnonzero(counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[present]
    sums[present] = np.add.reduceat(X[order], starts, axis=0)
    C = C_old.copy()
    nz = counts > 0
    C[nz] = sums[nz] / counts[nz, None]
    for e in np.flatnonzero(~nz):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        member_d = np.sum((X[members] - C[big]) ** 2, axis=1)
        far = members[int(np.argmax(member_d))]
        C[e] = X[far]
        labels[far] = e
        counts[big] -= 1
        counts[e] += 1
        C[big] = X[labels == big].mean(axis=0)
    return C


def assign(model, h):
    """Nearest centroid id for a vector (or each row of a 2-D array)."""
    C = model.centroids if isinstance(model, KMeansModel) else np.asarray(model)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        return int(_nearest(h[None, :], C)[0][0])
    return _nearest(h, C)[0]


# --------------------------------------------------------------------------
# product quantization


@dataclass
class PqCodebooks:
    codewords: np.ndarray  # (M, L, d / M)

    @property
    def M(self) -> int:
        return self.codewords.shape[0]

    @property
    def L(self) -> int:
        return self.codewords.shape[1]

    @property
    def bits(self) -> int:
        return int(self.L).bit_length() - 1

    @property
    def sub_dim(self) -> int:
        return self.codewords.shape[2]

    @property
    def dim(self) -> int:
        return self.M * self.sub_dim


def _split(R, M):
    n, d = R.shape
    return R.reshape(n, M, d // M)


def pq_train(residuals, M: int = DEFAULT_PQ_M, bits: int = DEFAULT_PQ_BITS, seed: int = 0,
             max_iters: int = DEFAULT_KMEANS_ITERS) -> PqCodebooks:
    R = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    n, d = R.shape
    if M < 1 or d % M:
        raise BadShape(f"dimension {d} is not divisible by M={M}")
    if not 1 <= bits <= 8:
        raise ValueError("bits must be in [1, 8] (codes are stored as bytes)")
    L = 1 << bits
    if n < L:
        raise InsufficientData(f"{n} residuals cannot train {L} codewords")
    sub = _split(R, M)
    codewords = np.empty((M, L, d // M))
    for m in range(M):
        codewords[m] = kmeans_train(sub[:, m, :], L, max_iters, seed + m).centroids
    return PqCodebooks(codewords)


def pq_encode(cb: PqCodebooks, r):
    """Per-subspace nearest codeword ids as ``uint8`` (ties to the lowest id)."""
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    R = np.atleast_2d(r)
    if R.shape[1] != cb.dim:
        raise BadShape(f"expected dimension {cb.dim}, got {R.shape[1]}")
    sub = _split(R, cb.M)
    codes = np.empty((R.shape[0], cb.M), dtype=np.uint8)
    for m in range(cb.M):
        codes[:, m] = _nearest(sub[:, m, :], cb.codewords[m])[0]
    return codes[0] if single else codes


def pq_decode(cb: PqCodebooks, codes):
    codes = np.asarray(codes)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    out = cb.codewords[np.arange(cb.M)[None, :], codes.astype(np.int64)]
    out = out.reshape(codes.shape[0], cb.dim)
    return out[0] if single else out


def adc_table(cb: PqCodebooks, q_residual):
    """``table[m, l]`` = squared distance from sub-vector m of the query residual to codeword l."""
    q = np.asarray(q_residual, dtype=np.float64).reshape(cb.M, 1, cb.sub_dim)
    return np.sum((cb.codewords - q) ** 2, axis=2)


def _inner_table(cb: PqCodebooks, q):
    """``table[m, l] = <q_m, codeword_{m,l}>`` for the raw query (not its residual)."""
    q = np.asarray(q, dtype=np.float64).reshape(cb.M, cb.sub_dim, 1)
    return np.matmul(cb.codewords, q)[:, :, 0]


# --------------------------------------------------------------------------
# index


@dataclass
class QueryResult:
    ids: np.ndarray
    distances: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.ids.size

    @property
    def hits(self):
        return list(zip(self.ids.tolist(), self.distances.tolist(), self.labels.tolist()))


@dataclass
class IvfPqIndex:
    """A built, read-only IVF-PQ index.

    ``codebooks`` is ``None`` and ``list_residuals`` is set when the index was
    built in raw-residual mode (PQ bypassed, used for oracle testing).
    """

    centroids: np.ndarray
    codebooks: PqCodebooks | None
    list_ids: list[np.ndarray]
    list_codes: list[np.ndarray] | None
    labels: np.ndarray
    list_residuals: list[np.ndarray] | None = None

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        self._c_sqnorms = _sqnorms(self.centroids)
        N = self.ntotal
        self.assignments = np.empty(N, dtype=np.int64)
        for i, ids in enumerate(self.list_ids):
            self.assignments[ids] = i
        sizes = self.list_sizes()
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self._ids = np.concatenate(self.list_ids) if self.list_ids else np.zeros(0, np.int64)
        self._codes = None
        self._base = None
        if self.codebooks is not None:
            self._precompute_terms()

    def _precompute_terms(self):
        # distance(q, key) = |q|^2 - 2 <q, c> - 2 <q, r~> + |c + r~|^2
        # with c the list centroid and r~ the decoded residual
        cb = self.codebooks
        codes = self.list_codes
        flat = np.concatenate(codes) if codes else np.zeros((0, cb.M), np.uint8)
        self._codes = np.ascontiguousarray(flat, dtype=np.uint8)
        self._base = np.empty(self._ids.size)
        for c, code in enumerate(codes):
            lo, hi = self._offsets[c], self._offsets[c + 1]
            if hi > lo:
                self._base[lo:hi] = _sqnorms(self.centroids[c] + pq_decode(cb, code))

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def ntotal(self) -> int:
        return int(sum(ids.size for ids in self.list_ids))

    @property
    def raw(self) -> bool:
        return self.codebooks is None

    def list_sizes(self) -> np.ndarray:
        return np.array([ids.size for ids in self.list_ids], dtype=np.int64)

    def rank_centroids(self, q):
        """Centroid ids ordered by distance to ``q`` (ties by lower id)."""
        d2 = np.sum((self.centroids - q) ** 2, axis=1)
        return np.argsort(d2, kind="stable")

    def save(self, path):
        with open(path, "wb") as f:
            f.write(index_to_bytes(self))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return index_from_bytes(f.read())


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def build_index(store: VectorStore, K: int = DEFAULT_CENTROIDS, M: int = DEFAULT_PQ_M,
                bits: int = DEFAULT_PQ_BITS, train_sample: int = DEFAULT_TRAIN_SAMPLE,
                seed: int = 0, max_iters: int = DEFAULT_KMEANS_ITERS,
                raw_residuals: bool = False) -> IvfPqIndex:
    """Train and fill an IVF-PQ index over ``store``.

    Centroids and codewords are rounded to float32 so that an index loaded
    from disk behaves exactly like the one built in memory.
    """
    X = store.keys
    N, d = X.shape
    if N == 0:
        raise InsufficientData("cannot build an index over an empty store")
    rng = np.random.default_rng(seed)
    if train_sample >= N:
        sample = np.arange(N)
    else:
        sample = np.sort(rng.choice(N, size=train_sample, replace=False))
    coarse = kmeans_train(X[sample], K, max_iters, seed)
    centroids = _f32(coarse.centroids)
    assignments, _ = _nearest(X, centroids)
    order = np.argsort(assignments, kind="stable")
    bounds = np.searchsorted(assignments[order], np.arange(K + 1))
    list_ids = [order[bounds[i] : bounds[i + 1]] for i in range(K)]
    residuals = X - centroids[assignments]

    if raw_residuals:
        return IvfPqIndex(centroids, None, list_ids, None, store.labels.copy(),
                          list_residuals=[residuals[ids] for ids in list_ids])

    if d % M:
        raise BadShape(f"dimension {d} is not divisible by M={M}")
    cb = pq_train(residuals[sample], M, bits, seed + 1, max_iters)
    cb = PqCodebooks(_f32(cb.codewords))
    codes = pq_encode(cb, residuals)
    return IvfPqIndex(centroids, cb, list_ids, [codes[ids] for ids in list_ids], store.labels.copy())


def _top_k(ids, dist, k):
    if dist.size > k:
        kth = np.partition(dist, k - 1)[k - 1]
        keep = dist <= kth
        ids, dist = ids[keep], dist[keep]
    order = np.lexsort((ids, dist))[:k]
    return ids[order], dist[order]


def _probes(index, q, nprobe):
    if nprobe < 1:
        raise ValueError("nprobe must be >= 1")
    return index.rank_centroids(q)[: min(nprobe, index.K)]


def search(index: IvfPqIndex, q, k: int = 8, nprobe: int = DEFAULT_NPROBE) -> QueryResult:
    """Approximate k-NN: scan the ``nprobe`` nearest lists with ADC distances.

    Hits are ordered by approximate squared distance, ties by lower key id.
    ``nprobe`` larger than the number of lists scans every list.
    """
    if index.ntotal == 0:
        raise EmptyIndex("index holds no keys")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 2:
        return search_batch(index, q, k, nprobe)
    probes = _probes(index, q, nprobe)
    if index.raw:
        ids, dist = _scan_raw(index, q, probes)
    else:
        ids, dist = _scan_pq(index, q, probes)
    ids, dist = _top_k(ids, dist, k)
    return QueryResult(ids, dist, index.labels[ids])


def _scan_raw(index, q, probes):
    all_ids, all_dist = [], []
    for c in probes:
        qr = q - index.centroids[c]
        all_ids.append(index.list_ids[c])
        all_dist.append(np.sum((index.list_residuals[c] - qr) ** 2, axis=1))
    return np.concatenate(all_ids), np.concatenate(all_dist)


@numba.njit(cache=True, nogil=True)
def _adc_scan(codes, table, lo, hi, dot_c, qq, base, out):
    n = 0
    M = codes.shape[1]
    for p in range(lo.size):
        for j in range(lo[p], hi[p]):
            acc = 0.0
            for m in range(M):
                acc += table[m, codes[j, m]]
            d = qq - 2.0 * (dot_c[p] + acc) + base[j]
            out[n] = d if d > 0.0 else 0.0
            n += 1


def _scan_pq(index, q, probes):
    off = index._offsets
    lo, hi = off[probes], off[probes + 1]
    sizes = hi - lo
    pos = np.repeat(lo - np.cumsum(sizes) + sizes, sizes) + np.arange(sizes.sum())
    dist = np.empty(pos.size)
    table = _inner_table(index.codebooks, q)
    _adc_scan(index._codes, table, lo, hi, index.centroids[probes] @ q, float(q @ q), index._base, dist)
    return index._ids[pos], dist


def search_batch(index: IvfPqIndex, Q, k: int = 8, nprobe: int = DEFAULT_NPROBE) -> list[QueryResult]:
    """Independent :func:`search` per row of ``Q``, in order."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    return [search(index, q, k, nprobe) for q in Q]


def exact_search(store: VectorStore, q, k: int = 8) -> QueryResult:
    """Linear scan with exact squared distances; ground truth for recall and ENP."""
    if len(store) == 0:
        raise EmptyStore("store holds no keys")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    dist = np.sum((store.keys - q) ** 2, axis=1)
    ids, dist = _top_k(np.arange(len(store)), dist, k)
    return QueryResult(ids, dist, store.labels[ids])


def recall_at_k(approx: list[QueryResult], exact: list[QueryResult]) -> float:
    hit = total = 0
    for a, e in zip(approx, exact):
        hit += np.intersect1d(a.ids, e.ids).size
        total += e.ids.size
    return hit / total


# --------------------------------------------------------------------------
# binary format


def index_to_bytes(index: IvfPqIndex) -> bytes:
    if index.raw:
        raise ValueError("raw-residual indexes are for testing and cannot be serialized")
    cb = index.codebooks
    parts = [
        _INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dim, index.K, cb.M, cb.bits, index.ntotal),
        index.centroids.astype("<f4").tobytes(),
        cb.codewords.astype("<f4").tobytes(),
    ]
    for ids, codes in zip(index.list_ids, index.list_codes):
        parts.append(struct.pack("<Q", ids.size))
        parts.append(ids.astype("<u8").tobytes())
        parts.append(np.ascontiguousarray(codes, dtype=np.uint8).tobytes())
    parts.append(index.labels.astype("<u4").tobytes())
    return b"".join(parts)


def index_from_bytes(buf: bytes) -> IvfPqIndex:
    if len(buf) < _INDEX_HEADER.size:
        raise FormatError("truncated index header")
    magic, version, d, K, M, bits, N = _INDEX_HEADER.unpack_from(buf, 0)
    if magic != INDEX_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}")
    if M == 0 or d % M:
        raise FormatError("dimension not divisible by M")
    L = 1 << bits
    off = _INDEX_HEADER.size
    try:
        centroids = np.frombuffer(buf, "<f4", K * d, off).reshape(K, d)
        off += K * d * 4
        codewords = np.frombuffer(buf, "<f4", M * L * (d // M), off).reshape(M, L, d // M)
        off += M * L * (d // M) * 4
        list_ids, list_codes = [], []
        for _ in range(K):
            (n,) = struct.unpack_from("<Q", buf, off)
            off += 8
            list_ids.append(np.frombuffer(buf, "<u8", n, off).astype(np.int64))
            off += n * 8
            list_codes.append(np.frombuffer(buf, np.uint8, n * M, off).reshape(n, M).copy())
            off += n * M
        labels = np.frombuffer(buf, "<u4", N, off).astype(np.int64)
        off += N * 4
    except (ValueError, struct.error) as exc:
        raise FormatError(f"truncated index file: {exc}") from None
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes in index file")
    index = IvfPqIndex(centroids.astype(np.float64), PqCodebooks(codewords.astype(np.float64)),
                       list_ids, list_codes, labels)
    if index.ntotal != N:
        raise FormatError(f"lists hold {index.ntotal} keys, header says {N}")
    return index


def load_index(path: str | os.PathLike) -> IvfPqIndex:
    return IvfPqIndex.load(path)
