"""Geometry diagnostics for a datastore and its IVF partition."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EmptyIndex, EmptyPartition, EmptyStore, LengthMismatch
from .geometry import normalize_rows, spherical_variance
from .ivfpq import DEFAULT_NPROBE, IvfPqIndex, search
from .store import VectorStore


def imbalance_factor_exact(sizes) -> Fraction:
    sizes = [int(s) for s in sizes]
    K = len(sizes)
    N = sum(sizes)
    if K < 1 or N < 1:
        raise EmptyPartition("imbalance factor needs at least one element")
    return Fraction(K * sum(s * s for s in sizes), N * N)


def imbalance_factor(sizes) -> float:
    """``K * sum((N_i / N)^2)``: 1 for equal lists, K when one list holds everything.

    Evaluated in exact rational arithmetic, then rounded once.
    """
    return float(imbalance_factor_exact(sizes))


def cluster_size_histogram(index: IvfPqIndex) -> np.ndarray:
    return index.list_sizes()


def mean_vector_norm(store: VectorStore) -> float:
    """Norm of the mean raw key; low values mean a centrally balanced store."""
    if len(store) == 0:
        raise EmptyStore("mean of an empty store")
    return float(np.linalg.norm(store.keys.mean(axis=0)))


def _entropy(counts, total):
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log(p)))


def clustering_metrics(cluster_ids, labels, beta: float = 1.0):
    """Homogeneity, completeness and v-measure of a clustering against labels.

    Natural logs; empty cells contribute nothing. Homogeneity is 1 when there
    is a single class and completeness is 1 when there is a single cluster.
    """
    cluster_ids = np.asarray(cluster_ids)
    labels = np.asarray(labels)
    if cluster_ids.shape != labels.shape:
        raise LengthMismatch(f"{cluster_ids.shape} vs {labels.shape}")
    N = cluster_ids.size
    if N == 0:
        raise LengthMismatch("no elements")
    _, ci = np.unique(cluster_ids, return_inverse=True)
    _, li = np.unique(labels, return_inverse=True)
    joint = np.zeros((ci.max() + 1, li.max() + 1))
    np.add.at(joint, (ci, li), 1.0)
    per_cluster = joint.sum(axis=1)
    per_class = joint.sum(axis=0)

    h_v = _entropy(per_class, N)
    h_k = _entropy(per_cluster, N)
    nz = joint > 0
    w = joint[nz] / N
    # every cluster and class occurs at least once, so the margins are > 0
    h_v_given_k = -float(np.sum(w * np.log((joint / per_cluster[:, None])[nz])))
    h_k_given_v = -float(np.sum(w * np.log((joint / per_class[None, :])[nz])))

    hom = 1.0 if h_v == 0 else 1.0 - h_v_given_k / h_v
    compl = 1.0 if h_k == 0 else 1.0 - h_k_given_v / h_k
    if hom == 0 and compl == 0:
        v = 0.0
    else:
        v = (1 + beta) * hom * compl / (beta * hom + compl)
    return hom, compl, v


def enp(index: IvfPqIndex, store: VectorStore | None, queries, k: int = 8,
        reference_nprobe: int = DEFAULT_NPROBE):
    """Expected number of probes.

    For each query the centroids are ranked by distance (rank 1 = nearest).
    The reference neighbours come from approximate search with
    ``reference_nprobe`` probes; the sample is the worst centroid rank among
    them. Returns ``(mean, std, samples)``.
    """
    if index.ntotal == 0:
        raise EmptyIndex("index holds no keys")
    if reference_nprobe < 1:
        raise ValueError("reference_nprobe must be >= 1")
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[0] == 0:
        raise ValueError("need at least one query")
    samples = np.empty(Q.shape[0], dtype=np.int64)
    rank = np.empty(index.K, dtype=np.int64)
    for i, q in enumerate(Q):
        rank[index.rank_centroids(q)] = np.arange(1, index.K + 1)
        ref = search(index, q, k, reference_nprobe)
        samples[i] = rank[index.assignments[ref.ids]].max()
    return float(samples.mean()), float(samples.std()), samples


def sample_queries(store: VectorStore, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` keys drawn uniformly (without replacement when possible)."""
    n = len(store)
    if n == 0:
        raise EmptyStore("cannot sample queries from an empty store")
    idx = rng.choice(n, size=count, replace=count > n)
    return store.keys[idx]


REPORT_FIELDS = [
    "run_id", "N", "K", "imbalance_factor", "spherical_variance", "enp_mean", "enp_std",
    "homogeneity", "completeness", "v_measure", "mean_vector_norm",
]


@dataclass
class AnalysisReport:
    imbalance_factor: float
    spherical_variance: float
    enp_mean: float
    enp_std: float
    homogeneity: float
    completeness: float
    v_measure: float
    mean_vector_norm: float
    cluster_sizes: list[int] = field(default_factory=list)
    run_id: str = ""

    @property
    def K(self) -> int:
        return len(self.cluster_sizes)

    @property
    def N(self) -> int:
        return int(sum(self.cluster_sizes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["K"] = self.K
        d["N"] = self.N
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def csv_row(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in REPORT_FIELDS}


def append_csv(path, fields, rows) -> None:
    """Append ``rows`` (dicts) to ``path``; the header is written once."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    if not new:
        with open(path, newline="") as f:
            header = next(csv.reader(f), None)
        if header != list(fields):
            raise ValueError(f"{path} has header {header}, expected {list(fields)}")
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields))
        if new:
            w.writeheader()
        w.writerows(rows)


def analyze(index: IvfPqIndex, store: VectorStore, enp_queries: int = 1000, k: int = 8,
            reference_nprobe: int = DEFAULT_NPROBE, seed: int = 0, queries=None,
            run_id: str = "") -> AnalysisReport:
    """Full report; ENP queries are sampled from the store unless given."""
    if queries is None:
        queries = sample_queries(store, enp_queries, np.random.default_rng(seed))
    sizes = cluster_size_histogram(index)
    enp_mean, enp_std, _ = enp(index, store, queries, k, reference_nprobe)
    hom, compl, v = clustering_metrics(index.assignments, store.labels)
    return AnalysisReport(
        imbalance_factor=imbalance_factor(sizes),
        spherical_variance=spherical_variance(normalize_rows(store.keys)),
        enp_mean=enp_mean,
        enp_std=enp_std,
        homogeneity=hom,
        completeness=compl,
        v_measure=v,
        mean_vector_norm=mean_vector_norm(store),
        cluster_sizes=sizes.tolist(),
        run_id=run_id,
    )
