"""Command line entry point: ``dispknn <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import analysis, bench, dispersion, ivfpq, knn_interp, synth
from .store import VectorStore, load_vectors


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _read_probs(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]  # header row
    return np.array(rows, dtype=np.float64)


def cmd_synth(a):
    spec = synth.SynthSpec(a.dim, a.count, a.components, a.kappa, (a.norm_lo, a.norm_hi), a.seed)
    synth.make_synthetic_store(spec).save(a.out)


def cmd_disperse(a):
    cfg = dispersion.DispersionConfig(
        regularizer=a.reg, sigma=a.sigma, step_size=a.lr, steps=a.steps,
        circles_per_step=a.circles, seed=a.seed, batch_size=a.batch)
    store, trace = dispersion.disperse(VectorStore.load(a.inp), cfg)
    store.save(a.out)
    if a.trace:
        _write_csv(a.trace, ["step", "loss", "spherical_variance"], trace.to_csv_rows())


def cmd_build(a):
    index = ivfpq.build_index(VectorStore.load(a.inp), a.centroids, a.pq_m, a.pq_bits,
                              a.train_sample, a.seed)
    index.save(a.out)


def cmd_query(a):
    index = ivfpq.IvfPqIndex.load(a.index)
    rows = []
    for qi, res in enumerate(ivfpq.search_batch(index, load_vectors(a.queries), a.k, a.nprobe)):
        for r, (i, d, y) in enumerate(zip(res.ids, res.distances, res.labels)):
            rows.append((qi, r, int(i), repr(float(d)), int(y)))
    _write_csv(a.out, ["query", "rank", "id", "distance", "label"], rows)


def cmd_bench(a):
    index = ivfpq.IvfPqIndex.load(a.index)
    store = VectorStore.load(a.store) if a.store else None
    spec = bench.BenchSpec(query_count=a.queries, batch_size=a.batch, nprobe=a.nprobe, k=a.k,
                           workers=a.workers, repeats=a.repeats, seed=a.seed)
    res = bench.run_bench(index, spec, store=store)
    row = res.csv_row()
    row["run_id"] = a.run_id
    analysis.append_csv(a.out, bench.BENCH_FIELDS, [row])
    print(f"qps {res.qps:.1f}  IF {res.imbalance_factor:.3f}")


def cmd_analyze(a):
    index = ivfpq.IvfPqIndex.load(a.index)
    store = VectorStore.load(a.store)
    queries = load_vectors(a.queries) if a.queries else None
    report = analysis.analyze(index, store, enp_queries=a.enp_queries, k=a.k,
                              reference_nprobe=a.nprobe, seed=a.seed, queries=queries, run_id=a.run_id)
    report.to_json(a.out)
    if a.csv:
        analysis.append_csv(a.csv, analysis.REPORT_FIELDS, [report.csv_row()])


def cmd_sweep(a):
    kappas = [float(x) for x in a.kappas.split(",") if x]
    spec = bench.BenchSpec(query_count=a.queries, nprobe=a.nprobe, seed=a.seed)
    rows = bench.sweep_concentration(spec, kappas, a.count, a.dim, a.centroids, a.components,
                                     a.seed, out=a.out)
    for r in rows:
        print(f"kappa {r['kappa']:g}  qps {r['qps']:.1f}  IF {r['imbalance_factor']:.3f}")


def cmd_interp(a):
    index = ivfpq.IvfPqIndex.load(a.index)
    store = VectorStore.load(a.store)
    queries = load_vectors(a.queries)
    probs = _read_probs(a.model_probs)
    if probs.shape[0] != queries.shape[0]:
        raise SystemExit(f"{probs.shape[0]} model rows for {queries.shape[0]} queries")
    cfg = knn_interp.InterpConfig(k=a.k, temperature=a.temp, lam=a.lam, nprobe=a.nprobe,
                                  exact_distances=a.exact)
    out = [knn_interp.step_predict(index, store, h, p, cfg) for h, p in zip(queries, probs)]
    _write_csv(a.out, [f"p{i}" for i in range(probs.shape[1])], [[repr(float(x)) for x in p] for p in out])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dispknn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a power-spherical mixture store")
    s.add_argument("--dim", type=int, default=128)
    s.add_argument("--count", type=int, default=10_000)
    s.add_argument("--components", type=int, default=5)
    s.add_argument("--kappa", type=float, default=10.0)
    s.add_argument("--norm-lo", type=float, default=1.0)
    s.add_argument("--norm-hi", type=float, default=100.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("disperse", help="norm-preserving angular dispersion")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--reg", choices=["sliced", "mhe"], default="sliced")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--circles", type=int, default=1)
    s.add_argument("--batch", type=int, default=4096)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_disperse)

    s = sub.add_parser("build", help="train and fill an IVF-PQ index")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--centroids", type=int, default=ivfpq.DEFAULT_CENTROIDS)
    s.add_argument("--pq-m", type=int, default=ivfpq.DEFAULT_PQ_M)
    s.add_argument("--pq-bits", type=int, default=ivfpq.DEFAULT_PQ_BITS)
    s.add_argument("--train-sample", type=int, default=ivfpq.DEFAULT_TRAIN_SAMPLE)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("query", help="k-NN search for a file of queries")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--nprobe", type=int, default=ivfpq.DEFAULT_NPROBE)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("bench", help="measure queries per second")
    s.add_argument("--index", required=True)
    s.add_argument("--store", help="draw queries from raw keys instead of reconstructions")
    s.add_argument("--queries", type=int, default=10_000)
    s.add_argument("--batch", type=int, default=10)
    s.add_argument("--nprobe", type=int, default=ivfpq.DEFAULT_NPROBE)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--run-id", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("analyze", help="geometry report for an index and its store")
    s.add_argument("--index", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--enp-queries", type=int, default=1000)
    s.add_argument("--queries", help="external ENP query file")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--nprobe", type=int, default=ivfpq.DEFAULT_NPROBE)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--run-id", default="")
    s.add_argument("--csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="qps and imbalance across concentrations")
    s.add_argument("--kappas", default="1,10,50,100,1000")
    s.add_argument("--count", type=int, default=200_000)
    s.add_argument("--dim", type=int, default=128)
    s.add_argument("--centroids", type=int, default=512)
    s.add_argument("--components", type=int, default=5)
    s.add_argument("--queries", type=int, default=10_000)
    s.add_argument("--nprobe", type=int, default=ivfpq.DEFAULT_NPROBE)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("interp", help="interpolate model and k-NN distributions")
    s.add_argument("--index", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--model-probs", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=0.3)
    s.add_argument("--temp", type=float, default=100.0)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--nprobe", type=int, default=ivfpq.DEFAULT_NPROBE)
    s.add_argument("--exact", action="store_true", help="vote with exact distances")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
