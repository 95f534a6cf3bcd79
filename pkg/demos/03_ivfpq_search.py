# Build an IVF-PQ index and compare approximate hits with an exact scan.
import numpy as np

from dispknn import SynthSpec, build_index, exact_search, make_synthetic_store, search
from dispknn.ivfpq import recall_at_k, search_batch

store = make_synthetic_store(SynthSpec(dim=32, count=20_000, kappa=10, seed=2))
index = build_index(store, K=128, M=8, bits=8, seed=0)
print("lists", index.K, "keys", index.ntotal, "largest list", index.list_sizes().max())

rng = np.random.default_rng(0)
queries = store.keys[rng.choice(len(store), 200)] * 1.01
truth = [exact_search(store, q, 8) for q in queries]

# more probes means more candidates and better recall
for nprobe in (1, 4, 16, 64):
    hits = search_batch(index, queries, 8, nprobe)
    print(f"nprobe={nprobe:>3}  recall@8={recall_at_k(hits, truth):.3f}")

# the plateau is quantization error: keeping raw residuals removes it
raw = build_index(store, K=128, seed=0, raw_residuals=True)
print("raw residuals, nprobe=128:", recall_at_k(search_batch(raw, queries, 8, 128), truth))

res = search(index, queries[0], 3, nprobe=32)
print("first query hits", res.hits)

# index files round-trip exactly
index.save("/tmp/demo.idx")
again = type(index).load("/tmp/demo.idx")
print("reloaded hits equal:", search(again, queries[0], 3, 32).hits == res.hits)
