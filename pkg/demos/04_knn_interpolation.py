# k-NN next-token distribution mixed into a model distribution.
import numpy as np

from dispknn import InterpConfig, VectorStore, build_index, step_predict

rng = np.random.default_rng(3)
vocab = 10
# each token id owns a small blob of decoder states
centers = rng.standard_normal((vocab, 16)) * 5
labels = np.repeat(np.arange(vocab), 200)
store = VectorStore(centers[labels] + rng.normal(0, 0.5, (labels.size, 16)), labels)
index = build_index(store, K=16, M=4, bits=6, seed=0)

h = centers[7] + rng.normal(0, 0.5, 16)
p_model = np.full(vocab, 1 / vocab)
for lam in (0.0, 0.3, 1.0):
    p = step_predict(index, store, h, p_model, InterpConfig(lam=lam, temperature=10.0))
    print(f"lambda={lam}  p(7)={p[7]:.3f}  argmax={p.argmax()}")
