# Balance and probe diagnostics before and after dispersion.
from dispknn import BenchSpec, BuildConfig, DispersionConfig, SynthSpec, make_synthetic_store, pipeline_experiment

store = make_synthetic_store(SynthSpec(dim=32, count=20_000, kappa=1000, seed=4))
before, after, trace = pipeline_experiment(
    store,
    DispersionConfig(steps=200, batch_size=20_000),
    BuildConfig(K=64),
    BenchSpec(query_count=1000),
    enp_queries=300,
)
for name, side in (("raw", before), ("dispersed", after)):
    r = side.report
    print(f"{name:>9}: IF={r.imbalance_factor:.2f} svar={r.spherical_variance:.3f} "
          f"ENP={r.enp_mean:.2f}+-{r.enp_std:.2f} v={r.v_measure:.3f} "
          f"|E[h]|={r.mean_vector_norm:.2f} qps={side.bench.qps:.0f}")
