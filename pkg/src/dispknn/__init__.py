"""Angular dispersion of k-NN datastore keys and IVF-PQ retrieval diagnostics."""
from .analysis import AnalysisReport, analyze, clustering_metrics, enp, imbalance_factor, mean_vector_norm
from .bench import BenchResult, BenchSpec, BuildConfig, pipeline_experiment, run_bench, sweep_concentration
from .dispersion import DispersionConfig, DispersionTrace, compare_regularizers, disperse
from .geometry import GreatCircle, min_pairwise_angle, spherical_variance
from .ivfpq import IvfPqIndex, QueryResult, build_index, exact_search, search, search_batch
from .knn_interp import InterpConfig, interpolate, knn_distribution, step_predict
from .store import VectorStore
from .synth import PowerSphericalParams, SynthSpec, make_synthetic_store, sample_power_spherical

__version__ = "0.1.0"
