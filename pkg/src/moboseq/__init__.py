"""Multi-objective Bayesian optimization over mutation spaces of a parental sequence."""

from .acquisition import AcquisitionContext, ehvi_2d, log_ei, qehvi_mc, qnehvi_mc
from .config import RunConfig, load_config
from .encoding import encode_blosum, encode_onehot, tanimoto
from .engine import benchmark, entropy_trace, hv_trace, run
from .evolve import GaConfig, ga_batch_optimize, ga_optimize, ga_sum_baseline, nsga2
from .oracle import OracleBank, OracleSpec, brute_force_front, pwm_score
from .pareto import ParetoState, crowding_distance, hypervolume, non_dominated_sort, shannon_entropy
from .runlog import RunLog
from .seqspace import MutationSpace, enumerate_space, mutate, sample_initial
from .surrogate import fit

__version__ = "0.1.0"

__all__ = [
    "AcquisitionContext", "ehvi_2d", "log_ei", "qehvi_mc", "qnehvi_mc",
    "RunConfig", "load_config",
    "encode_blosum", "encode_onehot", "tanimoto",
    "benchmark", "entropy_trace", "hv_trace", "run",
    "GaConfig", "ga_batch_optimize", "ga_optimize", "ga_sum_baseline", "nsga2",
    "OracleBank", "OracleSpec", "brute_force_front", "pwm_score",
    "ParetoState", "crowding_distance", "hypervolume", "non_dominated_sort", "shannon_entropy",
    "RunLog",
    "MutationSpace", "enumerate_space", "mutate", "sample_initial",
    "fit",
]
