"""Consensus ADMM with adaptive uncertainty-based diagonal weights.

The package provides the loss oracles, the weighting schemes (constant,
residual balancing, spectral and uncertainty-based), the ADMM engine and a
small configuration-driven benchmark runner.
"""

from .data import Dataset, load_idx, make_problem, partition_by_class, synth_blobs
from .lanczos import LowRankEig, lanczos_topr, lowrank_diag
from .losses import ElasticNetLoss, MultinomialLoss, SmoothedSvmLoss, weighted_prox
from .problem import (
    ConsensusProblem,
    ElasticNet,
    InvariantViolation,
    LossOracle,
    OracleDefectError,
    SolverState,
    Tikhonov,
    check_oracle,
)
from .solver import ConsensusADMM, SolverAbort, SolverConfig, TraceRecord, run
from .weights import RestrictionInterval, affine_restrict, auq_weights, interval_update

__version__ = "0.1.0"

__all__ = [
    "ConsensusADMM", "ConsensusProblem", "Dataset", "ElasticNet", "ElasticNetLoss",
    "InvariantViolation", "LossOracle", "LowRankEig", "MultinomialLoss", "OracleDefectError",
    "RestrictionInterval", "SmoothedSvmLoss", "SolverAbort", "SolverConfig", "SolverState",
    "Tikhonov", "TraceRecord", "affine_restrict", "auq_weights", "check_oracle",
    "interval_update", "lanczos_topr", "load_idx", "lowrank_diag", "make_problem",
    "partition_by_class", "run", "synth_blobs", "weighted_prox",
]
