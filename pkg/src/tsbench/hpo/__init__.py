from .bandits import hyperband, hyperband_schedule, random_search, sh_schedule, successive_halving
from .benchmark import CENSORED, HpoTrace, TabularBenchmark, TraceEntry, replay
from .bo import encode_descriptors, expected_improvement, rf_surrogate_bo
from .ranking import CDReport, critical_difference, nemenyi_q, rank_and_cd

__all__ = [
    "CENSORED",
    "CDReport",
    "HpoTrace",
    "TabularBenchmark",
    "TraceEntry",
    "critical_difference",
    "encode_descriptors",
    "expected_improvement",
    "hyperband",
    "hyperband_schedule",
    "nemenyi_q",
    "random_search",
    "rank_and_cd",
    "replay",
    "rf_surrogate_bo",
    "sh_schedule",
    "successive_halving",
]
