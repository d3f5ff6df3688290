"""Temporal-spatial entropy balancing for continuous treatments."""

__version__ = "0.1.0"

from .balance import (  # noqa: E402
    EBCT,
    IPW,
    METHODS,
    TSEBCT,
    PcaConfig,
    SolverConfig,
    SolverError,
    WeightSolution,
    solve_ebct,
    solve_ipw,
    solve_tsebct,
)
from .data_model import DataError, ObservationTable, StratumIndex, build_stratum_index, load_table  # noqa: E402
from .synthgen import SynthConfig, gen_dataset  # noqa: E402
