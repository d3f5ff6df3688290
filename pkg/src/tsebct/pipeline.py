"""End-to-end runs: strata from flexible grids, all weighting methods, reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .balance import EBCT, IPW, TSEBCT, PcaConfig, SolverConfig, WeightSolution, solve_ebct, solve_ipw, solve_tsebct
from .data_model import ObservationTable, StratumIndex, build_stratum_index
from .evaluate import compare_methods
from .hexgrid import DEFAULT_THRESHOLD, flexible_labels

log = logging.getLogger(__name__)

UNWEIGHTED = "unweighted"


@dataclass(frozen=True)
class RunSettings:
    pca: PcaConfig = PcaConfig()
    solver: SolverConfig = SolverConfig()
    grid_threshold: Optional[float] = DEFAULT_THRESHOLD
    grid_seed: int = 0
    ipw_trim: float = 0.05


def strata_for(table: ObservationTable, grid_threshold: Optional[float] = DEFAULT_THRESHOLD, seed: int = 0):
    """Stratum index, optionally after pooling ordinal cell labels into flexible grids.

    With ``grid_threshold`` set, the distinct cell labels are laid on a line
    of hex cells and grouped so that each group holds at least that fraction
    of the rows; the table returned carries the group ids as cell labels.
    """
    if grid_threshold is not None:
        table = table.with_labels(flexible_labels(table.cell_label, grid_threshold, seed), table.time_label)
    return table, build_stratum_index(table)


def solve_method(
    method: str, table: ObservationTable, idx: StratumIndex, settings: RunSettings = RunSettings(), base_weights=None
) -> WeightSolution:
    if method == IPW:
        return solve_ipw(table, settings.ipw_trim)
    if method == EBCT:
        return solve_ebct(table, settings.pca, settings.solver, base_weights)
    if method == TSEBCT:
        return solve_tsebct(table, idx, settings.pca, settings.solver, base_weights)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class RunResult:
    table: ObservationTable
    idx: StratumIndex
    solutions: Dict[str, WeightSolution] = field(default_factory=dict)
    comparison: dict = field(default_factory=dict)

    def weights(self) -> Dict[str, np.ndarray]:
        out = {UNWEIGHTED: np.full(self.table.n, 1.0 / self.table.n)}
        out.update({m: s.weights for m, s in self.solutions.items()})
        return out

    def average_abs_correlation(self) -> Dict[str, float]:
        return {m: r.average_absolute_weighted for m, r in self.comparison["correlation"].items()}

    def worst_stratum_correlation(self) -> Dict[str, float]:
        return {m: r.worst_stratum() for m, r in self.comparison["correlation"].items()}

    def auuc(self) -> Dict[str, float]:
        return {m: r.auuc for m, r in self.comparison["metrics"].items()}

    def auc(self) -> Dict[str, float]:
        return {m: r.auc for m, r in self.comparison["metrics"].items()}


def run_methods(
    table: ObservationTable,
    methods: Iterable[str] = (IPW, EBCT, TSEBCT),
    settings: RunSettings = RunSettings(),
    metrics: bool = True,
    learner="logistic",
) -> RunResult:
    """Solve every method on one dataset and compare against uniform weights."""
    table, idx = strata_for(table, settings.grid_threshold, settings.grid_seed)
    result = RunResult(table, idx)
    for method in methods:
        result.solutions[method] = solve_method(method, table, idx, settings)
        sol = result.solutions[method]
        log.info("%s: converged=%s iterations=%d loss=%.3g", method, sol.converged, sol.iterations, sol.final_loss)
    result.comparison = compare_methods(table, result.weights(), idx, learner=learner, metrics=metrics)
    return result
