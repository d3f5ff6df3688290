"""Balancing weights: entropy balancing duals solved by Newton's method, and IPW.

For a constraint matrix ``C`` (m x n), targets ``M`` and base weights ``Q``
the weights minimising ``sum w log(w / Q)`` subject to ``C w = M`` are

    w(Z) = Q * exp(-C'Z) / (Q' exp(-C'Z))

where ``Z`` minimises the convex dual ``log(Q' exp(-C'Z)) + M'Z``. Its
gradient is ``M - C w`` and its Hessian ``C (diag(w) - w w') C'``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .data_model import DataError, ObservationTable, StratumIndex
from .preprocess import (
    WEIGHT_SUM,
    BlockDesign,
    pca_fit,
    pca_transform,
    build_block_design,
    treatment_moments,
)

log = logging.getLogger(__name__)

IPW, EBCT, TSEBCT = "ipw", "ebct", "tsebct"
METHODS = (IPW, EBCT, TSEBCT)

MAX_RIDGE = 1e-2
RANK_TOL = 1e-10


class SolverError(RuntimeError):
    """The Newton system could not be solved even after ridge escalation."""


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 1.0
    tolerance: float = 0.01
    max_iterations: int = 200
    hessian_ridge: float = 1e-8
    line_search: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.hessian_ridge < 0:
            raise ValueError("hessian_ridge must be non-negative")


@dataclass(frozen=True)
class PcaConfig:
    explained_threshold: float = 0.95
    max_components: Optional[int] = None
    treatment_degree: int = 1
    interaction_moments: int = 1


@dataclass(frozen=True)
class BalanceProblem:
    design: BlockDesign
    method: str = TSEBCT

    @property
    def C(self) -> np.ndarray:
        return self.design.g_matrix

    @property
    def M(self) -> np.ndarray:
        return self.design.targets

    @property
    def Q(self) -> np.ndarray:
        return self.design.base_weights


@dataclass
class WeightSolution:
    weights: np.ndarray
    multipliers: np.ndarray
    loss_trace: np.ndarray
    converged: bool
    iterations: int
    method: str = TSEBCT
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    residuals: dict = field(default_factory=dict)
    dropped_rows: tuple = ()
    n_constraints: int = 0

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1]) if self.loss_trace.size else 0.0

    def report(self) -> dict:
        return {
            "method": self.method,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_loss": self.final_loss,
            "n_constraints": int(self.n_constraints),
            "dropped_rows": list(self.dropped_rows),
            "residuals": self.residuals,
            "effective_sample_size": float(1.0 / np.sum(self.weights ** 2)),
        }


class _Blocks:
    """Dense pieces of a block-sparse constraint matrix.

    Global rows (stratum -1) are kept as one dense matrix over all columns;
    each stratum's rows are kept as a dense block over that stratum's
    columns only. Without a row assignment every row is global.
    """

    def __init__(self, design: BlockDesign):
        C = design.g_matrix
        self.m, self.n = C.shape
        strata = np.array([lab.stratum for lab in design.row_labels])
        if design.row_assignment is None:
            strata[:] = -1
        self.global_rows = np.flatnonzero(strata < 0)
        self.G = C[self.global_rows].toarray()
        self.blocks = []
        for s in np.unique(strata[strata >= 0]):
            rows = np.flatnonzero(strata == s)
            cols = np.flatnonzero(design.row_assignment == s)
            sub = C[rows]
            block = sub[:, cols]
            if block.nnz != sub.nnz:
                raise DataError(f"stratum {s} rows have entries outside the stratum")
            self.blocks.append((rows, cols, block.toarray()))

    def matvec(self, w) -> np.ndarray:
        out = np.empty(self.m)
        out[self.global_rows] = self.G @ w
        for rows, cols, B in self.blocks:
            out[rows] = B @ w[cols]
        return out

    def weighted_gram(self, w) -> np.ndarray:
        """``C diag(w) C'``, block by block."""
        H = np.zeros((self.m, self.m))
        g = self.global_rows
        Gw = self.G * w
        H[np.ix_(g, g)] = Gw @ self.G.T
        for rows, cols, B in self.blocks:
            Bw = B * w[cols]
            H[np.ix_(rows, rows)] = Bw @ B.T
            cross = Gw[:, cols] @ B.T
            H[np.ix_(g, rows)] = cross
            H[np.ix_(rows, g)] = cross.T
        return H

    def hessian(self, w, ridge: float) -> np.ndarray:
        Cw = self.matvec(w)
        H = self.weighted_gram(w) - np.outer(Cw, Cw)
        H = 0.5 * (H + H.T)
        H[np.diag_indices_from(H)] += ridge
        return H

    def independent_rows(self, tol: float = RANK_TOL) -> np.ndarray:
        """Rows not numerically spanned by earlier rows (global rows first).

        ``|R_jj|`` from an unpivoted QR of the transposed rows is the norm of
        row j's component orthogonal to the rows before it. Stratum rows are
        tested against the kept global rows restricted to the stratum.
        """
        norm = np.sqrt(np.sum(self.G ** 2) + sum(np.sum(B ** 2) for _, _, B in self.blocks))
        cutoff = tol * norm
        keep_g = self.global_rows[_independent(self.G, cutoff)]
        kept = [keep_g]
        G_kept = self.G[np.isin(self.global_rows, keep_g)]
        for rows, cols, B in self.blocks:
            stacked = np.vstack([G_kept[:, cols], B])
            ok = _independent(stacked, cutoff)
            ok = ok[ok >= G_kept.shape[0]] - G_kept.shape[0]
            kept.append(rows[ok])
        return np.sort(np.concatenate(kept))


def _independent(A: np.ndarray, cutoff: float) -> np.ndarray:
    if A.shape[0] == 0:
        return np.arange(0)
    R = linalg.qr(A.T, mode="r", check_finite=False)[0]
    diag = np.zeros(A.shape[0])
    r = min(R.shape)
    diag[:r] = np.abs(np.diag(R)[:r])
    return np.flatnonzero(diag > cutoff)


def _log_unnormalized(Z, prob: BalanceProblem) -> np.ndarray:
    return np.log(prob.Q) - prob.C.T @ Z


def dual_objective(Z, prob: BalanceProblem) -> float:
    Z = np.asarray(Z, dtype=float)
    value = logsumexp(_log_unnormalized(Z, prob)) + prob.M @ Z
    if not np.isfinite(value):
        raise SolverError("dual objective is not finite")
    return float(value)


def primal_weights(Z, prob: BalanceProblem) -> np.ndarray:
    a = _log_unnormalized(np.asarray(Z, dtype=float), prob)
    e = np.exp(a - a.max())
    return e / e.sum()


def dual_gradient(Z, prob: BalanceProblem) -> np.ndarray:
    return prob.M - prob.C @ primal_weights(Z, prob)


def dual_hessian(Z, prob: BalanceProblem, ridge: float = 1e-8) -> np.ndarray:
    return _Blocks(prob.design).hessian(primal_weights(Z, prob), ridge)


def independent_rows(design: BlockDesign, tol: float = RANK_TOL) -> np.ndarray:
    return _Blocks(design).independent_rows(tol)


def _newton_step(H, g, ridge):
    while True:
        try:
            factor = linalg.cho_factor(H, check_finite=False)
            return linalg.cho_solve(factor, g, check_finite=False), ridge
        except linalg.LinAlgError:
            pass
        if ridge >= MAX_RIDGE:
            raise SolverError(f"Hessian not positive definite even with ridge {ridge:g}")
        bump = min(MAX_RIDGE, ridge * 10 if ridge > 0 else 1e-8)
        H = H.copy()
        H[np.diag_indices_from(H)] += bump - ridge
        ridge = bump


def residuals_by_kind(design: BlockDesign, w: np.ndarray) -> dict:
    resid = design.g_matrix @ w - design.targets
    out = {}
    for kind in dict.fromkeys(lab.kind for lab in design.row_labels):
        rows = design.rows_of(kind)
        out[kind] = float(np.max(np.abs(resid[rows]))) if rows.size else 0.0
    return out


def solve_newton(prob: BalanceProblem, cfg: SolverConfig = SolverConfig()) -> WeightSolution:
    """Newton iterations on the dual from Z = 0.

    The convergence loss is the max-norm constraint violation
    ``||C w - M||_inf`` measured after every iteration; the solver stops as
    soon as it drops below ``cfg.tolerance``. Rows linearly dependent on
    earlier rows are removed first.
    """
    design = prob.design
    keep = independent_rows(design)
    dropped = tuple(int(i) for i in np.setdiff1d(np.arange(design.m), keep))
    if dropped:
        log.warning("dropping %d rank-deficient constraint rows: %s", len(dropped), list(dropped)[:20])
    work = BalanceProblem(design.subset(keep), prob.method)
    blocks = _Blocks(work.design)
    M = work.M

    Z = np.zeros(work.design.m)
    losses, objectives = [], []
    converged = False
    iteration = 0
    ridge = cfg.hessian_ridge
    w = primal_weights(Z, work)
    for iteration in range(1, cfg.max_iterations + 1):
        g = M - blocks.matvec(w)
        step, used = _newton_step(blocks.hessian(w, ridge), g, ridge)
        if used > ridge:
            log.info("Hessian ridge escalated to %g", used)
        rate = cfg.learning_rate
        Z_new = Z - rate * step
        if cfg.line_search:
            # accept ties at rounding level so full steps survive near the optimum
            ceiling = dual_objective(Z, work) + 1e-12 * max(1.0, abs(objectives[-1]) if objectives else 1.0)
            while dual_objective(Z_new, work) > ceiling and rate > 1e-10:
                rate *= 0.5
                Z_new = Z - rate * step
        Z = Z_new
        w = primal_weights(Z, work)
        if not np.all(np.isfinite(w)):
            raise SolverError(f"weights became non-finite at iteration {iteration}")
        if np.any(w <= 0):
            raise SolverError(
                f"weights underflowed to zero at iteration {iteration}; the balance constraints are likely infeasible"
            )
        losses.append(float(np.max(np.abs(blocks.matvec(w) - M))))
        objectives.append(dual_objective(Z, work))
        if losses[-1] < cfg.tolerance:
            converged = True
            break

    full_Z = np.zeros(design.m)
    full_Z[keep] = Z
    return WeightSolution(
        weights=w,
        multipliers=full_Z,
        loss_trace=np.asarray(losses),
        converged=converged,
        iterations=iteration,
        method=prob.method,
        objective_trace=np.asarray(objectives),
        residuals=residuals_by_kind(design, w),
        dropped_rows=dropped,
        n_constraints=design.m,
    )


def _single_stratum(n: int) -> StratumIndex:
    return StratumIndex(strata=((0, "all"),), row_assignment=np.zeros(n, dtype=np.int64))


def prepare_design(
    table: ObservationTable,
    idx: StratumIndex,
    pca: PcaConfig = PcaConfig(),
    base_weights=None,
) -> BlockDesign:
    """PCA on all rows, standardised treatment moments, per-stratum blocks."""
    model = pca_fit(table.features, pca.explained_threshold, pca.max_components)
    Xk = pca_transform(model, table.features)
    Tm = treatment_moments(table.treatment, pca.treatment_degree)
    return build_block_design(Xk, Tm, idx, base_weights, pca.interaction_moments)


def solve_ebct(
    table: ObservationTable,
    pca: PcaConfig = PcaConfig(),
    cfg: SolverConfig = SolverConfig(),
    base_weights=None,
) -> WeightSolution:
    """Global continuous-treatment entropy balancing (one stratum)."""
    design = prepare_design(table, _single_stratum(table.n), pca, base_weights)
    return solve_newton(BalanceProblem(design, EBCT), cfg)


def solve_tsebct(
    table: ObservationTable,
    idx: StratumIndex,
    pca: PcaConfig = PcaConfig(),
    cfg: SolverConfig = SolverConfig(),
    base_weights=None,
) -> WeightSolution:
    """Entropy balancing with the constraints imposed inside every stratum."""
    if idx.row_assignment.shape[0] != table.n:
        raise DataError(f"stratum index covers {idx.row_assignment.shape[0]} rows, table has {table.n}")
    design = prepare_design(table, idx, pca, base_weights)
    sol = solve_newton(BalanceProblem(design, TSEBCT), cfg)
    sol.residuals["per_stratum"] = per_stratum_residuals(design, sol.weights, idx.count)
    return sol


def per_stratum_residuals(design: BlockDesign, w: np.ndarray, n_strata: int) -> list:
    resid = np.abs(design.g_matrix @ w - design.targets)
    worst = np.zeros(n_strata)
    for i, lab in enumerate(design.row_labels):
        if lab.stratum >= 0:
            worst[lab.stratum] = max(worst[lab.stratum], resid[i])
    return worst.tolist()


def _normal_logpdf(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)


def solve_ipw(table: ObservationTable, trim_quantile: float = 0.05, ridge: float = 1e-8) -> WeightSolution:
    """Stabilised generalised-propensity weights from an OLS treatment model.

    ``w_i ~ N(T_i; mean(T), sd(T)) / N(T_i; x_i'b, residual sd)``, clipped to
    their ``[trim_quantile, 1 - trim_quantile]`` quantiles (0 disables the
    clipping) and normalised to sum to one.
    """
    if not 0.0 <= trim_quantile < 0.5:
        raise ValueError(f"trim_quantile must lie in [0, 0.5), got {trim_quantile}")
    X = np.column_stack([np.ones(table.n), table.features])
    T = table.treatment
    gram = X.T @ X
    rhs = X.T @ T
    try:
        beta = linalg.solve(gram, rhs, assume_a="pos", check_finite=False)
    except (linalg.LinAlgError, ValueError):
        log.warning("singular normal equations in IPW; using ridge %g", ridge)
        beta = linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs, check_finite=False)
    fitted = X @ beta
    resid = T - fitted
    dof = max(table.n - X.shape[1], 1)
    resid_sd = np.sqrt(resid @ resid / dof)
    if not resid_sd > 0:
        raise DataError("treatment residual variance is zero; IPW density undefined")
    marginal_sd = T.std(ddof=1) if table.n > 1 else 0.0
    if not marginal_sd > 0:
        raise DataError("treatment is constant; IPW density undefined")
    logw = _normal_logpdf(T, T.mean(), marginal_sd) - _normal_logpdf(T, fitted, resid_sd)
    w = np.exp(logw - logw.max())
    if trim_quantile > 0:
        lo, hi = np.quantile(w, [trim_quantile, 1.0 - trim_quantile])
        w = np.clip(w, lo, hi)
    w /= w.sum()
    return WeightSolution(
        weights=w,
        multipliers=np.empty(0),
        loss_trace=np.empty(0),
        converged=True,
        iterations=0,
        method=IPW,
    )
