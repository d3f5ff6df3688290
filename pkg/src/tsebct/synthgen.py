"""Confounded synthetic datasets with a continuous, zero-inflated treatment.

Features are iid standard normal, the spatial label is a binomial draw, the
treatment is a min-max normalised noisy sum of the first ``floor(p * r_c)``
features shifted down so a large share of rows sits at zero dose, and the
outcome is linear in the features with treatment interactions on the
even-indexed columns.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data_model import ObservationTable

BINARY_OUTCOME = "Y_binary"


@dataclass(frozen=True)
class SynthConfig:
    n: int = 100_000
    p: int = 100
    confounding_rate: float = 0.4
    confounding_strength: float = 0.5
    od_trials: int = 100
    od_prob: float = 0.9
    treatment_shift: float = 0.4
    outcome_noise_sd: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.p < 1:
            raise ValueError(f"p must be positive, got {self.p}")
        if not 0.0 <= self.confounding_rate <= 1.0:
            raise ValueError(f"confounding_rate must lie in [0, 1], got {self.confounding_rate}")
        if not 0.0 <= self.confounding_strength <= 1.0:
            raise ValueError(
                f"confounding_strength must lie in [0, 1], got {self.confounding_strength}"
            )
        if self.confounding_rate > 0 and self.n_confounders < 1:
            raise ValueError(
                f"p * confounding_rate = {self.p * self.confounding_rate} selects no confounder"
            )
        if self.od_trials < 0 or not 0.0 <= self.od_prob <= 1.0:
            raise ValueError("od_trials must be >= 0 and od_prob in [0, 1]")

    @property
    def n_confounders(self) -> int:
        # tolerance guards products like 100 * 0.29 = 28.999999999999996
        return int(math.floor(self.p * self.confounding_rate + 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


def gen_features(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((cfg.n, cfg.p))


def gen_cells(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.binomial(cfg.od_trials, cfg.od_prob, size=cfg.n)


def shift_treatment(t_raw: np.ndarray, shift: float) -> np.ndarray:
    """Zero out doses at or below ``shift`` and move the rest down by it."""
    t_raw = np.asarray(t_raw, dtype=float)
    return np.where(t_raw > shift, t_raw - shift, 0.0)


def gen_treatment(X: np.ndarray, cfg: SynthConfig, rng: np.random.Generator):
    """Return ``(t_raw, T)``: the [0, 1] latent dose and the shifted treatment."""
    k = cfg.n_confounders
    if X.shape[1] < k:
        raise ValueError(f"X has {X.shape[1]} columns, {k} confounders requested")
    latent = cfg.confounding_strength * X[:, :k].sum(axis=1) + rng.standard_normal(X.shape[0])
    lo, hi = latent.min(), latent.max()
    if not hi > lo:
        raise ValueError("degenerate treatment normalisation: latent dose is constant")
    t_raw = (latent - lo) / (hi - lo)
    return t_raw, shift_treatment(t_raw, cfg.treatment_shift)


def outcome_mean(X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Noise-free outcome ``T + sum_{j even} (j/2 + T) x_j`` with 1-based j."""
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    j = np.arange(1, X.shape[1] + 1)
    even = (j % 2) == 0
    half = (j[even] / 2.0)[None, :]
    return T + ((half + T[:, None]) * X[:, even]).sum(axis=1)


def gen_outcome(X: np.ndarray, T: np.ndarray, rng: np.random.Generator, noise_sd: float = 3.0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    if X.shape[0] != T.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows, T has {T.shape[0]}")
    return outcome_mean(X, T) + rng.normal(0.0, noise_sd, size=X.shape[0])


def median_split(y: np.ndarray) -> np.ndarray:
    """Binary labels with exactly floor(n/2) positives: the largest values of y."""
    y = np.asarray(y, dtype=float)
    order = np.argsort(y, kind="stable")
    labels = np.zeros(y.shape[0])
    labels[order[y.shape[0] - y.shape[0] // 2:]] = 1.0
    return labels


def gen_dataset(cfg: SynthConfig) -> ObservationTable:
    rng = np.random.default_rng(cfg.seed)
    X = gen_features(cfg, rng)
    od = gen_cells(cfg, rng)
    _, T = gen_treatment(X, cfg, rng)
    Y = gen_outcome(X, T, rng, cfg.outcome_noise_sd)
    return ObservationTable(
        features=X,
        treatment=T,
        outcome=Y,
        cell_label=od,
        extra={BINARY_OUTCOME: median_split(Y)},
    )


def paper_configs(n: int = 100_000, seed: int = 0) -> dict:
    """The two simulated-dataset settings (s_c = 0.5, r_c = 0.4 / 0.8)."""
    return {
        "simulated_1": SynthConfig(n=n, confounding_rate=0.4, confounding_strength=0.5, seed=seed),
        "simulated_2": SynthConfig(n=n, confounding_rate=0.8, confounding_strength=0.5, seed=seed),
    }
