"""Goodness-of-fit diagnostic for the EPL and its Monte-Carlo calibration.

Under an EPL the item frequencies at the first selected rank follow the order
of the supports and those at the last selected rank follow the reverse order,
so the two rank vectors of the true pair ``(rho(1), rho(K))`` sum to ``K + 1``
item by item.  The statistic is the smallest absolute deviation from that
identity over the candidate pairs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .mcmc import ChainConfig, ChainOutput, PriorConfig, TuningConfig, posterior_summaries, run_chain
from .model import (
    EPLParams,
    RankingDataset,
    mallows_theta_for_mean_distance,
    sample_epl,
    sample_mallows_hamming,
)
from .perm import validate_permutation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageFrequencyMatrix:
    """``counts[j, i]``: rows placing item ``i+1`` at rank ``j+1``."""

    counts: np.ndarray
    orientation: str


@dataclass(frozen=True)
class DiagnosticResult:
    t_matrix: np.ndarray
    t_min: float
    argmin_pair: tuple[int, int]
    constrained: bool

    def as_dict(self) -> dict:
        K = self.t_matrix.shape[0]
        matrix = [
            [None if j == jp else float(self.t_matrix[j, jp]) for jp in range(K)]
            for j in range(K)
        ]
        return {
            "t_matrix": matrix,
            "t_min": self.t_min,
            "argmin_pair": list(self.argmin_pair),
            "constrained": self.constrained,
        }


def stage_frequency_rows(data: RankingDataset) -> tuple[StageFrequencyMatrix, StageFrequencyMatrix]:
    """Rank-by-item frequency matrices for the first and last stage.

    Both stages read the same rank-by-item counts; they differ only in which
    rank is taken as a candidate for ``rho(1)`` or ``rho(K)``.
    """
    if data.N == 0:
        raise ValueError("empty dataset")
    K = data.K
    counts = np.zeros((K, K), dtype=np.int64)
    ranks = np.broadcast_to(np.arange(K), data.items0.shape)
    np.add.at(counts, (ranks, data.items0), 1)
    counts.setflags(write=False)
    return StageFrequencyMatrix(counts, "first"), StageFrequencyMatrix(counts, "last")


def mid_rank(v: Sequence[float]) -> np.ndarray:
    """Ascending ranks with ties sharing the mean of their positions."""
    return rankdata(np.asarray(v), method="average")


def t_discrepancy(first_row: Sequence[float], last_row: Sequence[float]) -> float:
    first_row, last_row = np.asarray(first_row), np.asarray(last_row)
    if first_row.shape != last_row.shape:
        raise ValueError(f"length mismatch: {first_row.shape} vs {last_row.shape}")
    K = first_row.shape[0]
    return float(np.sum(np.abs(mid_rank(first_row) + mid_rank(last_row) - (K + 1))))


def _t_matrix(counts: np.ndarray) -> np.ndarray:
    K = counts.shape[0]
    ranks = rankdata(counts, method="average", axis=1)
    t = np.abs(ranks[:, None, :] + ranks[None, :, :] - (K + 1)).sum(axis=2)
    np.fill_diagonal(t, np.nan)
    return t


def _pair_mask(K: int, constrained: bool) -> np.ndarray:
    mask = ~np.eye(K, dtype=bool)
    if constrained:
        mask[1 : K - 1, :] = False
    return mask


def epl_diagnostic(data: RankingDataset, constrained: bool = True) -> DiagnosticResult:
    """Matrix of pair discrepancies and its minimum over the admissible pairs.

    ``constrained`` restricts the first-stage rank to ``1`` or ``K``; ties
    for the minimum go to the lexicographically smallest ``(j, j')``.
    """
    first, _ = stage_frequency_rows(data)
    t = _t_matrix(first.counts)
    mask = _pair_mask(data.K, constrained)
    masked = np.where(mask, t, np.inf)
    flat = int(np.argmin(masked))
    j, jp = divmod(flat, data.K)
    return DiagnosticResult(t, float(masked[j, jp]), (j + 1, jp + 1), constrained)


def diagnostic_statistic(data: RankingDataset, constrained: bool = True) -> float:
    first, _ = stage_frequency_rows(data)
    t = _t_matrix(first.counts)
    return float(np.min(t[_pair_mask(data.K, constrained)]))


def _p_value(replicates: np.ndarray, observed: float, smoothed: bool) -> float:
    exceed = int(np.sum(replicates >= observed))
    if smoothed:
        return (exceed + 1) / (len(replicates) + 1)
    return exceed / len(replicates)


def bootstrap_replicates(
    fitted: EPLParams, N: int, B: int, rng: np.random.Generator, constrained: bool = True
) -> np.ndarray:
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    return np.array(
        [diagnostic_statistic(sample_epl(fitted, N, rng), constrained) for _ in range(B)]
    )


def bootstrap_p_value(
    data: RankingDataset,
    fitted: EPLParams,
    B: int,
    rng: np.random.Generator,
    constrained: bool = True,
    smoothed: bool = False,
) -> float:
    """Share of datasets simulated from ``fitted`` whose statistic is at least the observed one."""
    observed = diagnostic_statistic(data, constrained)
    return _p_value(bootstrap_replicates(fitted, data.N, B, rng, constrained), observed, smoothed)


def posterior_predictive_p_value(
    data: RankingDataset,
    chain: ChainOutput,
    B: int,
    rng: np.random.Generator,
    constrained: bool = True,
    smoothed: bool = False,
) -> float:
    """Like :func:`bootstrap_p_value`, with parameters redrawn from the chain per replicate."""
    if len(chain) == 0:
        raise ValueError("cannot draw from an empty chain")
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    observed = diagnostic_statistic(data, constrained)
    reps = np.empty(B)
    for b in range(B):
        k = rng.integers(len(chain))
        params = EPLParams(tuple(int(x) for x in chain.rho_draws[k]), chain.p_draws[k])
        reps[b] = diagnostic_statistic(sample_epl(params, data.N, rng), constrained)
    return _p_value(reps, observed, smoothed)


def plugin_estimate(chain: ChainOutput) -> EPLParams:
    """Posterior modal ``rho`` with posterior-mean normalised supports."""
    return posterior_summaries(chain, top_k=1).plugin_params()


@dataclass(frozen=True)
class EPLScenario:
    rho: tuple[int, ...]
    p: tuple[float, ...]

    def __post_init__(self):
        EPLParams(self.rho, self.p)

    def sampler(self):
        params = EPLParams(self.rho, self.p)
        return lambda n, rng: sample_epl(params, n, rng)

    def describe(self) -> dict:
        return {"generator": "epl", "rho": list(self.rho), "p": list(self.p)}


@dataclass(frozen=True)
class MallowsScenario:
    """Mallows-Hamming generator; ``theta=None`` calibrates it to ``mean_distance``."""

    sigma: tuple[int, ...]
    theta: float | None = None
    mean_distance: float = 2.0

    def __post_init__(self):
        validate_permutation(self.sigma)
        if self.theta is None:
            theta = mallows_theta_for_mean_distance(len(self.sigma), self.mean_distance)
            object.__setattr__(self, "theta", theta)
        elif self.theta < 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")

    def sampler(self):
        return lambda n, rng: sample_mallows_hamming(self.sigma, self.theta, n, rng)

    def describe(self) -> dict:
        return {
            "generator": "mallows",
            "sigma": list(self.sigma),
            "theta": self.theta,
            "mean_distance_target": self.mean_distance,
        }


@dataclass(frozen=True)
class StudyReplicate:
    index: int
    p_value: float
    t_obs: float
    modal_rho: tuple[int, ...]


@dataclass(frozen=True)
class PowerStudyResult:
    scenario: dict
    alpha: float
    rejection_rate: float
    replicates: list[StudyReplicate]

    @property
    def p_values(self) -> np.ndarray:
        return np.array([r.p_value for r in self.replicates])


def _study_replicate(args) -> StudyReplicate:
    index, scenario, seed_seq, N, B, prior, tuning, chain_cfg, constrained = args
    data_ss, chain_ss, boot_ss = seed_seq.spawn(3)
    data = scenario.sampler()(N, np.random.default_rng(data_ss))
    chain_seed = int(chain_ss.generate_state(1)[0])
    cfg = ChainConfig(chain_cfg.iterations, chain_cfg.burn_in, chain_seed, chain_cfg.thin)
    chain = run_chain(data, prior, tuning, cfg)
    fitted = plugin_estimate(chain)
    t_obs = diagnostic_statistic(data, constrained)
    p = bootstrap_p_value(data, fitted, B, np.random.default_rng(boot_ss), constrained)
    return StudyReplicate(index, p, t_obs, fitted.rho.rho)


def power_study(
    scenario: EPLScenario | MallowsScenario,
    n_datasets: int,
    N: int,
    B: int,
    alpha: float,
    seed: int = 0,
    prior: PriorConfig | None = None,
    tuning: TuningConfig | None = None,
    chain_cfg: ChainConfig | None = None,
    constrained: bool = True,
    n_jobs: int = 1,
) -> PowerStudyResult:
    """Rejection rate of the bootstrap test at level ``alpha`` over simulated datasets.

    Every dataset gets its own seed sequence spawned from ``seed``, so the
    result does not depend on ``n_jobs``.
    """
    if not isinstance(scenario, (EPLScenario, MallowsScenario)):
        raise TypeError(f"unsupported scenario {scenario!r}")
    if n_datasets < 1 or N < 1 or B < 1:
        raise ValueError("n_datasets, N and B must all be >= 1")
    prior = prior or PriorConfig()
    tuning = tuning or TuningConfig()
    chain_cfg = chain_cfg or ChainConfig()
    children = np.random.SeedSequence(seed).spawn(n_datasets)
    jobs = [
        (i, scenario, ss, N, B, prior, tuning, chain_cfg, constrained)
        for i, ss in enumerate(children)
    ]
    if n_jobs == 1:
        reps = [_study_replicate(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            reps = list(pool.map(_study_replicate, jobs))
    rate = float(np.mean([r.p_value <= alpha for r in reps]))
    log.info("%s: rejection rate %.3f over %d datasets", scenario.describe(), rate, n_datasets)
    return PowerStudyResult(scenario.describe(), alpha, rate, reps)
