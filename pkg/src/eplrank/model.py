"""Plackett-Luce and Extended Plackett-Luce densities, samplers and latents.

Orderings are 1-based item sequences.  Internally rows are held as 0-based
``numpy`` arrays so that whole datasets are evaluated in one vectorised pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .perm import (
    PermutationError,
    ReferenceOrder,
    WrongLengthError,
    as_reference_order,
    compose_with_reference,
    validate_permutation,
)

MAX_MALLOWS_K = 8


def validate_supports(p: Sequence[float], K: int | None = None) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1:
        raise ValueError("support parameters must be a 1-d sequence")
    if K is not None and arr.shape[0] != K:
        raise WrongLengthError(f"expected {K} support parameters, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"support parameters must be positive and finite, got {arr}")
    return arr


@dataclass(frozen=True)
class EPLParams:
    rho: ReferenceOrder
    p: np.ndarray

    def __post_init__(self):
        rho = as_reference_order(self.rho)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "p", validate_supports(self.p, rho.K))

    @property
    def K(self) -> int:
        return self.rho.K


@dataclass(frozen=True, eq=False)
class RankingDataset:
    """``N`` complete orderings of the same ``K`` items.

    ``orderings[s, j]`` is the 1-based item placed at rank ``j + 1`` by row ``s``.
    """

    orderings: np.ndarray
    item_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        arr = np.asarray(self.orderings)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("a dataset needs at least one row of orderings")
        arr = arr.astype(np.int64)
        K = arr.shape[1]
        for s, row in enumerate(arr):
            try:
                validate_permutation(row, K)
            except PermutationError as exc:
                raise type(exc)(f"row {s + 1}: {exc}") from None
        arr.setflags(write=False)
        object.__setattr__(self, "orderings", arr)
        labels = tuple(self.item_labels) or tuple(f"item{i}" for i in range(1, K + 1))
        if len(labels) != K:
            raise WrongLengthError(f"{len(labels)} labels for K={K} items")
        object.__setattr__(self, "item_labels", tuple(str(x) for x in labels))

    @property
    def N(self) -> int:
        return self.orderings.shape[0]

    @property
    def K(self) -> int:
        return self.orderings.shape[1]

    @cached_property
    def items0(self) -> np.ndarray:
        """0-based copy of the orderings."""
        return self.orderings - 1

    def rankings(self) -> np.ndarray:
        """Rows converted to ranking format (1-based rank of every item)."""
        out = np.empty_like(self.orderings)
        rows = np.arange(self.N)[:, None]
        out[rows, self.items0] = np.arange(1, self.K + 1)
        return out

    def selection_items(self, rho: ReferenceOrder | Sequence[int]) -> np.ndarray:
        """0-based items in order of selection under ``rho`` (``N x K``)."""
        rho_t = rho.rho if isinstance(rho, ReferenceOrder) else tuple(rho)
        return self.items0[:, np.asarray(rho_t) - 1]

    def __eq__(self, other):
        if not isinstance(other, RankingDataset):
            return NotImplemented
        return (
            self.item_labels == other.item_labels
            and np.array_equal(self.orderings, other.orderings)
        )

    __hash__ = None


def _selection_log_prob(selected: np.ndarray, p: np.ndarray) -> np.ndarray:
    """PL log-probability of each row of 0-based selection sequences."""
    p = p / p.max()
    w = p[selected]
    remaining = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]
    return np.sum(np.log(w) - np.log(remaining), axis=1)


def pl_log_prob(ordering: Sequence[int], p: Sequence[float]) -> float:
    """Log-probability of one ordering under the standard forward PL."""
    ordering = validate_permutation(ordering)
    p = validate_supports(p, len(ordering))
    return float(_selection_log_prob(np.asarray(ordering)[None, :] - 1, p)[0])


def epl_log_prob(ordering: Sequence[int], params: EPLParams) -> float:
    """Log-probability of one ordering: PL evaluated on ``ordering o rho``."""
    eta = compose_with_reference(ordering, params.rho)
    return float(_selection_log_prob(np.asarray(eta)[None, :] - 1, params.p)[0])


def epl_row_log_probs(data: RankingDataset, params: EPLParams) -> np.ndarray:
    if data.K != params.K:
        raise WrongLengthError(f"dataset has K={data.K}, parameters have K={params.K}")
    return _selection_log_prob(data.selection_items(params.rho), params.p)


def epl_log_likelihood(data: RankingDataset, params: EPLParams) -> float:
    return float(np.sum(epl_row_log_probs(data, params)))


def _gumbel_selections(p: np.ndarray, noise: np.ndarray) -> np.ndarray:
    # Gumbel-max: sorting log p + Gumbel noise draws a PL selection sequence
    return np.argsort(-(np.log(p) + noise), axis=1, kind="stable")


def sample_pl_prefix(
    p: Sequence[float], t: int, n: int, rng: np.random.Generator, noise: np.ndarray | None = None
) -> np.ndarray:
    """First ``t`` PL selections for ``n`` independent rows (1-based items).

    ``noise``, if given, is an ``n x K`` array of standard Gumbel draws used
    instead of fresh ones, so the same randomness can be shared by several
    support vectors.
    """
    p = validate_supports(p)
    K = p.shape[0]
    if not 1 <= t <= K:
        raise ValueError(f"prefix length must be in 1..{K}, got {t}")
    if noise is None:
        noise = rng.gumbel(size=(n, K))
    return _gumbel_selections(p, noise)[:, :t] + 1


def sample_epl(
    params: EPLParams, n: int, rng: np.random.Generator, item_labels: Sequence[str] = ()
) -> RankingDataset:
    """Draw ``n`` orderings: the stage-``t`` pick receives rank ``rho(t)``."""
    if n < 1:
        raise ValueError(f"need n >= 1 draws, got {n}")
    K = params.K
    selected = _gumbel_selections(params.p, rng.gumbel(size=(n, K)))
    orderings = np.empty_like(selected)
    orderings[:, np.asarray(params.rho.rho) - 1] = selected
    return RankingDataset(orderings + 1, tuple(item_labels))


def _stage_rates(data: RankingDataset, params: EPLParams) -> tuple[np.ndarray, np.ndarray]:
    selected = data.selection_items(params.rho)
    w = params.p[selected]
    return selected, np.cumsum(w[:, ::-1], axis=1)[:, ::-1]


def sample_latents(data: RankingDataset, params: EPLParams, rng: np.random.Generator) -> np.ndarray:
    """Exponential latents ``y[s, t]`` with rate equal to the support still unselected."""
    _, rates = _stage_rates(data, params)
    return rng.standard_exponential(size=rates.shape) / rates


def latent_exposure(data: RankingDataset, rho: ReferenceOrder, y: np.ndarray) -> np.ndarray:
    """Per item, the sum over rows and stages of ``y[s, t]`` while the item is unselected."""
    selected = data.selection_items(rho)
    # the item picked at stage t is still available at stages 1..t
    cum = np.cumsum(y, axis=1)
    return np.bincount(selected.ravel(), weights=cum.ravel(), minlength=data.K)


def complete_data_log_likelihood(data: RankingDataset, params: EPLParams, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (data.N, data.K):
        raise ValueError(f"latent matrix must be {data.N} x {data.K}, got {y.shape}")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("latent variables must be positive and finite")
    exposure = latent_exposure(data, params.rho, y)
    return float(np.sum(data.N * np.log(params.p) - params.p * exposure))


def latent_log_density(data: RankingDataset, params: EPLParams, y: np.ndarray) -> float:
    """Log-density of ``y`` under its exponential conditional law."""
    _, rates = _stage_rates(data, params)
    return float(np.sum(np.log(rates) - rates * y))


# Mallows model under the Hamming distance, normalised by enumeration.

def hamming_distance(a: Sequence[int], b: Sequence[int]) -> int:
    return int(sum(x != y for x, y in zip(a, b, strict=True)))


def _mallows_table(sigma: tuple[int, ...], theta: float) -> tuple[np.ndarray, np.ndarray, float]:
    K = len(sigma)
    if K > MAX_MALLOWS_K:
        raise ValueError(f"exact Mallows enumeration supports K <= {MAX_MALLOWS_K}, got {K}")
    if theta < 0 or not np.isfinite(theta):
        raise ValueError(f"theta must be finite and >= 0, got {theta}")
    perms = np.array(list(itertools.permutations(range(1, K + 1))))
    dist = np.sum(perms != np.asarray(sigma), axis=1)
    log_z = float(np.logaddexp.reduce(-theta * dist))
    return perms, dist, log_z


def mallows_hamming_log_pmf(ranking: Sequence[int], sigma: Sequence[int], theta: float) -> float:
    """``log P(pi) = -theta * d_H(pi, sigma) - log Z(theta)``."""
    sigma = validate_permutation(sigma)
    ranking = validate_permutation(ranking, len(sigma))
    _, _, log_z = _mallows_table(sigma, theta)
    return -theta * hamming_distance(ranking, sigma) - log_z


def mallows_mean_distance(K: int, theta: float) -> float:
    sigma = tuple(range(1, K + 1))
    _, dist, log_z = _mallows_table(sigma, theta)
    return float(np.sum(np.exp(-theta * dist - log_z) * dist))


def mallows_theta_for_mean_distance(K: int, target: float, tol: float = 1e-10) -> float:
    """Concentration ``theta`` at which the expected Hamming distance equals ``target``.

    The mean distance decreases from ``K-1`` (uniform) to 0 as ``theta``
    grows, so plain bisection suffices.
    """
    if not 0 < target < K - 1:
        raise ValueError(f"target mean distance must lie in (0, {K - 1}), got {target}")
    lo, hi = 0.0, 1.0
    while mallows_mean_distance(K, hi) > target:
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mallows_mean_distance(K, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_mallows_hamming(
    sigma: Sequence[int],
    theta: float,
    n: int,
    rng: np.random.Generator,
    item_labels: Sequence[str] = (),
) -> RankingDataset:
    """Exact inverse-CDF draws of rankings, returned as orderings."""
    if n < 1:
        raise ValueError(f"need n >= 1 draws, got {n}")
    sigma = validate_permutation(sigma)
    perms, dist, log_z = _mallows_table(sigma, theta)
    cdf = np.cumsum(np.exp(-theta * dist - log_z))
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    rankings = perms[np.minimum(idx, len(perms) - 1)]
    orderings = np.argsort(rankings, axis=1) + 1
    return RankingDataset(orderings, tuple(item_labels))
