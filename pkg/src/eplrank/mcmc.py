"""Tuned joint Metropolis-within-Gibbs sampler for the order-constrained EPL.

One iteration is the composition of three kernels:

1. a joint independence-type Metropolis-Hastings step for ``(rho, p)`` whose
   proposal draws ``rho`` stage by stage, steering each top/bottom choice with
   observed versus PL-expected contingency tables;
2. a swap move exchanging two adjacent entries of ``rho`` at fixed ``p``;
3. a Gibbs cycle drawing the exponential latents and then the Gamma
   full conditional of the supports.

The proposal probabilities depend on Monte-Carlo expected tables.  Each
iteration draws one matrix of Gumbel noise and every expected table of that
iteration is computed from it, so the forward and reverse proposal densities
in an acceptance ratio are evaluated under the same randomisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .model import (
    EPLParams,
    RankingDataset,
    _selection_log_prob,
    latent_exposure,
    sample_latents,
    validate_supports,
)
from .perm import ReferenceOrder, applicable_swaps, as_reference_order, swap_adjacent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorConfig:
    """Independent ``Gamma(c, d)`` priors (shape, rate) on the supports."""

    c: float = 1.0
    d: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and self.d > 0):
            raise ValueError(f"Gamma hyperparameters must be positive, got c={self.c}, d={self.d}")


@dataclass(frozen=True)
class TuningConfig:
    """Proposal tuning.

    ``mc_draws=None`` uses as many Monte-Carlo rows as the dataset has.

    ``swap_ratio="target"`` accepts a swap on the likelihood ratio alone,
    which leaves the posterior invariant; ``"literal"`` also multiplies by the
    joint-proposal ratio ``g(rho', p') / g(rho'', p')`` of the literal algorithm
    and does not.  ``swap_correction`` adds the ``M(rho')/M(rho'')`` factor
    for the uniform choice among applicable swaps.  ``keep_scale`` rescales
    an accepted simplex candidate to the current total support so that the
    joint step only moves ``(rho, p / sum(p))``.
    """

    h: float = 0.1
    alpha0: float | tuple[float, ...] = 1.0
    lambda1: float = 0.5
    mc_draws: int | None = None
    smoothing: float = 1.0
    swap_ratio: str = "target"
    swap_correction: bool = True
    keep_scale: bool = True

    def __post_init__(self):
        if not 0 < self.h < 0.5:
            raise ValueError(f"h must lie in (0, 0.5), got {self.h}")
        alpha0 = np.atleast_1d(np.asarray(self.alpha0, dtype=float))
        if not np.all(alpha0 > 0):
            raise ValueError(f"alpha0 entries must be positive, got {self.alpha0}")
        if not 0 <= self.lambda1 <= 1:
            raise ValueError(f"lambda1 must lie in [0, 1], got {self.lambda1}")
        if self.mc_draws is not None and self.mc_draws < 1:
            raise ValueError(f"mc_draws must be >= 1, got {self.mc_draws}")
        if self.smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {self.smoothing}")
        if self.swap_ratio not in ("target", "literal"):
            raise ValueError(f"swap_ratio must be 'target' or 'literal', got {self.swap_ratio!r}")
        if isinstance(self.alpha0, list):
            object.__setattr__(self, "alpha0", tuple(self.alpha0))


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20000
    burn_in: int = 2000
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(
                f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in}"
            )
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")


@dataclass(frozen=True)
class ProposalRecord:
    rho: ReferenceOrder
    p: np.ndarray
    log_density: float
    lambdas: np.ndarray


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """Stored draws after burn-in and thinning.

    ``rho_draws`` is ``n x K`` (1-based ranks), ``p_draws`` the unnormalised
    supports.  ``iteration`` holds the 1-based index of each stored draw.
    """

    iteration: np.ndarray
    rho_draws: np.ndarray
    p_draws: np.ndarray
    accept_joint: np.ndarray
    accept_swap: np.ndarray
    log_posterior_trace: np.ndarray

    def __post_init__(self):
        n = len(self.iteration)
        for name in ("rho_draws", "p_draws", "accept_joint", "accept_swap", "log_posterior_trace"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {n}")

    def __len__(self) -> int:
        return len(self.iteration)

    @property
    def K(self) -> int:
        return self.rho_draws.shape[1]

    def normalized_supports(self) -> np.ndarray:
        return self.p_draws / self.p_draws.sum(axis=1, keepdims=True)


def log_gamma_density(x: np.ndarray, c: float, d: float) -> np.ndarray:
    return c * np.log(d) - gammaln(c) + (c - 1) * np.log(x) - d * x


def log_dirichlet_density(q: np.ndarray, alpha: np.ndarray) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1) * np.log(q)))


def first_stage_frequencies(data: RankingDataset, rank: int) -> np.ndarray:
    """How often each item occupies ``rank``, for ``rank`` in ``{1, K}``."""
    if rank not in (1, data.K):
        raise ValueError(f"first-stage rank must be 1 or {data.K}, got {rank}")
    return np.bincount(data.items0[:, rank - 1], minlength=data.K)


def _pair_counts(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    return np.bincount(a * K + b, minlength=K * K).reshape(K, K)


def _prefix_counters(prefix: Sequence[int], K: int) -> tuple[int, int]:
    """Next available top and bottom ranks after the given stages."""
    top, bottom = 1, K
    for t, r in enumerate(prefix, start=1):
        if r == top:
            top += 1
        elif r == bottom:
            bottom -= 1
        else:
            raise ValueError(f"prefix {tuple(prefix)} breaks the top-or-bottom rule at stage {t}")
    return top, bottom


def contingency_tables(
    data: RankingDataset, rho_prefix: Sequence[int], t: int
) -> tuple[np.ndarray, np.ndarray]:
    """Observed stage-``t`` tables ``(tau, beta)``.

    ``tau[i, i']`` counts rows with item ``i`` at rank ``rho(t-1)`` and item
    ``i'`` at the next free top rank; ``beta`` uses the next free bottom rank.
    Indices are 0-based items.
    """
    K = data.K
    if not 2 <= t <= K - 1:
        raise ValueError(f"stage must lie in 2..{K - 1}, got {t}")
    prefix = tuple(rho_prefix)[: t - 1]
    if len(prefix) != t - 1:
        raise ValueError(f"need the first {t - 1} entries of rho, got {len(prefix)}")
    top, bottom = _prefix_counters(prefix, K)
    prev = data.items0[:, prefix[-1] - 1]
    tau = _pair_counts(prev, data.items0[:, top - 1], K)
    beta = _pair_counts(prev, data.items0[:, bottom - 1], K)
    return tau, beta


def _expected_from_selections(selected: np.ndarray, t: int, K: int) -> np.ndarray:
    return _pair_counts(selected[:, t - 2], selected[:, t - 1], K)


def expected_tables(
    p: Sequence[float],
    t: int,
    mc_draws: int,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Monte-Carlo joint counts of the stage ``t-1`` and stage ``t`` PL picks.

    Either ``rng`` or an ``mc_draws x K`` Gumbel ``noise`` matrix is required.
    """
    p = validate_supports(p)
    K = p.shape[0]
    if not 2 <= t <= K:
        raise ValueError(f"stage must lie in 2..{K}, got {t}")
    if noise is None:
        noise = rng.gumbel(size=(mc_draws, K))
    selected = np.argsort(-(np.log(p) + noise), axis=1, kind="stable")
    return _expected_from_selections(selected, t, K)


def stage_lambda(tau: np.ndarray, beta: np.ndarray, expected: np.ndarray, h: float) -> float:
    """Top-choice probability from the two table distances, floored at ``h``."""
    d_top = float(np.sum((tau - expected) ** 2))
    d_bottom = float(np.sum((beta - expected) ** 2))
    total = d_top + d_bottom
    scaled = 0.5 if total == 0 else 1.0 - d_top / total
    return scaled * (1 - 2 * h) + h


class TableContext:
    """Expected tables of one iteration, all driven by a shared noise matrix."""

    def __init__(self, noise: np.ndarray, scale: float = 1.0):
        self.noise = noise
        self.scale = scale
        self._cache: dict[bytes, list[np.ndarray]] = {}

    @classmethod
    def draw(cls, rng: np.random.Generator, mc_draws: int, K: int, n_obs: int) -> "TableContext":
        return cls(rng.gumbel(size=(mc_draws, K)), n_obs / mc_draws)

    def expected(self, q: np.ndarray, t: int) -> np.ndarray:
        key = q.tobytes()
        tables = self._cache.get(key)
        if tables is None:
            K = q.shape[0]
            selected = np.argsort(-(np.log(q) + self.noise), axis=1, kind="stable")
            # compare on the observed-data count scale when mc_draws != N
            tables = [None, None] + [
                _expected_from_selections(selected, s, K) * self.scale for s in range(2, K)
            ]
            self._cache[key] = tables
        return tables[t]


class ProposalEngine:
    """Joint proposal for one dataset, with observed tables cached."""

    def __init__(self, data: RankingDataset, tuning: TuningConfig):
        self.data = data
        self.tuning = tuning
        self.K = data.K
        self.mc_draws = tuning.mc_draws or data.N
        alpha0 = np.broadcast_to(np.asarray(tuning.alpha0, dtype=float), (self.K,))
        self._alpha = {
            rank: alpha0 * (first_stage_frequencies(data, rank) + tuning.smoothing)
            for rank in (1, self.K)
        }
        for rank, a in self._alpha.items():
            if np.any(a <= 0):
                raise ValueError(
                    f"Dirichlet parameters for first rank {rank} are not all positive; "
                    "use smoothing > 0"
                )
        self._tables: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]] = {}

    def new_context(self, rng: np.random.Generator) -> TableContext:
        return TableContext.draw(rng, self.mc_draws, self.K, self.data.N)

    def dirichlet_alpha(self, first_rank: int) -> np.ndarray:
        return self._alpha[first_rank]

    def _observed(self, prev: int, top: int, bottom: int) -> tuple[np.ndarray, np.ndarray]:
        key = (prev, top, bottom)
        tables = self._tables.get(key)
        if tables is None:
            items = self.data.items0
            prev_items = items[:, prev - 1]
            tables = (
                _pair_counts(prev_items, items[:, top - 1], self.K),
                _pair_counts(prev_items, items[:, bottom - 1], self.K),
            )
            self._tables[key] = tables
        return tables

    def _lambda(self, prev: int, top: int, bottom: int, q: np.ndarray, t: int, ctx: TableContext) -> float:
        tau, beta = self._observed(prev, top, bottom)
        return stage_lambda(tau, beta, ctx.expected(q, t), self.tuning.h)

    def _bernoulli_log_mass(self, lam: float, bit: int) -> float:
        with np.errstate(divide="ignore"):
            return float(np.log(lam if bit else 1.0 - lam))

    def propose(self, rng: np.random.Generator, ctx: TableContext) -> ProposalRecord:
        K, lambda1 = self.K, self.tuning.lambda1
        lambdas = np.ones(K)
        lambdas[0] = lambda1
        w1 = int(rng.random() < lambda1)
        first = 1 if w1 else K
        alpha = self._alpha[first]
        q = rng.dirichlet(alpha)
        logg = self._bernoulli_log_mass(lambda1, w1)
        rho = [first]
        top, bottom = (2, K) if w1 else (1, K - 1)
        if np.all(q > 0):
            logg += log_dirichlet_density(q, alpha)
        else:
            logg = -np.inf
            q = np.where(q > 0, q, np.finfo(float).tiny)
        for t in range(2, K):
            lam = self._lambda(rho[-1], top, bottom, q, t, ctx)
            lambdas[t - 1] = lam
            bit = int(rng.random() < lam)
            logg += self._bernoulli_log_mass(lam, bit)
            if bit:
                rho.append(top)
                top += 1
            else:
                rho.append(bottom)
                bottom -= 1
        rho.append(top)
        return ProposalRecord(ReferenceOrder.from_rho(rho), q, logg, lambdas)

    def log_density(
        self, rho: ReferenceOrder, p: np.ndarray, ctx: TableContext
    ) -> tuple[float, np.ndarray]:
        """Proposal log-density of ``(rho, p / sum(p))`` and its stage probabilities."""
        K, lambda1 = self.K, self.tuning.lambda1
        q = p / p.sum()
        lambdas = np.ones(K)
        lambdas[0] = lambda1
        logg = self._bernoulli_log_mass(lambda1, rho.w[0])
        logg += log_dirichlet_density(q, self._alpha[rho.rho[0]])
        for t in range(2, K):
            top = rho.f[t - 1] + 1
            bottom = K - rho.b[t - 1]
            lam = self._lambda(rho.rho[t - 2], top, bottom, q, t, ctx)
            lambdas[t - 1] = lam
            logg += self._bernoulli_log_mass(lam, rho.w[t - 1])
        return logg, lambdas


def _engine(data: RankingDataset, tuning: TuningConfig, engine: ProposalEngine | None) -> ProposalEngine:
    if engine is not None:
        return engine
    return ProposalEngine(data, tuning)


def propose_joint(
    data: RankingDataset,
    tuning: TuningConfig,
    rng: np.random.Generator,
    context: TableContext | None = None,
    engine: ProposalEngine | None = None,
) -> ProposalRecord:
    """Draw a candidate ``(rho, p)``; ``p`` lies on the unit simplex."""
    engine = _engine(data, tuning, engine)
    if context is None:
        context = engine.new_context(rng)
    return engine.propose(rng, context)


def reverse_proposal_log_density(
    rho: ReferenceOrder | Sequence[int],
    p: Sequence[float],
    data: RankingDataset,
    tuning: TuningConfig,
    context: TableContext,
    engine: ProposalEngine | None = None,
) -> float:
    """Joint proposal log-density at an arbitrary state, under ``context``."""
    engine = _engine(data, tuning, engine)
    logg, _ = engine.log_density(as_reference_order(rho), validate_supports(p, data.K), context)
    return logg


def log_likelihood(data: RankingDataset, rho: ReferenceOrder, p: np.ndarray) -> float:
    """Observed-data log-likelihood without re-validating its inputs."""
    return float(np.sum(_selection_log_prob(data.selection_items(rho), p)))


def log_posterior(data: RankingDataset, rho: ReferenceOrder, p: np.ndarray, prior: PriorConfig) -> float:
    """Unnormalised log posterior; the uniform prior on rho is a constant."""
    return log_likelihood(data, rho, p) + float(np.sum(log_gamma_density(p, prior.c, prior.d)))


def mh_accept_joint(
    current: tuple[ReferenceOrder, np.ndarray],
    candidate: ProposalRecord,
    data: RankingDataset,
    prior: PriorConfig,
    rng: np.random.Generator,
    tuning: TuningConfig | None = None,
    context: TableContext | None = None,
    engine: ProposalEngine | None = None,
) -> tuple[ReferenceOrder, np.ndarray, bool]:
    """Accept or reject a joint candidate.

    Both states enter the ratio through their normalised supports: the
    candidate lives on the simplex, and there the product of Gamma priors is
    proportional to a symmetric Dirichlet, so the ratio is coherent.
    """
    tuning = tuning or TuningConfig()
    engine = _engine(data, tuning, engine)
    if context is None:
        context = engine.new_context(rng)
    rho, p = as_reference_order(current[0]), np.asarray(current[1], dtype=float)
    q = p / p.sum()
    if not np.isfinite(candidate.log_density):
        return rho, p, False
    log_g_current, _ = engine.log_density(rho, q, context)
    log_alpha = (
        log_g_current
        - candidate.log_density
        + log_posterior(data, candidate.rho, candidate.p, prior)
        - log_posterior(data, rho, q, prior)
    )
    u = rng.random()
    with np.errstate(divide="ignore"):
        accepted = bool(np.log(u) < log_alpha)
    if accepted:
        scale = p.sum() if tuning.keep_scale else 1.0
        return candidate.rho, candidate.p * scale, True
    return rho, p, False


def swap_move(
    current: tuple[ReferenceOrder, np.ndarray],
    data: RankingDataset,
    tuning: TuningConfig,
    rng: np.random.Generator,
    context: TableContext | None = None,
    engine: ProposalEngine | None = None,
) -> tuple[ReferenceOrder, bool]:
    """Propose exchanging ``rho(t*)`` and ``rho(t*+1)`` at fixed supports."""
    engine = _engine(data, tuning, engine)
    if context is None:
        context = engine.new_context(rng)
    rho, p = as_reference_order(current[0]), np.asarray(current[1], dtype=float)
    swaps = applicable_swaps(rho)
    t_star = swaps[rng.integers(len(swaps))]
    new_rho = ReferenceOrder.from_rho(swap_adjacent(rho.rho, t_star))
    log_alpha = log_likelihood(data, new_rho, p) - log_likelihood(data, rho, p)
    if tuning.swap_ratio == "literal":
        log_g_old, _ = engine.log_density(rho, p, context)
        log_g_new, _ = engine.log_density(new_rho, p, context)
        log_alpha += log_g_old - log_g_new
    if tuning.swap_correction:
        log_alpha += np.log(len(swaps)) - np.log(len(applicable_swaps(new_rho)))
    with np.errstate(divide="ignore"):
        accepted = bool(np.log(rng.random()) < log_alpha)
    return (new_rho, True) if accepted else (rho, False)


def gibbs_update_latents(
    data: RankingDataset, rho: ReferenceOrder, p: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    return sample_latents(data, EPLParams(rho, p), rng)


def gibbs_update_supports(
    data: RankingDataset,
    rho: ReferenceOrder,
    y: np.ndarray,
    prior: PriorConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate draw ``p_i ~ Gamma(c + N, d + sum_s sum_t delta_sti y_st)``."""
    rate = prior.d + latent_exposure(data, as_reference_order(rho), y)
    return rng.gamma(prior.c + data.N, 1.0 / rate)


def run_chain(
    data: RankingDataset,
    prior: PriorConfig | None = None,
    tuning: TuningConfig | None = None,
    chain_cfg: ChainConfig | None = None,
    init: EPLParams | None = None,
) -> ChainOutput:
    """Run the sampler; the output is a pure function of the inputs and seed.

    The chain starts from the forward order with all supports equal to the
    prior mean unless ``init`` is given.
    """
    prior = prior or PriorConfig()
    tuning = tuning or TuningConfig()
    chain_cfg = chain_cfg or ChainConfig()
    K = data.K
    alpha0 = np.atleast_1d(np.asarray(tuning.alpha0, dtype=float))
    if alpha0.shape[0] not in (1, K):
        raise ValueError(f"alpha0 has {alpha0.shape[0]} entries for K={K} items")
    if init is not None and init.K != K:
        raise ValueError(f"initial state has K={init.K}, data has K={K}")

    engine = ProposalEngine(data, tuning)
    rng = np.random.default_rng(chain_cfg.seed)
    if init is None:
        rho = ReferenceOrder.forward(K)
        p = np.full(K, prior.c / prior.d)
    else:
        rho, p = init.rho, init.p.copy()

    n_keep = len(range(chain_cfg.burn_in, chain_cfg.iterations, chain_cfg.thin))
    iteration = np.empty(n_keep, dtype=np.int64)
    rho_draws = np.empty((n_keep, K), dtype=np.int64)
    p_draws = np.empty((n_keep, K))
    acc_joint = np.empty(n_keep, dtype=bool)
    acc_swap = np.empty(n_keep, dtype=bool)
    log_post = np.empty(n_keep)

    k = 0
    for it in range(chain_cfg.iterations):
        ctx = engine.new_context(rng)
        candidate = engine.propose(rng, ctx)
        rho, p, a1 = mh_accept_joint((rho, p), candidate, data, prior, rng, tuning, ctx, engine)
        rho, a2 = swap_move((rho, p), data, tuning, rng, ctx, engine)
        y = gibbs_update_latents(data, rho, p, rng)
        p = gibbs_update_supports(data, rho, y, prior, rng)
        if it >= chain_cfg.burn_in and (it - chain_cfg.burn_in) % chain_cfg.thin == 0:
            iteration[k] = it + 1
            rho_draws[k] = rho.rho
            p_draws[k] = p
            acc_joint[k] = a1
            acc_swap[k] = a2
            log_post[k] = log_posterior(data, rho, p, prior)
            k += 1
    log.debug(
        "chain done: joint acceptance %.3f, swap acceptance %.3f",
        acc_joint.mean() if n_keep else float("nan"),
        acc_swap.mean() if n_keep else float("nan"),
    )
    return ChainOutput(iteration, rho_draws, p_draws, acc_joint, acc_swap, log_post)


@dataclass(frozen=True)
class PosteriorSummary:
    modal_rho: tuple[int, ...]
    modal_probability: float
    top: list[tuple[tuple[int, ...], float]]
    support_mean: np.ndarray
    support_ci: np.ndarray
    ci_level: float
    acceptance_joint: float
    acceptance_swap: float
    n_draws: int
    trace: dict = field(repr=False, default_factory=dict)

    def plugin_params(self) -> EPLParams:
        """Modal reference order with posterior-mean normalised supports."""
        return EPLParams(self.modal_rho, self.support_mean)

    def as_dict(self) -> dict:
        return {
            "modal_rho": list(self.modal_rho),
            "modal_probability": self.modal_probability,
            "top": [{"rho": list(r), "probability": pr} for r, pr in self.top],
            "support_mean": self.support_mean.tolist(),
            "support_ci": self.support_ci.tolist(),
            "ci_level": self.ci_level,
            "acceptance_joint": self.acceptance_joint,
            "acceptance_swap": self.acceptance_swap,
            "n_draws": self.n_draws,
        }


def posterior_summaries(chain: ChainOutput, top_k: int = 10, level: float = 0.95) -> PosteriorSummary:
    """Modal reference order, top-k table and normalised support summaries.

    Ties in posterior frequency are ordered lexicographically by ``rho``.
    """
    if len(chain) == 0:
        raise ValueError("cannot summarise an empty chain")
    uniq, counts = np.unique(chain.rho_draws, axis=0, return_counts=True)
    # np.unique sorts rows lexicographically; a stable sort keeps that on ties
    order = np.argsort(-counts, kind="stable")
    n = len(chain)
    top = [(tuple(int(x) for x in uniq[i]), counts[i] / n) for i in order[:top_k]]
    q = chain.normalized_supports()
    tail = (1 - level) / 2
    ci = np.quantile(q, [tail, 1 - tail], axis=0).T
    labels = np.array([",".join(map(str, r)) for r in chain.rho_draws])
    trace = {
        "iteration": chain.iteration,
        "rho": labels,
        "log_posterior": chain.log_posterior_trace,
    }
    return PosteriorSummary(
        modal_rho=top[0][0],
        modal_probability=float(top[0][1]),
        top=[(r, float(pr)) for r, pr in top],
        support_mean=q.mean(axis=0),
        support_ci=ci,
        ci_level=level,
        acceptance_joint=float(chain.accept_joint.mean()),
        acceptance_swap=float(chain.accept_swap.mean()),
        n_draws=n,
        trace=trace,
    )
