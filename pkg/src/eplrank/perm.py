"""Permutation utilities for rankings, orderings and restricted reference orders.

All public functions speak 1-based integers: ranks, items and stages are
numbered ``1..K``.  A *ranking* ``pi`` maps items to ranks, an *ordering*
``pi^-1`` lists items by rank.  A reference order ``rho`` gives the rank that
is assigned at each stage; the restricted space keeps only the orders built by
a sequence of top-or-bottom choices, which has ``2**(K-1)`` elements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_ENUMERATION_K = 20


class PermutationError(ValueError):
    """Base class for invalid permutation input."""


class WrongLengthError(PermutationError):
    pass


class DuplicateEntryError(PermutationError):
    pass


class OutOfRangeError(PermutationError):
    pass


class ReferenceOrderError(ValueError):
    """Raised when a sequence is outside the top-or-bottom restricted space."""


def validate_permutation(seq: Iterable[int], K: int | None = None) -> tuple[int, ...]:
    """Check that ``seq`` is a bijection of ``{1..K}`` and return it as a tuple.

    Raises a distinct subclass of :class:`PermutationError` for a wrong
    length, an out-of-range entry and a duplicated entry.
    """
    try:
        perm = tuple(int(x) for x in seq)
    except (TypeError, ValueError) as exc:
        raise PermutationError(f"non-integer entry in {seq!r}") from exc
    if K is None:
        K = len(perm)
    if K < 2:
        raise WrongLengthError(f"permutations need K >= 2, got K={K}")
    if len(perm) != K:
        raise WrongLengthError(f"expected {K} entries, got {len(perm)}")
    for x in perm:
        if not 1 <= x <= K:
            raise OutOfRangeError(f"entry {x} outside 1..{K}")
    seen = set()
    for x in perm:
        if x in seen:
            raise DuplicateEntryError(f"duplicate entry {x}")
        seen.add(x)
    return perm


def invert(perm: Sequence[int]) -> tuple[int, ...]:
    """Functional inverse; turns a ranking into an ordering and back."""
    perm = validate_permutation(perm)
    inv = [0] * len(perm)
    for pos, val in enumerate(perm, start=1):
        inv[val - 1] = pos
    return tuple(inv)


def forward_order(K: int) -> tuple[int, ...]:
    return tuple(range(1, K + 1))


def backward_order(K: int) -> tuple[int, ...]:
    return tuple(range(K, 0, -1))


def _code_rho(rho: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    K = len(rho)
    w, f, b = [], [], []
    n_top = 0
    for t, r in enumerate(rho):
        n_bottom = t - n_top
        top, bottom = n_top + 1, K - n_bottom
        f.append(n_top)
        b.append(n_bottom)
        if r == top:
            w.append(1)
            n_top += 1
        elif r == bottom:
            w.append(0)
        else:
            raise ReferenceOrderError(
                f"rho={tuple(rho)} breaks the top-or-bottom rule at stage {t + 1}: "
                f"rank {r} is neither {top} nor {bottom}"
            )
    # the last stage has top == bottom and is coded as a top choice
    return tuple(w), tuple(f), tuple(b)


def encode_reference_order(rho: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """Return the binary code ``W`` and the counters ``F`` and ``B`` of ``rho``.

    ``F[t]`` counts top positions assigned before stage ``t`` and
    ``B[t] = t - F[t]`` (0-based ``t``) the bottom ones.  ``W[-1]`` is 1.
    """
    rho = validate_permutation(rho)
    return _code_rho(rho)


def decode_reference_order(w: Sequence[int]) -> tuple[int, ...]:
    """Rebuild ``rho`` from its top/bottom bit sequence."""
    w = [int(x) for x in w]
    K = len(w)
    if K < 2:
        raise WrongLengthError(f"need K >= 2 bits, got {K}")
    if any(x not in (0, 1) for x in w):
        raise ReferenceOrderError(f"W must be binary, got {w}")
    if w[-1] != 1:
        raise ReferenceOrderError("the terminal bit W_K must be 1")
    rho = []
    n_top = 0
    for t, bit in enumerate(w):
        n_bottom = t - n_top
        if bit:
            rho.append(n_top + 1)
            n_top += 1
        else:
            rho.append(K - n_bottom)
    return tuple(rho)


def is_restricted(rho: Sequence[int]) -> bool:
    try:
        encode_reference_order(rho)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class ReferenceOrder:
    """A reference order in the restricted space together with its code."""

    rho: tuple[int, ...]
    w: tuple[int, ...]
    f: tuple[int, ...]
    b: tuple[int, ...]

    @classmethod
    def from_rho(cls, rho: Sequence[int]) -> "ReferenceOrder":
        rho = validate_permutation(rho)
        w, f, b = _code_rho(rho)
        return cls(rho, w, f, b)

    @classmethod
    def from_code(cls, w: Sequence[int]) -> "ReferenceOrder":
        return cls.from_rho(decode_reference_order(w))

    @classmethod
    def forward(cls, K: int) -> "ReferenceOrder":
        return cls.from_rho(forward_order(K))

    @classmethod
    def backward(cls, K: int) -> "ReferenceOrder":
        return cls.from_rho(backward_order(K))

    @property
    def K(self) -> int:
        return len(self.rho)

    def __iter__(self):
        return iter(self.rho)

    def __len__(self) -> int:
        return len(self.rho)

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.rho)) + ")"


def as_reference_order(rho: ReferenceOrder | Sequence[int]) -> ReferenceOrder:
    if isinstance(rho, ReferenceOrder):
        return rho
    return ReferenceOrder.from_rho(rho)


def compose_with_reference(ordering: Sequence[int], rho: ReferenceOrder | Sequence[int]) -> tuple[int, ...]:
    """Items listed in order of selection: ``eta^-1(t) = pi^-1(rho(t))``.

    ``rho`` may be any permutation here, restricted or not.
    """
    ordering = validate_permutation(ordering)
    rho_t = tuple(rho.rho) if isinstance(rho, ReferenceOrder) else validate_permutation(rho)
    if len(rho_t) != len(ordering):
        raise WrongLengthError(
            f"ordering has K={len(ordering)} but reference order has K={len(rho_t)}"
        )
    return tuple(ordering[r - 1] for r in rho_t)


def enumerate_restricted_space(K: int) -> list[tuple[int, ...]]:
    """All ``2**(K-1)`` reference orders obeying the top-or-bottom rule.

    The list is in lexicographic order of the codes ``W_1..W_{K-1}``.
    """
    if not 2 <= K <= MAX_ENUMERATION_K:
        raise ValueError(f"K must lie in 2..{MAX_ENUMERATION_K}, got {K}")
    return [
        decode_reference_order(bits + (1,))
        for bits in itertools.product((0, 1), repeat=K - 1)
    ]


def swap_adjacent(rho: Sequence[int], t: int) -> tuple[int, ...]:
    """Exchange the entries at 1-based stages ``t`` and ``t+1``."""
    out = list(rho)
    out[t - 1], out[t] = out[t], out[t - 1]
    return tuple(out)


def applicable_swaps(rho: ReferenceOrder | Sequence[int]) -> tuple[int, ...]:
    """Stages ``t`` whose swap with ``t+1`` keeps ``rho`` in the restricted space.

    ``K-1`` is always included.
    """
    rho = as_reference_order(rho).rho
    return tuple(
        t for t in range(1, len(rho)) if is_restricted(swap_adjacent(rho, t))
    )


def borda_ordering(orderings: np.ndarray | Sequence[Sequence[int]]) -> tuple[int, ...]:
    """Items sorted by ascending mean rank, ties broken by item index.

    ``orderings`` is an ``N x K`` array of 1-based orderings, or anything
    with an ``orderings`` attribute holding one.
    """
    arr = getattr(orderings, "orderings", orderings)
    arr = np.asarray(arr, dtype=int)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("borda_ordering needs a non-empty N x K array of orderings")
    N, K = arr.shape
    rank_sums = np.zeros(K, dtype=np.int64)
    ranks = np.broadcast_to(np.arange(1, K + 1), arr.shape)
    np.add.at(rank_sums, arr - 1, ranks)
    # integer sums give exact comparisons; a stable sort keeps index order on ties
    order = np.argsort(rank_sums, kind="stable")
    return tuple(int(i) + 1 for i in order)
