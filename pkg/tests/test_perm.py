import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eplrank.perm import (
    DuplicateEntryError,
    OutOfRangeError,
    ReferenceOrder,
    ReferenceOrderError,
    WrongLengthError,
    applicable_swaps,
    backward_order,
    borda_ordering,
    compose_with_reference,
    decode_reference_order,
    encode_reference_order,
    enumerate_restricted_space,
    forward_order,
    invert,
    is_restricted,
    swap_adjacent,
    validate_permutation,
)

from oracles import restricted_tree

perms = st.integers(2, 9).flatmap(lambda k: st.permutations(list(range(1, k + 1))))


def test_validate_accepts_bijection():
    assert validate_permutation((2, 1, 3), 3) == (2, 1, 3)


@pytest.mark.parametrize(
    "seq, K, exc",
    [((1, 1, 3), 3, DuplicateEntryError), ((1, 2, 4), 3, OutOfRangeError), ((1, 2), 3, WrongLengthError)],
)
def test_validate_errors_are_distinct(seq, K, exc):
    with pytest.raises(exc):
        validate_permutation(seq, K)


def test_validate_rejects_k_below_two():
    with pytest.raises(WrongLengthError):
        validate_permutation((1,))


def test_invert_examples():
    assert invert((1, 2, 3)) == (1, 2, 3)
    assert invert((3, 1, 2)) == (2, 3, 1)


@given(perms)
def test_invert_is_involution(x):
    assert invert(invert(x)) == tuple(x)


def test_compose_examples():
    assert compose_with_reference((4, 2, 5, 1, 3), (5, 1, 4, 3, 2)) == (3, 4, 1, 5, 2)


@given(perms)
def test_compose_forward_and_backward(x):
    K = len(x)
    assert compose_with_reference(x, forward_order(K)) == tuple(x)
    assert compose_with_reference(x, backward_order(K)) == tuple(reversed(x))


def test_compose_dimension_mismatch():
    with pytest.raises(WrongLengthError):
        compose_with_reference((1, 2, 3), (1, 2))


def test_worked_code_example():
    w, f, b = encode_reference_order((5, 1, 4, 3, 2))
    assert w == (0, 1, 0, 0, 1)
    assert f == (0, 0, 1, 1, 1)
    assert b == (0, 1, 1, 2, 3)
    assert decode_reference_order((0, 1, 0, 0, 1)) == (5, 1, 4, 3, 2)
    assert decode_reference_order((1, 1, 1, 1, 1)) == (1, 2, 3, 4, 5)


@pytest.mark.parametrize("K", [2, 3, 6, 9])
def test_forward_backward_codes(K):
    assert encode_reference_order(forward_order(K))[0] == (1,) * K
    assert encode_reference_order(backward_order(K))[0] == (0,) * (K - 1) + (1,)


def test_encode_rejects_interior_rank():
    with pytest.raises(ReferenceOrderError):
        encode_reference_order((2, 1, 3))


def test_decode_rejects_zero_terminal_bit():
    with pytest.raises(ReferenceOrderError):
        decode_reference_order((0, 1, 0))


@pytest.mark.parametrize("K", range(2, 11))
def test_space_matches_tree_enumeration(K):
    space = enumerate_restricted_space(K)
    assert len(space) == len(set(space)) == 2 ** (K - 1)
    assert set(space) == set(restricted_tree(K))
    for rho in space:
        assert decode_reference_order(encode_reference_order(rho)[0]) == rho


def test_space_k5_contains_worked_example():
    assert (5, 1, 4, 3, 2) in enumerate_restricted_space(5)
    assert set(enumerate_restricted_space(2)) == {(1, 2), (2, 1)}


@pytest.mark.parametrize("K", [1, 21])
def test_space_guard(K):
    with pytest.raises(ValueError):
        enumerate_restricted_space(K)


@given(st.integers(2, 10).flatmap(lambda k: st.lists(st.integers(0, 1), min_size=k - 1, max_size=k - 1)))
def test_encode_decode_inverse_on_codes(bits):
    w = tuple(bits) + (1,)
    assert encode_reference_order(decode_reference_order(w))[0] == w


def test_f_and_b_counters_follow_w():
    for rho in enumerate_restricted_space(7):
        w, f, b = encode_reference_order(rho)
        assert f[0] == 0
        for t in range(1, 7):
            assert f[t] == sum(w[:t])
            assert b[t] == t - f[t]


def test_is_restricted_matches_brute_force():
    space = set(restricted_tree(5))
    for x in itertools.permutations(range(1, 6)):
        assert is_restricted(x) == (x in space)


def test_swap_examples():
    assert 4 in applicable_swaps((1, 2, 3, 4, 5))
    assert 1 in applicable_swaps((5, 1, 4, 3, 2))


@pytest.mark.parametrize("K", [3, 6])
def test_swap_closure_exhaustive(K):
    for rho in enumerate_restricted_space(K):
        swaps = applicable_swaps(rho)
        assert K - 1 in swaps and 1 <= len(swaps) <= K - 1
        for t in range(1, K):
            if t in swaps:
                encode_reference_order(swap_adjacent(rho, t))
            else:
                with pytest.raises(ReferenceOrderError):
                    encode_reference_order(swap_adjacent(rho, t))


def test_reference_order_object():
    r = ReferenceOrder.from_rho((5, 1, 4, 3, 2))
    assert r.w == (0, 1, 0, 0, 1) and r.K == 5 and len(r) == 5
    assert ReferenceOrder.from_code(r.w) == r
    assert ReferenceOrder.forward(3).rho == (1, 2, 3)
    assert ReferenceOrder.backward(3).rho == (3, 2, 1)


def test_borda_examples():
    # rankings (1,2,3) and (2,1,3) are orderings (1,2,3) and (2,1,3)
    assert borda_ordering([[1, 2, 3], [2, 1, 3]]) == (1, 2, 3)
    assert borda_ordering([[3, 1, 2]] * 4) == (3, 1, 2)
    with pytest.raises(ValueError):
        borda_ordering(np.empty((0, 3), dtype=int))


def test_borda_uniform_mean_ranks(rng):
    rows = np.array([rng.permutation(4) + 1 for _ in range(20000)])
    ranks = np.argsort(rows, axis=1) + 1
    assert np.allclose(ranks.mean(axis=0), 2.5, atol=0.05)
    assert sorted(borda_ordering(rows)) == [1, 2, 3, 4]
