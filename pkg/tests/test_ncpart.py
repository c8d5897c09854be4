from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resolvent_lab.ncpart import (
    DomainError,
    NonCrossingGraph,
    Partition,
    SizeLimitError,
    catalan,
    connected_components,
    enumerate_all_partitions,
    enumerate_ncg,
    enumerate_ncp,
    is_noncrossing,
    kreweras,
)

# number of non-crossing graphs on n points in convex position
NCG_COUNTS = {1: 1, 2: 2, 3: 8, 4: 48, 5: 352, 6: 2880, 7: 25216}
BELL = {1: 1, 2: 2, 3: 5, 4: 15, 5: 52, 6: 203, 7: 877}


def test_catalan_small_values():
    assert [catalan(n) for n in range(8)] == [1, 1, 2, 5, 14, 42, 132, 429]
    assert catalan(30) == 3814986502092304


def test_catalan_guard():
    with pytest.raises(SizeLimitError):
        catalan(31)
    with pytest.raises(ValueError):
        catalan(-1)


def test_partition_canonical_form():
    p = Partition.from_blocks([(5,), (4, 1, 3), (2,), (6,)])
    assert p.blocks == ((1, 3, 4), (2,), (5,), (6,))
    assert str(p) == "134|2|5|6"
    assert p == Partition.from_string("134|2|5|6")
    assert p.labels() == (0, 1, 0, 0, 2, 3)
    assert p.block_of(3) == (1, 3, 4)


def test_partition_string_with_commas():
    p = Partition.from_string("1,10|2,3,4,5,6,7,8,9")
    assert p.k == 10
    assert str(p) == "1,10|2,3,4,5,6,7,8,9"


@pytest.mark.parametrize("blocks", [[(1, 2), (2, 3)], [(1,), (3,)], [(1, 2), ()]])
def test_partition_rejects_invalid(blocks):
    with pytest.raises(ValueError):
        Partition.from_blocks(blocks, k=3)


def test_bell_numbers_for_oracle():
    for k, bell in BELL.items():
        assert len(enumerate_all_partitions(k)) == bell


def test_enumerate_ncp_counts_and_order():
    for k in range(1, 11):
        parts = enumerate_ncp(k)
        assert len(parts) == catalan(k)
        assert len(set(parts)) == len(parts)
        labels = [p.labels() for p in parts]
        assert labels == sorted(labels)


def test_enumerate_ncp_size_guard():
    with pytest.raises(SizeLimitError):
        enumerate_ncp(11)
    with pytest.raises(SizeLimitError):
        enumerate_ncp(0)


def test_is_noncrossing_examples():
    assert is_noncrossing(Partition.from_string("13|24")) is False
    assert is_noncrossing(Partition.from_string("14|23")) is True
    assert is_noncrossing(Partition.from_string("134|2|5|6")) is True


def test_kreweras_examples():
    assert str(kreweras(Partition.from_string("134|2|5|6"))) == "12|3|456"
    assert kreweras(Partition.singletons(4)) == Partition.full(4)
    assert kreweras(Partition.full(4)) == Partition.singletons(4)


def test_kreweras_rejects_crossing():
    with pytest.raises(DomainError):
        kreweras(Partition.from_string("13|24"))


def _kreweras_by_definition(p: Partition) -> Partition:
    """Largest sigma with p and sigma non-crossing on the interleaved circle."""
    k = p.k
    best = None
    for sigma in enumerate_ncp(k):
        # positions: element i at 2i-1, copy i at 2i
        lab = {}
        for n, b in enumerate(p.blocks):
            for x in b:
                lab[2 * x - 1] = ("p", n)
        for n, b in enumerate(sigma.blocks):
            for x in b:
                lab[2 * x] = ("s", n)
        ok = True
        for a, c, b, d in combinations(range(1, 2 * k + 1), 4):
            if lab[a] == lab[b] and lab[c] == lab[d] and lab[a] != lab[c]:
                ok = False
                break
        if ok and (best is None or len(sigma) < len(best)):
            best = sigma
    return best


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_kreweras_matches_definition(k):
    for p in enumerate_ncp(k):
        assert kreweras(p) == _kreweras_by_definition(p)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=9).flatmap(
    lambda k: st.tuples(st.just(k), st.integers(min_value=0, max_value=catalan(k) - 1))))
def test_kreweras_properties(data):
    k, idx = data
    p = enumerate_ncp(k)[idx]
    K = kreweras(p)
    assert is_noncrossing(K)
    assert len(p) + len(K) == k + 1
    assert kreweras(K) == p.relabel(lambda i: (i - 2) % k + 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=10).flatmap(
    lambda k: st.tuples(st.just(k), st.integers(min_value=0, max_value=catalan(k) - 1))))
def test_partition_string_round_trip(data):
    k, idx = data
    p = enumerate_ncp(k)[idx]
    assert Partition.from_string(str(p), k) == p


def test_enumerate_ncg_counts():
    for k, count in NCG_COUNTS.items():
        assert len(enumerate_ncg(k)) == count


def test_enumerate_ncg_guard_and_crossing_rejected():
    with pytest.raises(SizeLimitError):
        enumerate_ncg(8)
    with pytest.raises(DomainError):
        NonCrossingGraph(4, frozenset({(1, 3), (2, 4)}))


def test_components_are_noncrossing_partitions():
    for k in range(1, 7):
        seen = set()
        for g in enumerate_ncg(k):
            pi = connected_components(g)
            assert is_noncrossing(pi)
            seen.add(pi)
        assert seen == set(enumerate_ncp(k))


def test_connected_components_example():
    g = NonCrossingGraph(5, frozenset({(1, 4), (2, 3)}))
    assert str(connected_components(g)) == "14|23|5"
