import pytest

from tiltcomb.bijections import (
    KINDS,
    PartitionShape,
    bijection_transform,
    conjugate,
    convex_to_triangular,
    hook_to_self_conjugate,
    self_conjugate_to_hook,
    triangular_to_convex,
)
from tiltcomb.errors import DomainError, PreconditionViolated
from tiltcomb.oracle import enumerate_partitions
from tiltcomb.sampling import MultiplicityVector


def _triangular(t):
    j = 1
    while j * (j + 1) // 2 < t:
        j += 1
    return j * (j + 1) // 2 == t


def test_examples():
    assert conjugate((3, 1)) == PartitionShape((2, 1, 1))
    lam = hook_to_self_conjugate((5, 1))
    assert lam == PartitionShape((3, 2, 1)) and lam.is_self_conjugate()
    assert self_conjugate_to_hook((3, 2, 1)) == PartitionShape((5, 1))
    out = triangular_to_convex(MultiplicityVector({3: 2}))
    assert out == PartitionShape((4, 2)) and out.is_convex()


def test_dispatch():
    assert bijection_transform(PartitionShape((3, 1)), "conjugate").parts == (2, 1, 1)
    assert set(KINDS) >= {"conjugate", "hook_to_self_conjugate", "triangular_to_convex"}
    with pytest.raises(DomainError):
        bijection_transform((1,), "mirror")


def test_preconditions():
    with pytest.raises(PreconditionViolated):
        hook_to_self_conjugate((3, 3))
    with pytest.raises(PreconditionViolated):
        hook_to_self_conjugate((4, 1))
    with pytest.raises(PreconditionViolated):
        triangular_to_convex((2,))
    with pytest.raises(PreconditionViolated):
        self_conjugate_to_hook((2,))
    with pytest.raises(PreconditionViolated):
        convex_to_triangular((3, 1, 1))


def test_shape_validation():
    with pytest.raises(DomainError):
        PartitionShape((1, 2))
    with pytest.raises(DomainError):
        PartitionShape((2, 0))
    assert PartitionShape.of([1, 3, 2]).parts == (3, 2, 1)


def test_empty_partition():
    e = PartitionShape(())
    assert conjugate(e) == e and e.size == 0 and e.durfee() == 0
    assert triangular_to_convex(e) == e


@pytest.mark.parametrize("n", range(0, 21))
def test_exhaustive_round_trips(n):
    for p in enumerate_partitions(n):
        lam = PartitionShape(p)
        assert lam.to_multiplicities().to_shape() == lam
        assert PartitionShape.from_multiplicities(lam.to_multiplicities()) == lam
        c = conjugate(lam)
        assert c.size == n and conjugate(c) == lam
        if lam.is_self_conjugate():
            mu = self_conjugate_to_hook(lam)
            assert mu.size == n and hook_to_self_conjugate(mu) == lam
        if len(set(p)) == len(p) and all(v % 2 for v in p):
            sc = hook_to_self_conjugate(lam)
            assert sc.size == n and sc.is_self_conjugate() and self_conjugate_to_hook(sc) == lam
        if all(_triangular(v) for v in p):
            cv = triangular_to_convex(lam)
            assert cv.size == n and cv.is_convex() and convex_to_triangular(cv) == lam
        if lam.is_convex():
            tr = convex_to_triangular(lam)
            assert tr.size == n and triangular_to_convex(tr) == lam


def test_hook_counts_match():
    """Self-conjugate partitions and distinct-odd-part partitions are equinumerous."""
    for n in range(0, 31):
        parts = list(enumerate_partitions(n))
        sc = sum(1 for p in parts if PartitionShape(p).is_self_conjugate())
        do = sum(1 for p in parts if len(set(p)) == len(p) and all(v % 2 for v in p))
        assert sc == do


def test_triangular_convexity_to_30():
    for n in range(1, 31):
        for p in enumerate_partitions(n):
            if all(_triangular(v) for v in p):
                out = triangular_to_convex(p)
                d = [a - b for a, b in zip(out.parts, out.parts[1:] + (0,))]
                assert all(a >= b for a, b in zip(d, d[1:])) and out.parts[-1] > 0
