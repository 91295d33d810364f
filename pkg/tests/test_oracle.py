import math
import random
from fractions import Fraction

import numpy as np
import pytest

from tiltcomb.ensemble import (
    ColorRule,
    MultiplicityRule,
    PartSizeSet,
    distinct_parts,
    make_ensemble,
    moment_profile,
    odd_parts,
    permutations,
    plane_partitions,
    set_partitions,
    solve_tilt,
    unrestricted_partitions,
)
from tiltcomb.errors import ResourceLimit, UnsupportedTarget, ZeroCount
from tiltcomb.oracle import (
    bell_recurrence,
    coeff_table,
    conditional_component_pmf,
    conditional_sum_pmf,
    enumerate_multiplicities,
    enumerate_partitions,
    exact_count,
    exact_tv,
    lattice_distribution,
    partition_numbers_pentagonal,
    write_csv,
)
from tiltcomb.special import PARTITION_C

C = PARTITION_C


def plane_partition_numbers(n):
    """prod_k (1 - y^k)^{-k}, multiplying one geometric factor at a time, largest k first."""
    p = [1] + [0] * n
    for k in range(n, 0, -1):
        for _ in range(k):
            for j in range(k, n + 1):
                p[j] += p[j - k]
    return p


# --- coefficient tables -------------------------------------------------------


def test_parts_one_and_two():
    ens = make_ensemble("multiset", PartSizeSet("list", (1, 2)), n_max=4)
    assert coeff_table(ens, None, 4).coeff(4) == 3


def test_empty_b_table():
    t = coeff_table(unrestricted_partitions(6), [], 6)
    assert list(t.values) == [1, 0, 0, 0, 0, 0, 0]


def test_distinct_parts_four():
    assert coeff_table(distinct_parts(4), [1, 2, 3, 4], 4).coeff(4) == 2


def test_table_nonnegative_and_starts_at_one():
    for ens in (unrestricted_partitions(60), distinct_parts(60), odd_parts(60), plane_partitions(60)):
        t = coeff_table(ens, None, 60)
        assert t.values[0] == 1
        assert all(v >= 0 for v in t.values)


def test_resource_limit():
    with pytest.raises(ResourceLimit):
        coeff_table(unrestricted_partitions(10), None, 100, max_n=50)


def test_cache_round_trip(tmp_path):
    ens = set_partitions(40)
    a = coeff_table(ens, None, 40, cache_dir=str(tmp_path))
    assert list(tmp_path.iterdir())
    b = coeff_table(ens, None, 40, cache_dir=str(tmp_path))
    assert a == b


def test_write_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_csv(coeff_table(unrestricted_partitions(10), None, 10), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,count,log_coeff"
    assert lines[-1].startswith("10,42,")


# --- exact counts --------------------------------------------------------------


def test_partition_count_ten():
    assert exact_count(unrestricted_partitions(10), 10) == 42
    assert partition_numbers_pentagonal(10)[10] == 42


def test_plane_partitions_four():
    assert exact_count(plane_partitions(4), 4) == 13


def test_set_partitions_five():
    assert exact_count(set_partitions(5), 5) == 52


def test_bell_recurrence_examples():
    b = bell_recurrence(5)
    assert b[0] == 1 and b[1] == 1 and b[5] == 52


def test_partitions_match_pentagonal():
    assert list(coeff_table(unrestricted_partitions(200), None, 200).values) == partition_numbers_pentagonal(200)


def test_bell_numbers_match():
    t = coeff_table(set_partitions(100), None, 100)
    assert [t.count(k) for k in range(101)] == bell_recurrence(100)


def test_permutations_count_factorial():
    t = coeff_table(permutations(100), None, 100)
    assert all(t.count(k) == math.factorial(k) for k in range(101))
    assert all(t.coeff(k) == 1 for k in range(101))


def test_assembly_integrality_to_300():
    for ens in (set_partitions(300), permutations(300)):
        t = coeff_table(ens, None, 300)
        assert all(isinstance(t.count(k), int) for k in range(301))


def test_plane_partitions_two_orderings():
    assert list(coeff_table(plane_partitions(100), None, 100).values) == plane_partition_numbers(100)


@pytest.mark.parametrize("ens", [
    unrestricted_partitions(14), distinct_parts(14), odd_parts(14), plane_partitions(10), set_partitions(8),
    make_ensemble("multiset", multiplicity=MultiplicityRule(0, 2), n_max=14),
    make_ensemble("selection", colors=ColorRule("const", (2,)), n_max=12),
])
def test_counts_match_brute_force(ens):
    for n in range(1, ens.n_max + 1):
        brute = sum(w for _, w in enumerate_multiplicities(ens, n))
        assert exact_count(ens, n) == brute


def test_enumerate_partitions_matches_p():
    p = partition_numbers_pentagonal(15)
    assert all(sum(1 for _ in enumerate_partitions(n)) == p[n] for n in range(16))


# --- lattice distributions --------------------------------------------------


def test_lattice_geometric_example():
    ld = lattice_distribution(unrestricted_partitions(3), [1], 0.5, 3)
    assert np.allclose(np.exp(ld.logpmf), [0.5, 0.25, 0.125, 0.0625], atol=1e-15)
    assert ld.tail == pytest.approx(0.0625, abs=1e-15)


def test_lattice_normalization_at_n_100():
    n = 100
    ld = lattice_distribution(unrestricted_partitions(n), None, math.exp(-C / math.sqrt(n)), n)
    assert abs(math.fsum(np.exp(ld.logpmf)) + ld.tail - 1.0) < 1e-12


def test_lattice_distinct_parts_plug_in():
    ld = lattice_distribution(distinct_parts(4), [1, 2, 3, 4], 0.3, 4)
    want = 2 * 0.3 ** 4 / math.prod(1 + 0.3 ** i for i in range(1, 5))
    assert math.exp(ld.logpmf[4]) == pytest.approx(want, rel=1e-13)


def test_count_identity_random_fixtures():
    rng = random.Random(7)
    pool = [(unrestricted_partitions(60), 0.9), (distinct_parts(60), 0.8), (odd_parts(60), 0.9),
            (plane_partitions(40), 0.8), (set_partitions(40), 3.0)]
    for _ in range(20):
        ens, x = pool[rng.randrange(len(pool))]
        n = ens.n_max
        B = sorted(rng.sample(range(1, n + 1), rng.randrange(1, 12)))
        m = rng.randrange(0, n + 1)
        ld = lattice_distribution(ens, B, x, n)
        idx = [i for i in ens.indices(n) if int(i) in B]
        t = coeff_table(ens, idx, n)
        prof = moment_profile(ens, x, n)
        logc = math.fsum(float(c) for i, c in zip(prof.idx, prof.logc) if int(i) in B)
        want = t.log_coeff(m) + m * math.log(x) + logc
        if math.isinf(want):
            assert math.isinf(ld.logpmf[m])
        else:
            assert ld.logpmf[m] == pytest.approx(want, abs=1e-12)


# --- conditional laws ------------------------------------------------------------


def test_conditional_component_example():
    pmf = conditional_component_pmf(unrestricted_partitions(4), 1, 4)
    assert pmf == [Fraction(2, 5), Fraction(1, 5), Fraction(1, 5), Fraction(0), Fraction(1, 5)]


def test_conditional_component_large_index():
    assert conditional_component_pmf(unrestricted_partitions(10), 12, 10) == [Fraction(1)]


def test_conditional_component_distinct():
    pmf = conditional_component_pmf(distinct_parts(4), 4, 4)
    assert pmf[1] == Fraction(1, 2)


def test_conditional_component_matches_enumeration():
    n = 12
    ens = unrestricted_partitions(n)
    parts = list(enumerate_partitions(n))
    for i in (1, 2, 3):
        counts = [0] * (n // i + 1)
        for p in parts:
            counts[p.count(i)] += 1
        assert conditional_component_pmf(ens, i, n) == [Fraction(c, len(parts)) for c in counts]


def test_zero_count():
    ens = make_ensemble("multiset", PartSizeSet("list", (2,)), n_max=5)
    with pytest.raises(ZeroCount):
        conditional_component_pmf(ens, 2, 5)


# --- exact TV ---------------------------------------------------------------------


def test_tv_full_b_is_one_minus_point_mass():
    n = 60
    ens = unrestricted_partitions(n)
    x = solve_tilt(ens, n)
    ld = lattice_distribution(ens, None, x, n)
    assert exact_tv(ens, None, x, n) == pytest.approx(1 - math.exp(ld.logpmf[n]), abs=1e-12)


def test_tv_empty_b_is_zero():
    assert exact_tv(unrestricted_partitions(80), [], None, 80) == pytest.approx(0.0, abs=1e-12)


def test_tv_small_b_decreases():
    vals = [exact_tv(unrestricted_partitions(n), [1, 2, 3, 4, 5], math.exp(-C / math.sqrt(n)), n)
            for n in (500, 1000)]
    assert 0 < vals[1] < vals[0] < 0.2


def test_tv_unsupported_target():
    ens = make_ensemble("multiset", PartSizeSet("list", (2, 4)), n_max=9)
    with pytest.raises(UnsupportedTarget):
        exact_tv(ens, [2], None, 9)


def test_conditional_law_tilt_free():
    """The law of T_B given T = n rebuilt at two tilts agrees with the exact rationals."""
    n = 200
    ens = unrestricted_partitions(n)
    B = list(range(1, 8))
    exact = np.array([float(v) for v in conditional_sum_pmf(ens, B, n)])
    comp = [i for i in range(1, n + 1) if i not in B]
    for x in (0.85, solve_tilt(ens, n)):
        lb = lattice_distribution(ens, B, x, n)
        lc = lattice_distribution(ens, comp, x, n)
        pair = lb.logpmf + lc.logpmf[::-1]
        law = np.exp(pair - np.logaddexp.reduce(pair))
        assert np.max(np.abs(law - exact)) < 1e-10


def test_tv_formula_matches_direct_sum():
    n = 40
    ens = unrestricted_partitions(n)
    B = [1, 3]
    x = 0.8
    cond = [float(v) for v in conditional_sum_pmf(ens, B, n)]
    ld = lattice_distribution(ens, B, x, n)
    free = np.exp(ld.logpmf)
    direct = 0.5 * (math.fsum(abs(c - f) for c, f in zip(cond, free)) + ld.tail)
    assert exact_tv(ens, B, x, n) == pytest.approx(direct, abs=1e-12)
