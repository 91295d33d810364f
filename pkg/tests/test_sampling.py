import json
import math

import numpy as np
import pytest
from scipy import stats

from tiltcomb.bijections import PartitionShape, conjugate
from tiltcomb.ensemble import (
    ColorRule,
    MultiplicityRule,
    PartSizeSet,
    distinct_parts,
    make_ensemble,
    marginal,
    odd_parts,
    set_partitions,
    solve_tilt,
    unrestricted_partitions,
)
from tiltcomb.errors import AttemptsExhausted, DomainError, InsufficientSamples, ParseError
from tiltcomb.oracle import (
    conditional_component_pmf,
    conditional_sum_pmf,
    enumerate_partitions,
    exact_tv,
    lattice_distribution,
)
from tiltcomb.sampling import (
    MAX_SEED,
    MultiplicityVector,
    build_tables,
    empirical_tv,
    fraction_map,
    free_smallest_gaps,
    read_ndjson,
    sample_conditional,
    sample_conditional_batch,
    sample_free,
    sample_free_batch,
    statistic,
    write_ndjson,
)


def chi_square_p(observed_values, pmf, min_expected=5.0):
    """Chi-square GOF p-value with adjacent low-expectation bins pooled."""
    pmf = np.asarray(pmf, dtype=float)
    N = len(observed_values)
    obs = np.bincount(np.asarray(observed_values), minlength=pmf.size)[: pmf.size].astype(float)
    assert obs.sum() == N, "sample outside the reference support"
    exp = pmf * N
    o_bins, e_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        o_bins[-1] += o_acc
        e_bins[-1] += e_acc
    o_bins, e_bins = np.array(o_bins), np.array(e_bins)
    keep = e_bins > 0
    stat = float(((o_bins[keep] - e_bins[keep]) ** 2 / e_bins[keep]).sum())
    return float(stats.chi2.sf(stat, keep.sum() - 1))


# --- multiplicity vectors and statistics --------------------------------------


def test_multiplicity_vector_basics():
    v = MultiplicityVector({3: 1, 1: 2, 5: 0})
    assert v.counts == {1: 2, 3: 1}
    assert v.total == 5 and v.num_parts == 3
    assert v[2] == 0
    assert v.to_shape() == PartitionShape((3, 1, 1))
    assert MultiplicityVector.from_dense(np.array([1, 2, 3]), np.array([2, 0, 1])) == v


def test_statistic_examples():
    assert statistic(MultiplicityVector({1: 2, 3: 1}), "smallest_gap") == 2
    assert statistic(MultiplicityVector({}), "smallest_gap") == 1
    assert statistic(MultiplicityVector({}), "smallest_gap", odd_parts(10)) == 1
    v = MultiplicityVector({1: 1, 2: 1, 3: 1})
    assert statistic(v, "smallest_gap") == 4
    assert statistic(v, "largest_part") == 3
    assert statistic(v, "num_parts") == 3
    with pytest.raises(DomainError):
        statistic(v, "median")


def test_statistic_respects_part_sizes():
    ens = odd_parts(20)
    assert statistic(MultiplicityVector({1: 3, 3: 1}), "smallest_gap", ens) == 5
    from_three = make_ensemble("multiset", part_sizes=PartSizeSet("progression", (3, 2)), n_max=20)
    assert statistic(MultiplicityVector({}), "smallest_gap", from_three) == 3


# --- free sampling ----------------------------------------------------------------


def test_free_degenerate_tilt():
    batch = sample_free_batch(unrestricted_partitions(50), 1e-12, 1, 10_000)
    assert not batch.rows.any()


def test_free_geometric_mean():
    N = 100_000
    z1 = sample_free_batch(unrestricted_partitions(1), 0.5, 11, N).column(1)
    assert abs(z1.mean() - 1.0) <= 4 * math.sqrt(2.0 / N)


def test_free_distinct_parts_binary():
    batch = sample_free_batch(distinct_parts(40), 0.95, 3, 5000)
    assert set(np.unique(batch.rows)) <= {0, 1}
    assert all(v.respects(distinct_parts(40)) for v in batch.vectors()[:200])


@pytest.mark.parametrize("ens,i,x", [
    (unrestricted_partitions(10), 2, 0.8),
    (make_ensemble("multiset", colors=ColorRule("const", (3,)), n_max=10), 1, 0.6),
    (make_ensemble("selection", colors=ColorRule("const", (4,)), n_max=10), 1, 1.5),
    (set_partitions(10), 1, 4.0),
    (set_partitions(10), 1, 25.0),  # rejection sampler branch
    (make_ensemble("multiset", multiplicity=MultiplicityRule(1, 4), n_max=10), 1, 0.9),
])
def test_free_marginal_law(ens, i, x):
    mg = marginal(ens, i, x)
    ks, lp = mg.pmf_array()
    pmf = np.zeros(int(ks[-1]) + 1)
    pmf[ks.astype(int)] = np.exp(lp)
    z = sample_free_batch(ens, x, 5, 50_000).column(i)
    assert chi_square_p(z, pmf) > 0.001


def test_free_single_draw_matches_batch():
    ens = unrestricted_partitions(60)
    batch = sample_free_batch(ens, 0.93, 42, 5, start=10)
    assert sample_free(ens, 0.93, 42, draw=12) == batch.vectors()[2]


def test_seed_validation():
    with pytest.raises(DomainError):
        sample_free(unrestricted_partitions(5), 0.5, -1)
    with pytest.raises(DomainError):
        sample_free(unrestricted_partitions(5), 0.5, MAX_SEED + 1)
    sample_free(unrestricted_partitions(5), 0.5, MAX_SEED)


def test_tables_cover_support():
    tab = build_tables(unrestricted_partitions(100), 0.97, 100)
    assert tab.idx.tolist() == list(range(1, 101))
    ends = tab.cdf[tab.offsets[1:] - 1]
    assert np.all(ends == 1.0)


# --- exact-size sampling -------------------------------------------------------------


def test_conditional_n_one():
    for seed in range(5):
        assert sample_conditional(unrestricted_partitions(1), 1, seed) == MultiplicityVector({1: 1})


def test_conditional_distinct_four():
    N = 10_000
    batch = sample_conditional_batch(distinct_parts(4), 4, N, 9)
    frac = float((batch.column(4) == 1).mean())
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / N)
    assert set(map(lambda v: tuple(sorted(v.counts.items())), batch.vectors())) == {((4, 1),), ((1, 1), (3, 1))}


def test_conditional_totals_exact():
    batch = sample_conditional_batch(odd_parts(50), 50, 300, 2)
    assert np.all(batch.totals() == 50)


def test_conditional_component_law_n30():
    n = 30
    batch = sample_conditional_batch(unrestricted_partitions(n), n, 20_000, 17)
    for i in (1, 2, 3):
        pmf = [float(v) for v in conditional_component_pmf(unrestricted_partitions(n), i, n)]
        assert chi_square_p(batch.column(i), pmf) > 0.001


def test_conditional_uniform_over_partitions():
    n = 8
    parts = list(enumerate_partitions(n))
    batch = sample_conditional_batch(unrestricted_partitions(n), n, 22_000, 4)
    shapes = [v.to_shape().parts for v in batch.vectors()]
    index = {p: k for k, p in enumerate(parts)}
    codes = [index[s] for s in shapes]
    assert chi_square_p(codes, [1 / len(parts)] * len(parts)) > 0.001


@pytest.mark.parametrize("n", [100, 400])
def test_acceptance_rate_prediction(n):
    batch = sample_conditional_batch(unrestricted_partitions(n), n, 300, 1)
    ratio = batch.acceptance_rate / batch.predicted_rate
    assert 0.5 <= ratio <= 2.0


def test_conditional_deterministic_across_jobs():
    ens = unrestricted_partitions(40)
    a = sample_conditional_batch(ens, 40, 200, 77, chunk=1000)
    b = sample_conditional_batch(ens, 40, 200, 77, jobs=4, chunk=1000)
    c = sample_conditional_batch(ens, 40, 200, 77)
    assert np.array_equal(a.draws, b.draws) and np.array_equal(a.rows, b.rows)
    assert np.array_equal(a.rows, c.rows)
    assert a.attempts == b.attempts == c.attempts


def test_attempts_exhausted():
    with pytest.raises(AttemptsExhausted):
        sample_conditional_batch(unrestricted_partitions(200), 200, 5, 0, max_attempts=3)


def test_tilt_choice_does_not_bias():
    n = 20
    ens = unrestricted_partitions(n)
    pmf = [float(v) for v in conditional_component_pmf(ens, 1, n)]
    batch = sample_conditional_batch(ens, n, 20_000, 8, x=0.8)
    assert chi_square_p(batch.column(1), pmf) > 0.001


# --- smallest gap -------------------------------------------------------------------------


def test_free_smallest_gaps_match_rows():
    ens = unrestricted_partitions(300)
    x = solve_tilt(ens, 300)
    tab = build_tables(ens, x, 300)
    gaps = free_smallest_gaps(ens, x, 5, 2000, tables=tab)
    rows = sample_free_batch(ens, x, 5, 2000, tables=tab).vectors()
    assert gaps.tolist() == [statistic(v, "smallest_gap") for v in rows]


def test_free_smallest_gap_law():
    """P(I = k) = (1 - x^k) prod_{j<k} x^j under the free process."""
    n = 2000
    ens = unrestricted_partitions(n)
    x = math.exp(-math.pi / math.sqrt(6 * n))
    g = free_smallest_gaps(ens, x, 3, 50_000)
    k = np.arange(1, 200)
    pmf = np.concatenate([[0.0], (1 - x ** k) * x ** (k * (k - 1) / 2)])
    assert chi_square_p(g, pmf / pmf.sum()) > 0.001


# --- empirical TV ------------------------------------------------------------------------


def test_empirical_tv_self_comparison():
    ld = lattice_distribution(unrestricted_partitions(40), [1, 2], 0.8, 40)
    p = np.exp(ld.logpmf)
    p = p / p.sum()
    rng = np.random.default_rng(0)
    bands = []
    for N in (4000, 64_000):
        res = empirical_tv(rng.choice(p.size, size=N, p=p), p)
        assert res.covers(0.0)
        bands.append(res.band)
    assert bands[1] == pytest.approx(bands[0] / 4, rel=0.35)


def test_empirical_tv_insufficient():
    with pytest.raises(InsufficientSamples):
        empirical_tv([1, 2, 3], {1: 0.5, 2: 0.5})


def test_empirical_tv_free_vs_conditional():
    n = 30
    ens = unrestricted_partitions(n)
    B = [1, 2]
    x = solve_tilt(ens, n)
    free = sample_free_batch(ens, x, 21, 100_000)
    tb = free.column(1) + 2 * free.column(2)
    res = empirical_tv(tb, fraction_map(conditional_sum_pmf(ens, B, n)))
    assert res.covers(exact_tv(ens, B, x, n))


def test_empirical_tv_conjugate_contraction():
    n = 12
    ens = unrestricted_partitions(n)
    parts = list(enumerate_partitions(n))
    ref = {p: 1 / len(parts) for p in parts}
    batch = sample_conditional_batch(ens, n, 4000, 6)
    shapes = [v.to_shape().parts for v in batch.vectors()]
    base = empirical_tv(shapes, ref)
    conj_ref = {conjugate(PartitionShape(p)).parts: v for p, v in ref.items()}
    after = empirical_tv([conjugate(PartitionShape(s)).parts for s in shapes], conj_ref)
    assert after.estimate <= base.estimate + base.band
    # a non-injective map contracts as well
    lp_ref = {}
    for p, v in ref.items():
        lp_ref[p[0]] = lp_ref.get(p[0], 0.0) + v
    coarse = empirical_tv([s[0] for s in shapes], lp_ref)
    assert coarse.estimate <= base.estimate + base.band


# --- NDJSON ----------------------------------------------------------------------------------


def test_ndjson_round_trip(tmp_path):
    batch = sample_conditional_batch(unrestricted_partitions(25), 25, 50, 123)
    path = tmp_path / "s.ndjson"
    write_ndjson(batch, path)
    header, recs = read_ndjson(path)
    assert header["seed"] == 123 and header["ensemble"] == batch.ensemble and header["x"] == batch.x
    assert [d for d, _ in recs] == batch.draws.tolist()
    assert [v for _, v in recs] == batch.vectors()
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["type"] == "header" and len(lines) == 51


def test_ndjson_bad_line(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text('{"type": "header", "seed": "1"}\n{"draw": 0, "m": {"1": 2}}\nnot json\n')
    with pytest.raises(ParseError) as info:
        read_ndjson(path)
    assert info.value.line == 3
