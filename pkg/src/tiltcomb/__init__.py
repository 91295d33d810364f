"""Tilted independent processes for decomposable combinatorial structures.

Modules:
    ensemble   tilted marginals, moments, stabilizing sets, tilt solving
    oracle     exact big-integer coefficient tables and exact TV
    approx     local-limit count estimates, error budgets, closed forms
    tv         Gaussian TV limits, term sheets and verdicts
    sampling   free and exact-size samplers, statistics, empirical TV
    bijections conjugate, hook and triangular-to-convex transforms
    cli        batch front end (``tiltcomb`` command)
"""
__version__ = "0.1.0"

from .ensemble import (
    EnsembleSpec,
    Family,
    aggregate_moments,
    build_ensemble,
    find_m_set,
    make_ensemble,
    marginal,
    solve_tilt,
    unrestricted_partitions,
    distinct_parts,
    odd_parts,
    set_partitions,
    permutations,
    plane_partitions,
)
from .oracle import coeff_table, exact_count, exact_tv, conditional_component_pmf
from .approx import asymptotic_count, closed_form_asym, qlclt_error_budget, gap_moment_prediction
from .tv import normal_tv, lattice_normal_tv, principle_verdict, Verdict
from .sampling import sample_free, sample_conditional, statistic, empirical_tv
from .bijections import PartitionShape, bijection_transform

__all__ = [
    "EnsembleSpec", "Family", "aggregate_moments", "build_ensemble", "find_m_set", "make_ensemble",
    "marginal", "solve_tilt", "unrestricted_partitions", "distinct_parts", "odd_parts",
    "set_partitions", "permutations", "plane_partitions", "coeff_table", "exact_count", "exact_tv",
    "conditional_component_pmf", "asymptotic_count", "closed_form_asym", "qlclt_error_budget",
    "gap_moment_prediction", "normal_tv", "lattice_normal_tv", "principle_verdict", "Verdict",
    "sample_free", "sample_conditional", "statistic", "empirical_tv", "PartitionShape",
    "bijection_transform",
]
