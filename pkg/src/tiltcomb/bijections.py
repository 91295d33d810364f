"""Size-preserving transforms between partition families.

* conjugate: transpose of the Young diagram.
* hook: self-conjugate partitions with Durfee square d correspond to
  partitions into d distinct odd parts via mu_i = 2(lambda_i - i) + 1.
* triangular: a partition into triangular numbers binom(j + 1, 2), with a_j
  copies of binom(j + 1, 2), maps to the convex partition
  lambda_k = sum_{j >= k} (j - k + 1) a_j.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import DomainError, PreconditionViolated
from .sampling import MultiplicityVector

KINDS = ("conjugate", "hook_to_self_conjugate", "self_conjugate_to_hook", "triangular_to_convex",
         "convex_to_triangular")


@dataclass(frozen=True)
class PartitionShape:
    """Weakly decreasing positive parts."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(int(p) for p in self.parts)
        if any(p <= 0 for p in parts):
            raise DomainError("parts must be positive")
        if any(a < b for a, b in zip(parts, parts[1:])):
            raise DomainError(f"parts must be weakly decreasing: {parts}")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def of(cls, parts: Sequence[int]) -> "PartitionShape":
        """Shape from parts in any order."""
        return cls(tuple(sorted((int(p) for p in parts), reverse=True)))

    @classmethod
    def from_multiplicities(cls, mv: Union[MultiplicityVector, dict]) -> "PartitionShape":
        counts = mv.counts if isinstance(mv, MultiplicityVector) else dict(mv)
        parts = []
        for i in sorted(counts, reverse=True):
            parts.extend([int(i)] * int(counts[i]))
        return cls(tuple(parts))

    def to_multiplicities(self) -> MultiplicityVector:
        counts = {}
        for p in self.parts:
            counts[p] = counts.get(p, 0) + 1
        return MultiplicityVector(counts)

    @property
    def size(self) -> int:
        return sum(self.parts)

    @property
    def length(self) -> int:
        return len(self.parts)

    def durfee(self) -> int:
        """Side of the largest square inside the Young diagram."""
        return sum(1 for i, p in enumerate(self.parts, start=1) if p >= i)

    def is_self_conjugate(self) -> bool:
        return conjugate(self) == self

    def is_convex(self) -> bool:
        """lambda_1 - lambda_2 >= lambda_2 - lambda_3 >= ... >= lambda_l > 0."""
        diffs = [a - b for a, b in zip(self.parts, self.parts[1:] + (0,))]
        return all(a >= b for a, b in zip(diffs, diffs[1:]))


def _shape(obj) -> PartitionShape:
    if isinstance(obj, PartitionShape):
        return obj
    if isinstance(obj, (MultiplicityVector, dict)):
        return PartitionShape.from_multiplicities(obj)
    return PartitionShape.of(obj)


def conjugate(shape) -> PartitionShape:
    lam = _shape(shape).parts
    if not lam:
        return PartitionShape(())
    return PartitionShape(tuple(sum(1 for p in lam if p >= j) for j in range(1, lam[0] + 1)))


def hook_to_self_conjugate(shape) -> PartitionShape:
    """Distinct odd parts mu_1 > ... > mu_d to the self-conjugate lambda.

    Rows inside the Durfee square are lambda_i = (mu_i - 1)/2 + i; the rest
    of the diagram is completed by symmetry.
    """
    mu = _shape(shape).parts
    if any(p % 2 == 0 for p in mu) or len(set(mu)) != len(mu):
        raise PreconditionViolated(f"hook transform needs distinct odd parts, got {mu}")
    d = len(mu)
    top = [(m - 1) // 2 + i for i, m in enumerate(mu, start=1)]
    rows = list(top)
    j = d + 1
    while True:
        r = sum(1 for p in top if p >= j)
        if r == 0:
            break
        rows.append(r)
        j += 1
    return PartitionShape(tuple(rows))


def self_conjugate_to_hook(shape) -> PartitionShape:
    """Self-conjugate lambda to its diagonal hook lengths mu_i = 2(lambda_i - i) + 1."""
    lam = _shape(shape)
    if not lam.is_self_conjugate():
        raise PreconditionViolated(f"{lam.parts} is not self-conjugate")
    d = lam.durfee()
    return PartitionShape(tuple(2 * (lam.parts[i - 1] - i) + 1 for i in range(1, d + 1)))


def _triangular_index(t: int) -> int:
    """j with binom(j + 1, 2) = t, or 0 when t is not triangular."""
    j = (math.isqrt(8 * t + 1) - 1) // 2
    return j if j * (j + 1) // 2 == t else 0


def triangular_to_convex(obj) -> PartitionShape:
    counts = _shape(obj).to_multiplicities().counts
    a = {}
    for t, k in counts.items():
        j = _triangular_index(t)
        if j == 0:
            raise PreconditionViolated(f"part {t} is not a triangular number")
        a[j] = k
    if not a:
        return PartitionShape(())
    top = max(a)
    return PartitionShape(tuple(sum((j - k + 1) * a.get(j, 0) for j in range(k, top + 1))
                                for k in range(1, top + 1)))


def convex_to_triangular(obj) -> PartitionShape:
    """Inverse of triangular_to_convex: a_j = d_j - d_{j+1} with d_k = lambda_k - lambda_{k+1}."""
    lam = _shape(obj)
    if not lam.is_convex():
        raise PreconditionViolated(f"{lam.parts} is not convex")
    d = [a - b for a, b in zip(lam.parts, lam.parts[1:] + (0,))] + [0]
    counts = {j * (j + 1) // 2: d[j - 1] - d[j] for j in range(1, lam.length + 1)}
    return PartitionShape.from_multiplicities(counts)


_DISPATCH = {
    "conjugate": conjugate,
    "hook_to_self_conjugate": hook_to_self_conjugate,
    "self_conjugate_to_hook": self_conjugate_to_hook,
    "triangular_to_convex": triangular_to_convex,
    "convex_to_triangular": convex_to_triangular,
}


def bijection_transform(obj, kind: str) -> PartitionShape:
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise DomainError(f"unknown transform {kind!r}; expected one of {KINDS}") from None
    return fn(obj)
