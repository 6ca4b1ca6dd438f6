"""Dyadic machinery: Whitney decompositions, maximal averages, stopping trees.

Dyadic intervals are [j 2^k, (j+1) 2^k) by arithmetic, but every membership
test in this package uses the open interior so that atoms sitting on a grid
line belong to neither side.  Endpoints of dyadic intervals are exact in
binary floating point, so the set logic below is exact.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    CarlesonBox,
    DiscreteMeasure2D,
    Interval,
    dilate,
    hat,
)

__all__ = [
    "ComplementEmptyError",
    "DyadicInterval",
    "OpenSet",
    "WhitneyCollection",
    "WhitneyReport",
    "MaximalResult",
    "StoppingFamily",
    "whitney_decompose",
    "whitney_properties",
    "check_nesting",
    "maximal_function",
    "weak_11_check",
    "principal_intervals",
    "carleson_ratio",
    "carleson_packing_check",
]

# Default gap between the finest open-set part and the decomposition floor.
# Each part can leave at most 4 floor cells uncovered, so 14 extra levels
# keep the defect below 2^-12 of the part length.
_FLOOR_MARGIN = 14


class ComplementEmptyError(ValueError):
    """The open set covers the whole half line, so no Whitney witness exists."""


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """The dyadic interval [index 2^level, (index + 1) 2^level)."""

    level: int
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"dyadic index must be >= 0, got {self.index}")

    @property
    def a(self) -> float:
        return math.ldexp(float(self.index), self.level)

    @property
    def b(self) -> float:
        return math.ldexp(float(self.index + 1), self.level)

    @property
    def length(self) -> float:
        return math.ldexp(1.0, self.level)

    def open_interval(self) -> Interval:
        return Interval(self.a, self.b)

    def contains_point(self, x: float) -> bool:
        return self.a < x < self.b

    def parent(self) -> "DyadicInterval":
        return DyadicInterval(self.level + 1, self.index >> 1)

    def children(self) -> Tuple["DyadicInterval", "DyadicInterval"]:
        return (
            DyadicInterval(self.level - 1, 2 * self.index),
            DyadicInterval(self.level - 1, 2 * self.index + 1),
        )

    def ancestor_at(self, level: int) -> "DyadicInterval":
        if level < self.level:
            raise ValueError("ancestor level must be >= own level")
        return DyadicInterval(level, self.index >> (level - self.level))

    def strictly_contains(self, other: "DyadicInterval") -> bool:
        return other.level < self.level and other.ancestor_at(self.level) == self

    @staticmethod
    def cell_at(x: float, level: int) -> "DyadicInterval":
        """Half-open grid cell containing x >= 0 at the given level."""
        if x < 0.0:
            raise ValueError("cell positions live on the nonnegative half line")
        return DyadicInterval(level, int(math.floor(math.ldexp(x, -level))))

    @staticmethod
    def open_cell_at(x: float, level: int) -> Optional["DyadicInterval"]:
        """Cell whose open interior contains x, or None when x is a grid point."""
        cell = DyadicInterval.cell_at(x, level)
        return None if x == cell.a else cell


@dataclass(frozen=True)
class OpenSet:
    """Finite union of disjoint open intervals in (0, inf), sorted by endpoint."""

    parts: Tuple[Interval, ...]

    def __post_init__(self):
        for prev, nxt in zip(self.parts, self.parts[1:]):
            if nxt.a < prev.b:
                raise ValueError("open set parts must be disjoint and sorted")

    @property
    def total_length(self) -> float:
        return float(sum(p.length for p in self.parts))

    def contains_point(self, x: float) -> bool:
        return any(p.contains(x) for p in self.parts)

    def contains_interval(self, iv: Interval) -> bool:
        """True when iv fits inside a single part (shared endpoints allowed)."""
        for p in self.parts:
            if p.a <= iv.a and iv.b <= p.b:
                return True
            if p.a > iv.a:
                break
        return False

    def length_within(self, iv: Interval) -> float:
        total = 0.0
        for p in self.parts:
            lo = max(p.a, iv.a)
            hi = min(p.b, iv.b)
            if hi > lo:
                total += hi - lo
        return total

    def covers_half_line(self) -> bool:
        return len(self.parts) == 1 and self.parts[0].a == 0.0 and not self.parts[0].is_finite

    @classmethod
    def from_intervals(cls, ivs: Iterable[Interval]) -> "OpenSet":
        """Union of the intervals; overlapping or touching inputs are merged."""
        items = sorted(ivs, key=lambda p: (p.a, p.b))
        merged: List[Interval] = []
        for p in items:
            if merged and p.a <= merged[-1].b:
                if p.b > merged[-1].b:
                    merged[-1] = Interval(merged[-1].a, p.b)
            else:
                merged.append(p)
        return cls(tuple(merged))

    @classmethod
    def from_cells(cls, level: int, indices: Iterable[int]) -> "OpenSet":
        """Open hull of half-open grid cells; consecutive runs merge."""
        idx = sorted(set(int(i) for i in indices))
        parts: List[Interval] = []
        run_start: Optional[int] = None
        prev: Optional[int] = None
        for j in idx:
            if run_start is None:
                run_start, prev = j, j
            elif j == prev + 1:
                prev = j
            else:
                parts.append(Interval(DyadicInterval(level, run_start).a,
                                      DyadicInterval(level, prev).b))
                run_start, prev = j, j
        if run_start is not None:
            parts.append(Interval(DyadicInterval(level, run_start).a,
                                  DyadicInterval(level, prev).b))
        return cls(tuple(parts))


@dataclass(frozen=True)
class WhitneyCollection:
    omega: OpenSet
    mode: str
    min_level: int
    members: Tuple[DyadicInterval, ...]
    uncovered_tail: float

    def member_containing(self, x: float) -> Optional[DyadicInterval]:
        starts = [m.a for m in self.members]
        pos = bisect_right(starts, x) - 1
        if pos >= 0 and self.members[pos].contains_point(x):
            return self.members[pos]
        return None


def _level_of_length(length: float) -> int:
    """Largest k with 2^k <= length."""
    mant, exp = math.frexp(length)
    return exp - 1 if mant == 0.5 else exp - 1


def whitney_decompose(omega: OpenSet, min_level: Optional[int] = None,
                      mode: str = "triple") -> WhitneyCollection:
    """Whitney family of maximal dyadic intervals sitting well inside omega.

    In "triple" mode a member is a maximal dyadic I with 3I inside omega
    (and level >= min_level).  In "quintuple" mode a member must satisfy
    3I inside omega and 5I not inside, which can leave parts of omega near
    its boundary uncovered; the uncovered mass is returned as the tail either
    way.  min_level defaults to 14 levels below the finest part.
    """
    if mode not in ("triple", "quintuple"):
        raise ValueError(f"unknown whitney mode {mode!r}")
    if not omega.parts:
        return WhitneyCollection(omega, mode, min_level if min_level is not None else 0, (), 0.0)
    if omega.covers_half_line():
        raise ComplementEmptyError(
            "open set covers the whole half line; its complement is empty"
        )
    if not omega.parts[-1].is_finite:
        raise ComplementEmptyError("open set must be bounded")

    if min_level is None:
        finest = min(p.length for p in omega.parts)
        min_level = _level_of_length(finest) - _FLOOR_MARGIN

    top = min_level
    right = omega.parts[-1].b
    while math.ldexp(1.0, top) < right:
        top += 1

    members: List[DyadicInterval] = []
    tail = 0.0
    stack: List[DyadicInterval] = [DyadicInterval(top, 0)]
    quint = mode == "quintuple"
    while stack:
        d = stack.pop()
        iv = d.open_interval()
        if omega.length_within(iv) == 0.0:
            continue
        if omega.contains_interval(dilate(iv, 3.0)):
            if not quint:
                members.append(d)
                continue
            if not omega.contains_interval(dilate(iv, 5.0)):
                members.append(d)
                continue
        if d.level > min_level:
            stack.extend(d.children())
        else:
            tail += omega.length_within(iv)

    if not members:
        raise ValueError(
            f"min_level={min_level} is too coarse: no dyadic interval at or above "
            "that level fits inside the open set"
        )
    members.sort(key=lambda m: m.a)
    return WhitneyCollection(omega, mode, min_level, tuple(members), tail)


@dataclass(frozen=True)
class WhitneyReport:
    disjoint: bool
    members_inside: bool
    coverage_defect: float
    defect_matches_tail: bool
    max_overlap: int
    witness_ok: bool

    @property
    def ok(self) -> bool:
        return self.disjoint and self.members_inside and self.defect_matches_tail


def _max_overlap(intervals: Sequence[Interval]) -> int:
    if not intervals:
        return 0
    a = np.sort(np.array([iv.a for iv in intervals]))
    b = np.sort(np.array([iv.b for iv in intervals]))
    cuts = np.unique(np.concatenate([a, b]))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    active = np.searchsorted(a, mids, side="right") - np.searchsorted(b, mids, side="right")
    return int(active.max()) if mids.size else 0


def whitney_properties(w: WhitneyCollection) -> WhitneyReport:
    members = w.members
    disjoint = all(m1.b <= m2.a for m1, m2 in zip(members, members[1:]))
    inside = all(w.omega.contains_interval(m.open_interval()) for m in members)
    # each member has a nearby complement point: the enlarged parent (triple
    # mode) or its own 5-fold dilate (quintuple mode) pokes out of omega
    if w.mode == "triple":
        witness = all(
            not w.omega.contains_interval(dilate(m.parent().open_interval(), 3.0))
            for m in members
        )
    else:
        witness = all(
            not w.omega.contains_interval(dilate(m.open_interval(), 5.0))
            for m in members
        )
    covered = sum(w.omega.length_within(m.open_interval()) for m in members)
    defect = w.omega.total_length - covered
    scale = max(1.0, w.omega.total_length)
    matches = abs(defect - w.uncovered_tail) <= 1e-9 * scale
    overlap = _max_overlap([dilate(m.open_interval(), 3.0) for m in members])
    return WhitneyReport(disjoint, inside, defect, matches, overlap, witness)


def check_nesting(families: Mapping[int, WhitneyCollection]) -> bool:
    """Members of a shallower family may not sit strictly inside a deeper one.

    Keys order the families: for k < k' no member of families[k] may be a
    strict subset of a member of families[k'].
    """
    keys = sorted(families)
    for pos, k in enumerate(keys):
        inner = families[k].members
        starts = [m.a for m in inner]
        for kp in keys[pos + 1:]:
            for big in families[kp].members:
                lo = bisect_right(starts, big.a)
                if lo > 0 and inner[lo - 1].a == big.a:
                    lo -= 1
                j = lo
                while j < len(inner) and inner[j].a < big.b:
                    if big.strictly_contains(inner[j]):
                        return False
                    j += 1
    return True


class MaximalResult(NamedTuple):
    value: float
    covered: bool


def _engulf_level(values: Iterable[float]) -> int:
    top = 0
    for v in values:
        while math.ldexp(1.0, top) <= v:
            top += 1
    return top


def _min_box_level(t: float) -> int:
    """Smallest k with 2^k >= t; boxes shallower than t cannot hold the atom."""
    mant, exp = math.frexp(t)
    return exp - 1 if mant == 0.5 else exp


def _box_sums(mu_t: DiscreteMeasure2D, weights: np.ndarray, d: DyadicInterval):
    mask = (mu_t.xs > d.a) & (mu_t.xs < d.b) & (mu_t.ts <= d.length)
    return float(mu_t.ws[mask].sum()), float((weights * mu_t.ws)[mask].sum())


def maximal_function(mu_t: DiscreteMeasure2D, psi: Sequence[float],
                     query: Tuple[float, float],
                     level_bounds: Optional[Tuple[int, int]] = None) -> MaximalResult:
    """Largest box average of |psi| over dyadic boxes containing the query.

    Only boxes with positive mass count; when no candidate box contains the
    query the value is 0 and covered is False.
    """
    x, t = query
    if not (x > 0.0 and t > 0.0):
        raise ValueError("query point must have positive coordinates")
    psi = np.asarray(psi, dtype=float)
    if psi.shape != mu_t.xs.shape:
        raise ValueError("psi must assign one value per atom")

    k_lo = _min_box_level(t)
    k_hi = _engulf_level(list(mu_t.xs) + list(mu_t.ts) + [x, t])
    if level_bounds is not None:
        k_lo, k_hi = max(k_lo, level_bounds[0]), level_bounds[1]

    best = 0.0
    covered = False
    abs_psi = np.abs(psi)
    for k in range(k_lo, k_hi + 1):
        d = DyadicInterval.open_cell_at(x, k)
        if d is None or t > d.length:
            continue
        mass, num = _box_sums(mu_t, abs_psi, d)
        if mass == 0.0:
            continue
        covered = True
        best = max(best, num / mass)
    return MaximalResult(best, covered)


def weak_11_check(mu_t: DiscreteMeasure2D, psi: Sequence[float], alpha: float) -> bool:
    """Weak-type bound at level alpha with constant one.

    Builds the maximal dyadic boxes with |psi| average above alpha, verifies
    the superlevel set of the maximal function sits inside their union, and
    checks mass(superlevel) <= ||psi||_1 / alpha through that cover.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    psi = np.asarray(psi, dtype=float)
    abs_psi = np.abs(psi)
    norm1 = float((abs_psi * mu_t.ws).sum())

    k_hi = _engulf_level(list(mu_t.xs) + list(mu_t.ts))
    over: Dict[Tuple[int, int], Tuple[float, float]] = {}
    for x, t in zip(mu_t.xs, mu_t.ts):
        for k in range(_min_box_level(t), k_hi + 1):
            d = DyadicInterval.open_cell_at(x, k)
            if d is None or t > d.length:
                continue
            key = (d.level, d.index)
            if key in over:
                continue
            mass, num = _box_sums(mu_t, abs_psi, d)
            if mass > 0.0 and num / mass > alpha:
                over[key] = (mass, num)

    maximal = []
    for (level, index) in over:
        d = DyadicInterval(level, index)
        probe, is_max = d, True
        while probe.level < k_hi:
            probe = probe.parent()
            if (probe.level, probe.index) in over:
                is_max = False
                break
        if is_max:
            maximal.append(d)

    # chain: mass(superlevel) <= sum mass(J) <= sum integral/alpha <= norm1/alpha
    cover_mass = sum(over[(d.level, d.index)][0] for d in maximal)
    cover_num = sum(over[(d.level, d.index)][1] for d in maximal)
    slack = 1.0 + 1e-12

    super_mass = 0.0
    for x, t, w in zip(mu_t.xs, mu_t.ts, mu_t.ws):
        val, _ = maximal_function(mu_t, psi, (x, t))
        if val > alpha:
            super_mass += w
            if not any(d.contains_point(x) and t <= d.length for d in maximal):
                return False
    if super_mass > cover_mass * slack:
        return False
    if cover_mass * alpha > cover_num * slack:
        return False
    return super_mass * alpha <= norm1 * slack


@dataclass(frozen=True)
class StoppingFamily:
    """Stopping tree of dyadic intervals with their box averages."""

    root: DyadicInterval
    members: Tuple[DyadicInterval, ...]
    alphas: Dict[Tuple[int, int], float] = field(compare=False)
    covers_support: bool = True

    def alpha_of(self, d: DyadicInterval) -> float:
        return self.alphas[(d.level, d.index)]

    def project(self, d: DyadicInterval) -> Optional[DyadicInterval]:
        """Smallest member containing d (as a dyadic ancestor or d itself)."""
        probe = d
        keys = {(m.level, m.index) for m in self.members}
        while True:
            if (probe.level, probe.index) in keys:
                return probe
            if probe.level >= self.root.level:
                return None
            probe = probe.parent()

    def project_interval(self, iv: Interval) -> Optional[DyadicInterval]:
        """Smallest member whose closed hull contains iv."""
        best = None
        for m in self.members:
            if m.a <= iv.a and iv.b <= m.b:
                if best is None or m.level < best.level:
                    best = m
        return best


def _box_average(mu_t: DiscreteMeasure2D, phi: np.ndarray, d: DyadicInterval):
    """(tilde mass, average of phi / t) over the box of d."""
    mask = (mu_t.xs > d.a) & (mu_t.xs < d.b) & (mu_t.ts <= d.length)
    mass = float(mu_t.ws[mask].sum())
    if mass == 0.0:
        return 0.0, 0.0
    num = float(((phi[mask] / mu_t.ts[mask]) * mu_t.ws[mask]).sum())
    return mass, num / mass


def principal_intervals(mu_t: DiscreteMeasure2D, phi: Sequence[float],
                        root: DyadicInterval) -> StoppingFamily:
    """Stopping family grown from the root by the tenfold average rule.

    A descendant becomes a member when its box average of phi / t reaches ten
    times the average at its nearest stopping ancestor; branches with empty
    boxes are not explored.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != mu_t.xs.shape:
        raise ValueError("phi must assign one value per atom")
    if np.any(phi < 0.0):
        raise ValueError("phi must be nonnegative")

    members: List[DyadicInterval] = [root]
    alphas: Dict[Tuple[int, int], float] = {}
    root_mass, root_alpha = _box_average(mu_t, phi, root)
    alphas[(root.level, root.index)] = root_alpha

    if root_mass > 0.0:
        stack: List[Tuple[DyadicInterval, float]] = [(root, root_alpha)]
        while stack:
            d, stop_alpha = stack.pop()
            for child in d.children():
                mass, alpha = _box_average(mu_t, phi, child)
                if mass == 0.0:
                    continue
                if alpha > 0.0 and alpha >= 10.0 * stop_alpha:
                    members.append(child)
                    alphas[(child.level, child.index)] = alpha
                    stack.append((child, alpha))
                else:
                    stack.append((child, stop_alpha))

    covers = bool(np.all(
        (mu_t.xs > root.a) & (mu_t.xs < root.b) & (mu_t.ts <= root.length)
    ))
    members.sort(key=lambda m: (-m.level, m.a))
    return StoppingFamily(root, tuple(members), alphas, covers)


def carleson_ratio(family: StoppingFamily, mu_t: DiscreteMeasure2D,
                   phi: Sequence[float]) -> float:
    """sum over members of alpha^2 * box mass, against the square norm of phi.

    The denominator is the square integral of phi under the unweighted
    measure, recovered from the tilde weights by dividing t^2 back out.
    """
    phi = np.asarray(phi, dtype=float)
    lhs = 0.0
    for m in family.members:
        mask = (mu_t.xs > m.a) & (mu_t.xs < m.b) & (mu_t.ts <= m.length)
        lhs += family.alpha_of(m) ** 2 * float(mu_t.ws[mask].sum())
    denom = float((phi ** 2 * mu_t.ws / mu_t.ts ** 2).sum())
    if denom == 0.0:
        return 0.0 if lhs == 0.0 else math.inf
    return lhs / denom


def carleson_packing_check(family: StoppingFamily, mu_t: DiscreteMeasure2D,
                           phi: Sequence[float], c: float = 8.0) -> bool:
    return carleson_ratio(family, mu_t, phi) <= c * (1.0 + 1e-12)
