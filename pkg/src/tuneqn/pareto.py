"""Multi-objective minimization: fast non-dominated sorting and candidate picks.

Dominance is always evaluated on raw objective values; min-max scaling to
[0, 100] exists only for plotting and for ordering candidates within a
front, so front membership never depends on objective units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ArgumentError


@dataclass(frozen=True)
class ObjectivePoint:
    variant_index: int
    objectives: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(float(v) for v in self.objectives))
        if any(not math.isfinite(v) for v in self.objectives):
            raise ArgumentError(f"non-finite objective in variant {self.variant_index}")


@dataclass
class ParetoResult:
    fronts: list[list[int]]  # variant indices, ascending within each front
    top_candidates: list[int]

    def to_json(self) -> dict:
        return {"fronts": self.fronts, "top_candidates": self.top_candidates}

    @classmethod
    def from_json(cls, obj: dict) -> "ParetoResult":
        return cls(
            fronts=[[int(i) for i in front] for front in obj["fronts"]],
            top_candidates=[int(i) for i in obj["top_candidates"]],
        )


def dominates(a: ObjectivePoint, b: ObjectivePoint) -> bool:
    """True iff a <= b in every objective and a < b in at least one."""
    if len(a.objectives) != len(b.objectives):
        raise ArgumentError(
            f"objective arity mismatch: {len(a.objectives)} vs {len(b.objectives)}"
        )
    better_somewhere = False
    for av, bv in zip(a.objectives, b.objectives):
        if av > bv:
            return False
        if av < bv:
            better_somewhere = True
    return better_somewhere


def non_dominated_sort(points: list[ObjectivePoint]) -> list[list[int]]:
    """Deb-style fast non-dominated sort; returns fronts of variant indices.

    For each point keep the set it dominates and its domination count;
    front 0 is every count-zero point, later fronts fall out by decrementing
    counts over the dominated sets. O(M*N^2), fine at sweep sizes.
    """
    if not points:
        raise ArgumentError("non_dominated_sort needs at least one point")
    n = len(points)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(points[i], points[j]):
                dominated_by[i].append(j)
                count[j] += 1
            elif dominates(points[j], points[i]):
                dominated_by[j].append(i)
                count[i] += 1
    fronts: list[list[int]] = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(sorted(points[i].variant_index for i in current))
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = nxt
    return fronts


def normalize_objectives(points: list[ObjectivePoint]) -> list[ObjectivePoint]:
    """Min-max scale each objective to [0, 100]; constant objectives map to 0."""
    if not points:
        raise ArgumentError("normalize_objectives needs at least one point")
    arity = len(points[0].objectives)
    scaled_cols = []
    for m in range(arity):
        col = [p.objectives[m] for p in points]
        lo, hi = min(col), max(col)
        if hi == lo:
            scaled_cols.append([0.0] * len(points))
        else:
            scaled_cols.append([(v - lo) / (hi - lo) * 100.0 for v in col])
    return [
        ObjectivePoint(p.variant_index, tuple(scaled_cols[m][i] for m in range(arity)))
        for i, p in enumerate(points)
    ]


def select_top_candidates(fronts: list[list[int]], points: list[ObjectivePoint], k: int = 3) -> list[int]:
    """Walk fronts in rank order; inside a front order by normalized-objective
    sum ascending, ties by variant index."""
    normalized = {p.variant_index: sum(q.objectives) for p, q in zip(points, normalize_objectives(points))}
    picked: list[int] = []
    for front in fronts:
        for idx in sorted(front, key=lambda v: (normalized[v], v)):
            picked.append(idx)
            if len(picked) == k:
                return picked
    return picked


def pareto_select(points: list[ObjectivePoint], k: int = 3) -> ParetoResult:
    fronts = non_dominated_sort(points)
    return ParetoResult(fronts, select_top_candidates(fronts, points, k))
