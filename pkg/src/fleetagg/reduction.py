"""Aggregate constraint families for a fleet and the selection algorithms that shrink them.

Every constraint reads ``sum_{t in W} d(t) * step_hours <= capacity(W)``.
The exhaustive family has one row per nonempty ``W``; the selection methods
return at most ``T`` rows chosen from the maximum-average-demand score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fleetagg import bitmask
from fleetagg.fleet import DemandScorer, Fleet, TimeSet

METHOD_TAGS = ("exhaustive", "combinatorial", "greedy1", "greedy2", "full_availability", "sublevel", "custom")

DEFAULT_EXHAUSTIVE_GUARD = 20
DEFAULT_COMBINATORIAL_GUARD = 24
TIE_RTOL = 1e-9


class HorizonTooLargeError(ValueError):
    pass


class PartialAvailabilityError(ValueError):
    pass


def tie_tol(value: float) -> float:
    return TIE_RTOL * max(1.0, abs(value))


@dataclass(frozen=True)
class AggregateConstraint:
    support: TimeSet
    rhs: float  # kWh


@dataclass
class ConstraintSet:
    constraints: list[AggregateConstraint]
    method_tag: str
    num_steps: int
    per_slot_caps: np.ndarray | None = None  # kW

    def __post_init__(self):
        if self.method_tag not in METHOD_TAGS:
            raise ValueError(f"unknown method tag {self.method_tag!r}")
        masks = [c.support.mask for c in self.constraints]
        if len(set(masks)) != len(masks):
            raise ValueError("constraint supports must be distinct")

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    @property
    def supports(self) -> list[TimeSet]:
        return [c.support for c in self.constraints]

    @property
    def masks(self) -> list[int]:
        return [c.support.mask for c in self.constraints]

    def is_chain(self) -> bool:
        ordered = sorted(self.masks, key=bitmask.popcount)
        return all(a & ~b == 0 for a, b in zip(ordered, ordered[1:]))

    def matrix(self) -> np.ndarray:
        """Dense 0/1 incidence matrix, one row per constraint."""
        out = np.zeros((len(self.constraints), self.num_steps))
        for i, c in enumerate(self.constraints):
            out[i, [t - 1 for t in c.support]] = 1.0
        return out

    def rhs(self) -> np.ndarray:
        return np.array([c.rhs for c in self.constraints])

    def to_dict(self) -> dict:
        return {
            "method_tag": self.method_tag,
            "steps": self.num_steps,
            "constraints": [{"support": c.support.slots, "rhs_kwh": c.rhs} for c in self.constraints],
            "per_slot_caps_kw": None if self.per_slot_caps is None else [float(v) for v in self.per_slot_caps],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConstraintSet":
        T = int(data["steps"])
        caps = data.get("per_slot_caps_kw")
        return cls(
            [AggregateConstraint(TimeSet.of(c["support"], T), float(c["rhs_kwh"])) for c in data["constraints"]],
            data["method_tag"],
            T,
            None if caps is None else np.asarray(caps, dtype=float),
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def with_caps(self, caps: np.ndarray | None) -> "ConstraintSet":
        return ConstraintSet(list(self.constraints), self.method_tag, self.num_steps, caps)


def _build(fleet: Fleet, masks: Sequence[int], tag: str, caps: bool) -> ConstraintSet:
    T = fleet.num_steps
    rhs = fleet.capacity_many(np.asarray(masks, dtype=np.uint64)) if len(masks) else []
    cons = [AggregateConstraint(TimeSet(int(m), T), float(r)) for m, r in zip(masks, rhs)]
    return ConstraintSet(cons, tag, T, fleet.slot_power_caps() if caps else None)


def exhaustive_constraints(fleet: Fleet, guard: int = DEFAULT_EXHAUSTIVE_GUARD, override: bool = False) -> ConstraintSet:
    """One constraint per nonempty slot set (2^T - 1 rows)."""
    T = fleet.num_steps
    if T > guard and not override:
        raise HorizonTooLargeError(f"exhaustive family needs 2^{T}-1 rows; T={T} exceeds guard {guard}")
    masks = np.arange(1, 1 << T, dtype=np.uint64)
    rhs = fleet.capacity_many(masks)
    cons = [AggregateConstraint(TimeSet(int(m), T), float(r)) for m, r in zip(masks, rhs)]
    return ConstraintSet(cons, "exhaustive", T, None)


def full_availability_constraints(fleet: Fleet, inflexible: Sequence[float]) -> ConstraintSet:
    """Sorted-prefix family for fleets available over the whole horizon.

    The k-th support holds the k slots with the lowest inflexible demand
    (ties go to the lower slot index).
    """
    T = fleet.num_steps
    full = bitmask.full_mask(T)
    for j, dev in enumerate(fleet.devices):
        if dev.availability.mask != full:
            raise PartialAvailabilityError(f"device {j} is not available over the whole horizon")
    order = np.argsort(np.asarray(inflexible, dtype=float), kind="stable")
    masks, mask = [], 0
    for t in order:
        mask |= 1 << int(t)
        masks.append(mask)
    return _build(fleet, masks, "full_availability", caps=True)


def _pick(masks: np.ndarray, values: np.ndarray) -> tuple[int, float, int]:
    """Return (mask, value, number tied) for the minimiser; ties go to the smallest mask."""
    vmin = float(values.min())
    tied = values <= vmin + tie_tol(vmin)
    cand = masks[tied]
    return int(cand.min()), vmin, int(tied.sum())


def combinatorial_selection(
    fleet: Fleet, inflexible: Sequence[float], guard: int = DEFAULT_COMBINATORIAL_GUARD, override: bool = False
) -> ConstraintSet:
    """Exact per-cardinality minimisers of the maximum average demand (T rows)."""
    T = fleet.num_steps
    if T > guard and not override:
        raise HorizonTooLargeError(f"combinatorial selection enumerates 2^{T} sets; T={T} exceeds guard {guard}")
    scorer = DemandScorer(fleet, inflexible)
    chosen = []
    for k in range(T, 0, -1):
        if T <= 26:
            masks = bitmask.masks_of_size(T, k)
        else:
            masks = np.fromiter(bitmask.iter_masks_of_size(T, k), dtype=np.uint64)
        best = None
        for start in range(0, len(masks), 1 << 21):
            chunk = masks[start:start + (1 << 21)]
            m, v, _ = _pick(chunk, scorer(chunk))
            if best is None or v < best[1] - tie_tol(best[1]):
                best = (m, v)
        chosen.append(best[0])
    return _build(fleet, chosen, "combinatorial", caps=True)


def greedy_selection_1(fleet: Fleet, inflexible: Sequence[float]) -> ConstraintSet:
    """Nested descent that widens the removal step while the minimiser is ambiguous or not improving."""
    T = fleet.num_steps
    scorer = DemandScorer(fleet, inflexible)
    current = bitmask.full_mask(T)
    current_value = scorer.one(current)
    chosen = [current]
    k, skip = T, 1
    while k > 1 and k - skip >= 1:
        cands = bitmask.submasks_removing(current, skip)
        mask, value, ntied = _pick(cands, scorer(cands))
        if ntied > 1 or value >= current_value - tie_tol(current_value):
            skip += 1
        else:
            chosen.append(mask)
            current, current_value = mask, value
            k -= skip
            skip = 1
    return _build(fleet, chosen, "greedy1", caps=True)


def greedy_selection_2(fleet: Fleet, inflexible: Sequence[float], width: int = 1) -> ConstraintSet:
    """Remove one slot at a time, keeping the ``width`` best candidate sets per level."""
    if width < 1:
        raise ValueError("frontier width must be at least 1")
    T = fleet.num_steps
    scorer = DemandScorer(fleet, inflexible)
    frontier = [bitmask.full_mask(T)]
    chosen = [frontier[0]]
    for _ in range(T - 1):
        if len(frontier) == 1:
            cands = bitmask.submasks_removing(frontier[0], 1)
        else:
            cands = np.unique(np.concatenate([bitmask.submasks_removing(m, 1) for m in frontier]))
        values = scorer(cands)
        best, _, _ = _pick(cands, values)
        chosen.append(best)
        if width == 1:
            frontier = [best]
            continue
        order = np.lexsort((cands, values))
        frontier = [best] + [int(m) for m in cands[order] if int(m) != best][: width - 1]
    return _build(fleet, chosen, "greedy2", caps=True)


def sublevel_sets(total_demand: Sequence[float], rtol: float = 1e-7) -> list[int]:
    """Distinct strict sublevel sets ``{t : total(t) < level}`` as masks, smallest first.

    Values closer than ``rtol * max(1, |value|)`` are treated as one level, so
    numerically flat plateaus are never split.  The full horizon is included.
    """
    values = np.asarray(total_demand, dtype=float)
    order = np.argsort(values, kind="stable")
    out, mask = [], 0
    for pos, t in enumerate(order):
        mask |= 1 << int(t)
        last = pos == len(order) - 1
        if last or values[order[pos + 1]] - values[t] > rtol * max(1.0, abs(values[t])):
            out.append(mask)
    return out


def sublevel_constraints(fleet: Fleet, total_demand: Sequence[float], rtol: float = 1e-7) -> ConstraintSet:
    return _build(fleet, sublevel_sets(total_demand, rtol), "sublevel", caps=False)
