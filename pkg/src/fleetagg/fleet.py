"""Storage fleet data model and its aggregate capacity set-functions.

Units: device powers in kW, energies in kWh, one slot lasts ``step_hours``.
A device with rated power ``p`` and target ``e`` contributes
``min(card(A & W) * p * step_hours, e)`` to the capacity of a slot set ``W``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from fleetagg import bitmask


@dataclass(frozen=True)
class TimeHorizon:
    num_steps: int
    step_hours: float = 1.0

    def __post_init__(self):
        if not 1 <= self.num_steps <= bitmask.MAX_STEPS:
            raise ValueError(f"num_steps must be in 1..{bitmask.MAX_STEPS}, got {self.num_steps}")
        if not self.step_hours > 0:
            raise ValueError("step_hours must be positive")

    @property
    def full(self) -> "TimeSet":
        return TimeSet(bitmask.full_mask(self.num_steps), self.num_steps)

    @property
    def slots(self) -> range:
        return range(1, self.num_steps + 1)


@dataclass(frozen=True, order=True)
class TimeSet:
    """A subset of the slots ``1..num_steps`` stored as a bitmask."""

    mask: int
    num_steps: int

    def __post_init__(self):
        if self.mask < 0 or self.mask >> self.num_steps:
            raise ValueError("mask has bits outside the horizon")

    @classmethod
    def of(cls, slots: Iterable[int], num_steps: int) -> "TimeSet":
        return cls(bitmask.mask_from_slots(slots, num_steps), num_steps)

    @classmethod
    def empty(cls, num_steps: int) -> "TimeSet":
        return cls(0, num_steps)

    @property
    def slots(self) -> list[int]:
        return bitmask.slots_from_mask(self.mask)

    def __len__(self) -> int:
        return bitmask.popcount(self.mask)

    def __contains__(self, t: int) -> bool:
        return 1 <= t <= self.num_steps and bool(self.mask >> (t - 1) & 1)

    def __iter__(self):
        return iter(self.slots)

    def _check(self, other: "TimeSet"):
        if other.num_steps != self.num_steps:
            raise ValueError("time sets live on different horizons")

    def __and__(self, other: "TimeSet") -> "TimeSet":
        self._check(other)
        return TimeSet(self.mask & other.mask, self.num_steps)

    def __or__(self, other: "TimeSet") -> "TimeSet":
        self._check(other)
        return TimeSet(self.mask | other.mask, self.num_steps)

    def __sub__(self, other: "TimeSet") -> "TimeSet":
        self._check(other)
        return TimeSet(self.mask & ~other.mask, self.num_steps)

    def complement(self) -> "TimeSet":
        return TimeSet(bitmask.full_mask(self.num_steps) & ~self.mask, self.num_steps)

    def issubset(self, other: "TimeSet") -> bool:
        self._check(other)
        return self.mask & ~other.mask == 0

    def __repr__(self) -> str:
        return f"TimeSet({self.slots})"


@dataclass(frozen=True)
class Device:
    p_max: float
    e_target: float
    availability: TimeSet

    def __post_init__(self):
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        if self.e_target < 0:
            raise ValueError("e_target must be non-negative")
        if self.e_target > 0 and self.availability.mask == 0:
            raise ValueError("device with a positive target needs a nonempty availability window")


class _Bucket:
    """Devices sharing one availability window.

    ``table[c]`` is the bucket's capacity when the window meets ``W`` in ``c`` slots.
    """

    def __init__(self, mask: int, p_slot: np.ndarray, energy: np.ndarray, num_steps: int):
        self.mask = mask
        self.count = len(p_slot)
        # ratio = number of full-power slots needed to reach the target
        ratio = energy / p_slot
        order = np.argsort(ratio, kind="stable")
        self.ratios = ratio[order]
        self.prefix_energy = np.concatenate([[0.0], np.cumsum(energy[order])])
        self.prefix_power = np.concatenate([[0.0], np.cumsum(p_slot[order])])
        self.total_power = self.prefix_power[-1]
        width = bitmask.popcount(mask)
        self.table = np.array([self.capacity_at(c) for c in range(num_steps + 1)])
        self.table[width + 1:] = self.table[width]

    def capacity_at(self, c: int) -> float:
        # devices with ratio <= c are finished inside W; the rest charge c full slots
        idx = int(np.searchsorted(self.ratios, c, side="right"))
        return float(self.prefix_energy[idx] + c * (self.total_power - self.prefix_power[idx]))


class Fleet:
    """Immutable collection of devices plus a bucketed capacity index."""

    def __init__(self, devices: Sequence[Device], horizon: TimeHorizon):
        self.horizon = horizon
        cleaned = []
        for j, dev in enumerate(devices):
            if dev.availability.num_steps != horizon.num_steps:
                raise ValueError(f"device {j} availability is on a different horizon")
            limit = dev.p_max * horizon.step_hours * len(dev.availability)
            if dev.e_target > limit:
                warnings.warn(
                    f"device {j}: target {dev.e_target:g} kWh exceeds reachable {limit:g} kWh; clamped",
                    stacklevel=2,
                )
                dev = Device(dev.p_max, limit, dev.availability)
            cleaned.append(dev)
        self.devices: tuple[Device, ...] = tuple(cleaned)
        self._build_index()

    def _build_index(self):
        h = self.horizon.step_hours
        groups: dict[int, list[int]] = {}
        for j, dev in enumerate(self.devices):
            if dev.availability.mask:
                groups.setdefault(dev.availability.mask, []).append(j)
        self.buckets = []
        for mask in sorted(groups):
            idx = groups[mask]
            p_slot = np.array([self.devices[j].p_max * h for j in idx])
            energy = np.array([self.devices[j].e_target for j in idx])
            self.buckets.append(_Bucket(mask, p_slot, energy, self.horizon.num_steps))
        self._bucket_masks = np.array([b.mask for b in self.buckets], dtype=np.uint64)
        self._tables = (
            np.stack([b.table for b in self.buckets]) if self.buckets else np.zeros((0, self.horizon.num_steps + 1))
        )

    def __len__(self) -> int:
        return len(self.devices)

    @property
    def num_steps(self) -> int:
        return self.horizon.num_steps

    @property
    def step_hours(self) -> float:
        return self.horizon.step_hours

    def total_energy(self) -> float:
        return float(sum(d.e_target for d in self.devices))

    def capacity(self, w: TimeSet | int) -> float:
        """Maximum energy (kWh) the fleet can absorb inside the slot set ``w``."""
        mask = w.mask if isinstance(w, TimeSet) else int(w)
        total = 0.0
        for b in self.buckets:
            total += b.table[bitmask.popcount(b.mask & mask)]
        return total

    def capacity_many(self, masks: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`capacity` over an array of uint64 masks."""
        masks = np.asarray(masks, dtype=np.uint64)
        total = np.zeros(masks.shape)
        for i, bm in enumerate(self._bucket_masks):
            total += self._tables[i][np.bitwise_count(masks & bm)]
        return total

    def slot_power_caps(self) -> np.ndarray:
        """Sum of rated powers of devices available in each slot (kW)."""
        caps = np.zeros(self.num_steps)
        for dev in self.devices:
            for t in dev.availability:
                caps[t - 1] += dev.p_max
        return caps

    def availability_count(self) -> np.ndarray:
        return np.array([len(d.availability) for d in self.devices], dtype=int)

    def merged(self, other: "Fleet") -> "Fleet":
        if other.horizon != self.horizon:
            raise ValueError("cannot merge fleets on different horizons")
        return Fleet(self.devices + other.devices, self.horizon)

    def __eq__(self, other) -> bool:
        return isinstance(other, Fleet) and self.horizon == other.horizon and self.devices == other.devices

    def __repr__(self) -> str:
        return f"Fleet(N={len(self)}, T={self.num_steps}, buckets={len(self.buckets)})"


def capacity(fleet: Fleet, w: TimeSet) -> float:
    return fleet.capacity(w)


def total_energy(fleet: Fleet) -> float:
    return fleet.total_energy()


def max_avg_demand(fleet: Fleet, inflexible: Sequence[float], w: TimeSet) -> float:
    """Average over ``w`` of inflexible demand plus the fleet drawing as much as it can (kW)."""
    n = len(w)
    if n == 0:
        raise ValueError("max_avg_demand is undefined on the empty slot set")
    inflexible = np.asarray(inflexible, dtype=float)
    return (float(sum(inflexible[t - 1] for t in w)) + fleet.capacity(w) / fleet.step_hours) / n


class DemandScorer:
    """Vectorised maximum-average-demand over arrays of masks."""

    def __init__(self, fleet: Fleet, inflexible: Sequence[float]):
        inflexible = np.asarray(inflexible, dtype=float)
        if len(inflexible) != fleet.num_steps:
            raise ValueError("inflexible demand length must equal the horizon")
        self.fleet = fleet
        self.inflexible = inflexible
        self._sums = bitmask.SlotSums(inflexible)

    def __call__(self, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.uint64)
        card = np.bitwise_count(masks).astype(float)
        return (self._sums(masks) + self.fleet.capacity_many(masks) / self.fleet.step_hours) / card

    def one(self, mask: int) -> float:
        return float(self(np.array([mask], dtype=np.uint64))[0])
