"""Integer bitmask helpers for subsets of a short time horizon.

Slot ``t`` (1-based) is stored in bit ``t - 1``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

MAX_STEPS = 64


def full_mask(num_steps: int) -> int:
    return (1 << num_steps) - 1


def mask_from_slots(slots: Iterable[int], num_steps: int) -> int:
    """Build a mask from 1-based slot indices, rejecting out-of-range slots."""
    mask = 0
    for t in slots:
        t = int(t)
        if not 1 <= t <= num_steps:
            raise ValueError(f"slot {t} outside horizon 1..{num_steps}")
        mask |= 1 << (t - 1)
    return mask


def slots_from_mask(mask: int) -> list[int]:
    out = []
    t = 1
    while mask:
        if mask & 1:
            out.append(t)
        mask >>= 1
        t += 1
    return out


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def gosper_next(mask: int) -> int:
    """Next larger integer with the same number of set bits (Gosper's hack)."""
    c = mask & -mask
    r = mask + c
    return (((r ^ mask) >> 2) // c) | r


def iter_masks_of_size(num_steps: int, k: int) -> Iterator[int]:
    """Yield every k-subset of the horizon in ascending mask order."""
    if k == 0:
        yield 0
        return
    if k > num_steps:
        return
    mask = (1 << k) - 1
    limit = 1 << num_steps
    while mask < limit:
        yield mask
        mask = gosper_next(mask)


@lru_cache(maxsize=4)
def _popcounts(num_steps: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << num_steps, dtype=np.uint32)).astype(np.uint8)


def masks_of_size(num_steps: int, k: int) -> np.ndarray:
    """All k-subsets as an ascending uint64 array (same order as Gosper iteration)."""
    if num_steps > 26:
        raise ValueError("vectorised enumeration limited to 26 slots")
    return np.flatnonzero(_popcounts(num_steps) == k).astype(np.uint64)


def submasks_removing(mask: int, remove: int) -> np.ndarray:
    """All submasks of ``mask`` obtained by clearing exactly ``remove`` of its bits."""
    bits = np.array([1 << (t - 1) for t in slots_from_mask(mask)], dtype=np.uint64)
    k = len(bits)
    if remove > k or remove < 0:
        return np.zeros(0, dtype=np.uint64)
    # enumerate which positions to clear as k-bit patterns of weight `remove`
    if remove == 1:
        return np.uint64(mask) ^ bits
    if k <= 26 and math.comb(k, remove) * 64 >= 1 << k:
        sel = masks_of_size(k, remove)
    else:
        sel = np.fromiter(iter_masks_of_size(k, remove), dtype=np.uint64, count=math.comb(k, remove))
    cleared = np.zeros(len(sel), dtype=np.uint64)
    for i in range(k):
        hit = (sel >> np.uint64(i)) & np.uint64(1)
        cleared |= hit * bits[i]
    return np.uint64(mask) ^ cleared


class SlotSums:
    """Vectorised sums of a per-slot series over arrays of masks (byte lookup tables)."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        self.num_steps = len(values)
        self._tables = []
        for start in range(0, self.num_steps, 8):
            chunk = values[start:start + 8]
            # doubling keeps the summation order of a left-to-right loop
            table = np.zeros(256)
            for i in range(8):
                table[1 << i:2 << i] = table[:1 << i] + (chunk[i] if i < len(chunk) else 0.0)
            self._tables.append(table)

    def __call__(self, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.uint64)
        total = np.zeros(masks.shape)
        for i, table in enumerate(self._tables):
            total += table[((masks >> np.uint64(8 * i)) & np.uint64(0xFF)).astype(np.intp)]
        return total
