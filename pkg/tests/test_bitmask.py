import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fleetagg import bitmask


def test_slot_round_trip():
    assert bitmask.mask_from_slots([1, 3], 4) == 0b101
    assert bitmask.slots_from_mask(0b101) == [1, 3]
    with pytest.raises(ValueError):
        bitmask.mask_from_slots([5], 4)


@pytest.mark.parametrize("T,k", [(5, 0), (5, 2), (8, 4), (10, 10), (4, 5)])
def test_gosper_enumeration(T, k):
    got = list(bitmask.iter_masks_of_size(T, k))
    expect = sorted(sum(1 << t for t in c) for c in itertools.combinations(range(T), k))
    assert got == expect
    assert len(got) == (comb(T, k) if k <= T else 0)
    if k <= T:
        assert list(bitmask.masks_of_size(T, k)) == expect


@given(st.integers(1, (1 << 20) - 1), st.integers(0, 6))
def test_submasks_removing(mask, r):
    got = sorted(int(m) for m in bitmask.submasks_removing(mask, r))
    bits = [1 << t for t in range(20) if mask >> t & 1]
    expect = sorted(mask ^ sum(c) for c in itertools.combinations(bits, r)) if r <= len(bits) else []
    assert got == expect


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.data())
def test_slot_sums(values, data):
    sums = bitmask.SlotSums(np.array(values))
    masks = data.draw(st.lists(st.integers(0, (1 << len(values)) - 1), min_size=1, max_size=10))
    got = sums(np.array(masks, dtype=np.uint64))
    for m, g in zip(masks, got):
        assert g == pytest.approx(sum(v for t, v in enumerate(values) if m >> t & 1), abs=1e-9)
