"""Membership of aggregate profiles in the fleet's feasible set, and disaggregation.

A profile ``d`` (kW per slot) is feasible when per-device schedules
``0 <= u_j(t) <= p_max_j`` exist, zero outside each availability window,
summing to ``d`` and delivering at least each device's energy target.
This is decided with a lower-bounded max-flow on the network

    source -> device_j   [e_target_j, card(A_j) * p_max_j * h]
    device_j -> slot_t   [0, p_max_j * h]          for t in A_j
    slot_t -> sink       [d(t) * h, d(t) * h]

with every quantity an energy (kWh).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fleetagg.dispatch.flow import FlowNetwork
from fleetagg.fleet import Fleet, TimeSet

FEASIBILITY_RTOL = 1e-9
THRESHOLD_RTOL = 1e-9


class InfeasibleProfileError(ValueError):
    """The aggregate profile cannot be realised by the fleet."""


@dataclass
class DeviceSchedule:
    u: np.ndarray  # kW per slot
    p_max: float
    availability: TimeSet

    def energy(self, step_hours: float = 1.0) -> float:
        return float(self.u.sum() * step_hours)


@dataclass
class FeasibilityReport:
    feasible: bool
    certificate: TimeSet | None = None
    shortfall_kwh: float = 0.0
    reason: str = ""
    schedules: list[DeviceSchedule] = field(default_factory=list, repr=False)

    def __bool__(self) -> bool:
        return self.feasible

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "certificate": None if self.certificate is None else self.certificate.slots,
            "shortfall_kwh": self.shortfall_kwh,
            "reason": self.reason,
        }


def _slack(fleet: Fleet, d_energy: np.ndarray) -> float:
    return FEASIBILITY_RTOL * max(1.0, fleet.total_energy(), float(d_energy.sum()))


def _network(fleet: Fleet, d_energy: np.ndarray, exact_targets: bool):
    T, h = fleet.num_steps, fleet.horizon.step_hours
    N = len(fleet.devices)
    source, sink = 0, N + T + 1
    net = FlowNetwork(N + T + 2)
    arcs = []
    for j, dev in enumerate(fleet.devices):
        slots = dev.availability.slots
        if exact_targets:
            net.add_arc(source, 1 + j, dev.e_target)
        else:
            net.add_arc(source, 1 + j, len(slots) * dev.p_max * h, lower=dev.e_target)
        for t in slots:
            arcs.append((j, t - 1, net.add_arc(1 + j, N + t, dev.p_max * h)))
    for t in range(T):
        cap = float(d_energy[t])
        net.add_arc(N + 1 + t, sink, cap, lower=0.0 if exact_targets else cap)
    return net, arcs, source, sink


def _schedules(fleet: Fleet, net: FlowNetwork, arcs) -> list[DeviceSchedule]:
    h = fleet.horizon.step_hours
    u = np.zeros((len(fleet.devices), fleet.num_steps))
    for j, t, a in arcs:
        u[j, t] = net.flow[a] / h
    return [DeviceSchedule(row, dev.p_max, dev.availability) for row, dev in zip(u, fleet.devices)]


def _cut_certificate(fleet: Fleet, d_energy: np.ndarray) -> TimeSet | None:
    """Slots on the sink side of a minimum cut of the exact-target network.

    Such a ``W`` has ``capacity(W) < sum_{t in W} d(t) h`` whenever the fleet
    cannot absorb ``d`` with every device delivering exactly its target.
    """
    net, _, source, sink = _network(fleet, d_energy, exact_targets=True)
    net.max_flow(source, sink)
    reach = net.source_side(source)
    N, T = len(fleet.devices), fleet.num_steps
    mask = 0
    for t in range(T):
        if not reach[N + 1 + t]:
            mask |= 1 << t
    if not mask:
        return None
    w = TimeSet(mask, T)
    if float(d_energy[list(np.array(w.slots) - 1)].sum()) > fleet.capacity(w) + _slack(fleet, d_energy):
        return w
    return None


def check_aggregate_feasible(fleet: Fleet, d: Sequence[float]) -> FeasibilityReport:
    """Decide whether ``d`` (kW) can be realised by the fleet.

    On infeasibility the report carries, when one exists, a slot set ``W``
    whose aggregate constraint ``sum_W d(t) h <= capacity(W)`` is violated.
    """
    d = np.asarray(d, dtype=float)
    T, h = fleet.num_steps, fleet.horizon.step_hours
    if d.shape != (T,):
        raise ValueError(f"profile must have {T} entries, got shape {d.shape}")
    scale = max(1.0, float(np.abs(d).max(initial=0.0)))
    if np.any(d < -FEASIBILITY_RTOL * scale):
        raise ValueError("aggregate profile must be non-negative")
    d_energy = np.maximum(d, 0.0) * h
    slack = _slack(fleet, d_energy)
    net, arcs, source, sink = _network(fleet, d_energy, exact_targets=False)
    ok, shortfall = net.feasible_flow(source, sink, eps=slack * 1e-6, slack=slack)
    if ok:
        return FeasibilityReport(True, None, 0.0, "", _schedules(fleet, net, arcs))
    total, need = float(d_energy.sum()), fleet.total_energy()
    cert = _cut_certificate(fleet, d_energy)
    if cert is not None:
        reason = "aggregate constraint violated on the certificate support"
    elif total < need - slack:
        reason = f"profile delivers {total:.9g} kWh but the fleet needs {need:.9g} kWh"
    else:
        reason = "no device schedules realise the profile"
    return FeasibilityReport(False, cert, shortfall, reason)


def _symmetrize(fleet: Fleet, u: np.ndarray) -> np.ndarray:
    groups: dict[tuple, list[int]] = {}
    for j, dev in enumerate(fleet.devices):
        groups.setdefault((dev.p_max, dev.e_target, dev.availability.mask), []).append(j)
    out = u.copy()
    for members in groups.values():
        if len(members) > 1:
            out[members] = u[members].mean(axis=0)
    return out


def disaggregate(fleet: Fleet, d: Sequence[float], inflexible: Sequence[float] | None = None) -> list[DeviceSchedule]:
    """Per-device schedules realising ``d`` exactly, each device meeting its target exactly.

    Every arc from a device to a slot would cost the rank of the slot's total
    demand, a cost that depends on the slot alone, so all realisations cost
    the same and the max-flow realisation is already cost-minimal.  Devices
    with identical parameters then share their summed allocation equally.
    ``inflexible`` is accepted for interface symmetry with the threshold check.
    """
    d = np.asarray(d, dtype=float)
    h = fleet.horizon.step_hours
    d_energy = np.maximum(d, 0.0) * h
    slack = _slack(fleet, d_energy)
    if abs(float(d_energy.sum()) - fleet.total_energy()) > slack:
        raise InfeasibleProfileError(
            f"profile energy {d_energy.sum():.9g} kWh differs from the fleet total {fleet.total_energy():.9g} kWh")
    net, arcs, source, sink = _network(fleet, d_energy, exact_targets=True)
    flow = net.max_flow(source, sink, eps=slack * 1e-6)
    if flow < fleet.total_energy() - slack:
        raise InfeasibleProfileError(f"fleet can absorb only {flow:.9g} of {fleet.total_energy():.9g} kWh")
    u = np.vstack([s.u for s in _schedules(fleet, net, arcs)]) if fleet.devices else np.zeros((0, fleet.num_steps))
    return [DeviceSchedule(row, dev.p_max, dev.availability) for row, dev in zip(_symmetrize(fleet, u), fleet.devices)]


def schedule_matrix(schedules: Sequence[DeviceSchedule]) -> np.ndarray:
    return np.vstack([s.u for s in schedules]) if schedules else np.zeros((0, 0))


def verify_thresholds(
    schedules: Sequence[DeviceSchedule],
    inflexible: Sequence[float],
    d: Sequence[float],
    rtol: float = THRESHOLD_RTOL,
) -> bool:
    """True iff every device charges fully below a threshold of ``D^I + d`` and not at all above it.

    A device with ``u < p_max`` at some available slot must not charge at any
    slot whose total demand is lower by more than the tolerance.
    """
    total = np.asarray(inflexible, dtype=float) + np.asarray(d, dtype=float)
    tol = rtol * max(1.0, float(np.abs(total).max(initial=0.0)))
    for sched in schedules:
        idx = np.array(sched.availability.slots) - 1
        u, v = sched.u[idx], total[idx]
        atol = rtol * sched.p_max
        charging = u > atol
        not_full = u < sched.p_max - atol
        if charging.any() and not_full.any() and v[charging].max() > v[not_full].min() + tol:
            return False
    return True
