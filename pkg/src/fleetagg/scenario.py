"""Seeded random fleets and demand series, plus JSON/CSV instance files.

Two fleet families are generated:

``uniform_subsets``
    every availability window is a uniformly drawn nonempty subset of the
    horizon; targets are uniform on ``[0, p_max * step_hours * card(window)]``.
``contiguous_normal``
    windows are contiguous runs with a normally distributed start hour and
    duration, wrapped around the horizon (a day for ``T = 24``); targets are
    uniform on ``[0, p_max * step_hours * duration]``.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from fleetagg.fleet import Device, Fleet, TimeHorizon, TimeSet
from fleetagg.ucsolver.costs import CostFunction, Generator

SCHEMA_VERSION = 1
KINDS = ("uniform_subsets", "contiguous_normal")


class SchemaError(ValueError):
    """Malformed instance or spec file; the message names the offending field."""


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    num_steps: int
    num_devices: int
    seed: int
    step_hours: float = 1.0
    p_max: float = 1.0  # kW, identical for every device
    start_mean: float = 18.0  # hours
    start_std: float = 1.0
    duration_mean: float = 10.0
    duration_std: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.num_steps < 1 or self.num_devices < 0:
            raise ValueError("num_steps must be >= 1 and num_devices >= 0")
        if not (self.p_max > 0 and self.step_hours > 0):
            raise ValueError("p_max and step_hours must be positive")
        if self.start_std < 0 or self.duration_std < 0 or self.duration_mean <= 0:
            raise ValueError("invalid window distribution parameters")
        if self.seed is None:
            raise ValueError("seed is mandatory")

    @property
    def horizon(self) -> TimeHorizon:
        return TimeHorizon(self.num_steps, self.step_hours)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        missing = [k for k in ("kind", "num_steps", "num_devices", "seed") if k not in data]
        if missing:
            raise SchemaError(f"scenario spec missing field {missing[0]!r}")
        return cls(**data)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _random_nonempty_mask(rng: np.random.Generator, num_steps: int) -> int:
    while True:
        bits = rng.integers(0, 2, size=num_steps)
        mask = int(sum(1 << i for i, b in enumerate(bits) if b))
        if mask:
            return mask


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def contiguous_window(start_slot: int, duration: int, num_steps: int) -> TimeSet:
    """Window of ``duration`` slots beginning at 0-based ``start_slot``, wrapping past the end."""
    slots = {(start_slot + k) % num_steps + 1 for k in range(duration)}
    return TimeSet.of(slots, num_steps)


def generate_fleet(spec: ScenarioSpec) -> Fleet:
    rng = make_rng(spec.seed)
    T, h, p = spec.num_steps, spec.step_hours, spec.p_max
    devices = []
    for _ in range(spec.num_devices):
        if spec.kind == "uniform_subsets":
            window = TimeSet(_random_nonempty_mask(rng, T), T)
            width = len(window)
        else:
            start_h = rng.normal(spec.start_mean, spec.start_std)
            dur_h = rng.normal(spec.duration_mean, spec.duration_std)
            start = int(round(start_h / h)) % T
            width = min(max(_round_half_up(dur_h / h), 1), T)
            window = contiguous_window(start, width, T)
        e = rng.uniform(0.0, p * h * width)
        devices.append(Device(p, float(e), window))
    return Fleet(devices, spec.horizon)


def uniform_demand(num_steps: int, low: float, high: float, seed: int) -> np.ndarray:
    return make_rng(seed).uniform(low, high, size=num_steps)


def bundled_demand_profile() -> np.ndarray:
    """Synthetic 24-hour national demand shape (GW): overnight trough, morning and evening peaks."""
    text = resources.files("fleetagg").joinpath("data/inflexible_demand_gw.csv").read_text()
    return read_series_csv_text(text)


def read_series_csv_text(text: str) -> np.ndarray:
    values = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
            continue
        cell = row[-1].strip()
        try:
            values.append(float(cell))
        except ValueError:
            if values:
                raise SchemaError(f"line {lineno}: cannot parse {cell!r} as a number") from None
            # header row
    return np.array(values)


def read_series_csv(path: str | Path) -> np.ndarray:
    """One value per slot; the last column of each row is used, a header row is allowed."""
    return read_series_csv_text(Path(path).read_text())


# ---------------------------------------------------------------- instances
@dataclass
class Instance:
    fleet: Fleet
    inflexible: np.ndarray | None = None
    generators: list[Generator] = field(default_factory=list)
    fleet_scale: float = 1.0
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def horizon(self) -> TimeHorizon:
        return self.fleet.horizon

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        same_d = (self.inflexible is None and other.inflexible is None) or (
            self.inflexible is not None and other.inflexible is not None
            and np.array_equal(self.inflexible, other.inflexible))
        return (self.fleet == other.fleet and same_d and self.generators == other.generators
                and self.fleet_scale == other.fleet_scale and self.metadata == other.metadata)


def instance_to_dict(inst: Instance) -> dict:
    H = inst.fleet.horizon
    return {
        "schema_version": SCHEMA_VERSION,
        "horizon": {"steps": H.num_steps, "step_hours": H.step_hours},
        "devices": [
            {"p_max_kw": d.p_max, "e_target_kwh": d.e_target, "availability": d.availability.slots}
            for d in inst.fleet.devices
        ],
        "inflexible": None if inst.inflexible is None else [float(v) for v in inst.inflexible],
        "generators": [g.to_dict() for g in inst.generators],
        "fleet_scale": inst.fleet_scale,
        "metadata": inst.metadata,
    }


def _need(data: dict, key: str, where: str):
    if not isinstance(data, dict) or key not in data:
        raise SchemaError(f"missing field {where}{key!r}")
    return data[key]


def instance_from_dict(data: dict) -> Instance:
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}")
    hz = _need(data, "horizon", "")
    T = int(_need(hz, "steps", "horizon."))
    horizon = TimeHorizon(T, float(hz.get("step_hours", 1.0)))
    devices = []
    for j, dev in enumerate(_need(data, "devices", "")):
        where = f"devices[{j}]."
        slots = _need(dev, "availability", where)
        bad = [t for t in slots if not (isinstance(t, int) and 1 <= t <= T)]
        if bad:
            raise SchemaError(f"{where}availability: slot {bad[0]!r} outside 1..{T}")
        try:
            devices.append(Device(float(_need(dev, "p_max_kw", where)), float(_need(dev, "e_target_kwh", where)),
                                  TimeSet.of(slots, T)))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"{where[:-1]}: {exc}") from None
    inflexible = data.get("inflexible")
    if inflexible is not None:
        inflexible = np.asarray(inflexible, dtype=float)
        if len(inflexible) != T:
            raise SchemaError(f"inflexible: expected {T} values, got {len(inflexible)}")
    gens = []
    for i, g in enumerate(data.get("generators") or []):
        for key in ("g_min", "g_max"):
            _need(g, key, f"generators[{i}].")
        gens.append(Generator.from_dict(g))
    return Instance(Fleet(devices, horizon), inflexible, gens, float(data.get("fleet_scale", 1.0)),
                    dict(data.get("metadata") or {}))


def save_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1))


def load_instance(path: str | Path) -> Instance:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return instance_from_dict(data)


# --------------------------------------------------------- standard setups
def desk_generators(inflexible: Sequence[float], fleet: Fleet | None = None) -> list[Generator]:
    """Single quadratic unit large enough to serve the inflexible peak plus the whole fleet at full power."""
    peak = float(np.max(inflexible, initial=0.0))
    fleet_power = 0.0 if fleet is None else float(sum(d.p_max for d in fleet.devices))
    return [Generator(0.0, max(1.0, 2.0 * (peak + fleet_power)), CostFunction.quadratic(1.0, 0.0))]


def random_uc_instance(spec: ScenarioSpec, demand_low: float = 0.0, demand_high: float = 10.0) -> Instance:
    """Fleet from ``spec`` plus a seeded inflexible demand and the desk generator."""
    fleet = generate_fleet(spec)
    demand = uniform_demand(spec.num_steps, demand_low, demand_high, spec.seed + 7_919)
    return Instance(fleet, demand, desk_generators(demand, fleet), 1.0, {"spec": spec.to_dict()})
