"""Aggregate flexibility of charging fleets for unit-commitment dispatch."""

from fleetagg.fleet import Device, Fleet, TimeHorizon, TimeSet, capacity, max_avg_demand, total_energy

__version__ = "0.1.0"

__all__ = ["Device", "Fleet", "TimeHorizon", "TimeSet", "capacity", "max_avg_demand", "total_energy"]
