"""Wireless emergency networking and distributed secondary control for islanded microgrids."""

from .control import (
    ControllerGains,
    DgUnit,
    MgState,
    PlantMode,
    StabilityReport,
    Verdict,
    check_gains,
    dapi_step,
    spectral_radius_oracle,
)
from .graph import CommGraph, GeoLocation, algebraic_connectivity, build_chain_from_locations, connected_components
from .scenario import Scenario, TimeSeries, load_scenario, run, validate
from .wireless import (
    AllocationPlan,
    ChannelParams,
    RadioRegion,
    allocate,
    brute_force_allocate,
    link_delay,
    sampling_interval,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan",
    "ChannelParams",
    "CommGraph",
    "ControllerGains",
    "DgUnit",
    "GeoLocation",
    "MgState",
    "PlantMode",
    "RadioRegion",
    "Scenario",
    "StabilityReport",
    "TimeSeries",
    "Verdict",
    "algebraic_connectivity",
    "allocate",
    "brute_force_allocate",
    "build_chain_from_locations",
    "check_gains",
    "connected_components",
    "dapi_step",
    "link_delay",
    "load_scenario",
    "run",
    "sampling_interval",
    "spectral_radius_oracle",
    "validate",
]
