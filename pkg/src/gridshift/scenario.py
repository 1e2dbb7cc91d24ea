"""
Scenario files, validation and the closed cyber-physical run loop.

A run schedules the emergency wireless network of every region, derives
each region's sampling interval from its worst link delay, then steps the
secondary controller of each region on its own time-triggered clock while
applying timeline events at the next control boundary. Regions never share
state; their traces are merged onto a common clock by sample-and-hold.

Scenario files are TOML::

    [run]      duration, mode, omega_ref, U_ref, grid, safety, record_stride
    [channel]  bandwidth_hz, subcarriers, noise_dbm, loss_factor,
               pathloss_exponent, p_max_dbm, p_cst_dbm, packet_bytes, length_scale
    [gains]    K_omega, K_P, K_U
    [region.NAME]  load, gains, initial, edges (optional), [[region.NAME.dg]]
    [[events]] time, kind, ...
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import control as ctl
from .control import ControllerGains, DgUnit, MgState, PlantMode
from .graph import CommGraph, GeoLocation, GraphError, build_chain_from_locations, is_connected
from .wireless import (
    AllocationPlan,
    ChannelParams,
    RadioRegion,
    allocate,
    dbm_to_mw,
    sampling_interval,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class ScenarioError(ValueError):
    def __init__(self, message: str, diagnostics: Sequence[Diagnostic] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class EventKind(enum.Enum):
    BLACKOUT = "blackout"
    SECONDARY_ON = "secondary_on"
    LOAD_STEP = "load_step"
    PLUG = "plug"
    UNPLUG = "unplug"


@dataclass(frozen=True)
class MobileUnit:
    """A plug-and-play DG that only listens to its host."""

    unit: DgUnit
    location: GeoLocation | None = None
    K_omega: float | None = None
    K_P: float | None = None
    K_U: float | None = None
    P0: float = 0.0


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    kind: EventKind
    region: str | None = None
    delta_p: float = 0.0
    mobile: MobileUnit | None = None
    host: int | None = None
    unit_id: int | None = None


@dataclass(frozen=True)
class RegionSpec:
    """One emergency microgrid.

    ``initial_*`` describe the post-blackout operating point in integrator
    mode (frequency in rad/s, power in W, voltage in V). ``setpoints`` are
    the primary frequency set-points used by the droop plant; ``None`` means
    ``omega_ref`` for every unit.
    """

    name: str
    units: tuple[DgUnit, ...]
    locations: tuple[GeoLocation, ...]
    p_max_mw: tuple[float, ...]
    p_cst_mw: tuple[float, ...]
    load: float = 0.0
    gains: ControllerGains | None = None
    initial_omega: tuple[float, ...] | None = None
    initial_P: tuple[float, ...] | None = None
    initial_U: tuple[float, ...] | None = None
    setpoints: tuple[float, ...] | None = None
    edges: tuple[tuple[int, int], ...] | None = None

    def graph(self) -> CommGraph:
        if self.edges is not None:
            return CommGraph.from_edges(len(self.units), self.edges)
        return build_chain_from_locations(self.locations)


@dataclass(frozen=True)
class Scenario:
    regions: tuple[RegionSpec, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    K_omega: float = 1.0
    K_P: float = 0.4
    K_U: float = 1.0
    mode: PlantMode = PlantMode.INTEGRATOR
    omega_ref: float = TWO_PI * 50.0
    U_ref: float = 311.0
    grid: float = 0.01
    safety: float = 1.0
    events: tuple[ScenarioEvent, ...] = ()
    duration: float = 5.0
    record_stride: int = 1
    name: str = "scenario"

    def region(self, name: str) -> RegionSpec:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def region_gains(self, r: RegionSpec) -> ControllerGains:
        if r.gains is not None:
            return r.gains
        return ControllerGains.uniform(len(r.units), self.K_omega, self.K_P, self.K_U)

    def sorted_events(self) -> list[ScenarioEvent]:
        return sorted(self.events, key=lambda e: e.time)


def with_gains(scenario: Scenario, K_omega: float | None = None, K_P: float | None = None,
               K_U: float | None = None) -> Scenario:
    """Copy with uniform gain overrides; overridden gains replace per-region values too."""
    given = {k: v for k, v in (("K_omega", K_omega), ("K_P", K_P), ("K_U", K_U)) if v is not None}
    if not given:
        return scenario
    regions = []
    for r in scenario.regions:
        if r.gains is not None:
            n = len(r.units)
            g = {k: getattr(r.gains, k) for k in ("K_omega", "K_P", "K_U")}
            g.update({k: np.full(n, float(v)) for k, v in given.items()})
            r = replace(r, gains=ControllerGains(**g))
        regions.append(r)
    return replace(scenario, regions=tuple(regions), **{k: float(v) for k, v in given.items()})


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _vector(value: Any, n: int, what: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * n
    if len(value) != n:
        raise ScenarioError(f"{what}: expected {n} values, got {len(value)}",
                            [Diagnostic("E_PARAM", f"{what} has {len(value)} entries for {n} DGs")])
    return tuple(float(v) for v in value)


def _unit(d: dict, where: str) -> DgUnit:
    try:
        return DgUnit(
            id=int(d["id"]),
            m_P=float(d["m_P"]),
            n_Q=float(d.get("n_Q", 0.0)),
            P_max=float(d["P_max"]),
        )
    except KeyError as exc:
        raise ScenarioError(f"{where}: missing {exc}", [Diagnostic("E_PARAM", f"{where}: missing field {exc}")])
    except ctl.ControlError as exc:
        raise ScenarioError(str(exc), [Diagnostic("E_PARAM", f"{where}: {exc}")])


def _gains(d: dict, n: int, defaults: tuple[float, float, float], where: str) -> ControllerGains:
    try:
        return ControllerGains(
            np.array(_vector(d.get("K_omega", defaults[0]), n, f"{where}.K_omega")),
            np.array(_vector(d.get("K_P", defaults[1]), n, f"{where}.K_P")),
            np.array(_vector(d.get("K_U", defaults[2]), n, f"{where}.K_U")),
        )
    except ctl.ControlError as exc:
        raise ScenarioError(str(exc), [Diagnostic("E_PARAM", f"{where}: {exc}")])


def _channel(d: dict) -> ChannelParams:
    base = ChannelParams()
    kw = dict(
        w=float(d.get("bandwidth_hz", base.w)),
        S=int(d.get("subcarriers", base.S)),
        sigma2=dbm_to_mw(float(d["noise_dbm"])) if "noise_dbm" in d else base.sigma2,
        h=float(d.get("loss_factor", base.h)),
        alpha=float(d.get("pathloss_exponent", base.alpha)),
        p_max=dbm_to_mw(float(d["p_max_dbm"])) if "p_max_dbm" in d else base.p_max,
        p_cst=dbm_to_mw(float(d["p_cst_dbm"])) if "p_cst_dbm" in d else base.p_cst,
        packet_bits=int(d["packet_bytes"]) * 8 if "packet_bytes" in d else int(d.get("packet_bits", base.packet_bits)),
        length_scale=float(d.get("length_scale", base.length_scale)),
    )
    try:
        return ChannelParams(**kw)
    except ValueError as exc:
        raise ScenarioError(str(exc), [Diagnostic("E_CHANNEL", str(exc))])


def _event(d: dict, k: int) -> ScenarioEvent:
    where = f"events[{k}]"
    try:
        kind = EventKind(d["kind"])
        time = float(d["time"])
    except (KeyError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}", [Diagnostic("E_PARAM", f"{where}: bad or missing kind/time")])
    region = str(d["region"]) if "region" in d else None
    if kind is EventKind.LOAD_STEP:
        return ScenarioEvent(time, kind, region, delta_p=float(d.get("delta_p", 0.0)))
    if kind is EventKind.PLUG:
        u = d.get("unit", {})
        loc = GeoLocation(float(u["x"]), float(u["y"])) if "x" in u and "y" in u else None
        mobile = MobileUnit(
            _unit(u, f"{where}.unit"),
            loc,
            u.get("K_omega"),
            u.get("K_P"),
            u.get("K_U"),
            float(u.get("P0", 0.0)),
        )
        return ScenarioEvent(time, kind, region, mobile=mobile, host=int(d["host"]) if "host" in d else None)
    if kind is EventKind.UNPLUG:
        return ScenarioEvent(time, kind, region, unit_id=int(d["id"]) if "id" in d else None)
    return ScenarioEvent(time, kind, region)


def _region(name: str, d: dict, defaults: tuple[float, float, float], channel: ChannelParams) -> RegionSpec:
    dgs = d.get("dg", [])
    units = tuple(_unit(u, f"region.{name}.dg[{k}]") for k, u in enumerate(dgs))
    n = len(units)
    try:
        locations = tuple(GeoLocation(float(u["x"]), float(u["y"])) for u in dgs)
    except (KeyError, GraphError) as exc:
        raise ScenarioError(str(exc), [Diagnostic("E_PARAM", f"region.{name}: bad DG location ({exc})")])
    p_max = tuple(dbm_to_mw(float(u["p_max_dbm"])) if "p_max_dbm" in u else channel.p_max for u in dgs)
    p_cst = tuple(dbm_to_mw(float(u["p_cst_dbm"])) if "p_cst_dbm" in u else channel.p_cst for u in dgs)
    init = d.get("initial", {})
    gains = _gains(d["gains"], n, defaults, f"region.{name}.gains") if "gains" in d else None
    return RegionSpec(
        name=name,
        units=units,
        locations=locations,
        p_max_mw=p_max,
        p_cst_mw=p_cst,
        load=float(d.get("load", 0.0)),
        gains=gains,
        initial_omega=_vector(init["omega"], n, f"region.{name}.initial.omega") if "omega" in init else None,
        initial_P=_vector(init["P"], n, f"region.{name}.initial.P") if "P" in init else None,
        initial_U=_vector(init["U"], n, f"region.{name}.initial.U") if "U" in init else None,
        setpoints=_vector(init["omega_n"], n, f"region.{name}.initial.omega_n") if "omega_n" in init else None,
        edges=tuple((int(a), int(b)) for a, b in d["edges"]) if "edges" in d else None,
    )


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    run = doc.get("run", {})
    g = doc.get("gains", {})
    defaults = (float(g.get("K_omega", 1.0)), float(g.get("K_P", 0.4)), float(g.get("K_U", 1.0)))
    channel = _channel(doc.get("channel", {}))
    regions = tuple(_region(str(k), v, defaults, channel) for k, v in doc.get("region", {}).items())
    try:
        mode = PlantMode(run.get("mode", "integrator"))
    except ValueError:
        raise ScenarioError("bad mode", [Diagnostic("E_PARAM", f"unknown plant mode {run.get('mode')!r}")])
    return Scenario(
        regions=regions,
        channel=channel,
        K_omega=defaults[0],
        K_P=defaults[1],
        K_U=defaults[2],
        mode=mode,
        omega_ref=float(run.get("omega_ref", TWO_PI * 50.0)),
        U_ref=float(run.get("U_ref", 311.0)),
        grid=float(run.get("grid", 0.01)),
        safety=float(run.get("safety", 1.0)),
        events=tuple(_event(e, k) for k, e in enumerate(doc.get("events", []))),
        duration=float(run.get("duration", 5.0)),
        record_stride=int(run.get("record_stride", 1)),
        name=str(run.get("name", name)),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Read a TOML scenario file. I/O and syntax errors propagate as ``OSError``/``TOMLDecodeError``."""
    path = Path(path)
    with path.open("rb") as fh:
        doc = tomllib.load(fh)
    return parse_scenario(doc, name=path.stem)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(scenario: Scenario) -> list[Diagnostic]:
    """Every violated scenario invariant as a coded diagnostic; empty means runnable."""
    out: list[Diagnostic] = []
    names = [r.name for r in scenario.regions]
    if not scenario.regions:
        out.append(Diagnostic("E_REGION", "scenario defines no regions"))
    if len(set(names)) != len(names):
        out.append(Diagnostic("E_REGION", "duplicate region names"))
    if not scenario.duration > 0:
        out.append(Diagnostic("E_PARAM", "duration must be positive"))
    if not scenario.grid > 0:
        out.append(Diagnostic("E_PARAM", "grid must be positive"))
    if not scenario.safety >= 1:
        out.append(Diagnostic("E_PARAM", "safety multiplier must be >= 1"))
    if scenario.record_stride < 1:
        out.append(Diagnostic("E_PARAM", "record_stride must be >= 1"))

    for r in scenario.regions:
        where = f"region {r.name}"
        n = len(r.units)
        if n < 2:
            out.append(Diagnostic("E_REGION", f"{where}: needs at least 2 DGs"))
            continue
        ids = [u.id for u in r.units]
        if ids != list(range(n)):
            out.append(Diagnostic("E_ID", f"{where}: DG ids must be 0..{n - 1} in listing order"))
        if len({(l.x, l.y) for l in r.locations}) != n:
            out.append(Diagnostic("E_LOCATION", f"{where}: duplicate DG locations"))
        if not ctl.check_ratings(r.units):
            out.append(Diagnostic("E_RATING", f"{where}: m_P*P_max differs between DGs"))
        if any(pc >= pm for pm, pc in zip(r.p_max_mw, r.p_cst_mw)):
            out.append(Diagnostic("E_BUDGET", f"{where}: p_max must exceed p_cst for every DG"))
        if r.gains is not None and len(r.gains) != n:
            out.append(Diagnostic("E_PARAM", f"{where}: gains sized {len(r.gains)} for {n} DGs"))
        if r.edges is not None:
            try:
                g = r.graph()
            except GraphError as exc:
                out.append(Diagnostic("E_GRAPH", f"{where}: {exc}"))
            else:
                if not is_connected(g):
                    out.append(Diagnostic("E_GRAPH", f"{where}: communication graph is not connected"))

    blackout_t = None
    secondary_t = None
    plugged: dict[tuple[str, int], float] = {}
    last = 0.0
    for k, ev in enumerate(scenario.sorted_events()):
        where = f"event {ev.kind.value} at t={ev.time:g}"
        if ev.time < 0 or not math.isfinite(ev.time):
            out.append(Diagnostic("E_TIME", f"{where}: time must be finite and non-negative"))
        last = max(last, ev.time)
        if ev.kind is EventKind.BLACKOUT:
            if blackout_t is None:
                blackout_t = ev.time
        elif ev.kind is EventKind.SECONDARY_ON:
            if blackout_t is None:
                out.append(Diagnostic("E_ORDER", f"{where}: secondary control before any blackout"))
            secondary_t = ev.time
        if ev.kind in (EventKind.LOAD_STEP, EventKind.PLUG, EventKind.UNPLUG):
            if ev.region not in names:
                out.append(Diagnostic("E_REF", f"{where}: unknown region {ev.region!r}"))
                continue
            region = scenario.region(ev.region)
            if ev.kind is EventKind.PLUG:
                key = (ev.region, ev.mobile.unit.id)
                if ev.host is None or not 0 <= ev.host < len(region.units):
                    out.append(Diagnostic("E_REF", f"{where}: unknown host {ev.host!r}"))
                if ev.mobile.unit.id in {u.id for u in region.units} or key in plugged:
                    out.append(Diagnostic("E_ID", f"{where}: unit id {ev.mobile.unit.id} already in use"))
                if region.units and not ctl.check_ratings(region.units + (ev.mobile.unit,)):
                    out.append(Diagnostic("E_RATING", f"{where}: mobile m_P*P_max differs from its region"))
                plugged[key] = ev.time
            elif ev.kind is EventKind.UNPLUG:
                key = (ev.region, ev.unit_id)
                if key not in plugged:
                    out.append(Diagnostic("E_ORDER", f"{where}: unplug of unit {ev.unit_id} that is not plugged in"))
                else:
                    del plugged[key]
    if secondary_t is not None and blackout_t is not None and secondary_t < blackout_t:
        out.append(Diagnostic("E_ORDER", "secondary control starts before the blackout"))
    if scenario.duration < last:
        out.append(Diagnostic("E_DURATION", f"duration {scenario.duration:g} s ends before the last event at {last:g} s"))
    return out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

UNIT_FIELDS = ("omega_rad", "omega_hz", "xP", "U")
REGION_FIELDS = ("spread", "P_total", "load", "islanded", "secondary")


@dataclass
class TimeSeries:
    """Recorded trajectories on the common clock plus the scheduling header."""

    columns: list[str]
    data: np.ndarray
    header: dict

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# gridshift run: {self.header['scenario']}\n")
        buf.write("# columns: t [s]; per DG <region>.dg<id>.{omega_rad [rad/s], omega_hz [Hz], xP = m_P*P [rad/s], U [V]};"
                  " per region <region>.{spread [rad/s], P_total [W], load [W], islanded, secondary}; nan = unit absent\n")
        for r in self.header["regions"]:
            buf.write(f"# region {r['region']}: tau_max_s={r['tau_max_s']!r} Ts_s={r['Ts_s']!r}\n")
        buf.write("# plan: " + json.dumps(self.header["plan"], separators=(",", ":")) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.data:
            w.writerow(repr(float(v)) for v in row)
        return buf.getvalue()


@dataclass
class _Slot:
    label: str
    unit: DgUnit
    mobile: bool


class _RegionSim:
    """Sequential simulation of one region on its own control clock."""

    def __init__(self, scenario: Scenario, spec: RegionSpec, graph: CommGraph, Ts: float,
                 events: list[ScenarioEvent]):
        self.sc = scenario
        self.spec = spec
        self.g = graph
        self.Ts = Ts
        self.mode = scenario.mode
        self.units: list[DgUnit] = list(spec.units)
        self.hosts: list[int] = []
        self.mobile_ids: list[int] = []
        self.gains = scenario.region_gains(spec)
        self.load = spec.load
        self.islanded = False
        self.secondary = False
        self.oracle_log: list[dict] = []

        n = len(self.units)
        m = np.array([u.m_P for u in self.units])
        P0 = np.array(spec.initial_P) if spec.initial_P is not None else np.zeros(n)
        if self.mode is PlantMode.DROOP:
            self.setpoints = np.array(spec.setpoints) if spec.setpoints is not None else np.full(n, scenario.omega_ref)
            x_P = self.setpoints - scenario.omega_ref
        else:
            self.setpoints = None
            x_P = m * P0
        self.state = MgState.initial(scenario.omega_ref, x_P, scenario.U_ref, scenario.omega_ref, scenario.U_ref)

        # record slots: fixed DGs then every mobile in order of first plug
        self.slots = [_Slot(f"{spec.name}.dg{u.id}", u, False) for u in self.units]
        for ev in events:
            if ev.kind is EventKind.PLUG and ev.mobile.unit.id not in [s.unit.id for s in self.slots]:
                self.slots.append(_Slot(f"{spec.name}.dg{ev.mobile.unit.id}", ev.mobile.unit, True))

        self.n_steps = int(math.floor(scenario.duration / Ts + 1e-9))
        self.schedule: dict[int, list[ScenarioEvent]] = {}
        for ev in events:
            k = max(0, math.ceil(ev.time / Ts - 1e-9))
            self.schedule.setdefault(k, []).append(ev)

    # -- events -------------------------------------------------------------

    def _resolve(self) -> None:
        self.state = ctl.plant_step_droop(self.state, self.setpoints, self.units, self.load, advance=False)

    def _apply(self, ev: ScenarioEvent) -> None:
        sc = self.sc
        if ev.kind is EventKind.BLACKOUT:
            self.islanded = True
            if self.mode is PlantMode.DROOP:
                self._resolve()
            else:
                n = len(self.spec.units)
                x_omega = np.array(self.spec.initial_omega) if self.spec.initial_omega is not None else np.full(n, sc.omega_ref)
                x_U = np.array(self.spec.initial_U) if self.spec.initial_U is not None else np.full(n, sc.U_ref)
                x_omega = np.concatenate([x_omega, self.state.x_omega[n:]])
                x_U = np.concatenate([x_U, self.state.x_U[n:]])
                self.state = replace(self.state, x_omega=x_omega, x_U=x_U)
        elif ev.kind is EventKind.SECONDARY_ON:
            self.secondary = True
        elif ev.kind is EventKind.LOAD_STEP:
            self.load += ev.delta_p
            if not self.islanded:
                return
            if self.mode is PlantMode.DROOP:
                self._resolve()
            else:
                # primary droop response: every unit takes the share that keeps m_P*dP equal
                shift = ev.delta_p / sum(1.0 / u.m_P for u in self.units)
                self.state = replace(self.state, x_omega=self.state.x_omega - shift, x_P=self.state.x_P + shift)
        elif ev.kind is EventKind.PLUG:
            mob = ev.mobile
            h = ev.host
            if self.mode is PlantMode.DROOP:
                # set-point chosen so the unit starts at P0 on the current frequency
                self.state = self.state.with_unit(self.state.x_omega[h], mob.unit.m_P * mob.P0, self.state.x_U[h])
                self.setpoints = np.append(self.setpoints, self.state.x_omega[h] + mob.unit.m_P * mob.P0)
            else:
                self.state = self.state.with_unit(self.state.x_omega[h], mob.unit.m_P * mob.P0, self.state.x_U[h])
            self.units.append(mob.unit)
            self.hosts.append(h)
            self.mobile_ids.append(mob.unit.id)
            self.gains = self.gains.extended(
                sc.K_omega if mob.K_omega is None else float(mob.K_omega),
                sc.K_P if mob.K_P is None else float(mob.K_P),
                sc.K_U if mob.K_U is None else float(mob.K_U),
            )
            if self.mode is PlantMode.DROOP and self.islanded:
                self._resolve()
            res = ctl.spectral_radius_oracle(self.g, self.gains.K_P, self.hosts)
            rep = ctl.check_gains(self.gains, self.g, self.hosts)
            self.oracle_log.append({"time": ev.time, "event": "plug", "unit": mob.unit.id,
                                    "check_gains": str(rep), "oracle": res.verdict.value})
        elif ev.kind is EventKind.UNPLUG:
            idx = len(self.spec.units) + self.mobile_ids.index(ev.unit_id)
            self.state = self.state.without_unit(idx)
            self.gains = self.gains.dropped(idx)
            del self.units[idx]
            del self.hosts[idx - len(self.spec.units)]
            del self.mobile_ids[idx - len(self.spec.units)]
            if self.setpoints is not None:
                self.setpoints = np.delete(self.setpoints, idx)
            if self.mode is PlantMode.DROOP and self.islanded:
                self._resolve()

    # -- stepping -----------------------------------------------------------

    def _advance(self) -> None:
        active = self.islanded and self.secondary
        if self.mode is PlantMode.INTEGRATOR:
            if active:
                u = ctl.dapi_step(self.state, self.gains, self.g, self.hosts)
            else:
                z = np.zeros(len(self.state))
                u = ctl.ControlInputs(z, z, z)
            self.state = ctl.plant_step_integrator(self.state, u)
            return
        if active:
            u = ctl.dapi_step(self.state, self.gains, self.g, self.hosts)
            self.setpoints = self.setpoints + u.u_omega + u.u_P
        if self.islanded:
            self.state = ctl.plant_step_droop(self.state, self.setpoints, self.units, self.load)
        else:
            self.state = replace(
                self.state,
                x_P_prev=self.state.x_P,
                x_P_prev2=self.state.x_P_prev,
                k=self.state.k + 1,
            )

    def _row(self) -> list[float]:
        values = []
        index = {u.id: i for i, u in enumerate(self.units)}
        for slot in self.slots:
            i = index.get(slot.unit.id)
            if i is None:
                values.extend([math.nan] * len(UNIT_FIELDS))
                continue
            w = float(self.state.x_omega[i])
            values.extend([w, w / TWO_PI, float(self.state.x_P[i]), float(self.state.x_U[i])])
        p_total = math.fsum(ctl.unit_powers(self.state, self.units).tolist())
        values.extend([ctl.power_sharing_spread(self.state), p_total, self.load,
                       float(self.islanded), float(self.secondary)])
        return values

    def columns(self) -> list[str]:
        cols = [f"{s.label}.{f}" for s in self.slots for f in UNIT_FIELDS]
        return cols + [f"{self.spec.name}.{f}" for f in REGION_FIELDS]

    def run(self) -> np.ndarray:
        rows = []
        for k in range(self.n_steps + 1):
            for ev in self.schedule.get(k, ()):
                self._apply(ev)
            rows.append(self._row())
            if k < self.n_steps:
                self._advance()
        return np.array(rows)


def _region_events(scenario: Scenario, name: str) -> list[ScenarioEvent]:
    return [e for e in scenario.sorted_events() if e.region is None or e.region == name]


def schedule(scenario: Scenario) -> tuple[list[CommGraph], AllocationPlan, list[float]]:
    """Build every region's graph, allocate the band and pick sampling intervals."""
    graphs = [r.graph() for r in scenario.regions]
    radio = [
        RadioRegion.from_locations(g, r.locations, scenario.channel, r.p_max_mw, r.p_cst_mw)
        for g, r in zip(graphs, scenario.regions)
    ]
    plan = allocate(radio, scenario.channel)
    Ts = [sampling_interval(tau, scenario.grid, scenario.safety) for tau in plan.per_region_max_delay]
    return graphs, plan, Ts


def run(scenario: Scenario) -> TimeSeries:
    diags = validate(scenario)
    if diags:
        raise ScenarioError("invalid scenario", diags)
    graphs, plan, Ts = schedule(scenario)

    header_regions = []
    traces = []
    columns = ["t"]
    for spec, g, ts, alloc in zip(scenario.regions, graphs, Ts, plan.regions):
        gains = scenario.region_gains(spec)
        rep = ctl.check_gains(gains, g)
        orc = ctl.spectral_radius_oracle(g, gains.K_P)
        if not rep.stable:
            log.warning("region %s: gains fail the stability criterion: %s", spec.name, rep)
        sim = _RegionSim(scenario, spec, g, ts, _region_events(scenario, spec.name))
        traces.append((sim.run(), ts))
        columns += sim.columns()
        header_regions.append({
            "region": spec.name,
            "tau_max_s": alloc.tau_max,
            "Ts_s": ts,
            "edges": [list(e) for e in g.edges],
            "check_gains": str(rep),
            "stable": rep.stable,
            "oracle": orc.verdict.value,
            "oracle_second_radius": orc.second_radius,
            "plug_events": sim.oracle_log,
        })

    # common clock: gcd of the sampling intervals in grid units
    ticks = [int(round(ts / scenario.grid)) for ts in Ts]
    base_ticks = math.gcd(*ticks)
    base = base_ticks * scenario.grid
    n_rows = int(math.floor(scenario.duration / base + 1e-9)) + 1
    rows = [j for j in range(n_rows) if j % scenario.record_stride == 0]
    t = np.array([round(j * base, 12) for j in rows])
    blocks = [t[:, None]]
    for (trace, _), tk in zip(traces, ticks):
        idx = np.minimum(np.array(rows) * base_ticks // tk, trace.shape[0] - 1)
        blocks.append(trace[idx])
    header = {
        "scenario": scenario.name,
        "mode": scenario.mode.value,
        "regions": header_regions,
        "plan": plan.to_dict(),
    }
    return TimeSeries(columns, np.hstack(blocks), header)


def summary(ts: TimeSeries) -> dict:
    """Run summary: delays, intervals, final spreads and stability verdicts."""
    regions = []
    for r in ts.header["regions"]:
        name = r["region"]
        omega_cols = [c for c in ts.columns if c.startswith(f"{name}.dg") and c.endswith(".omega_rad")]
        last = ts.data[-1]
        omegas = [last[ts.columns.index(c)] for c in omega_cols]
        regions.append({
            "region": name,
            "tau_max_s": r["tau_max_s"],
            "Ts_s": r["Ts_s"],
            "final_spread": float(ts.column(f"{name}.spread")[-1]),
            "final_omega_hz": [float(w) / TWO_PI for w in omegas if not math.isnan(w)],
            "check_gains": r["check_gains"],
            "stable": r["stable"],
            "oracle": r["oracle"],
            "oracle_second_radius": r["oracle_second_radius"],
            "plug_events": r["plug_events"],
        })
    return {"scenario": ts.header["scenario"], "mode": ts.header["mode"], "rows": len(ts), "regions": regions}


def write_outputs(ts: TimeSeries, csv_path: str | Path | None, json_path: str | Path | None) -> None:
    if csv_path is not None:
        Path(csv_path).write_text(ts.to_csv(), encoding="utf-8")
    if json_path is not None:
        Path(json_path).write_text(json.dumps(summary(ts), indent=2) + "\n", encoding="utf-8")
