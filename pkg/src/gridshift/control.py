"""
Discrete-time microgrid secondary control with one-step communication delay.

The state per DG is its angular frequency, its scaled active power
``m_P * P`` and its voltage magnitude. Each control period the DAPI law
computes set-point increments from local measurements and the neighbours'
scaled power received one period earlier. Mobile units plugged onto a host
only listen to that host and see its value two periods late.

Two plant models close the loop:

* ``PlantMode.INTEGRATOR``: every channel integrates its input.
* ``PlantMode.DROOP``: the lossless primary equilibrium is re-solved from the
  frequency set-points and the region load each period.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import CommGraph, is_connected

EIG_TOL = 1e-9
RATING_RTOL = 1e-9


class ControlError(ValueError):
    pass


class PlantMode(enum.Enum):
    INTEGRATOR = "integrator"
    DROOP = "droop"


class Verdict(enum.Enum):
    CONSENSUS_STABLE = "ConsensusStable"
    MARGINAL = "Marginal"
    DIVERGENT = "Divergent"


@dataclass(frozen=True)
class DgUnit:
    id: int
    m_P: float
    n_Q: float = 0.0
    P_max: float = 1.0
    omega_n: float = 0.0
    U_n: float = 0.0

    def __post_init__(self) -> None:
        if not (self.m_P > 0 and self.P_max > 0):
            raise ControlError(f"DG {self.id}: m_P and P_max must be positive")


def check_ratings(units: Sequence[DgUnit], rtol: float = RATING_RTOL) -> bool:
    """True when m_P * P_max is the same for every unit, so sharing m_P*P shares P/P_max."""
    prod = np.array([u.m_P * u.P_max for u in units])
    return bool(np.all(np.abs(prod - prod[0]) <= rtol * np.abs(prod[0])))


@dataclass(frozen=True)
class ControllerGains:
    K_omega: np.ndarray
    K_P: np.ndarray
    K_U: np.ndarray

    def __post_init__(self) -> None:
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.K_omega, self.K_P, self.K_U)]
        if len({a.shape for a in arrs}) != 1:
            raise ControlError("gain vectors must have equal length")
        if any(np.any(a < 0) for a in arrs):
            raise ControlError("gains must be non-negative")
        for name, a in zip(("K_omega", "K_P", "K_U"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, n: int, K_omega: float, K_P: float, K_U: float = 1.0) -> ControllerGains:
        return cls(np.full(n, K_omega), np.full(n, K_P), np.full(n, K_U))

    def __len__(self) -> int:
        return len(self.K_P)

    def extended(self, K_omega: float, K_P: float, K_U: float) -> ControllerGains:
        return ControllerGains(
            np.append(self.K_omega, K_omega), np.append(self.K_P, K_P), np.append(self.K_U, K_U)
        )

    def dropped(self, index: int) -> ControllerGains:
        return ControllerGains(
            np.delete(self.K_omega, index), np.delete(self.K_P, index), np.delete(self.K_U, index)
        )


@dataclass(frozen=True)
class MgState:
    """Per-region controller/plant state at step ``k``.

    Entries ``0..g.n-1`` are the networked DGs; any further entries are
    mobile units. ``x_P_prev`` and ``x_P_prev2`` hold ``x_P`` one and two
    steps back and start as copies of the initial ``x_P``.
    """

    x_omega: np.ndarray
    x_P: np.ndarray
    x_U: np.ndarray
    x_P_prev: np.ndarray | None
    x_P_prev2: np.ndarray | None
    k: int = 0
    omega_ref: float = 0.0
    U_ref: float = 0.0

    @classmethod
    def initial(cls, x_omega, x_P, x_U, omega_ref: float, U_ref: float) -> MgState:
        x_P = np.array(x_P, dtype=float)
        n = len(x_P)
        return cls(
            np.broadcast_to(np.asarray(x_omega, dtype=float), (n,)).copy(),
            x_P,
            np.broadcast_to(np.asarray(x_U, dtype=float), (n,)).copy(),
            x_P.copy(),
            x_P.copy(),
            0,
            float(omega_ref),
            float(U_ref),
        )

    def __len__(self) -> int:
        return len(self.x_P)

    def with_unit(self, x_omega: float, x_P: float, x_U: float) -> MgState:
        """Append a unit whose delay buffers start at its own initial power."""
        return replace(
            self,
            x_omega=np.append(self.x_omega, x_omega),
            x_P=np.append(self.x_P, x_P),
            x_U=np.append(self.x_U, x_U),
            x_P_prev=np.append(self.x_P_prev, x_P),
            x_P_prev2=np.append(self.x_P_prev2, x_P),
        )

    def without_unit(self, index: int) -> MgState:
        return replace(
            self,
            x_omega=np.delete(self.x_omega, index),
            x_P=np.delete(self.x_P, index),
            x_U=np.delete(self.x_U, index),
            x_P_prev=np.delete(self.x_P_prev, index),
            x_P_prev2=np.delete(self.x_P_prev2, index),
        )


@dataclass(frozen=True)
class ControlInputs:
    u_omega: np.ndarray
    u_P: np.ndarray
    u_U: np.ndarray


@dataclass(frozen=True)
class Violation:
    node: int
    condition: str
    value: float

    def __str__(self) -> str:
        return f"node {self.node}: {self.condition} = {self.value:g}"


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    violations: tuple[Violation, ...] = ()
    max_dK: float = 0.0

    def __str__(self) -> str:
        if self.stable:
            return f"STABLE (max d·K_P = {self.max_dK:g})"
        return "UNSTABLE (" + "; ".join(str(v) for v in self.violations) + ")"


@dataclass(frozen=True)
class OracleResult:
    verdict: Verdict
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    @property
    def second_radius(self) -> float:
        """Largest modulus once the consensus eigenvalue at 1 is set aside."""
        eigs = np.asarray(self.eigenvalues)
        if len(eigs) < 2:
            return 0.0
        rest = np.delete(eigs, int(np.argmin(np.abs(eigs - 1.0))))
        return float(np.max(np.abs(rest)))


def _degrees(g: CommGraph, hosts: Sequence[int]) -> np.ndarray:
    return np.concatenate([g.degrees, np.ones(len(hosts))])


def check_gains(gains: ControllerGains, g: CommGraph, hosts: Sequence[int] = ()) -> StabilityReport:
    """Per-node sufficient criterion: 0 < K_omega, K_U < 2 and 0 < d_i K_P < 1.

    Mobile units (``hosts``) count one incoming link each. Values on a
    boundary are reported as violations.
    """
    n = g.n + len(hosts)
    if len(gains) != n:
        raise ControlError(f"{len(gains)} gains for {n} nodes")
    d = _degrees(g, hosts)
    dK = d * gains.K_P
    out = []
    for i in range(n):
        for name, v, upper in (
            ("K_omega", gains.K_omega[i], 2.0),
            ("K_U", gains.K_U[i], 2.0),
            ("d·K_P", dK[i], 1.0),
        ):
            if not 0.0 < v < upper:
                out.append(Violation(i, name, float(v)))
    return StabilityReport(not out, tuple(out), float(dK.max()) if n else 0.0)


def delay_matrix(g: CommGraph, K_P: Sequence[float], hosts: Sequence[int] = ()) -> np.ndarray:
    """Transition matrix of the power-sharing loop on the stacked state.

    Without mobile units the state is ``[x(k), x(k-1)]`` and the matrix is
    ``[[I - K D, K A], [I, 0]]``. With mobile units it is extended to
    ``[x(k), x(k-1), x(k-2)]`` with the host-to-mobile coupling placed on the
    two-step block.
    """
    n = g.n + len(hosts)
    K = np.diag(np.asarray(K_P, dtype=float))
    if K.shape != (n, n):
        raise ControlError("one K_P per node required")
    A1 = np.zeros((n, n))
    A1[: g.n, : g.n] = g.adjacency
    I = np.eye(n)
    if not hosts:
        D = np.diag(A1.sum(axis=1))
        return np.block([[I - K @ D, K @ A1], [I, np.zeros((n, n))]])
    A2 = np.zeros((n, n))
    for m, h in enumerate(hosts):
        A2[g.n + m, h] = 1.0
    D = np.diag(A1.sum(axis=1) + A2.sum(axis=1))
    Z = np.zeros((n, n))
    return np.block([[I - K @ D, K @ A1, K @ A2], [I, Z, Z], [Z, I, Z]])


def classify_eigenvalues(eigs: np.ndarray, tol: float = EIG_TOL) -> Verdict:
    mods = np.abs(eigs)
    if np.any(mods > 1 + tol):
        return Verdict.DIVERGENT
    at_one = np.abs(eigs - 1.0) <= tol
    if at_one.sum() == 1 and np.all(mods[~at_one] < 1 - tol):
        return Verdict.CONSENSUS_STABLE
    return Verdict.MARGINAL


def spectral_radius_oracle(g: CommGraph, K_P: Sequence[float], hosts: Sequence[int] = ()) -> OracleResult:
    """Eigenvalue check of the delayed consensus loop, independent of the gain criterion."""
    if not is_connected(g):
        raise ControlError("oracle needs a connected graph")
    eigs = np.linalg.eigvals(delay_matrix(g, K_P, hosts))
    return OracleResult(classify_eigenvalues(eigs), eigs)


def dapi_step(state: MgState, gains: ControllerGains, g: CommGraph, hosts: Sequence[int] = ()) -> ControlInputs:
    """Distributed averaging PI inputs for one control period."""
    if state.x_P_prev is None or state.x_P_prev2 is None:
        raise ControlError("delay buffers are not initialised")
    n = g.n + len(hosts)
    if len(state) != n or len(gains) != n:
        raise ControlError(f"state/gains sized {len(state)}/{len(gains)} for {n} nodes")
    x = state.x_P
    u_P = np.empty(n)
    u_P[: g.n] = gains.K_P[: g.n] * (g.adjacency @ state.x_P_prev[: g.n] - g.degrees * x[: g.n])
    for m, h in enumerate(hosts):
        i = g.n + m
        u_P[i] = gains.K_P[i] * (state.x_P_prev2[h] - x[i])
    return ControlInputs(
        gains.K_omega * (state.omega_ref - state.x_omega),
        u_P,
        gains.K_U * (state.U_ref - state.x_U),
    )


def _check_sizes(state: MgState, u: ControlInputs) -> None:
    if not (len(u.u_omega) == len(u.u_P) == len(u.u_U) == len(state)):
        raise ControlError("input size does not match state")


def plant_step_integrator(state: MgState, u: ControlInputs) -> MgState:
    _check_sizes(state, u)
    return replace(
        state,
        x_omega=state.x_omega + u.u_omega,
        x_P=state.x_P + u.u_P,
        x_U=state.x_U + u.u_U,
        x_P_prev=state.x_P,
        x_P_prev2=state.x_P_prev,
        k=state.k + 1,
    )


def droop_equilibrium(setpoints: np.ndarray, m_P: np.ndarray, total_load: float) -> tuple[float, np.ndarray]:
    """Common frequency and unit outputs of the lossless droop balance.

    Solves ``omega = w_n,i - m_P,i P_i`` for all ``i`` with ``sum(P) = load``.
    Returns ``(omega_ss, P)``.
    """
    if len(setpoints) == 0:
        raise ControlError("empty region")
    inv = 1.0 / m_P
    omega_ss = (np.sum(setpoints * inv) - total_load) / np.sum(inv)
    return float(omega_ss), (setpoints - omega_ss) * inv


def plant_step_droop(state: MgState, setpoints: np.ndarray, units: Sequence[DgUnit], total_load: float,
                     advance: bool = True) -> MgState:
    """Replace the plant state by the droop equilibrium for the given set-points.

    With ``advance=False`` the step counter and delay buffers are left alone,
    which is how an instantaneous load change inside a period is applied.
    """
    setpoints = np.asarray(setpoints, dtype=float)
    if len(setpoints) != len(units) or len(units) != len(state):
        raise ControlError("set-points, units and state must match")
    m_P = np.array([u.m_P for u in units])
    omega_ss, _ = droop_equilibrium(setpoints, m_P, total_load)
    x_P = setpoints - omega_ss
    x_omega = np.full(len(units), omega_ss)
    if not advance:
        return replace(state, x_omega=x_omega, x_P=x_P)
    return replace(
        state,
        x_omega=x_omega,
        x_P=x_P,
        x_P_prev=state.x_P,
        x_P_prev2=state.x_P_prev,
        k=state.k + 1,
    )


def unit_powers(state: MgState, units: Sequence[DgUnit]) -> np.ndarray:
    return state.x_P / np.array([u.m_P for u in units])


def power_sharing_spread(state: MgState) -> float:
    if len(state) == 0:
        return 0.0
    return float(np.max(state.x_P) - np.min(state.x_P))


def frequency_error(state: MgState) -> np.ndarray:
    return state.x_omega - state.omega_ref
