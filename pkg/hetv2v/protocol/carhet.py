"""
Decentralized context-aware RAT selection.

A vehicle pre-selects the RATs that still reach its reliability target at
the load it measures, estimates for each candidate the worst load any known
neighbor would see once its own traffic is added, and moves to the cheapest
RAT only when the gain exceeds a hysteresis margin.  Evaluations are spread
out in time by a randomized trigger and by a flag that makes nearby
vehicles postpone their own evaluation after a change.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, Mapping, Optional, Sequence

import numpy as np

from hetv2v.core.link_curves import as_link_curves
from hetv2v.core.radio_model import PsrCurve, RatProfile
from hetv2v.errors import ConfigurationError
from hetv2v.protocol.cis import DEFAULT_GEO, CisPacket, GeoFrame, build_cis, make_row
from hetv2v.protocol.context import ContextTable, ingest_cis, prune_stale

logger = logging.getLogger(__name__)

FLAG_ORIGIN = 2

DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def planar_distance(own: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``own`` (2,) to each row of ``others`` (M, 2)."""
    delta = np.asarray(others, dtype=float) - np.asarray(own, dtype=float)
    return np.hypot(delta[:, 0], delta[:, 1])


@dataclass(frozen=True)
class ProtocolTimers:
    t_meas: float = 0.2
    t_update: float = 1.0
    t_neigh: float = 1.0
    alpha: float = 0.05

    def __post_init__(self):
        for name in ("t_meas", "t_update", "t_neigh"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")


@dataclass
class SelectionState:
    current_rat: int
    app_rate: float
    target_distance: float
    reliability: float
    n_changes: int = 0
    next_eval_time: float = 0.0
    postponed: bool = False
    outgoing_flag: int = 0
    last_candidates: Optional[FrozenSet[int]] = None

    def take_outgoing_flag(self) -> int:
        flag, self.outgoing_flag = self.outgoing_flag, 0
        return flag


@dataclass
class SelectionInputs:
    """What a vehicle knows besides its context table when it evaluates."""
    catalog: Sequence[RatProfile]
    link_curves: object
    psr_set: Mapping[int, PsrCurve]
    airtimes: Sequence[float]
    packet_rate: float
    timers: ProtocolTimers = field(default_factory=ProtocolTimers)
    measured_cbr: Sequence[float] = ()
    own_position: Sequence[float] = (0.0, 0.0)
    distance: DistanceFn = planar_distance

    def __post_init__(self):
        self.link_curves = as_link_curves(self.link_curves)


@dataclass
class TickResult:
    state: SelectionState
    changed_to: Optional[int] = None
    outgoing_flag: Optional[int] = None
    evaluated: bool = False
    no_feasible: bool = False


def preselect(catalog: Sequence[RatProfile], pdr_families, measured_cbr: Sequence[float],
              target_distance: float, reliability: float) -> FrozenSet[int]:
    """RATs whose PDR at ``target_distance`` under the measured load is >= ``reliability``."""
    if len(measured_cbr) != len(catalog):
        raise ConfigurationError(f"measured_cbr has {len(measured_cbr)} values for {len(catalog)} RATs")
    curves = as_link_curves(pdr_families)
    return frozenset(
        p.id for p in catalog
        if curves.lookup(p.id, float(measured_cbr[p.id]), target_distance) >= reliability
    )


def estimate_costs(table: ContextTable, candidates, psr_set: Mapping[int, PsrCurve],
                   n: float, airtimes: Sequence[float], own_position,
                   distance: DistanceFn = planar_distance) -> np.ndarray:
    """
    Worst neighbor load per RAT after adding this vehicle's traffic.

    For candidate j: c_j = max_i min(LE_ij + n * t_j * PSR_j(d_i), 1), 0 for an
    empty table.  Non-candidates cost 1.
    """
    if n < 0:
        raise ConfigurationError("packet rate must be >= 0")
    n_rat = len(airtimes)
    costs = np.ones(n_rat)
    entries = list(table.entries.values())
    if entries:
        positions = np.array([e.position for e in entries], dtype=float)
        loads = np.array([e.cbr_per_rat for e in entries], dtype=float)
        d = distance(np.asarray(own_position, dtype=float), positions)
    for j in candidates:
        if not entries:
            costs[j] = 0.0
            continue
        generated = n * airtimes[j]
        totals = np.minimum(loads[:, j] + generated * psr_set[j].at(d), 1.0)
        costs[j] = max(0.0, float(totals.max()))
    return costs


def select_rat(costs: Sequence[float], current: int, alpha: float, candidates=None) -> int:
    """
    Cheapest candidate (lowest id on ties), kept only if it beats the current
    RAT by strictly more than ``alpha``.  A current RAT outside a non-empty
    candidate set is always left.
    """
    costs = np.asarray(costs, dtype=float)
    pool = sorted(range(len(costs)) if candidates is None else candidates)
    if not pool:
        return current
    best = min(pool, key=lambda j: (costs[j], j))
    if current not in pool:
        return best
    if best != current and costs[current] - costs[best] > alpha:
        return best
    return current


def next_trigger_delay(t_update: float, n_changes: int, rng: np.random.Generator) -> float:
    """Uniform on [T_update, T_update * (n_changes + 1)]."""
    if t_update <= 0:
        raise ConfigurationError("T_update must be > 0")
    if n_changes <= 0:
        return t_update
    return float(rng.uniform(t_update, t_update * (n_changes + 1)))


def tick(state: SelectionState, table: ContextTable, inputs: SelectionInputs, now: float,
         rng: np.random.Generator, received_flag: Optional[int] = None) -> TickResult:
    """
    Advance one vehicle's selection state machine.

    With ``received_flag`` set, the call records a CIS flag: any value > 0 arms
    one postponement and relays the flag decremented.  Otherwise it is the
    evaluation timer firing at ``now``.
    """
    timers = inputs.timers
    if received_flag is not None:
        if received_flag > 0:
            state.postponed = True
            relay = received_flag - 1
            if relay > 0:
                state.outgoing_flag = max(state.outgoing_flag, relay)
                return TickResult(state, outgoing_flag=state.outgoing_flag)
        return TickResult(state)

    if state.postponed:
        state.postponed = False
        state.next_eval_time = now + timers.t_meas
        return TickResult(state)

    prune_stale(table, now, timers.t_neigh)
    candidates = preselect(inputs.catalog, inputs.link_curves, inputs.measured_cbr,
                           state.target_distance, state.reliability)
    state.last_candidates = candidates
    if not candidates:
        state.n_changes = 0
        state.next_eval_time = now + next_trigger_delay(timers.t_update, 0, rng)
        return TickResult(state, evaluated=True, no_feasible=True)

    costs = estimate_costs(table, candidates, inputs.psr_set, inputs.packet_rate,
                           inputs.airtimes, inputs.own_position, inputs.distance)
    chosen = select_rat(costs, state.current_rat, timers.alpha, candidates)
    result = TickResult(state, evaluated=True)
    if chosen != state.current_rat:
        state.current_rat = chosen
        state.n_changes += 1
        state.outgoing_flag = FLAG_ORIGIN
        result.changed_to = chosen
        result.outgoing_flag = FLAG_ORIGIN
    else:
        state.n_changes = 0
    state.next_eval_time = now + next_trigger_delay(timers.t_update, state.n_changes, rng)
    return result


class CarhetEngine:
    """Context table, selection state and inputs of a single vehicle."""

    def __init__(self, vehicle_id: int, state: SelectionState, inputs: SelectionInputs,
                 geo: GeoFrame = DEFAULT_GEO):
        self.vehicle_id = vehicle_id
        self.state = state
        self.inputs = inputs
        self.geo = geo
        n_rat = len(inputs.catalog)
        self.table = ContextTable(owner_id=vehicle_id, n_rat=n_rat, own_cbr=(0.0,) * n_rat)

    def observe(self, now: float, position, measured_cbr) -> None:
        """Refresh the vehicle's own position and last measured loads."""
        self.inputs.own_position = position
        self.inputs.measured_cbr = measured_cbr
        self.table.own_position = tuple(position)
        self.table.own_cbr = tuple(measured_cbr)

    def on_cis(self, packet: CisPacket, now: float, rng: np.random.Generator) -> TickResult:
        ingest_cis(self.table, packet, now, self.geo)
        return tick(self.state, self.table, self.inputs, now, rng, received_flag=packet.flag_hops_remaining)

    def on_timer(self, now: float, rng: np.random.Generator) -> TickResult:
        return tick(self.state, self.table, self.inputs, now, rng)

    def build_packet(self, now: float) -> CisPacket:
        prune_stale(self.table, now, self.inputs.timers.t_neigh)
        own = make_row(self.vehicle_id, now, self.table.own_position, self.table.own_cbr, self.geo)
        return build_cis(self.table, self.vehicle_id, own, self.state.take_outgoing_flag(), now, self.geo)
