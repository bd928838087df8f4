"""
Shared broadcast medium and a CSMA MAC on top of it.

Every RAT is an independent broadcast channel.  A frame is sensed by a node
when its shadowed received power reaches the RAT's carrier-sense threshold
and is decodable when it reaches the reception threshold.  Two frames that
overlap in time on the same RAT destroy each other at every node where both
are decodable, unless a capture margin is configured.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, List, Optional, Sequence, Set, Tuple

import numpy as np

from hetv2v.core.radio_model import PathlossParams, RatProfile, mean_pathloss_db
from hetv2v.errors import ConfigurationError
from hetv2v.sim.events import Event, EventQueue
from hetv2v.sim.mobility import ring_distance

logger = logging.getLogger(__name__)

DATA = "data"
CIS = "cis"

BACKOFF_SLOTS = 16
SLOT_TIME = 50e-6

GeometryFn = Callable[[float], Tuple[np.ndarray, np.ndarray]]


@dataclass
class Frame:
    sender: int
    kind: str
    size_bytes: int
    created: float
    payload: Any = None


@dataclass(eq=False)
class Transmission:
    """One frame on air (the packet-level realisation of a load contribution)."""
    frame: Frame
    rat_id: int
    start: float
    airtime: float
    distance: np.ndarray
    power: np.ndarray
    sensed: np.ndarray
    ok: np.ndarray

    @property
    def sender(self) -> int:
        return self.frame.sender

    @property
    def end(self) -> float:
        return self.start + self.airtime


class BroadcastMedium:
    """Per-RAT busy tracking, interference and reception outcome bookkeeping."""

    def __init__(self, catalog: Sequence[RatProfile], params: PathlossParams, n_nodes: int,
                 geometry: GeometryFn, road_length: float, rng: np.random.Generator,
                 capture_margin: Optional[float] = None):
        self.catalog = list(catalog)
        self.params = params
        self.n_nodes = n_nodes
        self.geometry = geometry
        self.road_length = road_length
        self.rng = rng
        self.capture_margin = capture_margin
        n_rat = len(self.catalog)
        self.busy_count = np.zeros((n_rat, n_nodes), dtype=np.int64)
        self.busy_since = np.zeros((n_rat, n_nodes))
        self.busy_time = np.zeros((n_rat, n_nodes))
        self.tx_rat = np.full(n_nodes, -1, dtype=np.int64)
        self.ongoing: List[List[Transmission]] = [[] for _ in range(n_rat)]

    def is_busy(self, node: int, rat_id: int) -> bool:
        return self.busy_count[rat_id, node] > 0

    def is_transmitting(self, node: int) -> bool:
        return self.tx_rat[node] >= 0

    def busy_time_at(self, now: float) -> np.ndarray:
        """Accumulated busy time (n_rat, n_nodes), counting busy periods still open at ``now``."""
        open_part = np.where(self.busy_count > 0, now - self.busy_since, 0.0)
        return self.busy_time + open_part

    def start(self, frame: Frame, rat_id: int, now: float, airtime: float) -> Transmission:
        if airtime <= 0:
            raise ConfigurationError("airtime must be > 0")
        sender = frame.sender
        if self.tx_rat[sender] >= 0:
            raise RuntimeError(f"node {sender} already transmitting")
        profile = self.catalog[rat_id]
        x, y = self.geometry(now)
        distance = ring_distance(x[sender], y[sender], x, y, self.road_length)
        power = profile.tx_power - mean_pathloss_db(self.params, profile.carrier_freq, distance)
        if self.params.shadowing_sigma > 0:
            power = power + self.rng.normal(0.0, self.params.shadowing_sigma, size=self.n_nodes)
        power = np.atleast_1d(power)
        sensed = power >= profile.cs_threshold
        sensed[sender] = True
        strong = power >= profile.rx_threshold
        strong[sender] = False
        ok = strong & (self.tx_rat != rat_id)

        for other in self.ongoing[rat_id]:
            other.ok[sender] = False
            other_strong = other.power >= profile.rx_threshold
            both = strong & other_strong
            if self.capture_margin is None:
                ok &= ~other_strong
                other.ok &= ~strong
            else:
                ok &= ~(both & (power - other.power < self.capture_margin))
                other.ok &= ~(both & (other.power - power < self.capture_margin))

        rises = sensed & (self.busy_count[rat_id] == 0)
        self.busy_since[rat_id, rises] = now
        self.busy_count[rat_id] += sensed
        self.tx_rat[sender] = rat_id
        tx = Transmission(frame, rat_id, now, airtime, distance, power, sensed, ok)
        self.ongoing[rat_id].append(tx)
        return tx

    def finish(self, tx: Transmission, now: float) -> Tuple[np.ndarray, np.ndarray]:
        """End ``tx``; returns (receivers that decoded it, nodes whose channel went idle)."""
        rat_id = tx.rat_id
        self.ongoing[rat_id].remove(tx)
        self.busy_count[rat_id] -= tx.sensed
        idle = tx.sensed & (self.busy_count[rat_id] == 0)
        self.busy_time[rat_id, idle] += now - self.busy_since[rat_id, idle]
        self.tx_rat[tx.sender] = -1
        return np.flatnonzero(tx.ok), np.flatnonzero(idle)


IDLE, BACKOFF, WAIT, TX = "idle", "backoff", "wait", "tx"


@dataclass
class _NodeMac:
    queue: Deque[Frame] = field(default_factory=deque)
    state: str = IDLE
    rat_id: int = 0
    token: int = 0


class CsmaMac:
    """
    Non-persistent CSMA for every node: wait while the channel is sensed
    busy, then back off uniformly over ``slots`` slots, then transmit if the
    channel is still idle (otherwise wait again).  A node transmits on the
    RAT returned by ``rat_of`` at access time.
    """

    def __init__(self, medium: BroadcastMedium, queue: EventQueue, rng: np.random.Generator,
                 rat_of: Callable[[int], int], airtime_of: Callable[[Frame, int], float],
                 slots: int = BACKOFF_SLOTS, slot_time: float = SLOT_TIME, queue_limit: int = 2,
                 on_drop: Optional[Callable[[Frame, float], None]] = None,
                 on_tx_start: Optional[Callable[[Transmission, float], None]] = None,
                 on_tx_end: Optional[Callable[[Transmission, np.ndarray, float], None]] = None):
        if slots < 1 or slot_time < 0 or queue_limit < 1:
            raise ConfigurationError("invalid MAC parameters")
        self.medium = medium
        self.queue = queue
        self.rng = rng
        self.rat_of = rat_of
        self.airtime_of = airtime_of
        self.slots = slots
        self.slot_time = slot_time
        self.queue_limit = queue_limit
        self.on_drop = on_drop
        self.on_tx_start = on_tx_start
        self.on_tx_end = on_tx_end
        self.nodes = [_NodeMac() for _ in range(medium.n_nodes)]
        self.waiting: List[Set[int]] = [set() for _ in medium.catalog]
        self.transmissions = 0

    def enqueue(self, node: int, frame: Frame, now: float) -> None:
        mac = self.nodes[node]
        if frame.kind == CIS:
            stale = [f for f in mac.queue if f.kind == CIS]
            for f in stale:
                mac.queue.remove(f)
        else:
            data = [f for f in mac.queue if f.kind == DATA]
            if len(data) >= self.queue_limit:
                mac.queue.remove(data[0])
                if self.on_drop is not None:
                    self.on_drop(data[0], now)
        mac.queue.append(frame)
        if mac.state == IDLE:
            self._access(node, now)

    def _access(self, node: int, now: float) -> None:
        mac = self.nodes[node]
        mac.rat_id = self.rat_of(node)
        if self.medium.is_busy(node, mac.rat_id):
            mac.state = WAIT
            self.waiting[mac.rat_id].add(node)
        else:
            self._backoff(node, now)

    def _backoff(self, node: int, now: float) -> None:
        mac = self.nodes[node]
        mac.state = BACKOFF
        mac.token += 1
        delay = int(self.rng.integers(self.slots)) * self.slot_time
        self.queue.add_event(now + delay, Event.BACKOFF_DONE, (node, mac.token))

    def rat_changed(self, node: int, now: float) -> None:
        """Move a node that waits on its old RAT over to its new one."""
        mac = self.nodes[node]
        if mac.state == WAIT:
            self.waiting[mac.rat_id].discard(node)
            self._access(node, now)

    def on_backoff_done(self, subject, now: float) -> None:
        node, token = subject
        mac = self.nodes[node]
        if mac.state != BACKOFF or mac.token != token:
            return
        if not mac.queue:
            mac.state = IDLE
            return
        rat_id = self.rat_of(node)
        mac.rat_id = rat_id
        if self.medium.is_busy(node, rat_id):
            mac.state = WAIT
            self.waiting[rat_id].add(node)
            return
        frame = mac.queue.popleft()
        tx = self.medium.start(frame, rat_id, now, self.airtime_of(frame, rat_id))
        mac.state = TX
        self.transmissions += 1
        if self.on_tx_start is not None:
            self.on_tx_start(tx, now)
        self.queue.add_event(tx.end, Event.TX_END, tx)

    def on_transmission_end(self, tx: Transmission, now: float) -> None:
        receivers, idle = self.medium.finish(tx, now)
        waiting = self.waiting[tx.rat_id]
        if waiting:
            for node in idle:
                node = int(node)
                if node in waiting:
                    waiting.discard(node)
                    self._backoff(node, now)
        if self.on_tx_end is not None:
            self.on_tx_end(tx, receivers, now)
        mac = self.nodes[tx.sender]
        mac.state = IDLE
        if mac.queue:
            self._access(tx.sender, now)
