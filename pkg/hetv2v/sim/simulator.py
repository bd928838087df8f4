"""
Discrete-event simulation of a multi-RAT highway.

Every vehicle receives on all RATs and transmits on the one its selection
scheme picked: application packets at R / (8 * payload) Hz and, under
CARHet, a CIS packet every T_meas on the same RAT.  Channel load is sampled
globally every T_meas (the value each vehicle acts on) and per metrics
window after the warmup (the value reported).
"""
import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from hetv2v.config import SimConfig, assign_profiles
from hetv2v.core.link_curves import as_link_curves
from hetv2v.core.radio_model import derive_psr_set, packet_airtime
from hetv2v.errors import UsageError
from hetv2v.protocol.baselines import CARHET, RANDOM, initial_rat, random_selection
from hetv2v.protocol.carhet import CarhetEngine, SelectionInputs, SelectionState
from hetv2v.protocol.cis import decode_cis, encode_cis
from hetv2v.sim.events import Event, EventQueue
from hetv2v.sim.metrics import DeliveryLog, MetricsReport, compute_satisfaction, receiver_throughput
from hetv2v.sim.mobility import LANE_WIDTH, generate_mobility
from hetv2v.sim.network import CIS, DATA, BroadcastMedium, CsmaMac, Frame, Transmission

logger = logging.getLogger(__name__)


class Simulation:
    """One seeded run of a :class:`SimConfig`."""

    def __init__(self, config: SimConfig, link_curves=None):
        self.config = config
        self.catalog = list(config.catalog)
        self.n_rat = len(self.catalog)
        self.scheme = config.scheme
        self.timers = config.timers
        self.trajectories = generate_mobility(config, config.seed)
        self.n = len(self.trajectories)
        self.rng = np.random.default_rng([config.seed, 2])

        self.link_curves = None
        if self.scheme.kind == CARHET:
            if link_curves is None:
                raise UsageError("the carhet scheme needs PDR curve families (run `hetv2v calibrate`)")
            self.link_curves = as_link_curves(link_curves)
            missing = [p.id for p in self.catalog if p.id not in self.link_curves]
            if missing:
                raise UsageError(f"no PDR family for RAT(s) {missing}")

        rates = [p.rate_for(config.mcs_mode) for p in self.catalog]
        self.data_airtime = [packet_airtime(p, config.payload, r) for p, r in zip(self.catalog, rates)]
        self._rates = rates

        apps = config.app_profiles
        labels = assign_profiles(config, self.n, self.rng)
        self.app_rate = np.array([apps[k].rate_bps for k in labels], dtype=float)
        self.target = np.array([apps[k].target_distance for k in labels], dtype=float)
        self.reliability = np.array([apps[k].reliability for k in labels], dtype=float)
        self.period = 8.0 * config.payload / self.app_rate if self.n else np.zeros(0)
        self.current = np.array([initial_rat(self.scheme, self.n_rat, self.rng) for _ in range(self.n)],
                                dtype=np.int64)

        self.queue = EventQueue(0.0, config.sim_time)
        self.medium = BroadcastMedium(self.catalog, config.pathloss, self.n, self.trajectories.positions,
                                      config.road_length, self.rng, config.capture_margin)
        self.mac = CsmaMac(self.medium, self.queue, self.rng,
                           rat_of=lambda v: int(self.current[v]), airtime_of=self._airtime,
                           slots=config.backoff_slots, slot_time=config.slot_time,
                           queue_limit=config.queue_limit, on_drop=self._on_drop,
                           on_tx_start=self._on_tx_start, on_tx_end=self._on_tx_end)

        self.engines: Optional[List[CarhetEngine]] = None
        if self.scheme.kind == CARHET:
            psr_set = derive_psr_set(self.catalog, config.pathloss, max_distance=config.road_length / 2.0)
            self.engines = [
                CarhetEngine(v, SelectionState(int(self.current[v]), self.app_rate[v], self.target[v],
                                               self.reliability[v]),
                             SelectionInputs(self.catalog, self.link_curves, psr_set, self.data_airtime,
                                             self.app_rate[v] / (8.0 * config.payload), self.timers,
                                             distance=self._ring_metric))
                for v in range(self.n)
            ]

        self.measured = np.zeros((self.n_rat, self.n))
        self._busy_prev = np.zeros((self.n_rat, self.n))
        self._window_busy = None
        self._window_active = False
        self.log = DeliveryLog(self.n)
        self._windows: List[float] = []
        self._cbr: List[np.ndarray] = []
        self._throughput: List[np.ndarray] = []
        self._satisfied: List[np.ndarray] = []
        self._table_sizes: List[np.ndarray] = []
        self.changes = []
        self.counters: Dict[str, int] = {
            "events": 0, "app_packets": 0, "data_tx": 0, "cis_tx": 0, "drops": 0,
            "cis_rx": 0, "evaluations": 0, "queued_at_end": 0, "on_air_at_end": 0,
        }
        self.no_feasible = 0
        self.violations = 0
        self.cis_rx_bits = 0
        self.tx_log = [] if config.record_tx_log else None
        self._handlers: Dict[Event, Callable] = {
            Event.TX_END: lambda tx, now: self.mac.on_transmission_end(tx, now),
            Event.CBR_SAMPLE: self._on_cbr_sample,
            Event.METRICS_WINDOW: self._on_metrics_window,
            Event.EVALUATE: self._on_evaluate,
            Event.CIS_TIMER: self._on_cis_timer,
            Event.APP_PACKET: self._on_app_packet,
            Event.BACKOFF_DONE: lambda subject, now: self.mac.on_backoff_done(subject, now),
        }

    # -- geometry -----------------------------------------------------------

    def _ring_metric(self, own: np.ndarray, others: np.ndarray) -> np.ndarray:
        length = self.config.road_length
        dx = np.abs(others[:, 0] - own[0]) % length
        dx = np.minimum(dx, length - dx)
        return np.hypot(dx, others[:, 1] - own[1])

    def _position(self, v: int, now: float):
        x, lane, _ = self.trajectories(v, now)
        return x, lane * LANE_WIDTH

    def _airtime(self, frame: Frame, rat_id: int) -> float:
        if frame.kind == DATA:
            return self.data_airtime[rat_id]
        return packet_airtime(self.catalog[rat_id], frame.size_bytes, self._rates[rat_id])

    # -- event handlers -----------------------------------------------------

    def _schedule_initial(self) -> None:
        for v in range(self.n):
            self.queue.add_event(float(self.rng.uniform(0.0, self.period[v])), Event.APP_PACKET, v)
        if self.scheme.kind in (CARHET, RANDOM):
            for v in range(self.n):
                self.queue.add_event(float(self.rng.uniform(0.0, self.timers.t_update)), Event.EVALUATE, v)
        if self.engines is not None:
            for v in range(self.n):
                self.queue.add_event(float(self.rng.uniform(0.0, self.timers.t_meas)), Event.CIS_TIMER, v)
        self.queue.add_event(self.timers.t_meas, Event.CBR_SAMPLE, 1)
        self.queue.add_event(self.config.warmup, Event.METRICS_WINDOW, 0)

    def _on_app_packet(self, v: int, now: float) -> None:
        self.counters["app_packets"] += 1
        self.mac.enqueue(v, Frame(v, DATA, self.config.payload, now), now)
        self.queue.add_event(now + self.period[v], Event.APP_PACKET, v)

    def _observe(self, v: int, now: float) -> None:
        self.engines[v].observe(now, self._position(v, now), tuple(self.measured[:, v]))

    def _on_cis_timer(self, v: int, now: float) -> None:
        self._observe(v, now)
        wire = encode_cis(self.engines[v].build_packet(now))
        frame = Frame(v, CIS, len(wire), now, wire)
        self.mac.enqueue(v, frame, now)
        self.queue.add_event(now + self.timers.t_meas, Event.CIS_TIMER, v)

    def _change(self, v: int, now: float, new_rat: int) -> None:
        old = int(self.current[v])
        self.current[v] = new_rat
        if now >= self.config.warmup:
            self.changes.append((v, now, old, int(new_rat)))
        self.mac.rat_changed(v, now)

    def _on_evaluate(self, v: int, now: float) -> None:
        if self.engines is not None:
            self._observe(v, now)
            result = self.engines[v].on_timer(now, self.rng)
            if result.evaluated:
                self.counters["evaluations"] += 1
            if result.no_feasible and now >= self.config.warmup:
                self.no_feasible += 1
            if result.changed_to is not None:
                self._change(v, now, result.changed_to)
            self.queue.add_event(self.engines[v].state.next_eval_time, Event.EVALUATE, v)
            return
        self.counters["evaluations"] += 1
        chosen = random_selection(self.n_rat, self.rng)
        if chosen != self.current[v]:
            self._change(v, now, chosen)
        self.queue.add_event(now + self.timers.t_update, Event.EVALUATE, v)

    def _on_cbr_sample(self, k: int, now: float) -> None:
        busy = self.medium.busy_time_at(now)
        self.measured = np.clip((busy - self._busy_prev) / self.timers.t_meas, 0.0, 1.0)
        self._busy_prev = busy
        self.queue.add_event((k + 1) * self.timers.t_meas, Event.CBR_SAMPLE, k + 1)

    def _on_metrics_window(self, k: int, now: float) -> None:
        window = self.config.metrics_window
        busy = self.medium.busy_time_at(now)
        if k > 0:
            offered, delivered = self.log.close_window()
            self._windows.append(now - window)
            self._cbr.append(np.clip((busy - self._window_busy) / window, 0.0, 1.0).T)
            payload = self.config.payload
            self._throughput.append(np.array([
                receiver_throughput(offered, delivered, v, payload, window) for v in range(self.n)
            ]))
            satisfied = np.full(self.n, np.nan)
            for v in range(self.n):
                flag = compute_satisfaction(offered, delivered, v, self.reliability[v])
                if flag is not None:
                    satisfied[v] = float(flag)
            self._satisfied.append(satisfied)
            if self.engines is not None:
                self._table_sizes.append(np.array([e.table.hop_counts() for e in self.engines], dtype=float))
        else:
            self.log.discard_pending()
            self._window_active = True
        self._window_busy = busy
        self.queue.add_event(self.config.warmup + (k + 1) * window, Event.METRICS_WINDOW, k + 1)

    # -- MAC callbacks ------------------------------------------------------

    def _in_range(self, v: int, distance: np.ndarray) -> np.ndarray:
        receivers = np.flatnonzero(distance <= self.target[v])
        return receivers[receivers != v]

    def _on_tx_start(self, tx: Transmission, now: float) -> None:
        v = tx.sender
        if tx.frame.kind == DATA:
            self.counters["data_tx"] += 1
            tx.frame.payload = self._in_range(v, tx.distance)
        else:
            self.counters["cis_tx"] += 1
        if self.engines is not None:
            candidates = self.engines[v].state.last_candidates
            if candidates and tx.rat_id not in candidates:
                self.violations += 1
        if self.tx_log is not None:
            self.tx_log.append((v, tx.rat_id, tx.start, tx.end, tx.frame.kind))

    def _on_tx_end(self, tx: Transmission, receivers: np.ndarray, now: float) -> None:
        if tx.frame.kind == DATA:
            if self._window_active and tx.start >= self.config.warmup:
                in_range = tx.frame.payload
                delivered = np.intersect1d(receivers, in_range, assume_unique=True)
                self.log.record(tx.sender, in_range, delivered)
            return
        packet = decode_cis(tx.frame.payload, self.n_rat)
        self.counters["cis_rx"] += len(receivers)
        if self._window_active:
            self.cis_rx_bits += 8 * tx.frame.size_bytes * len(receivers)
        for r in receivers:
            self.engines[int(r)].on_cis(packet, now, self.rng)

    def _on_drop(self, frame: Frame, now: float) -> None:
        self.counters["drops"] += 1
        if frame.kind == DATA and self._window_active:
            distance = self.trajectories.distances_from(frame.sender, now)
            self.log.record(frame.sender, self._in_range(frame.sender, distance), np.zeros(0, dtype=np.int64))

    # -- run ----------------------------------------------------------------

    def run(self) -> MetricsReport:
        if self.n == 0:
            logger.info("no vehicles at density %.1f veh/km, nothing to simulate", self.config.density)
            return self._report()
        logger.info("simulating %s: %d vehicles, %.0f s", self.scheme.label(), self.n, self.config.sim_time)
        self._schedule_initial()
        while True:
            item = self.queue.next_event()
            if item is None:
                break
            time, event, subject = item
            self._handlers[event](subject, time)
        self.counters["events"] = self.queue.processed
        # data frames still queued or on air are excluded from every delivery ratio
        self.counters["queued_at_end"] = sum(f.kind == DATA for node in self.mac.nodes for f in node.queue)
        self.counters["on_air_at_end"] = sum(tx.frame.kind == DATA for txs in self.medium.ongoing for tx in txs)
        if self.no_feasible:
            logger.warning("%s at %.0f veh/km: %d evaluations found no feasible RAT",
                           self.scheme.label(), self.config.density, self.no_feasible)
        return self._report()

    def _report(self) -> MetricsReport:
        report = MetricsReport(
            scheme=self.scheme.label(),
            density=self.config.density,
            seed=self.config.seed,
            n_vehicles=self.n,
            n_rat=self.n_rat,
            window=self.config.metrics_window,
            payload=self.config.payload,
            app_rate=self.app_rate,
            changes=list(self.changes),
            no_feasible=self.no_feasible,
            preselection_violations=self.violations,
            counters=dict(self.counters),
            tx_log=self.tx_log,
        )
        if self._windows:
            report.window_starts = np.array(self._windows)
            report.cbr = np.stack(self._cbr)
            report.throughput = np.stack(self._throughput)
            report.window_satisfied = np.stack(self._satisfied)
            span = len(self._windows) * self.config.metrics_window
            report.cis_rx_bps = self.cis_rx_bits / (self.n * span)
        else:
            report.cbr = np.zeros((0, self.n, self.n_rat))
            report.throughput = np.zeros((0, self.n))
            report.window_satisfied = np.zeros((0, self.n))
        offered, delivered = self.log.totals()
        satisfied = np.full(self.n, np.nan)
        for v in range(self.n):
            flag = compute_satisfaction(offered, delivered, v, self.reliability[v])
            if flag is not None:
                satisfied[v] = float(flag)
        report.satisfied = satisfied
        if self._table_sizes:
            sizes = np.stack(self._table_sizes)
            report.mean_n1 = float(sizes[:, :, 0].mean())
            report.mean_n2 = float(sizes[:, :, 1].mean())
        return report


def run_simulation(config: SimConfig, link_curves=None) -> MetricsReport:
    return Simulation(config, link_curves).run()
