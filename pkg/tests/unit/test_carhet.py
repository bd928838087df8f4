import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

import math

import pytest
import numpy as np

from hetv2v.core.radio_model import packet_airtime
from hetv2v.errors import ConfigurationError
from hetv2v.protocol.carhet import (
    FLAG_ORIGIN,
    CarhetEngine,
    ProtocolTimers,
    SelectionInputs,
    SelectionState,
    estimate_costs,
    next_trigger_delay,
    planar_distance,
    preselect,
    select_rat,
    tick,
)
from hetv2v.protocol.cis import CisPacket, decode_cis, encode_cis, make_row
from hetv2v.protocol.context import ContextTable, NeighborEntry

PACKET_RATE = 1.0e6 / (8 * 1024)


@pytest.fixture
def airtimes(catalog):
    return [packet_airtime(p, 1024) for p in catalog]


@pytest.fixture
def inputs(catalog, link_curves, psr_set, airtimes):
    return SelectionInputs(catalog, link_curves, psr_set, airtimes, PACKET_RATE,
                           measured_cbr=(0.0,) * 5)


def one_hop_table(loads, t=10.0, x=10.0):
    table = ContextTable(owner_id=0, n_rat=len(loads[0]), own_cbr=(0.0,) * len(loads[0]))
    for i, cbr in enumerate(loads, start=1):
        table.entries[i] = NeighborEntry(i, 1, t, (x * i, 0.0), tuple(cbr), reception_time=t)
    return table


class TestPreselection:
    def test_all_rats_at_zero_load(self, catalog, link_curves):
        assert preselect(catalog, link_curves, [0.0] * 5, 40.0, 0.9) == frozenset(range(5))

    def test_loaded_rats_drop_out(self, catalog, link_curves):
        measured = [0.0, 0.5, 0.0, 0.5, 0.0]
        assert preselect(catalog, link_curves, measured, 40.0, 0.9) == frozenset({0, 2, 4})

    def test_wrong_length(self, catalog, link_curves):
        with pytest.raises(ConfigurationError):
            preselect(catalog, link_curves, [0.0] * 4, 40.0, 0.9)


class TestCostEstimation:
    def test_empty_table(self, psr_set, airtimes):
        table = ContextTable(owner_id=0, n_rat=5)
        costs = estimate_costs(table, {1, 3}, psr_set, PACKET_RATE, airtimes, (0.0, 0.0))
        assert list(costs) == [1.0, 0.0, 1.0, 0.0, 1.0]

    def test_matches_brute_force(self, psr_set, airtimes):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(1, 30))
            table = ContextTable(owner_id=0, n_rat=5)
            for i in range(1, n + 1):
                hop = int(rng.integers(1, 3))
                t = 5.0
                position = (float(rng.uniform(-600, 600)), float(rng.choice([0.0, 4.0, 8.0, 12.0])))
                cbr = tuple(float(c) for c in rng.uniform(0.0, 1.0, size=5))
                table.entries[i] = NeighborEntry(i, hop, t, position, cbr,
                                                 reception_time=t if hop == 1 else None)
            own = (float(rng.uniform(-600, 600)), 4.0)
            candidates = {int(j) for j in np.flatnonzero(rng.uniform(size=5) < 0.6)}
            costs = estimate_costs(table, candidates, psr_set, PACKET_RATE, airtimes, own)
            for j in range(5):
                if j not in candidates:
                    assert costs[j] == 1.0
                    continue
                worst = 0.0
                for entry in table.entries.values():
                    d = math.hypot(entry.position[0] - own[0], entry.position[1] - own[1])
                    load = min(entry.cbr_per_rat[j] + PACKET_RATE * airtimes[j] * psr_set[j].at(d), 1.0)
                    worst = max(worst, load)
                assert costs[j] == pytest.approx(worst, rel=1e-12, abs=1e-15)

    def test_costs_bounded(self, psr_set, airtimes):
        table = one_hop_table([(0.99,) * 5, (0.0,) * 5])
        costs = estimate_costs(table, range(5), psr_set, 1e6, airtimes, (0.0, 0.0))
        assert np.all(costs <= 1.0) and np.all(costs >= 0.0)

    def test_planar_distance(self):
        d = planar_distance(np.array([0.0, 0.0]), np.array([[3.0, 4.0], [0.0, -2.0]]))
        assert list(d) == [5.0, 2.0]


class TestSelection:
    def test_hysteresis(self):
        assert select_rat([0.5, 0.46, 0.9], current=0, alpha=0.05) == 0
        assert select_rat([0.5, 0.44, 0.9], current=0, alpha=0.05) == 1

    def test_ties_prefer_lowest_id(self):
        assert select_rat([0.9, 0.2, 0.2], current=0, alpha=0.05) == 1

    def test_current_outside_candidates_is_left(self):
        assert select_rat([0.3, 0.31, 1.0], current=0, alpha=0.05, candidates={1, 2}) == 1

    def test_empty_candidates_keep_current(self):
        assert select_rat([0.3, 0.1], current=0, alpha=0.05, candidates=set()) == 0

    def test_translation_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(2000):
            costs = rng.integers(0, 200, size=5) / 256.0
            shift = int(rng.integers(0, 56)) / 256.0
            current = int(rng.integers(0, 5))
            alpha = int(rng.integers(0, 20)) / 256.0
            assert select_rat(costs, current, alpha) == select_rat(costs + shift, current, alpha)

    def test_zero_alpha_takes_the_minimum(self):
        rng = np.random.default_rng(13)
        for _ in range(500):
            costs = rng.integers(0, 64, size=5) / 64.0
            chosen = select_rat(costs, int(rng.integers(0, 5)), 0.0)
            assert costs[chosen] == costs.min()


class TestTrigger:
    def test_no_changes(self):
        rng = np.random.default_rng(0)
        assert next_trigger_delay(1.0, 0, rng) == 1.0

    def test_mean_after_three_changes(self):
        rng = np.random.default_rng(0)
        draws = np.array([next_trigger_delay(1.0, 3, rng) for _ in range(100_000)])
        assert draws.min() >= 1.0 and draws.max() <= 4.0
        assert draws.mean() == pytest.approx(2.5, abs=0.02)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            next_trigger_delay(0.0, 1, np.random.default_rng(0))

    def test_timer_validation(self):
        with pytest.raises(ConfigurationError):
            ProtocolTimers(t_meas=0.0)
        with pytest.raises(ConfigurationError):
            ProtocolTimers(alpha=-0.1)


class TestTick:
    def test_moves_off_a_congested_rat(self, inputs):
        rng = np.random.default_rng(1)
        state = SelectionState(current_rat=1, app_rate=1e6, target_distance=40.0, reliability=0.9)
        table = one_hop_table([(0.1, 0.9, 0.1, 0.1, 0.1)] * 3)
        result = tick(state, table, inputs, now=10.0, rng=rng)
        assert result.evaluated and not result.no_feasible
        # both WiFi RATs cost the same, the lower id wins
        assert result.changed_to == 2
        assert state.current_rat == 2
        assert state.n_changes == 1
        assert state.outgoing_flag == FLAG_ORIGIN
        assert 11.0 <= state.next_eval_time <= 12.0
        assert state.last_candidates == frozenset(range(5))

    def test_stays_and_resets_change_count(self, inputs):
        rng = np.random.default_rng(1)
        state = SelectionState(current_rat=2, app_rate=1e6, target_distance=40.0, reliability=0.9, n_changes=3)
        table = one_hop_table([(0.1, 0.9, 0.1, 0.1, 0.1)] * 3)
        result = tick(state, table, inputs, now=10.0, rng=rng)
        assert result.changed_to is None
        assert state.n_changes == 0
        assert state.next_eval_time == 11.0

    def test_no_feasible_rat(self, inputs):
        inputs.measured_cbr = (0.6,) * 5
        state = SelectionState(current_rat=3, app_rate=1e6, target_distance=40.0, reliability=0.9)
        result = tick(state, ContextTable(owner_id=0, n_rat=5), inputs, now=4.0, rng=np.random.default_rng(2))
        assert result.no_feasible
        assert result.changed_to is None
        assert state.current_rat == 3
        assert state.next_eval_time == 5.0

    def test_flag_relay_and_postponement(self, inputs):
        rng = np.random.default_rng(3)
        table = ContextTable(owner_id=0, n_rat=5)
        relay = SelectionState(current_rat=0, app_rate=1e6, target_distance=40.0, reliability=0.9)
        result = tick(relay, table, inputs, now=1.0, rng=rng, received_flag=2)
        assert relay.postponed and result.outgoing_flag == 1
        assert relay.take_outgoing_flag() == 1 and relay.outgoing_flag == 0

        edge = SelectionState(current_rat=0, app_rate=1e6, target_distance=40.0, reliability=0.9)
        result = tick(edge, table, inputs, now=1.0, rng=rng, received_flag=1)
        assert edge.postponed and result.outgoing_flag is None
        assert edge.outgoing_flag == 0

        # the next timer expiry is consumed by the postponement
        result = tick(edge, table, inputs, now=1.5, rng=rng)
        assert not result.evaluated
        assert not edge.postponed
        assert edge.next_eval_time == pytest.approx(1.5 + inputs.timers.t_meas)

    def test_zero_flag_changes_nothing(self, inputs):
        state = SelectionState(current_rat=0, app_rate=1e6, target_distance=40.0, reliability=0.9)
        tick(state, ContextTable(owner_id=0, n_rat=5), inputs, now=1.0, rng=np.random.default_rng(0),
             received_flag=0)
        assert not state.postponed and state.outgoing_flag == 0


class TestEngine:
    def test_flag_travels_two_hops(self, inputs, catalog, link_curves, psr_set, airtimes):
        def engine(vid, rat):
            state = SelectionState(current_rat=rat, app_rate=1e6, target_distance=40.0, reliability=0.9)
            own_inputs = SelectionInputs(catalog, link_curves, psr_set, airtimes, PACKET_RATE)
            e = CarhetEngine(vid, state, own_inputs)
            e.observe(0.0, (10.0 * vid, 0.0), (0.0,) * 5)
            return e

        rng = np.random.default_rng(5)
        a, b, c = engine(1, 1), engine(2, 0), engine(3, 0)
        a.observe(1.0, (10.0, 0.0), (0.0, 0.9, 0.0, 0.0, 0.0))
        result = a.on_timer(1.0, rng)
        assert result.changed_to is not None and result.changed_to != 1

        packet = a.build_packet(1.0)
        assert packet.flag_hops_remaining == 2
        assert a.build_packet(1.2).flag_hops_remaining == 0

        b.on_cis(packet, 1.01, rng)
        assert b.state.postponed and 1 in b.table
        relayed = b.build_packet(1.2)
        assert relayed.flag_hops_remaining == 1
        assert {r.vehicle_id for r in relayed.rows} == {1, 2}

        c.on_cis(relayed, 1.21, rng)
        assert c.state.postponed
        assert c.build_packet(1.4).flag_hops_remaining == 0
        assert c.table.entries[1].hop_depth == 2

    def test_own_row_quantized(self, inputs):
        state = SelectionState(current_rat=0, app_rate=1e6, target_distance=40.0, reliability=0.9)
        engine = CarhetEngine(4, state, inputs)
        engine.observe(2.0, (100.0, 4.0), (0.2, 0.0, 0.0, 0.0, 1.0))
        packet = engine.build_packet(2.0)
        assert packet == CisPacket(4, 0, (make_row(4, 2.0, (100.0, 4.0), (0.2, 0.0, 0.0, 0.0, 1.0)),))

    def test_stale_neighbors_are_not_advertised(self, inputs):
        state = SelectionState(current_rat=0, app_rate=1e6, target_distance=40.0, reliability=0.9)
        engine = CarhetEngine(4, state, inputs)
        heard = CisPacket(9, 0, (make_row(9, 0.0, (30.0, 0.0), (0.1,) * 5),))
        engine.on_cis(heard, 0.0, np.random.default_rng(0))
        assert engine.build_packet(0.5).rows[1].vehicle_id == 9

        # no evaluation ran in between; the row is older than t_neigh at t=5
        engine.observe(5.0, (50.0, 0.0), (0.0,) * 5)
        packet = engine.build_packet(5.0)
        assert [row.vehicle_id for row in packet.rows] == [4]
        assert 9 not in engine.table

    def test_context_survives_the_wire(self, inputs, catalog, link_curves, psr_set, airtimes):
        rng = np.random.default_rng(6)
        sender = CarhetEngine(1, SelectionState(0, 1e6, 40.0, 0.9), inputs)
        sender.on_cis(CisPacket(7, 0, (make_row(7, 0.3, (60.0, 4.0), (0.5,) * 5),)), 0.3, rng)
        sender.observe(0.5, (10.0, 0.0), (0.2, 0.0, 0.4, 0.0, 1.0))
        packet = sender.build_packet(0.5)
        decoded = decode_cis(encode_cis(packet), len(catalog))
        assert decoded == packet

        receiver = CarhetEngine(2, SelectionState(0, 1e6, 40.0, 0.9),
                                SelectionInputs(catalog, link_curves, psr_set, airtimes, PACKET_RATE))
        receiver.on_cis(decoded, 0.51, rng)
        direct = receiver.table.entries[1]
        assert direct.hop_depth == 1 and direct.update_time == pytest.approx(0.51)
        assert direct.position == pytest.approx((10.0, 0.0), abs=0.01)
        assert direct.cbr_per_rat == pytest.approx((0.2, 0.0, 0.4, 0.0, 1.0), abs=1.0 / 255)
        relayed = receiver.table.entries[7]
        assert relayed.hop_depth == 2 and relayed.update_time == pytest.approx(0.3)
        assert relayed.position == pytest.approx((60.0, 4.0), abs=0.01)
