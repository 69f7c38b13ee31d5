"""Simulator tests: closed loops against the model, determinism, geometry."""

import numpy as np
import pytest

from locsync import model, simulate
from locsync.constants import SPEED_OF_LIGHT as C
from locsync.errors import ModelError, ProtocolError, TopologyError
from locsync.model import NodeState
from locsync.simulate import (
    Trajectory,
    TruthWorld,
    advance_world,
    build_schedule,
    default_mobile_loop,
    local_clock,
    make_world,
    room8_layout,
    simulate_epoch,
    simulate_exchange,
)
from locsync.topology import build_topology

ROWS = ("d", "r", "R")


def quiet_world(positions, rng, **kw):
    kw.setdefault("timestamp_std", 0.0)
    kw.setdefault("offset_density", 0.0)
    kw.setdefault("bias_density", 0.0)
    return make_world(positions, rng, **kw)


def fixed_world(states, **kw):
    kw.setdefault("timestamp_std", 0.0)
    return TruthWorld(time=0.0, states=tuple(states),
                      trajectories=(None,) * len(states), **kw)


class TestWorldConstruction:
    def test_master_clock_exactly_zero(self):
        rng = np.random.default_rng(0)
        w = make_world(room8_layout(), rng)
        assert w.states[0].o == 0.0 and w.states[0].b == 0.0

    def test_init_draws_within_ranges(self):
        rng = np.random.default_rng(1)
        w = make_world(room8_layout(), rng, offset_range=5e-5, bias_range=1e-6)
        for s in w.states[1:]:
            assert abs(s.o) <= 5e-5
            assert abs(s.b) <= 1e-6

    def test_advance_integrates_bias(self):
        s = (NodeState(p=np.zeros(3), o=0.0, b=0.0),
             NodeState(p=np.array([1.0, 0, 0]), o=0.0, b=2e-6))
        w = fixed_world(s, offset_density=0.0, bias_density=0.0)
        w2 = advance_world(w, 0.5, np.random.default_rng(2))
        assert w2.states[1].o == pytest.approx(1e-6, rel=1e-12)
        assert w2.states[1].b == 2e-6
        assert w2.time == 0.5

    def test_advance_keeps_master_pinned(self):
        rng = np.random.default_rng(3)
        w = make_world(room8_layout(), rng)
        for _ in range(10):
            w = advance_world(w, 0.5, rng)
        assert w.states[0].o == 0.0 and w.states[0].b == 0.0

    def test_advance_static_positions(self):
        rng = np.random.default_rng(4)
        w = make_world(room8_layout(), rng)
        w2 = advance_world(w, 1.0, rng)
        np.testing.assert_array_equal(w2.positions(), w.positions())

    def test_determinism(self):
        def run(seed):
            rng = np.random.default_rng(seed)
            w = make_world(room8_layout(), rng)
            out = []
            for _ in range(5):
                w = advance_world(w, 0.5, rng)
                out.append(w.state_matrix())
            return np.concatenate(out)

        np.testing.assert_array_equal(run(7), run(7))

    def test_mobile_follows_trajectory(self):
        traj = default_mobile_loop()
        pos = np.vstack([room8_layout(), [[0.0, 0.0, 0.0]]])
        rng = np.random.default_rng(5)
        w = make_world(pos, rng, trajectories=[None] * 8 + [traj])
        np.testing.assert_allclose(w.states[8].p, traj.position(0.0))
        w2 = advance_world(w, 2.0, rng)
        np.testing.assert_allclose(w2.states[8].p, traj.position(2.0))


class TestTrajectory:
    def test_open_path_parks_at_end(self):
        t = Trajectory(waypoints=np.array([[0.0, 0, 0], [1.0, 0, 0]]),
                       speed=1.0, closed=False)
        np.testing.assert_allclose(t.position(0.5), [0.5, 0, 0])
        np.testing.assert_allclose(t.position(10.0), [1.0, 0, 0])

    def test_loop_periodicity(self):
        t = default_mobile_loop()
        period = t.total_length / t.speed
        np.testing.assert_allclose(t.position(0.0), t.position(period),
                                   atol=1e-12)
        np.testing.assert_allclose(t.position(3.0), t.position(3.0 + period),
                                   atol=1e-12)

    def test_loop_arc_length(self):
        t = default_mobile_loop()
        assert t.total_length == pytest.approx(22.0)
        # first corner is 6 m away, reached at 12 s at 0.5 m/s
        np.testing.assert_allclose(t.position(12.0), [8.0, 1.5, 2.0], atol=1e-12)

    def test_single_waypoint_static(self):
        t = Trajectory(waypoints=np.array([[1.0, 2.0, 3.0]]), speed=1.0)
        np.testing.assert_allclose(t.position(5.0), [1.0, 2.0, 3.0])

    def test_speed_validation(self):
        with pytest.raises(ModelError):
            Trajectory(waypoints=np.zeros((2, 3)), speed=-1.0)


class TestExchangeClosedLoops:
    """Zero noise, zero bias: records must reproduce the model exactly."""

    def two_node_world(self, dist, offsets=(0.0, 5e-5), biases=(0.0, 0.0), **kw):
        s = (NodeState(p=np.zeros(3), o=offsets[0], b=biases[0]),
             NodeState(p=np.array([dist, 0.0, 0.0]), o=offsets[1], b=biases[1]))
        return fixed_world(s, **kw)

    def test_type3_recovers_distance(self):
        w = self.two_node_world(3.0)
        ex = simulate_exchange(w, 0, 1, 3, np.random.default_rng(6))
        assert model.ds_twr(ex) == pytest.approx(3.0, rel=1e-9)

    def test_counter_difference_sign(self):
        w = self.two_node_world(0.0, offsets=(0.0, 7e-6))
        ex = simulate_exchange(w, 0, 1, 1, np.random.default_rng(7))
        assert model.counter_difference(ex) == pytest.approx(7e-6, rel=1e-12)
        ex_rev = simulate_exchange(w, 1, 0, 1, np.random.default_rng(8))
        assert model.counter_difference(ex_rev) == pytest.approx(-7e-6, rel=1e-12)

    def test_counter_difference_with_range(self):
        w = self.two_node_world(3.0, offsets=(0.0, 3e-6))
        ex = simulate_exchange(w, 0, 1, 1, np.random.default_rng(9))
        assert model.counter_difference(ex) == pytest.approx(3e-6 + 3.0 / C,
                                                             rel=1e-12)

    def test_all_types_match_prediction(self):
        rng = np.random.default_rng(10)
        for msg_type in (1, 2, 3):
            for _ in range(20):
                dist = float(rng.uniform(0.5, 12.0))
                w = self.two_node_world(dist,
                                        offsets=(float(rng.uniform(-1e-4, 1e-4)),
                                                 float(rng.uniform(-1e-4, 1e-4))))
                ex = simulate_exchange(w, 0, 1, msg_type, rng)
                rows = model.available_rows(msg_type)
                got = model.measurement_from_record(ex, rows).as_array(rows)
                want = model.predict_measurement(w.states[0], w.states[1],
                                                 ex, rows).as_array(rows)
                np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-15)

    def test_biased_clock_first_order_profile(self):
        # 5 m truth, +2 ppm receiver bias, 1 ms turnaround: the one-trip
        # range formula inherits the documented first-order error profile
        w = self.two_node_world(5.0, offsets=(0.0, 0.0), biases=(0.0, 2e-6),
                                turnaround_range=(1e-3, 1e-3))
        ex = simulate_exchange(w, 0, 1, 2, np.random.default_rng(11))
        hand = 5.0 * (1 + 2e-6) + (C / 2) * 2e-6 * 1e-3
        assert model.ss_twr(ex) == pytest.approx(hand, abs=1e-9)
        assert model.ss_twr(ex) == pytest.approx(5.2998, abs=5e-4)
        # and the model prediction matches to first order in bias
        pred = model.predict_measurement(w.states[0], w.states[1], ex, ("r",))
        assert model.ss_twr(ex) == pytest.approx(pred.r, abs=2e-5)

    def test_master_stamps_are_true_time(self):
        w = self.two_node_world(2.0, offsets=(0.0, 4e-5))
        ex = simulate_exchange(w, 0, 1, 3, np.random.default_rng(12))
        # master (node 0) holds t0, t3, t4; zero noise makes them true times
        tof = 2.0 / C
        assert ex.t0 == 0.0
        assert ex.t3 == pytest.approx(ex.t2 - 4e-5 + tof, rel=1e-12)

    def test_noise_statistics(self):
        rng = np.random.default_rng(13)
        w = self.two_node_world(5.0, offsets=(0.0, 0.0), timestamp_std=0.3e-9)
        vals = np.array([model.ds_twr(simulate_exchange(w, 0, 1, 3, rng))
                         for _ in range(4000)])
        # mean within 3 sigma/sqrt(n) of truth
        sigma = vals.std()
        assert abs(vals.mean() - 5.0) < 3 * sigma / np.sqrt(len(vals))

    def test_stamp_monotonicity_per_clock(self):
        rng = np.random.default_rng(14)
        w = self.two_node_world(8.0, offsets=(-9e-5, 9e-5),
                                timestamp_std=0.3e-9)
        for _ in range(50):
            ex = simulate_exchange(w, 0, 1, 3, rng)
            assert ex.t0 < ex.t3 < ex.t4
            assert ex.t1 < ex.t2 < ex.t5
            assert ex.t_rnd0 > ex.t_rsp0 >= 0
            assert ex.t_rnd1 > ex.t_rsp1 >= 0

    def test_validation(self):
        w = self.two_node_world(1.0)
        rng = np.random.default_rng(15)
        with pytest.raises(ProtocolError):
            simulate_exchange(w, 0, 0, 3, rng)
        with pytest.raises(ProtocolError):
            simulate_exchange(w, 0, 1, 4, rng)
        topo = build_topology("explicit", n_nodes=2, edges=[(0, 1)])
        simulate_exchange(w, 0, 1, 3, rng, topology=topo)
        topo3 = build_topology("explicit", n_nodes=3, edges=[(0, 1), (1, 2)])
        w3 = fixed_world((w.states[0], w.states[1],
                          NodeState(p=np.array([0.0, 5.0, 0.0]), o=0.0, b=0.0)))
        with pytest.raises(TopologyError):
            simulate_exchange(w3, 0, 2, 3, rng, topology=topo3)


class TestScheduling:
    def test_one_exchange_per_edge(self):
        topo = build_topology("full", room8_layout())
        sched = build_schedule(topo, 3)
        assert len(sched) == 28
        assert sched == sorted(sched)
        assert all(m == 3 and i < j for i, j, m in sched)

    def test_epoch_batch(self):
        rng = np.random.default_rng(16)
        w = quiet_world(room8_layout(), rng)
        topo = build_topology("k_nearest", room8_layout(), k=2)
        records = simulate_epoch(w, topo, 3, rng)
        assert len(records) == len(topo.sorted_edges())
        for rec, (i, j) in zip(records, topo.sorted_edges()):
            assert (rec.sender_id, rec.receiver_id) == (i, j)


class TestLayout:
    def test_room8_constraints(self):
        pos = room8_layout()
        assert pos.shape == (8, 3)
        assert (np.abs(pos[:, 1] - 2.5) < 1e-12).sum() == 6
        assert (np.abs(pos[:, 1] - 1.0) < 1e-12).sum() == 2
        assert pos[:, 0].max() - pos[:, 0].min() <= 10.0
        assert pos[:, 2].max() - pos[:, 2].min() <= 9.0

    def test_room8_k4_degrees(self):
        topo = build_topology("k_nearest", room8_layout(), k=4)
        assert all(topo.degree(k) >= 4 for k in range(8))

    def test_full_graph_edge_count(self):
        topo = build_topology("full", room8_layout())
        assert len(topo.edges) == 28

    def test_collinear_k1_chain(self):
        pos = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        topo = build_topology("k_nearest", pos, k=1)
        assert topo.edges == frozenset({(0, 1), (1, 2)})

    def test_mobile_loop_inside_hull(self):
        pos = room8_layout()
        traj = default_mobile_loop()
        for t in np.linspace(0, 44, 89):
            p = traj.position(float(t))
            assert pos[:, 0].min() <= p[0] <= pos[:, 0].max()
            assert pos[:, 2].min() <= p[2] <= pos[:, 2].max()


class TestLocalClock:
    def test_affine_map(self):
        s = (NodeState(p=np.zeros(3), o=0.0, b=0.0),
             NodeState(p=np.ones(3), o=2e-5, b=1e-6))
        w = fixed_world(s)
        assert local_clock(w, 0, 3.0) == 3.0
        assert local_clock(w, 1, 3.0) == pytest.approx(3.0 + 2e-5 + 1e-6 * 3.0,
                                                       rel=1e-15)

    def test_continuity_across_advance(self):
        # offset integration keeps the clock continuous at epoch boundaries
        s = (NodeState(p=np.zeros(3), o=0.0, b=0.0),
             NodeState(p=np.ones(3), o=-4e-5, b=2e-6))
        w = fixed_world(s, offset_density=0.0, bias_density=0.0)
        before = local_clock(w, 1, 0.5)
        w2 = advance_world(w, 0.5, np.random.default_rng(17))
        after = local_clock(w2, 1, 0.5)
        assert after == pytest.approx(before, rel=1e-15)
