"""State/measurement model tests, anchored by a finite-difference oracle."""

import numpy as np
import pytest

from locsync import model
from locsync.constants import SPEED_OF_LIGHT as C
from locsync.errors import ModelError, ProtocolError, SingularityError
from locsync.model import ExchangeRecord, NodeState

ROWS = ("d", "r", "R")


def random_state(rng, pos_scale=10.0):
    return NodeState(
        p=rng.uniform(-pos_scale, pos_scale, 3),
        o=float(rng.uniform(-1e-4, 1e-4)),
        b=float(rng.uniform(-5e-6, 5e-6)),
    )


def random_exchange(rng):
    dist = float(rng.uniform(0.5, 20.0))
    tp = dist / C
    ta0 = float(rng.uniform(0.4e-3, 2.2e-3))
    ta1 = float(rng.uniform(0.4e-3, 2.2e-3))
    return ExchangeRecord.from_durations(
        sender_id=0, receiver_id=1, msg_type=3,
        t_rnd0=2 * tp + ta0, t_rsp0=ta0,
        t_rnd1=2 * tp + ta1, t_rsp1=ta1,
    )


class TestNodeState:
    def test_vector_round_trip(self):
        s = NodeState(p=np.array([1.0, 2.0, 3.0]), o=1e-6, b=2e-6)
        assert np.array_equal(NodeState.from_vector(s.as_vector()).as_vector(),
                              s.as_vector())

    def test_rejects_non_finite(self):
        with pytest.raises(ModelError):
            NodeState(p=np.array([np.nan, 0.0, 0.0]), o=0.0, b=0.0)
        with pytest.raises(ModelError):
            NodeState(p=np.zeros(3), o=np.inf, b=0.0)


class TestStateUpdate:
    def test_zero_bias_fixed_point(self):
        s = NodeState(p=np.array([1.0, 2.0, 3.0]), o=0.0, b=0.0)
        out = model.state_update(s, 1.0)
        assert np.array_equal(out.as_vector(), s.as_vector())

    def test_offset_integrates_bias(self):
        s = NodeState(p=np.zeros(3), o=1e-6, b=2e-6)
        out = model.state_update(s, 0.5)
        assert out.o == pytest.approx(2e-6, abs=0.0)
        assert out.b == 2e-6

    def test_zero_dt_identity(self):
        rng = np.random.default_rng(0)
        s = random_state(rng)
        assert np.array_equal(model.state_update(s, 0.0).as_vector(), s.as_vector())

    def test_negative_dt_rejected(self):
        with pytest.raises(ModelError):
            model.state_update(NodeState(p=np.zeros(3), o=0.0, b=0.0), -1.0)

    def test_flow_composition(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = random_state(rng)
            a, b = float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
            once = model.state_update(s, a + b)
            twice = model.state_update(model.state_update(s, a), b)
            np.testing.assert_allclose(twice.as_vector(), once.as_vector(),
                                       rtol=0, atol=1e-18)


class TestDurationFormulas:
    def test_counter_difference_equal_stamps(self):
        ex = ExchangeRecord(sender_id=0, receiver_id=1, msg_type=1,
                            t4=10.0, t5=10.0)
        assert model.counter_difference(ex) == 0.0

    def test_counter_difference_direct(self):
        ex = ExchangeRecord(sender_id=0, receiver_id=1, msg_type=1,
                            t4=5.0, t5=5.0000001)
        assert model.counter_difference(ex) == pytest.approx(1e-7, rel=1e-9)

    def test_counter_difference_missing_stamp(self):
        ex = ExchangeRecord(sender_id=0, receiver_id=1, msg_type=1, t4=5.0)
        with pytest.raises(ProtocolError):
            model.counter_difference(ex)

    def test_ss_twr_collapses_to_range(self):
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=2,
                                           t_rnd1=2 * (3.0 / C) + 1e-3,
                                           t_rsp1=1e-3)
        assert model.ss_twr(ex) == pytest.approx(3.0, abs=1e-9)

    def test_ss_twr_zero_slack(self):
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=2,
                                           t_rnd1=1e-3, t_rsp1=1e-3)
        assert model.ss_twr(ex) == 0.0

    def test_ss_twr_negative_slack_rejected(self):
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=2,
                                           t_rnd1=1e-3, t_rsp1=2e-3)
        with pytest.raises(ProtocolError):
            model.ss_twr(ex)

    def test_ds_twr_zero_response(self):
        tp = 10.0 / C
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                           t_rnd0=2 * tp, t_rsp0=0.0,
                                           t_rnd1=2 * tp, t_rsp1=0.0)
        assert model.ds_twr(ex) == pytest.approx(10.0, abs=1e-9)

    def test_ds_twr_equal_durations(self):
        tau = 7e-4
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                           t_rnd0=tau, t_rsp0=tau,
                                           t_rnd1=tau, t_rsp1=tau)
        assert model.ds_twr(ex) == 0.0

    def test_ds_twr_asymmetric_responses(self):
        tp = 4.0 / C
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                           t_rnd0=2 * tp + 0.5e-3, t_rsp0=0.5e-3,
                                           t_rnd1=2 * tp + 0.7e-3, t_rsp1=0.7e-3)
        assert model.ds_twr(ex) == pytest.approx(4.0, abs=1e-9)

    def test_ds_twr_swap_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            tp = float(rng.uniform(1e-9, 1e-7))
            a0, a1 = rng.uniform(1e-4, 2e-3, 2)
            fwd = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                                t_rnd0=2 * tp + a0, t_rsp0=a0,
                                                t_rnd1=2 * tp + a1, t_rsp1=a1)
            rev = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                                t_rnd0=2 * tp + a1, t_rsp0=a1,
                                                t_rnd1=2 * tp + a0, t_rsp1=a0)
            # stamp synthesis rounds durations by ~1 ulp; the formula's
            # conditioning amplifies that to ~1e-11 relative
            assert model.ds_twr(fwd) == pytest.approx(model.ds_twr(rev), rel=1e-9)

    def test_ds_twr_nonpositive_denominator(self):
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                           t_rnd0=0.0, t_rsp0=0.0,
                                           t_rnd1=0.0, t_rsp1=0.0)
        with pytest.raises(ProtocolError):
            model.ds_twr(ex)


class TestPredictMeasurement:
    def test_identical_clocks(self):
        xk = NodeState(p=np.zeros(3), o=3e-6, b=1e-6)
        xj = NodeState(p=np.array([3.0, 4.0, 0.0]), o=3e-6, b=1e-6)
        ex = random_exchange(np.random.default_rng(3))
        mv = model.predict_measurement(xk, xj, ex)
        assert mv.d == pytest.approx(5.0 / C, rel=1e-12)
        assert mv.r == pytest.approx(5.0, rel=1e-12)
        assert mv.R == pytest.approx(5.0, rel=1e-12)

    def test_equal_bias_rows_agree_with_range(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            xk = random_state(rng)
            xj = NodeState(p=rng.uniform(-10, 10, 3), o=float(rng.uniform(-1e-4, 1e-4)),
                           b=xk.b)
            ex = random_exchange(rng)
            mv = model.predict_measurement(xk, xj, ex)
            dist = float(np.linalg.norm(xj.p - xk.p))
            assert mv.r == pytest.approx(dist, rel=1e-12)
            assert mv.R == pytest.approx(dist, rel=1e-12)

    def test_rate_correction_hand_value(self):
        # direct scalar evaluation of the type-3 correction term
        chi = 2e-6
        rnd0, rsp0 = 2e-8 + 1e-3, 1e-3
        rnd1, rsp1 = 2e-8 + 1.3e-3, 1.3e-3
        num = chi * (rnd0 * rnd1 - rsp0 * rsp1)
        den = (rnd0 + rnd1 + rsp0 + rsp1) + chi * (rnd0 + rsp1)
        expected = num / den
        xk = NodeState(p=np.zeros(3), o=0.0, b=2e-6)
        xj = NodeState(p=np.array([2e-8 * C / 2, 0, 0]), o=0.0, b=0.0)
        ex = ExchangeRecord.from_durations(sender_id=0, receiver_id=1, msg_type=3,
                                           t_rnd0=rnd0, t_rsp0=rsp0,
                                           t_rnd1=rnd1, t_rsp1=rsp1)
        mv = model.predict_measurement(xk, xj, ex)
        dist = float(np.linalg.norm(xj.p - xk.p))
        assert mv.R == pytest.approx(dist + C * expected, rel=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            xk, xj = random_state(rng), random_state(rng)
            ex = random_exchange(rng)
            shift = rng.uniform(-50, 50, 3)
            mv0 = model.predict_measurement(xk, xj, ex)
            mv1 = model.predict_measurement(
                NodeState(p=xk.p + shift, o=xk.o, b=xk.b),
                NodeState(p=xj.p + shift, o=xj.o, b=xj.b), ex)
            np.testing.assert_allclose(mv1.as_array(ROWS), mv0.as_array(ROWS),
                                       rtol=1e-12)

    def test_row_subset(self):
        rng = np.random.default_rng(6)
        xk, xj = random_state(rng), random_state(rng)
        ex = random_exchange(rng)
        mv = model.predict_measurement(xk, xj, ex, rows=("d",))
        assert mv.r is None and mv.R is None and mv.d is not None


def fd_jacobian_h(xk, xj, ex, rows, wrt="sender"):
    """Central finite differences of the measurement prediction."""
    steps = np.array([1e-6, 1e-6, 1e-6, 1e-8, 1e-9])
    base = xk.as_vector() if wrt == "sender" else xj.as_vector()
    out = np.zeros((len(rows), 5))
    for i in range(5):
        hi, lo = base.copy(), base.copy()
        hi[i] += steps[i]
        lo[i] -= steps[i]
        if wrt == "sender":
            f_hi = model.predict_measurement(NodeState.from_vector(hi), xj, ex, rows)
            f_lo = model.predict_measurement(NodeState.from_vector(lo), xj, ex, rows)
        else:
            f_hi = model.predict_measurement(xk, NodeState.from_vector(hi), ex, rows)
            f_lo = model.predict_measurement(xk, NodeState.from_vector(lo), ex, rows)
        out[:, i] = (f_hi.as_array(rows) - f_lo.as_array(rows)) / (2 * steps[i])
    return out


class TestJacobians:
    def test_f_structure(self):
        rng = np.random.default_rng(7)
        s = random_state(rng)
        dt = 0.5
        f = model.jacobian_F(s, dt)
        expected = np.eye(5)
        expected[3, 4] = dt
        assert np.array_equal(f, expected)

    def test_affine_term_zero(self):
        rng = np.random.default_rng(8)
        s = random_state(rng)
        np.testing.assert_allclose(model.state_affine_term(s, 0.7), np.zeros(5),
                                   atol=1e-18)

    def test_f_matches_flow(self):
        # f is affine, so F x + u must reproduce state_update exactly
        rng = np.random.default_rng(9)
        for _ in range(20):
            s = random_state(rng)
            dt = float(rng.uniform(0, 2))
            flow = model.state_update(s, dt).as_vector()
            lin = model.jacobian_F(s, dt) @ s.as_vector() + model.state_affine_term(s, dt)
            np.testing.assert_allclose(lin, flow, rtol=0, atol=1e-18)

    def test_h_row_d_unit_direction(self):
        xk = NodeState(p=np.zeros(3), o=0.0, b=0.0)
        xj = NodeState(p=np.array([1.0, 0.0, 0.0]), o=0.0, b=0.0)
        ex = random_exchange(np.random.default_rng(10))
        h = model.jacobian_H(xk, xj, ex, rows=("d",))
        np.testing.assert_allclose(h[0, :3], [-1.0 / C, 0.0, 0.0], rtol=1e-12)
        assert h[0, 3] == -1.0
        assert h[0, 4] == 0.0

    def test_h_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            xk, xj = random_state(rng), random_state(rng)
            ex = random_exchange(rng)
            h = model.jacobian_H(xk, xj, ex, ROWS)
            fd = fd_jacobian_h(xk, xj, ex, ROWS)
            np.testing.assert_allclose(h, fd, rtol=1e-5, atol=1e-12)

    def test_receiver_jacobian_is_negation(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            xk, xj = random_state(rng), random_state(rng)
            ex = random_exchange(rng)
            h = model.jacobian_H(xk, xj, ex, ROWS)
            fd_recv = fd_jacobian_h(xk, xj, ex, ROWS, wrt="receiver")
            np.testing.assert_allclose(-h, fd_recv, rtol=1e-5, atol=1e-12)

    def test_coincident_positions_raise(self):
        s = NodeState(p=np.ones(3), o=0.0, b=0.0)
        ex = random_exchange(np.random.default_rng(13))
        with pytest.raises(SingularityError):
            model.jacobian_H(s, s, ex, ROWS)


class TestMeasurementNoise:
    def test_counter_difference_variance(self):
        ex = random_exchange(np.random.default_rng(14))
        cov = model.measurement_noise_cov(ex, ("d",), 1e-9)
        assert cov[0, 0] == pytest.approx(2e-18, rel=1e-12)

    def test_ss_twr_variance(self):
        ex = random_exchange(np.random.default_rng(15))
        cov = model.measurement_noise_cov(ex, ("r",), 1e-9)
        assert cov[0, 0] == pytest.approx(C ** 2 * 1e-18, rel=1e-12)

    def test_monte_carlo_covariance(self):
        # empirical stamp-noise propagation vs the analytic first-order one
        rng = np.random.default_rng(16)
        base = random_exchange(rng)
        sigma = 1e-10
        stamps = np.array([base.t0, base.t1, base.t2, base.t3, base.t4, base.t5])
        n = 40000
        vals = np.zeros((n, 3))
        for i in range(n):
            noisy = stamps + sigma * rng.standard_normal(6)
            ex = ExchangeRecord(sender_id=0, receiver_id=1, msg_type=3,
                                t0=noisy[0], t1=noisy[1], t2=noisy[2],
                                t3=noisy[3], t4=noisy[4], t5=noisy[5])
            mv = model.measurement_from_record(ex)
            vals[i] = mv.as_array(ROWS)
        emp = np.cov(vals.T)
        ana = model.measurement_noise_cov(base, ROWS, sigma)
        np.testing.assert_allclose(emp, ana, rtol=0.08)

    def test_requires_positive_std(self):
        ex = random_exchange(np.random.default_rng(17))
        with pytest.raises(ModelError):
            model.measurement_noise_cov(ex, ROWS, 0.0)
