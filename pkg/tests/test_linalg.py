"""Structured-matrix kernel tests against dense oracles."""

import numpy as np
import pytest

from locsync import linalg
from locsync.errors import AlignmentError, NumericalError


def random_spd(rng, n, cond_boost=1.0):
    a = rng.standard_normal((n, n))
    return a @ a.T + cond_boost * n * np.eye(n)


def markov_covariance(rng, n, rho):
    """SPD covariance with exactly tridiagonal inverse, mixed scales."""
    s = 10.0 ** rng.uniform(-3, 1, n)
    idx = np.arange(n)
    return np.outer(s, s) * rho ** np.abs(idx[:, None] - idx[None, :])


class TestBinomialUpdateChain:
    def test_empty_terms_identity(self):
        rng = np.random.default_rng(0)
        p = random_spd(rng, 6)
        np.testing.assert_allclose(linalg.binomial_update_chain(p, []), p,
                                   rtol=1e-15)

    def test_scalar_case(self):
        one = np.array([[1.0]])
        out = linalg.binomial_update_chain(np.array([[2.0]]), [(one, one, one)])
        assert out[0, 0] == pytest.approx(2.0 / 3.0, rel=1e-14)

    def test_matches_dense_information_form(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(4, 16))
            p = random_spd(rng, n)
            info = np.linalg.inv(p)
            terms = []
            for _ in range(int(rng.integers(1, 5))):
                m = int(rng.integers(1, 4))
                h = rng.standard_normal((m, n))
                w = rng.standard_normal((m, m))
                b = w @ w.T + np.eye(m)
                terms.append((h.T, b, h))
                info = info + h.T @ b @ h
            dense = np.linalg.inv(info)
            got = linalg.binomial_update_chain(p, terms)
            rel = np.linalg.norm(got - dense) / np.linalg.norm(dense)
            assert rel < 1e-9

    def test_result_spd(self):
        rng = np.random.default_rng(2)
        p = random_spd(rng, 10)
        h = rng.standard_normal((3, 10))
        b = np.eye(3)
        out = linalg.binomial_update_chain(p, [(h.T, b, h)])
        assert np.all(np.linalg.eigvalsh(out) > 0)

    def test_singular_inner_reports_term(self):
        # after term 0 the running Q is 1/2, so B = -2 zeroes term 1's
        # inner matrix exactly
        p = np.array([[1.0]])
        one = np.array([[1.0]])
        with pytest.raises(NumericalError, match="term 1"):
            linalg.binomial_update_chain(p, [(one, one, one),
                                             (one, np.array([[-2.0]]), one)])


class TestLbandApproxInverse:
    def test_diagonal_case(self):
        d = np.diag([2.0, 5.0, 0.5, 4.0])
        out = linalg.lband_approx_inverse(d, 2)
        np.testing.assert_allclose(out.as_array(), np.diag(1 / np.diag(d)),
                                   rtol=1e-14)

    def test_tridiagonal_recovery(self):
        t = (np.diag(2.0 * np.ones(8)) + np.diag(-1.0 * np.ones(7), 1)
             + np.diag(-1.0 * np.ones(7), -1))
        p = np.linalg.inv(t)
        out = linalg.lband_approx_inverse(p, 1)
        assert np.abs(out.as_array() - t).max() < 1e-8

    def test_markov_recovery_mixed_scales(self):
        rng = np.random.default_rng(3)
        p = markov_covariance(rng, 20, 0.55)
        j = np.linalg.inv(p)
        for L in (1, 5):
            out = linalg.lband_approx_inverse(p, L)
            rel = np.linalg.norm(out.as_array() - j) / np.linalg.norm(j)
            assert rel < 1e-8

    def test_full_band_is_exact_inverse(self):
        rng = np.random.default_rng(4)
        p = random_spd(rng, 9)
        out = linalg.lband_approx_inverse(p, 8)
        rel = (np.linalg.norm(out.as_array() - np.linalg.inv(p))
               / np.linalg.norm(np.linalg.inv(p)))
        assert rel < 1e-9

    def test_band_structure(self):
        rng = np.random.default_rng(5)
        p = random_spd(rng, 12)
        out = linalg.lband_approx_inverse(p, 3)
        idx = np.arange(12)
        off = np.abs(idx[:, None] - idx[None, :]) > 3
        assert np.all(out.as_array()[off] == 0.0)

    def test_singular_block_raises(self):
        with pytest.raises(NumericalError):
            linalg.lband_approx_inverse(np.ones((4, 4)), 1)

    def test_bad_bandwidth_rejected(self):
        rng = np.random.default_rng(6)
        p = random_spd(rng, 5)
        with pytest.raises(ValueError):
            linalg.lband_approx_inverse(p, 0)
        with pytest.raises(ValueError):
            linalg.lband_approx_inverse(p, 5)


class TestDiciOrInvert:
    def test_diagonal_exact_first_pass(self):
        j = np.diag([2.0, 4.0, 5.0, 0.5, 8.0, 1.0])
        for gamma in (0.0, 0.3, 1.0):
            out = linalg.dici_or_invert(j, gamma=gamma, iters=1, half_bandwidth=2)
            np.testing.assert_allclose(out, np.diag(1 / np.diag(j)), rtol=1e-14)

    def test_collapse_fill_formula(self):
        # gamma 0 freezes the band, so the off-band fill is the bare recursion
        warm = np.array([[2.0, 0.5, 0.0],
                         [0.5, 3.0, 0.7],
                         [0.0, 0.7, 1.5]])
        out = linalg.dici_or_invert(np.eye(3), p_prev=warm, gamma=0.0, iters=1,
                                    half_bandwidth=1)
        assert out[0, 2] == pytest.approx(0.5 * 0.7 / 3.0, rel=1e-14)
        assert out[2, 0] == out[0, 2]

    def test_full_band_converges_to_dense_inverse(self):
        rng = np.random.default_rng(7)
        n = 20
        w = rng.standard_normal((n, n))
        w = 0.5 * (w + w.T)
        j = np.eye(n) + 0.3 * w / np.linalg.norm(w, 2)
        inv = np.linalg.inv(j)
        out, hist = linalg.dici_or_invert(j, gamma=0.6, iters=60,
                                          return_history=True)
        errs = [np.linalg.norm(h - inv) / np.linalg.norm(inv) for h in hist]
        assert errs[-1] < 1e-6
        assert all(errs[i + 1] <= errs[i] + 1e-15 for i in range(len(errs) - 1))

    def test_banded_markov_oracle(self):
        # frozen kernel benchmark: Markov covariance, mixed scales, L=5
        # (measured 3.0e-2 relative after 10 passes; threshold 5e-2)
        rng = np.random.default_rng(3)
        p_true = markov_covariance(rng, 40, 0.4)
        j = np.linalg.inv(p_true)
        j = 0.5 * (j + j.T)
        out, hist = linalg.dici_or_invert(j, gamma=0.6, iters=10,
                                          half_bandwidth=5, return_history=True)
        errs = [np.linalg.norm(h - p_true) / np.linalg.norm(p_true) for h in hist]
        assert errs[-1] < 5e-2
        assert all(errs[i + 1] <= errs[i] + 1e-15 for i in range(len(errs) - 1))

    def test_warm_start_is_used(self):
        rng = np.random.default_rng(8)
        n = 12
        w = rng.standard_normal((n, n))
        w = 0.5 * (w + w.T)
        j = np.eye(n) + 0.3 * w / np.linalg.norm(w, 2)
        inv = np.linalg.inv(j)
        cold = linalg.dici_or_invert(j, gamma=0.6, iters=3)
        warm = linalg.dici_or_invert(j, p_prev=inv, gamma=0.6, iters=3)
        err_cold = np.linalg.norm(cold - inv)
        err_warm = np.linalg.norm(warm - inv)
        assert err_warm < err_cold

    def test_zero_diagonal_raises(self):
        j = np.diag([1.0, 0.0, 2.0])
        with pytest.raises(NumericalError):
            linalg.dici_or_invert(j, half_bandwidth=1)

    def test_parameter_validation(self):
        j = np.eye(4)
        with pytest.raises(ValueError):
            linalg.dici_or_invert(j, gamma=1.5)
        with pytest.raises(ValueError):
            linalg.dici_or_invert(j, iters=0)
        with pytest.raises(ValueError):
            linalg.dici_or_invert(j, half_bandwidth=0)

    def test_accepts_banded_matrix_input(self):
        rng = np.random.default_rng(9)
        p = markov_covariance(rng, 10, 0.5)
        banded = linalg.lband_approx_inverse(p, 1)
        out = linalg.dici_or_invert(banded, gamma=0.6, iters=40)
        rel = np.linalg.norm(out - p) / np.linalg.norm(p)
        assert rel < 1e-2


class TestProcrustesAlign:
    def rigid(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return q, rng.uniform(-5, 5, 3)

    def test_identity(self):
        rng = np.random.default_rng(10)
        truth = rng.uniform(0, 10, (8, 3))
        rot, trans, aligned = linalg.procrustes_align(truth.copy(), truth)
        np.testing.assert_allclose(rot, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(trans, np.zeros(3), atol=1e-11)
        np.testing.assert_allclose(aligned, truth, atol=1e-11)

    def test_pure_translation(self):
        rng = np.random.default_rng(11)
        truth = rng.uniform(0, 10, (6, 3))
        est = truth + np.array([1.0, 2.0, 3.0])
        rot, trans, aligned = linalg.procrustes_align(est, truth)
        np.testing.assert_allclose(rot, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(trans, [-1.0, -2.0, -3.0], atol=1e-11)
        np.testing.assert_allclose(aligned, truth, atol=1e-11)

    def test_recovers_known_rotation(self):
        rng = np.random.default_rng(12)
        truth = rng.uniform(0, 10, (12, 3))
        q, t = self.rigid(rng)
        est = truth @ q.T + t + 0.01 * rng.standard_normal((12, 3))
        rot, trans, aligned = linalg.procrustes_align(est, truth)
        # rot must invert q up to the noise floor
        angle = np.arccos(np.clip((np.trace(rot @ q) - 1) / 2, -1, 1))
        assert angle < 0.01
        rms = np.sqrt(((aligned - truth) ** 2).sum(axis=1).mean())
        assert rms < 0.05

    def test_residual_gauge_invariance(self):
        rng = np.random.default_rng(13)
        truth = rng.uniform(0, 10, (9, 3))
        est = truth + 0.1 * rng.standard_normal((9, 3))
        _, _, aligned0 = linalg.procrustes_align(est, truth)
        res0 = np.linalg.norm(aligned0 - truth)
        for _ in range(5):
            q, t = self.rigid(rng)
            _, _, aligned1 = linalg.procrustes_align(est @ q.T + t, truth)
            assert np.linalg.norm(aligned1 - truth) == pytest.approx(res0, rel=1e-9)

    def test_too_few_points(self):
        with pytest.raises(AlignmentError):
            linalg.procrustes_align(np.zeros((2, 3)), np.ones((2, 3)))

    def test_collinear_degenerate(self):
        line = np.outer(np.arange(5, dtype=float), [1.0, 0.0, 0.0])
        with pytest.raises(AlignmentError):
            linalg.procrustes_align(line, line)


class TestBandedMatrix:
    def test_rejects_out_of_band(self):
        a = np.eye(4)
        a[0, 3] = 0.1
        a[3, 0] = 0.1
        with pytest.raises(ValueError):
            linalg.BandedMatrix(data=a, half_bandwidth=1)

    def test_rejects_asymmetric(self):
        a = np.eye(4)
        a[0, 1] = 0.5
        with pytest.raises(ValueError):
            linalg.BandedMatrix(data=a, half_bandwidth=1)
