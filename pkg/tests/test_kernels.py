import numpy as np
import pytest

from dynpact import kernels
from dynpact.kernels import reference


def _random_setup(rng, n=40, q=5, p=64):
    vox = rng.uniform(-0.004, 0.004, size=(n, 3))
    chan = np.ascontiguousarray(
        0.012 * rng.normal(size=(q, 3))
        / np.linalg.norm(rng.normal(size=(q, 3)), axis=1, keepdims=True)
    )
    # keep channels a safe distance from every voxel
    chan += np.array([0.02, 0.0, 0.0])
    values = rng.normal(size=n)
    inv_step = 1.0 / (1495.0 * 4e-8)
    return values, vox, chan, inv_step, 4e-4**3, 4e-5, p


class TestBackendAgreement:
    def test_backend_identifier(self):
        assert kernels.BACKEND in ("compiled", "fallback")

    def test_spread_matches_reference_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            values, vox, chan, inv_step, amp, min_d, p = _random_setup(rng)
            got = kernels.spread(values, vox, chan, inv_step, amp, min_d, p)
            want = reference.spread(values, vox, chan, inv_step, amp, min_d, p)
            assert np.array_equal(np.asarray(got[0]), want[0])
            assert got[1] == pytest.approx(want[1], rel=1e-15)
            assert got[2] == pytest.approx(want[2], rel=1e-15)
            assert bool(got[3]) == want[3]

    def test_gather_matches_reference_exactly(self):
        rng = np.random.default_rng(12)
        values, vox, chan, inv_step, amp, min_d, p = _random_setup(rng)
        h = rng.normal(size=(chan.shape[0], p))
        for weighted in (0, 1):
            got = kernels.gather(h, vox, chan, inv_step, amp, min_d, weighted)
            want = reference.gather(h, vox, chan, inv_step, amp, min_d, weighted)
            assert np.array_equal(np.asarray(got[0]), want[0])
            assert bool(got[1]) == want[1]


class TestSpreadSemantics:
    def test_single_voxel_lands_on_expected_bins(self):
        # one voxel 1 mm from one channel, dt chosen so the delay falls
        # between bins 16 and 17 (1-based)
        c0, dt = 1000.0, 6e-8
        vox = np.array([[0.0, 0.0, 0.0]])
        chan = np.array([[0.001, 0.0, 0.0]])
        # u = d / (c0 dt) = 0.001 / 6e-5 = 16.666..
        s, kept, dropped, singular = reference.spread(
            np.array([2.0]), vox, chan, 1.0 / (c0 * dt), 1.0, 0.0, 32
        )
        assert not singular
        assert dropped == 0.0
        u = 0.001 / (c0 * dt)
        w = u - np.floor(u)
        amp = 2.0 / 0.001
        # bins 16 and 17, stored 0-based at 15 and 16
        assert s[0, 15] == pytest.approx(amp * (1 - w), rel=1e-12)
        assert s[0, 16] == pytest.approx(amp * w, rel=1e-12)
        assert np.count_nonzero(s) == 2
        assert kept == pytest.approx(abs(amp), rel=1e-12)

    def test_truncation_accounting(self):
        # window of 8 samples; voxel delay beyond it is fully dropped
        c0, dt = 1000.0, 6e-8
        vox = np.array([[0.0, 0.0, 0.0]])
        chan = np.array([[0.001, 0.0, 0.0]])
        s, kept, dropped, _ = reference.spread(
            np.array([1.0]), vox, chan, 1.0 / (c0 * dt), 1.0, 0.0, 8
        )
        assert np.count_nonzero(s) == 0
        assert kept == 0.0
        assert dropped == pytest.approx(1.0 / 0.001, rel=1e-12)

    def test_singular_distance_skips_pair(self):
        vox = np.array([[0.0, 0.0, 0.0], [0.002, 0.0, 0.0]])
        chan = np.array([[0.0, 0.0, 1e-9]])
        s, kept, dropped, singular = reference.spread(
            np.array([1.0, 1.0]), vox, chan, 1.0 / 6e-5, 1.0, 1e-5, 64
        )
        assert singular
        # the touching pair contributes nothing; the distant voxel survives
        assert kept > 0.0
        assert np.isfinite(s).all()

    def test_zero_values_spread_to_zero(self):
        rng = np.random.default_rng(0)
        values, vox, chan, inv_step, amp, min_d, p = _random_setup(rng)
        s, kept, dropped, _ = reference.spread(
            np.zeros_like(values), vox, chan, inv_step, amp, min_d, p
        )
        assert not s.any()
        assert kept == 0.0
        assert dropped == 0.0


class TestGatherSemantics:
    def test_gather_is_spread_transpose(self):
        # <spread(f), h> == <f, gather(h)> with weighted=1, no truncation
        rng = np.random.default_rng(21)
        for trial in range(8):
            values, vox, chan, inv_step, amp, min_d, p = _random_setup(rng)
            h = rng.normal(size=(chan.shape[0], p))
            s, _, _, _ = reference.spread(values, vox, chan, inv_step, amp,
                                          min_d, p)
            f, _ = reference.gather(h, vox, chan, inv_step, amp, min_d, 1)
            lhs = float(np.sum(s * h))
            rhs = float(values @ f)
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-18)

    def test_unit_weights_ignore_distance(self):
        # weighted=0 interpolates h at the delay without amplitude factors
        c0, dt = 1000.0, 6e-8
        vox = np.array([[0.0, 0.0, 0.0]])
        chan = np.array([[0.001, 0.0, 0.0]])
        p = 32
        h = np.zeros((1, p))
        u = 0.001 / (c0 * dt)
        b = int(np.floor(u))
        w = u - b
        h[0, b - 1] = 1.0
        f, singular = reference.gather(h, vox, chan, 1.0 / (c0 * dt), 1.0,
                                       0.0, 0)
        assert not singular
        assert f[0] == pytest.approx(1.0 - w, rel=1e-12)

    def test_out_of_window_reads_zero(self):
        vox = np.array([[0.0, 0.0, 0.0]])
        chan = np.array([[0.01, 0.0, 0.0]])
        h = np.ones((1, 4))
        f, _ = reference.gather(h, vox, chan, 1.0 / 6e-5, 1.0, 0.0, 1)
        assert f[0] == 0.0
