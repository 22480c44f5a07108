import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlenkf.errors import InvalidInputError, NotSPDError
from mlenkf.kalman import GaussianMoments, kalman_gain, kf_predict, kf_run, kf_update
from mlenkf.models import LinearSignal, ObservationModel, ou_variance

from conftest import random_spd

DECAY = math.exp(-1)


def test_predict_identity():
    m = GaussianMoments([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]])
    out = kf_predict(m, LinearSignal(np.eye(2), np.zeros((2, 2))))
    np.testing.assert_array_equal(out.mean, m.mean)
    np.testing.assert_array_equal(out.cov, m.cov)


def test_predict_scalar_hand_value():
    out = kf_predict(GaussianMoments([1.0], [[0.0]]), LinearSignal([[DECAY]], [[0.3]]))
    assert out.mean[0] == DECAY and out.cov[0, 0] == 0.3


def test_predict_deterministic_prior(rng):
    A = rng.standard_normal((3, 3))
    S = random_spd(rng, 3)
    out = kf_predict(GaussianMoments(np.ones(3), np.zeros((3, 3))), LinearSignal(A, S))
    np.testing.assert_allclose(out.cov, S, atol=1e-15)


def test_predict_offset():
    out = kf_predict(GaussianMoments([0.0], [[0.0]]), LinearSignal([[1.0]], [[1.0]], [0.25]))
    assert out.mean[0] == 0.25


def test_predict_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        kf_predict(GaussianMoments([0.0], [[1.0]]), LinearSignal(np.eye(2), np.eye(2)))


def test_update_zero_prior_cov():
    m = GaussianMoments([0.3], [[0.0]])
    out, K = kf_update(m, ObservationModel.scalar(1.0), [5.0])
    assert K[0, 0] == 0.0
    assert out.mean[0] == 0.3 and out.cov[0, 0] == 0.0


def test_update_scalar_hand_value():
    out, K = kf_update(GaussianMoments([0.0], [[1.0]]), ObservationModel.scalar(1.0), [1.0])
    for v in (K[0, 0], out.mean[0], out.cov[0, 0]):
        assert v == pytest.approx(0.5, abs=1e-15)


def test_update_gain_half_when_gamma_equals_cov(rng):
    C = random_spd(rng, 3, 0.5)
    _, K = kf_update(GaussianMoments(np.zeros(3), C), ObservationModel(np.eye(3), C), np.zeros(3))
    np.testing.assert_allclose(K, 0.5 * np.eye(3), atol=1e-12)


def test_update_not_spd():
    with pytest.raises(NotSPDError):
        kf_update(GaussianMoments([0.0], [[-10.0]]), ObservationModel.scalar(1.0), [0.0])


def test_update_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        kf_update(GaussianMoments([0.0], [[1.0]]), ObservationModel.scalar(1.0), [0.0, 1.0])


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_update_invariants(d, m, seed):
    rng = np.random.default_rng(seed)
    C = random_spd(rng, d)
    H = rng.standard_normal((m, d))
    obs = ObservationModel(H, random_spd(rng, m, 0.1))
    mean = rng.standard_normal(d)
    y = rng.standard_normal(m)
    post, K = kf_update(GaussianMoments(mean, C), obs, y)
    # cross-check the innovation form against the (I - KH) form
    IKH = np.eye(d) - K @ H
    scale = 1 + np.abs(C).max() + np.abs(mean).max() + np.abs(y).max()
    np.testing.assert_allclose(post.mean, IKH @ mean + K @ y, atol=1e-10 * scale)
    raw = IKH @ C
    assert np.max(np.abs(raw - raw.T)) <= 1e-10 * scale
    np.testing.assert_array_equal(post.cov, post.cov.T)
    assert np.linalg.norm(post.cov, 2) <= np.linalg.norm(C, 2) + 1e-10 * scale
    lam = np.linalg.eigvalsh(post.cov)
    assert lam.min() >= -1e-10 * max(1.0, np.abs(lam).max())


def test_gain_matches_definition(rng):
    C = random_spd(rng, 4)
    H = rng.standard_normal((2, 4))
    G = random_spd(rng, 2, 0.1)
    expected = C @ H.T @ np.linalg.inv(H @ C @ H.T + G)
    np.testing.assert_allclose(kalman_gain(C, C, H, G), expected, rtol=1e-9, atol=1e-12)


def test_run_empty():
    init = GaussianMoments([1.0], [[0.0]])
    tr = kf_run(LinearSignal([[DECAY]], [[0.1]]), ObservationModel.scalar(0.04), [], init)
    assert tr.epochs == 0
    np.testing.assert_array_equal(tr.means, [[1.0]])


def test_run_riccati_fixed_point():
    sig = LinearSignal([[DECAY]], [[ou_variance(0.5)]])
    obs = ObservationModel.scalar(0.04)
    tr = kf_run(sig, obs, np.zeros(100), GaussianMoments([1.0], [[0.0]]))
    c = tr.covs[:, 0, 0]
    assert abs(c[100] - c[99]) <= 1e-12
    # independent oracle: iterate the scalar Riccati map to its fixed point
    a, s, g = DECAY**2, ou_variance(0.5), 0.04
    p = 0.0
    for _ in range(1000):
        prior = a * p + s
        p = prior * g / (prior + g)
    assert c[100] == pytest.approx(p, rel=1e-12)


def test_run_huge_noise_tracks_prediction():
    sig = LinearSignal([[DECAY]], [[ou_variance(0.5)]])
    obs = ObservationModel.scalar(1e12)
    ys = np.linspace(-3, 3, 30)
    tr = kf_run(sig, obs, ys, GaussianMoments([1.0], [[0.0]]))
    m, c = GaussianMoments([1.0], [[0.0]]), None
    for n in range(30):
        m = kf_predict(m, sig)
        np.testing.assert_allclose(tr.means[n + 1], m.mean, atol=1e-6)
        np.testing.assert_allclose(tr.covs[n + 1], m.cov, atol=1e-6)


def test_run_time_varying_signal():
    def sig(epoch):
        return LinearSignal([[1.0]], [[1.0]], [float(epoch)])
    obs = ObservationModel.scalar(1e12)
    tr = kf_run(sig, obs, np.zeros(3), GaussianMoments([0.0], [[0.0]]))
    # offsets 0, 1, 2 are applied for the transitions into times 1, 2, 3
    np.testing.assert_allclose(tr.means[:, 0], [0.0, 0.0, 1.0, 3.0], atol=1e-9)


def test_run_deterministic():
    sig = LinearSignal([[DECAY]], [[0.1]])
    obs = ObservationModel.scalar(0.04)
    ys = np.sin(np.arange(20))
    a = kf_run(sig, obs, ys, GaussianMoments([1.0], [[0.0]]))
    b = kf_run(sig, obs, ys, GaussianMoments([1.0], [[0.0]]))
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covs, b.covs)
