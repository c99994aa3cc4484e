import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdimesh.photonics import (H, MINUS, V, DetectorModel, DriftState, FiberChannel, IntensitySet,
                               PolarizationState, PulseDescriptor, PulseShape, click_probability,
                               detect, drift_step, encode_pulse, encoded_jones,
                               polarization_error_floor, propagate, rotation_angle,
                               rotation_unitary)

ISET = IntensitySet()


def _fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2


# ---------------------------------------------------------------- encoding

def test_ideal_z0_is_exactly_h():
    p = encode_pulse(0, "Z", ISET, 0, math.inf)
    assert np.array_equal(p.polarization.vector, H)


def test_er30_error_floor():
    # r = 1e-3 leaks into the orthogonal state: r / (1 + r)
    assert polarization_error_floor(30.0) == pytest.approx(1e-3 / 1.001, rel=1e-12)
    assert polarization_error_floor(30.0) == pytest.approx(9.99e-4, rel=1e-3)
    assert polarization_error_floor(math.inf) == 0.0


def test_ideal_x1_is_minus():
    p = encode_pulse(1, "X", ISET, 0, math.inf)
    assert np.allclose(p.polarization.vector, (H - V) / math.sqrt(2), atol=1e-15)
    assert np.allclose(MINUS, (H - V) / math.sqrt(2))


@pytest.mark.parametrize("basis", ["Z", "X"])
@pytest.mark.parametrize("bit", [0, 1])
def test_encoded_overlap_with_orthogonal_partner(bit, basis):
    er = 25.0
    j = encoded_jones(bit, basis, er)
    partner = encoded_jones(1 - bit, basis, math.inf)
    assert _fidelity(partner, j) == pytest.approx(polarization_error_floor(er), rel=1e-10)


def test_encoded_jones_vectorised():
    bits = np.array([0, 1, 0, 1])
    bases = np.array([0, 0, 1, 1])
    j = encoded_jones(bits, bases, 30.0)
    assert j.shape == (4, 2)
    for k in range(4):
        assert np.allclose(j[k], encoded_jones(bits[k], bases[k], 30.0))


def test_encoding_floor_monte_carlo():
    er = 20.0
    eps = polarization_error_floor(er)
    j = encoded_jones(0, "X", er)
    p_wrong = _fidelity(encoded_jones(1, "X", math.inf), j)
    n = 10 ** 6
    wrong = np.random.default_rng(0).random(n) < p_wrong
    assert abs(wrong.mean() - eps) < 3 * math.sqrt(eps * (1 - eps) / n)


def test_bad_extinction_ratio():
    with pytest.raises(ValueError):
        encoded_jones(0, "Z", 0.0)


# ---------------------------------------------------------------- propagation

def _pulse(mu=1.0, jones=H):
    return PulseDescriptor(mu, PolarizationState.from_vector(jones))


def test_zero_length_unchanged():
    p = _pulse(0.4)
    assert propagate(p, FiberChannel(length=0.0)) == p


def test_hundred_km_loss():
    out = propagate(_pulse(0.5), FiberChannel(100.0, 0.2))
    assert out.mean_photons == pytest.approx(0.5e-2, rel=1e-12)


def test_identity_drift_keeps_polarization():
    p = _pulse(1.0, (H + 1j * V) / math.sqrt(2))
    out = propagate(p, FiberChannel(80.0), DriftState())
    assert np.allclose(out.polarization.vector, p.polarization.vector)


@given(st.floats(0, 150), st.floats(0, 150))
def test_transmittance_multiplicative(l1, l2):
    p = _pulse(1.0)
    two = propagate(propagate(p, FiberChannel(l1)), FiberChannel(l2))
    one = propagate(p, FiberChannel(l1 + l2))
    assert two.mean_photons == pytest.approx(one.mean_photons, rel=1e-12, abs=1e-300)


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1), st.integers(0, 1))
def test_norm_preserved(w1, w2, w3, bit, basis):
    p = encode_pulse(bit, "ZX"[basis], ISET, 0, 30.0)
    st_ = DriftState(rotation_unitary([w1, w2, w3]))
    out = propagate(p, FiberChannel(50.0), st_)
    assert abs(np.linalg.norm(out.polarization.vector) - 1) < 1e-10


def test_channel_validation():
    with pytest.raises(ValueError):
        FiberChannel(length=-1.0)


# ---------------------------------------------------------------- drift

def test_rotation_unitary_properties():
    w = np.array([0.3, -0.2, 0.5])
    u = rotation_unitary(w)
    assert np.allclose(u.conj().T @ u, np.eye(2))
    assert rotation_angle(u) == pytest.approx(np.linalg.norm(w), rel=1e-10)
    # S1 rotation by pi maps diagonal to anti-diagonal
    plus = (H + V) / math.sqrt(2)
    assert _fidelity(rotation_unitary([math.pi, 0, 0]) @ plus, MINUS) == pytest.approx(1.0)


def test_drift_rate_zero_keeps_unitary():
    s = DriftState(rotation_unitary([0.1, 0.2, 0.3]))
    out = drift_step(s, 1.0, 0.0, np.random.default_rng(0))
    assert np.array_equal(out.unitary, s.unitary)


def test_drift_angle_variance_is_rate_times_time():
    rate, T, steps, trials = 1e-3, 50.0, 10, 10 ** 4
    rng = np.random.default_rng(1)
    dt = T / steps
    total = np.zeros((trials, 3))
    for _ in range(steps):
        total += rng.normal(0.0, math.sqrt(rate * dt / 3.0), (trials, 3))
    # drift_step draws exactly this vector per step; check via the function too
    s = DriftState()
    acc = np.zeros(3)
    r2 = np.random.default_rng(1)
    for _ in range(steps):
        s = drift_step(s, dt, rate, r2)
        acc += s.last_rotation
    sq = np.sum(total ** 2, axis=1)
    mean, se = sq.mean(), sq.std() / math.sqrt(trials)
    assert abs(mean - rate * T) < 3 * se
    # small angles: composed rotation angle equals the summed vector length
    assert rotation_angle(s.unitary) == pytest.approx(np.linalg.norm(acc), rel=1e-2)


def test_drift_ensemble_angle_variance():
    rate, dt, steps, trials = 2e-3, 1.0, 20, 4000
    rng = np.random.default_rng(2)
    ang2 = np.empty(trials)
    for k in range(trials):
        s = DriftState()
        for _ in range(steps):
            s = drift_step(s, dt, rate, rng)
        ang2[k] = rotation_angle(s.unitary) ** 2
    assert abs(ang2.mean() - rate * dt * steps) < 3 * ang2.std() / math.sqrt(trials)


def test_independent_seeds_uncorrelated():
    a, b = DriftState(), DriftState()
    ra, rb = np.random.default_rng(10), np.random.default_rng(11)
    xa, xb = [], []
    for _ in range(10 ** 4):
        a = drift_step(a, 0.1, 1e-2, ra, timing_drift=1.0)
        b = drift_step(b, 0.1, 1e-2, rb, timing_drift=1.0)
        xa.append(a.last_rotation[0])
        xb.append(b.last_rotation[0])
    assert abs(np.corrcoef(xa, xb)[0, 1]) < 0.05


def test_drift_timing_walk():
    s = DriftState()
    rng = np.random.default_rng(3)
    offs = []
    for _ in range(2000):
        s = drift_step(s, 0.25, 0.0, rng, timing_drift=4.0)
        offs.append(s.time_offset)
    steps = np.diff(np.r_[0.0, offs])
    assert np.std(steps) == pytest.approx(4.0 * 0.5, rel=0.05)


def test_drift_bad_dt():
    with pytest.raises(ValueError):
        drift_step(DriftState(), 0.0, 1e-4, np.random.default_rng(0))


# ---------------------------------------------------------------- detection

def test_dark_free_vacuum_never_clicks():
    assert click_probability(0.0, 0.8, 0.0) == 0.0
    assert not np.any(detect(np.zeros(1000), DetectorModel(0.8, 0.0), np.random.default_rng(0)))


def test_bright_pulse_always_clicks():
    assert click_probability(1e4, 0.5, 0.0) == pytest.approx(1.0)


def test_click_closed_form():
    p = click_probability(1.0, 0.5, 1e-6)
    assert p == pytest.approx(1 - (1 - 1e-6) * math.exp(-0.5), rel=1e-12)
    assert p == pytest.approx(0.3935, abs=1e-4)


def test_detect_frequency():
    m = DetectorModel(0.5, 1e-6)
    n = 10 ** 6
    f = detect(np.ones(n), m, np.random.default_rng(4)).mean()
    p = click_probability(1.0, 0.5, 1e-6)
    assert abs(f - p) < 3 * math.sqrt(p * (1 - p) / n)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.1),
       st.floats(0, 0.1))
def test_click_monotone(x1, x2, e1, e2, d1, d2):
    lo = click_probability(min(x1, x2), min(e1, e2), min(d1, d2))
    hi = click_probability(max(x1, x2), max(e1, e2), max(d1, d2))
    assert lo <= hi + 1e-15


@pytest.mark.parametrize("bad", [dict(efficiency=1.5), dict(dark_prob=-0.1), dict(jitter_std=-1.0)])
def test_detector_validation(bad):
    with pytest.raises(ValueError):
        DetectorModel(**bad)


def test_negative_exposure_rejected():
    with pytest.raises(ValueError):
        click_probability(-1.0, 0.5, 0.0)


# ---------------------------------------------------------------- types

def test_intensity_set_validation():
    with pytest.raises(ValueError):
        IntensitySet((0.3, 0.1, 0.0), (0.5, 0.5, 0.5), (1, 0, 0), ("a", "b", "c"))
    with pytest.raises(ValueError):
        IntensitySet((0.3, 0.1, 0.05), (0.5, 0.3, 0.2), (1, 0, 0), ("a", "b", "c"))
    assert ISET.vacuum_index == 3
    assert ISET.basis_probability(0, "Z") == 1.0
    assert ISET.index("decoy_weak") == 2


def test_pulse_shape_checks():
    assert PulseShape(95.0).sigma_t == pytest.approx(95.0 / (2 * math.sqrt(2 * math.log(2))))
    with pytest.raises(ValueError):
        PulseShape(500.0, 2.5)


def test_polarization_norm_enforced():
    with pytest.raises(ValueError):
        PolarizationState((1.0, 1.0))
