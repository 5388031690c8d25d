import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from imprsl import emg
from imprsl.datamodel import Timebase, ValidationError

RATE = 2000.0


def butter_hp_gain(f, fc=100.0, order=4, fs=RATE):
    """Closed-form digital Butterworth magnitude (bilinear transform with prewarping)."""
    ratio = np.tan(np.pi * fc / fs) / np.tan(np.pi * f / fs)
    return 1.0 / np.sqrt(1.0 + ratio ** (2 * order))


def steady_amplitude(y):
    mid = y[len(y) // 4: -len(y) // 4]
    return 0.5 * (mid.max() - mid.min())


def test_highpass_rejects_dc():
    y = emg.highpass(np.full(4000, 3.0), RATE)
    assert np.max(np.abs(y[400:-400])) < 1e-3 * 3.0


@pytest.mark.parametrize("freq", [500.0, 10.0])
def test_highpass_matches_analytic_response(freq):
    t = np.arange(8000) / RATE
    y = emg.highpass(np.sin(2 * np.pi * freq * t), RATE)
    expected = butter_hp_gain(freq) ** 2  # forward and backward pass
    assert steady_amplitude(y) == pytest.approx(expected, rel=0.01, abs=1e-6)
    if freq == 500.0:
        assert steady_amplitude(y) == pytest.approx(1.0, rel=0.01)
    else:
        assert steady_amplitude(y) < 1e-3


def test_cutoff_above_nyquist():
    with pytest.raises(ValidationError, match="Nyquist"):
        emg.highpass(np.zeros(100), RATE, cutoff=1500.0)
    with pytest.raises(ValidationError):
        emg.envelope(np.zeros(100), RATE, smooth_cutoff=0.0)


def test_envelope_of_sine():
    t = np.arange(8000) / RATE
    a = 0.7
    env = emg.envelope(a * np.sin(2 * np.pi * 80 * t), RATE)
    mid = env[2000:-2000]
    assert_allclose(mid, 2 * a / np.pi, rtol=0.05)


def test_envelope_zero_and_impulses():
    assert np.all(emg.envelope(np.zeros(500), RATE) == 0)
    x = np.zeros(2000)
    x[::97] = 5.0
    assert np.all(emg.envelope(x, RATE) >= 0)


@settings(max_examples=25, deadline=None)
@given(arrays(float, 600, elements=st.floats(-5, 5)))
def test_zero_phase_reversal(x):
    fwd = emg.highpass(x, RATE)
    rev = emg.highpass(x[::-1], RATE)[::-1]
    assert_allclose(fwd, rev, atol=1e-9)
    e1 = emg.envelope(x, RATE, clamp=False)
    e2 = emg.envelope(x[::-1], RATE, clamp=False)[::-1]
    assert_allclose(e1, e2, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(arrays(float, 400, elements=st.floats(-5, 5)), st.floats(0.01, 100.0))
def test_envelope_scales_linearly(x, c):
    assert_allclose(emg.envelope(c * x, RATE, clamp=False), c * emg.envelope(x, RATE, clamp=False),
                    rtol=1e-9, atol=1e-9 * c * (1 + np.abs(x).max()))


def test_normalize_mvc():
    assert emg.normalize_mvc(0.5, 1.0) == 0.5
    assert emg.normalize_mvc(1.4, 1.0) == 1.0
    assert emg.normalize_mvc(0.0, 1.0) == 0.0
    with pytest.raises(ValidationError):
        emg.normalize_mvc(0.5, 0.0)


def test_cocontraction_examples():
    assert emg.cocontraction([0.4], [0.2])[0] == pytest.approx(0.3)
    assert emg.cocontraction([0.0], [0.0])[0] == 0.0
    assert emg.cocontraction([1.0], [1.0])[0] == 1.0
    with pytest.raises(ValidationError, match="mismatch"):
        emg.cocontraction([0.1, 0.2], [0.1])


@given(arrays(float, 10, elements=st.floats(0, 1)), arrays(float, 10, elements=st.floats(0, 1)))
def test_cocontraction_symmetric(a, b):
    assert np.array_equal(emg.cocontraction(a, b), emg.cocontraction(b, a))


def test_activation_from_raw_on_timebase():
    rng = np.random.default_rng(0)
    raw = 0.5 * rng.standard_normal(int(3 * RATE) + 1)
    act = emg.activation_from_raw(raw, RATE, mvc_level=1.0, to=Timebase(0.01, 301))
    assert act.shape == (301,)
    assert np.all((act >= 0) & (act <= 1))
    # white noise with sigma 0.5, high-passed: rectified mean about 0.5*sqrt(0.9)*sqrt(2/pi)
    assert np.mean(act[50:-50]) == pytest.approx(0.5 * np.sqrt(0.9) * np.sqrt(2 / np.pi), rel=0.1)


def test_causal_filter_chunking_invariant():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2000)
    whole = emg.CausalEmgFilter(RATE, 1.0).process(x)
    f = emg.CausalEmgFilter(RATE, 1.0)
    parts = np.concatenate([f.process(c) for c in np.array_split(x, 37)])
    assert_allclose(parts, whole, atol=1e-12)


def test_causal_filter_is_causal():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(1000)
    y = x.copy()
    y[600:] = 0
    a = emg.CausalEmgFilter(RATE, 1.0).process(x)
    b = emg.CausalEmgFilter(RATE, 1.0).process(y)
    assert np.array_equal(a[:600], b[:600])
