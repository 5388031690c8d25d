"""Offline and causal EMG conditioning.

Raw EMG -> high-pass (4th order Butterworth, 100 Hz) -> full-wave rectify ->
low-pass envelope (2nd order, 6 Hz) -> MVC normalization -> co-contraction.
All filters are second-order sections.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

from .datamodel import Timebase, ValidationError, resample

HIGHPASS_CUTOFF = 100.0
HIGHPASS_ORDER = 4
ENVELOPE_CUTOFF = 6.0
ENVELOPE_ORDER = 2


def _check_cutoff(cutoff: float, rate: float, order: int) -> None:
    if not rate > 0:
        raise ValidationError(f"rate must be > 0, got {rate}")
    if not 0 < cutoff < rate / 2:
        raise ValidationError(f"cutoff {cutoff} Hz must lie in (0, Nyquist={rate / 2} Hz)")
    if order < 1:
        raise ValidationError(f"filter order must be >= 1, got {order}")


def _zero_phase(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Averaging forward-backward and backward-forward passes makes the result
    # exactly reversal-symmetric; a single filtfilt differs at the edges.
    fb = signal.sosfiltfilt(sos, x, axis=0)
    bf = signal.sosfiltfilt(sos, x[::-1], axis=0)[::-1]
    return 0.5 * (fb + bf)


def highpass(samples, rate: float, cutoff: float = HIGHPASS_CUTOFF,
             order: int = HIGHPASS_ORDER) -> np.ndarray:
    """Zero-phase Butterworth high-pass of a raw EMG channel (mV)."""
    _check_cutoff(cutoff, rate, order)
    sos = signal.butter(order, cutoff, btype="highpass", fs=rate, output="sos")
    return _zero_phase(sos, np.asarray(samples, dtype=float))


def envelope(x, rate: float, smooth_cutoff: float = ENVELOPE_CUTOFF,
             order: int = ENVELOPE_ORDER, clamp: bool = True) -> np.ndarray:
    """Low-pass of the full-wave rectified signal.

    With ``clamp=False`` the raw filter output is returned, which is exactly
    linear under positive scaling of ``x``.
    """
    _check_cutoff(smooth_cutoff, rate, order)
    sos = signal.butter(order, smooth_cutoff, btype="lowpass", fs=rate, output="sos")
    env = _zero_phase(sos, np.abs(np.asarray(x, dtype=float)))
    return np.maximum(env, 0.0) if clamp else env


def normalize_mvc(env, mvc_level: float) -> np.ndarray:
    if not mvc_level > 0:
        raise ValidationError(f"mvc_level must be > 0, got {mvc_level}")
    return np.clip(np.asarray(env, dtype=float) / mvc_level, 0.0, 1.0)


def cocontraction(a_bb, a_tb) -> np.ndarray:
    """Co-contraction index: mean of biceps and triceps activations."""
    a_bb = np.asarray(a_bb, dtype=float)
    a_tb = np.asarray(a_tb, dtype=float)
    if a_bb.shape != a_tb.shape:
        raise ValidationError(f"length mismatch: {a_bb.shape} vs {a_tb.shape}")
    return np.clip(0.5 * (a_bb + a_tb), 0.0, 1.0)


def activation_from_raw(samples, rate: float, mvc_level: float, to: Timebase) -> np.ndarray:
    """Full offline chain from raw EMG to an activation on ``to``."""
    env = envelope(highpass(samples, rate), rate)
    return normalize_mvc(resample(env, rate, to), mvc_level)


class CausalEmgFilter:
    """Single-pass streaming variant of the offline chain, for the live loop."""

    def __init__(self, rate: float, mvc_level: float,
                 cutoff: float = HIGHPASS_CUTOFF, smooth_cutoff: float = ENVELOPE_CUTOFF):
        _check_cutoff(cutoff, rate, HIGHPASS_ORDER)
        _check_cutoff(smooth_cutoff, rate, ENVELOPE_ORDER)
        if not mvc_level > 0:
            raise ValidationError(f"mvc_level must be > 0, got {mvc_level}")
        self.mvc_level = mvc_level
        self._hp = signal.butter(HIGHPASS_ORDER, cutoff, btype="highpass", fs=rate, output="sos")
        self._lp = signal.butter(ENVELOPE_ORDER, smooth_cutoff, btype="lowpass", fs=rate, output="sos")
        self._zi_hp = np.zeros((self._hp.shape[0], 2))
        self._zi_lp = np.zeros((self._lp.shape[0], 2))

    def process(self, chunk) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=float)
        y, self._zi_hp = signal.sosfilt(self._hp, chunk, zi=self._zi_hp)
        env, self._zi_lp = signal.sosfilt(self._lp, np.abs(y), zi=self._zi_lp)
        return np.clip(env / self.mvc_level, 0.0, 1.0)
