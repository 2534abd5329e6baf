"""Time-frequency envelope representation: 86 frames x 64 gammatone bands.

This is the predictor representation for the response model: band envelopes
(magnitude of the gammatone output, low-passed at 770 Hz) averaged in 10-ms
frames. The pipeline is linear up to the final mean, so scaling the input
scales every matrix entry by the same factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .gammatone import GammatoneFilterbank, band_centers
from .waveform import Waveform

N_FRAMES = 86
N_BANDS = 64
FRAME_DUR = 0.01
VECTOR_LEN = N_FRAMES * N_BANDS  # 5504

_ENV_LOWPASS_HZ = 770.0
_ENV_LOWPASS_ORDER = 5

_fb_cache: dict[tuple, GammatoneFilterbank] = {}
_sos_cache: dict[tuple, np.ndarray] = {}


def default_filterbank(fs: int = 16000) -> GammatoneFilterbank:
    key = ("default", fs)
    if key not in _fb_cache:
        _fb_cache[key] = GammatoneFilterbank(band_centers(N_BANDS), fs)
    return _fb_cache[key]


def envelope_lowpass_sos(fs: int) -> np.ndarray:
    key = (fs, _ENV_LOWPASS_HZ, _ENV_LOWPASS_ORDER)
    if key not in _sos_cache:
        _sos_cache[key] = scipy.signal.butter(
            _ENV_LOWPASS_ORDER, _ENV_LOWPASS_HZ, fs=fs, output="sos")
    return _sos_cache[key]


@dataclass
class TFMatrix:
    """Envelope amplitude per (frame, band); non-negative values."""

    values: np.ndarray           # (N_FRAMES, N_BANDS)
    band_centers_hz: np.ndarray  # (N_BANDS,)
    time_step: float = FRAME_DUR

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (N_FRAMES, N_BANDS):
            raise ValueError(
                f"TFMatrix must be {N_FRAMES}x{N_BANDS}, got {self.values.shape}")

    @property
    def frame_times(self) -> np.ndarray:
        return (np.arange(N_FRAMES) + 0.5) * self.time_step


def band_envelopes(samples: np.ndarray, fs: int,
                   fb: GammatoneFilterbank | None = None) -> np.ndarray:
    """Per-band envelope: |gammatone output| low-passed at 770 Hz."""
    if fb is None:
        fb = default_filterbank(fs)
    bands = fb.filter(samples)
    return scipy.signal.sosfilt(envelope_lowpass_sos(fs), np.abs(bands), axis=1)


def tf_representation(w: Waveform,
                      fb: GammatoneFilterbank | None = None) -> TFMatrix:
    """Compute the 86x64 time-frequency envelope matrix of a waveform."""
    n_expected = int(round(N_FRAMES * FRAME_DUR * w.fs))
    if len(w.samples) != n_expected:
        raise ValueError(
            f"expected {n_expected} samples ({N_FRAMES * FRAME_DUR} s at "
            f"{w.fs} Hz), got {len(w.samples)}")
    env = band_envelopes(w.samples, w.fs, fb)
    frame_len = int(round(FRAME_DUR * w.fs))
    frames = env.reshape(env.shape[0], N_FRAMES, frame_len).mean(axis=2)
    if fb is None:
        fb = default_filterbank(w.fs)
    return TFMatrix(values=frames.T, band_centers_hz=fb.centers_hz.copy())


def vectorize(m: TFMatrix) -> np.ndarray:
    """Column-major vectorization: element (frame i, band j) -> index i + 86*j."""
    return m.values.flatten(order="F")


def devectorize(v: np.ndarray,
                band_centers_hz: np.ndarray | None = None) -> TFMatrix:
    v = np.asarray(v, dtype=float)
    if v.shape != (VECTOR_LEN,):
        raise ValueError(f"expected vector of length {VECTOR_LEN}, got {v.shape}")
    if band_centers_hz is None:
        band_centers_hz = band_centers(N_BANDS)
    values = v.reshape((N_FRAMES, N_BANDS), order="F")
    return TFMatrix(values=values, band_centers_hz=np.asarray(band_centers_hz))


def matrix_to_csv(path, m: TFMatrix) -> None:
    """Write a TFMatrix as CSV: header row of band centres, 86 data rows."""
    header = ",".join(f"{c:.4f}" for c in m.band_centers_hz)
    np.savetxt(path, m.values, delimiter=",", header=header, comments="")


def matrix_from_csv(path) -> TFMatrix:
    with open(path) as fh:
        header = fh.readline().strip()
    centers = np.array([float(c) for c in header.split(",")])
    values = np.loadtxt(path, delimiter=",", skiprows=1)
    return TFMatrix(values=values, band_centers_hz=centers)
