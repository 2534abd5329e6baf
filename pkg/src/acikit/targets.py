"""Bundled synthetic vowel-consonant-vowel target pair.

Two 0.86-s formant-synthesized utterances approximating an /aba/-/ada/
contrast. The pair differs in the second-syllable F2 onset (1298 Hz vs
1722 Hz), the primary acoustic cue separating the two stop consonants, and
in the correlated F3 onset (low for the labial, high for the alveolar).
These are deterministic test fixtures, not speech recordings.
"""

from __future__ import annotations

import numpy as np
import scipy.signal

from .waveform import DEFAULT_CONVENTION, LevelConvention, Waveform, set_level

FS = 16000
DURATION = 0.86

F2_ONSET = {"aba": 1298.0, "ada": 1722.0}
F3_ONSET = {"aba": 2200.0, "ada": 2750.0}
# closing transition loci at the end of the first syllable
F2_OFFSET = {"aba": 1050.0, "ada": 1650.0}
F3_OFFSET = {"aba": 2300.0, "ada": 2650.0}

# steady /a/ formants and bandwidths (Hz)
_VOWEL_F = (700.0, 1200.0, 2500.0, 3500.0)
_VOWEL_BW = (90.0, 110.0, 170.0, 250.0)

# segment boundaries (s)
_V1_ON = 0.030
_CLOSE_START, _V1_OFF = 0.195, 0.250
_CLOSURE_ON, _RELEASE = 0.265, 0.300
_TRANS_END = 0.405
_V2_OFF = 0.800

_BLOCK = 40      # samples per coefficient-update block (2.5 ms)


def _interp_track(times, values, n):
    t = np.arange(n) / FS
    return np.interp(t, times, values)


def _formant_tracks(target_id: str, n: int) -> list[np.ndarray]:
    f1 = _interp_track(
        [0.0, _CLOSE_START, _CLOSURE_ON, _RELEASE, _TRANS_END, DURATION],
        [_VOWEL_F[0], _VOWEL_F[0], 300.0, 250.0, _VOWEL_F[0], _VOWEL_F[0]], n)
    f2 = _interp_track(
        [0.0, _CLOSE_START, _V1_OFF, _RELEASE, _TRANS_END, DURATION],
        [_VOWEL_F[1], _VOWEL_F[1], F2_OFFSET[target_id],
         F2_ONSET[target_id], _VOWEL_F[1], _VOWEL_F[1]], n)
    f3 = _interp_track(
        [0.0, _CLOSE_START, _V1_OFF, _RELEASE, _TRANS_END, DURATION],
        [_VOWEL_F[2], _VOWEL_F[2], F3_OFFSET[target_id],
         F3_ONSET[target_id], _VOWEL_F[2], _VOWEL_F[2]], n)
    f4 = np.full(n, _VOWEL_F[3])
    return [f1, f2, f3, f4]


def _amplitude_contour(n: int) -> np.ndarray:
    t_pts = [0.0, _V1_ON, _CLOSE_START, _V1_OFF, _CLOSURE_ON, _RELEASE,
             _RELEASE + 0.025, _TRANS_END, _V2_OFF, DURATION]
    a_pts = [0.0, 1.0, 1.0, 0.5, 0.02, 0.5, 0.85, 1.0, 1.0, 0.0]
    return _interp_track(t_pts, a_pts, n)


def _glottal_source(n: int) -> np.ndarray:
    """Impulse train with a falling pitch contour and -6 dB/oct tilt."""
    f0 = _interp_track([0.0, DURATION], [130.0, 105.0], n)
    phase = np.cumsum(f0) / FS
    src = np.zeros(n)
    src[np.diff(np.floor(phase), prepend=0.0) > 0] = 1.0
    return scipy.signal.lfilter([1.0], [1.0, -0.92], src)


def _resonator_coeffs(freq: float, bw: float):
    r = np.exp(-np.pi * bw / FS)
    b1 = 2.0 * r * np.cos(2.0 * np.pi * freq / FS)
    b2 = -r * r
    return (1.0 - b1 - b2), b1, b2


def _cascade_filter(src: np.ndarray, tracks: list[np.ndarray]) -> np.ndarray:
    """Cascade of time-varying resonators, block-frozen coefficients."""
    y = src
    n = len(src)
    for f_track, bw in zip(tracks, _VOWEL_BW):
        out = np.empty(n)
        zi = np.zeros(2)
        for start in range(0, n, _BLOCK):
            stop = min(start + _BLOCK, n)
            a0, b1, b2 = _resonator_coeffs(float(f_track[start]), bw)
            seg, zi = scipy.signal.lfilter(
                [a0], [1.0, -b1, -b2], y[start:stop], zi=zi)
            out[start:stop] = seg
        y = out
    return y


def synth_target(target_id: str, level_db: float = 65.0,
                 conv: LevelConvention = DEFAULT_CONVENTION) -> Waveform:
    """Synthesize one member of the bundled target pair at a given level."""
    if target_id not in F2_ONSET:
        raise ValueError(f"unknown target {target_id!r}")
    n = int(round(DURATION * FS))
    src = _glottal_source(n)
    voiced = _cascade_filter(src, _formant_tracks(target_id, n))
    samples = voiced * _amplitude_contour(n)
    return set_level(Waveform(samples, FS), level_db, conv)


def synth_target_pair(level_db: float = 65.0,
                      conv: LevelConvention = DEFAULT_CONVENTION):
    """The (aba, ada) fixture pair."""
    return synth_target("aba", level_db, conv), synth_target("ada", level_db, conv)
