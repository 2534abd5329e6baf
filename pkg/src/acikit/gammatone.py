"""All-pole gammatone filterbank on the ERB-number scale.

The filters are cascades of identical one-pole complex resonators; the real
band signal is twice the real part of the complex output, normalized to unit
magnitude response at the centre frequency. This keeps the equivalent
rectangular bandwidth of each filter equal to the requested ERB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .erb import erb_bandwidth, erb_number, erb_to_hz

N_BANDS = 64
BAND_SPACING_ERB = 0.5
LOWEST_CENTER_HZ = 45.8


def band_centers(n_bands: int = N_BANDS, lowest_hz: float = LOWEST_CENTER_HZ,
                 spacing_erb: float = BAND_SPACING_ERB) -> np.ndarray:
    """Centre frequencies spaced uniformly on the ERB-number scale.

    The grid is anchored at ``lowest_hz``; with the defaults the top band
    lands at 33.20 ERB_N (7.91 kHz).
    """
    e0 = erb_number(lowest_hz)
    return erb_to_hz(e0 + spacing_erb * np.arange(n_bands))


def _erb_order_factor(order: int) -> float:
    # integral of (1+x^2)^-order over R, i.e. ratio ERB / per-pole bandwidth
    return (math.pi * math.factorial(2 * order - 2)
            * 2.0 ** (-(2 * order - 2)) / math.factorial(order - 1) ** 2)


@dataclass
class GammatoneFilterbank:
    """Bank of order-``order`` all-pole gammatone filters."""

    centers_hz: np.ndarray
    fs: int
    order: int = 4
    _poles: np.ndarray = field(init=False, repr=False)
    _denoms: np.ndarray = field(init=False, repr=False)
    _gains: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.centers_hz = np.asarray(self.centers_hz, dtype=float)
        if np.any(self.centers_hz <= 0) or np.any(self.centers_hz >= self.fs / 2):
            raise ValueError("band centers must lie in (0, fs/2)")
        bw = erb_bandwidth(self.centers_hz) / _erb_order_factor(self.order)
        lam = np.exp(-2.0 * np.pi * bw / self.fs)
        self._poles = lam * np.exp(2j * np.pi * self.centers_hz / self.fs)
        # single order-n denominator per band: (1 - a z^-1)^n
        denoms = []
        for a in self._poles:
            d = np.array([1.0 + 0j])
            for _ in range(self.order):
                d = np.convolve(d, [1.0, -a])
            denoms.append(d)
        self._denoms = np.array(denoms)
        # unit magnitude response at the centre frequency
        z = np.exp(-2j * np.pi * self.centers_hz / self.fs)
        self._gains = np.abs((1.0 - self._poles * z) ** self.order)

    @property
    def n_bands(self) -> int:
        return len(self.centers_hz)

    def filter(self, x: np.ndarray) -> np.ndarray:
        """Filter a signal through every band.

        Returns the real band signals, shape ``(n_bands, len(x))``.
        """
        x = np.asarray(x, dtype=float)
        out = np.empty((self.n_bands, len(x)))
        for k in range(self.n_bands):
            y = scipy.signal.lfilter([self._gains[k]], self._denoms[k],
                                     x.astype(complex))
            out[k] = 2.0 * y.real
        return out

    def filter_band(self, x: np.ndarray, k: int) -> np.ndarray:
        y = scipy.signal.lfilter([self._gains[k]], self._denoms[k],
                                 np.asarray(x, dtype=complex))
        return 2.0 * y.real


def folded_power_weights(freqs_hz: np.ndarray, center_hz: float,
                         bandwidth_hz: float, fs: int,
                         order: int = 4) -> np.ndarray:
    """Squared-magnitude weights of a gammatone band on an rfft frequency grid.

    Includes the response image folded around the Nyquist frequency
    (incoherent power sum), so that near-Nyquist bands integrate their full
    nominal bandwidth.
    """
    b = bandwidth_hz / _erb_order_factor(order)
    lor = lambda f: (1.0 + ((f - center_hz) / b) ** 2) ** (-order)
    return lor(freqs_hz) + lor(fs - freqs_hz)
