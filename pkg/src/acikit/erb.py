"""ERB-number scale utilities (Glasberg & Moore auditory filter bandwidths)."""

from __future__ import annotations

import numpy as np

# ERB-number scale constants: erb_number(f) = _ERB_A * log10(_ERB_B * f / 1000 + 1)
_ERB_A = 21.4
_ERB_B = 4.37


def erb_number(freq_hz):
    """Convert frequency in Hz to ERB-number (ERB_N).

    Parameters
    ----------
    freq_hz : float or array_like
        Frequency in Hz, must be >= 0.

    Returns
    -------
    float or ndarray
        Position on the ERB-number scale (0 at 0 Hz).
    """
    f = np.asarray(freq_hz, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = _ERB_A * np.log10(_ERB_B * f / 1000.0 + 1.0)
    return out if out.ndim else float(out)


def erb_to_hz(erb_n):
    """Inverse of :func:`erb_number`."""
    e = np.asarray(erb_n, dtype=float)
    out = (10.0 ** (e / _ERB_A) - 1.0) * 1000.0 / _ERB_B
    return out if out.ndim else float(out)


def erb_bandwidth(freq_hz):
    """Equivalent rectangular bandwidth in Hz at a given centre frequency.

    Linear ERB formula, consistent with :func:`erb_number` (the two are
    related by d(erb_number)/df = _ERB_A / (ln(10) * erb_bandwidth)).
    """
    f = np.asarray(freq_hz, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = 24.7 * (_ERB_B * f / 1000.0 + 1.0)
    return out if out.ndim else float(out)


def erb_bandwidth_classic(freq_hz):
    """Classic polynomial ERB estimate (Moore & Glasberg, 1983).

    Wider than the linear formula above 2 kHz. Used by the noise-set
    validation filters, where it reproduces the reference band-level
    statistics; everywhere else the linear formula applies.
    """
    fk = np.asarray(freq_hz, dtype=float) / 1000.0
    out = 6.23 * fk**2 + 93.39 * fk + 28.52
    return out if out.ndim else float(out)
