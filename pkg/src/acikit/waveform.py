"""Elementary waveform algebra: calibration, ramps, SNR mixing, roving, envelopes.

All level arithmetic runs through a :class:`LevelConvention` that fixes the
digital full-scale calibration (default: RMS 1.0 corresponds to 100 dB SPL).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile
import scipy.signal

DEFAULT_FS = 16000
DEFAULT_DURATION = 0.86
DEFAULT_RAMP = 0.075


@dataclass(frozen=True)
class LevelConvention:
    """Calibration constant linking digital RMS to dB SPL."""

    dbspl_at_unit_rms: float = 100.0

    def spl_to_rms(self, spl_db: float) -> float:
        return 10.0 ** ((spl_db - self.dbspl_at_unit_rms) / 20.0)

    def rms_to_spl(self, rms: float) -> float:
        if rms <= 0:
            raise ValueError("silent waveform: RMS must be positive")
        return self.dbspl_at_unit_rms + 20.0 * np.log10(rms)


DEFAULT_CONVENTION = LevelConvention()


@dataclass
class Waveform:
    """Mono sampled signal with sampling-rate metadata."""

    samples: np.ndarray
    fs: int = DEFAULT_FS

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))

    def level_db(self, conv: LevelConvention = DEFAULT_CONVENTION) -> float:
        return conv.rms_to_spl(self.rms())

    def copy(self) -> "Waveform":
        return Waveform(self.samples.copy(), self.fs)


def set_level(w: Waveform, target_db: float,
              conv: LevelConvention = DEFAULT_CONVENTION) -> Waveform:
    """Scale a waveform so its RMS level equals ``target_db`` under ``conv``."""
    rms = w.rms()
    if rms == 0.0:
        raise ValueError("silent waveform: cannot set level of all-zero signal")
    gain = conv.spl_to_rms(target_db) / rms
    return Waveform(w.samples * gain, w.fs)


def raised_cosine_gate(n_samples: int, fs: int, ramp_dur: float) -> np.ndarray:
    """Gain curve that fades in/out with raised-cosine ramps of ``ramp_dur`` s."""
    g = np.ones(n_samples)
    n_ramp = int(round(ramp_dur * fs))
    if n_ramp == 0:
        return g
    t = np.arange(n_ramp) / fs
    up = 0.5 * (1.0 - np.cos(np.pi * t / ramp_dur))
    g[:n_ramp] = up
    g[n_samples - n_ramp:] = up[::-1]
    return g


def apply_ramps(w: Waveform, ramp_dur: float = DEFAULT_RAMP) -> Waveform:
    """Gate a waveform on and off with raised-cosine ramps."""
    if ramp_dur < 0:
        raise ValueError("ramp duration must be non-negative")
    if 2.0 * ramp_dur > w.duration:
        raise ValueError(
            f"ramps of {ramp_dur} s do not fit in a {w.duration} s waveform")
    if ramp_dur == 0.0:
        return w.copy()
    return Waveform(w.samples * raised_cosine_gate(len(w.samples), w.fs, ramp_dur), w.fs)


def mix_at_snr(target: Waveform, noise: Waveform, snr_db: float | None,
               conv: LevelConvention = DEFAULT_CONVENTION) -> Waveform:
    """Scale the target relative to the noise and add the two.

    The noise is taken as-is (it is assumed to sit at its nominal level);
    the target is rescaled so that level(target) - level(noise) = ``snr_db``.
    ``snr_db=None`` is the target-absent sentinel and returns the noise alone.
    """
    if target.fs != noise.fs:
        raise ValueError("sampling-rate mismatch between target and noise")
    if len(target.samples) != len(noise.samples):
        raise ValueError("length mismatch between target and noise")
    if snr_db is None:
        return noise.copy()
    target_level = noise.level_db(conv) + snr_db
    scaled = set_level(target, target_level, conv)
    return Waveform(scaled.samples + noise.samples, noise.fs)


def rove_level(w: Waveform, rng: np.random.Generator,
               half_range_db: float = 2.5) -> tuple[Waveform, float]:
    """Apply a uniform random overall gain in [-half_range, +half_range] dB."""
    rove_db = float(rng.uniform(-half_range_db, half_range_db))
    gain = 10.0 ** (rove_db / 20.0)
    return Waveform(w.samples * gain, w.fs), rove_db


def hilbert_envelope(w: Waveform) -> np.ndarray:
    """Absolute value of the analytic (Hilbert) signal."""
    return np.abs(scipy.signal.hilbert(w.samples))


@dataclass
class EnvelopeSpectrum:
    """Summary statistics of broadband envelope spectra across a waveform set.

    ``dc_db`` is the mean envelope value expressed on the dB SPL scale of the
    convention (averaged across the set). The per-frequency curves are in dB
    relative to that DC reference, so the spectrum maximum sits near 0 dB.
    """

    freqs_hz: np.ndarray
    median_db: np.ndarray
    p25_db: np.ndarray
    p75_db: np.ndarray
    dc_db: float
    n_waveforms: int
    floor_db: float = field(default=-200.0, repr=False)

    def value_at(self, freq_hz: float, which: str = "median") -> float:
        curve = {"median": self.median_db, "p25": self.p25_db,
                 "p75": self.p75_db}[which]
        return float(curve[np.argmin(np.abs(self.freqs_hz - freq_hz))])


def envelope_spectrum(waveforms: list[Waveform],
                      conv: LevelConvention = DEFAULT_CONVENTION,
                      trim: float = DEFAULT_RAMP,
                      floor_db: float = -200.0) -> EnvelopeSpectrum:
    """Magnitude spectrum of the broadband Hilbert envelope, set statistics.

    The DC reference is the mean of the full-duration envelope. The
    fluctuation spectrum is computed on the envelope with ``trim`` seconds
    cut from each end, which removes the deterministic gating transient of
    the on/off ramps; with ``trim=0`` the full envelope is analysed. Non-DC
    bins are expressed in dB re the DC reference.
    """
    if len(waveforms) == 0:
        raise ValueError("empty waveform set")
    if len(waveforms) < 2:
        raise ValueError("need at least 2 waveforms for set statistics")
    n = len(waveforms[0].samples)
    fs = waveforms[0].fs
    if any(len(w.samples) != n or w.fs != fs for w in waveforms):
        raise ValueError("waveforms must share length and sampling rate")
    n_trim = int(round(trim * fs))
    if 2 * n_trim >= n:
        raise ValueError("trim too long for waveform duration")

    n_seg = n - 2 * n_trim
    curves = np.empty((len(waveforms), n_seg // 2))
    dcs = np.empty(len(waveforms))
    for i, w in enumerate(waveforms):
        env = hilbert_envelope(w)
        dc_mean = env.mean()
        if dc_mean <= 0:
            raise ValueError("silent waveform in envelope analysis")
        dcs[i] = conv.rms_to_spl(dc_mean)
        seg = env[n_trim:n - n_trim] if n_trim else env
        mag = np.abs(np.fft.rfft(seg))[1:n_seg // 2 + 1]
        ref = dc_mean * n_seg
        with np.errstate(divide="ignore"):
            curves[i] = np.maximum(20.0 * np.log10(mag / ref), floor_db)
    freqs = np.fft.rfftfreq(n_seg, 1.0 / fs)[1:n_seg // 2 + 1]
    return EnvelopeSpectrum(
        freqs_hz=freqs,
        median_db=np.median(curves, axis=0),
        p25_db=np.percentile(curves, 25, axis=0),
        p75_db=np.percentile(curves, 75, axis=0),
        dc_db=float(dcs.mean()),
        n_waveforms=len(waveforms),
        floor_db=floor_db,
    )


def write_wav(path, w: Waveform) -> None:
    """Write a mono 32-bit float WAV file."""
    scipy.io.wavfile.write(path, w.fs, w.samples.astype(np.float32))


def read_wav(path) -> Waveform:
    """Read a mono WAV file (32-bit float native, 16-bit PCM rescaled)."""
    fs, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ValueError("only mono WAV files are supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    return Waveform(samples, int(fs))
