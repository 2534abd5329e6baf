"""Artificial listener: auditory-model internal representations and a biased
template-matching decision rule.

Front end: linear-phase middle-ear band-pass, gammatone filterbank, half-wave
rectification with 770-Hz low-pass, five adaptation loops, and a Q=1
modulation filterbank. The decision compares the unit-normalized internal
representation of the mixture against two stored templates built from each
target in white noise, with a slowly adapting bias that balances the response
ratio.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .gammatone import GammatoneFilterbank, band_centers
from .noisegen import WHITE, NoiseSpec, generate
from .waveform import DEFAULT_CONVENTION, LevelConvention, Waveform, mix_at_snr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """Auditory-model and decision parameters."""

    fs: int = 16000
    # middle ear (linear-phase FIR band-pass)
    middle_ear_lo_hz: float = 450.0
    middle_ear_hi_hz: float = 7900.0
    middle_ear_taps: int = 512
    # peripheral filtering / envelope
    n_bands: int = 64
    env_lowpass_hz: float = 770.0
    env_lowpass_order: int = 5
    env_fs: int = 2000              # internal envelope sampling rate
    # adaptation loops
    adapt_tau_s: tuple = (0.005, 0.050, 0.129, 0.253, 0.500)
    adapt_overshoot_limit: float = 5.0
    adapt_min_level: float = 1e-5   # 0 dB SPL under the RMS-1 = 100 dB convention
    # modulation filterbank
    mod_centers_hz: tuple = (2.5, 5.0, 10.0, 20.0, 40.0, 77.0)
    mod_lowpass_hz: float = 1.5
    mod_q: float = 1.0
    mod_attach_ratio: float = 4.0   # channel attached iff band fc > ratio * mfc
    # output framing
    frame_dur_s: float = 0.01
    # templates
    template_snr_db: float = -6.0
    template_n_realizations: int = 100
    subtract_noise_reference: bool = False
    # decision
    bias_step: float = 0.01
    # SNRs at which common-mode (nuisance) directions are sampled so the
    # decision variable stays centred across presentation levels
    nuisance_snrs_db: tuple = (12.0, 6.0, 0.0, -12.0)
    nuisance_n_tokens: int = 6


@dataclass
class Template:
    target_id: str
    values: np.ndarray            # (n_frames, n_bands, n_mod) unit energy
    snr_db: float
    n_realizations: int
    noise_kind: str = WHITE

    @property
    def vec(self) -> np.ndarray:
        return self.values.ravel()


@dataclass
class DecisionTemplates:
    """Template pair plus the calibrated decision direction.

    ``diff_vec`` is the 'ada minus aba' template direction made orthogonal
    to the common nuisance directions (mean template, clean-target common
    component, mean noise-alone representation), so the decision variable
    stays centred near zero across presentation levels. ``d_center`` and
    ``d_scale`` standardize the projection using mixtures at the template
    SNR, putting the decision variable on an O(1) scale commensurate with
    the bias step.
    """

    t_aba: Template
    t_ada: Template
    diff_vec: np.ndarray
    d_center: float = 0.0
    d_scale: float = 1.0

    @property
    def pair(self) -> tuple[Template, Template]:
        return self.t_aba, self.t_ada


@dataclass
class DecisionState:
    """Running response bias; positive bias favours 'ada' decisions."""

    bias: float = 0.0
    n_aba: int = 0
    n_ada: int = 0

    @property
    def imbalance(self) -> float:
        total = self.n_aba + self.n_ada
        return 0.0 if total == 0 else (self.n_ada - self.n_aba) / total


class AuditoryFrontEnd:
    """Stateless transform from waveform to internal representation."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        self.fb = GammatoneFilterbank(band_centers(cfg.n_bands), cfg.fs)
        nyq = cfg.fs / 2
        self._me_fir = scipy.signal.firwin(
            cfg.middle_ear_taps,
            [cfg.middle_ear_lo_hz, min(cfg.middle_ear_hi_hz, nyq - 10.0)],
            pass_zero=False, fs=cfg.fs)
        self._env_sos = scipy.signal.butter(
            cfg.env_lowpass_order, cfg.env_lowpass_hz, fs=cfg.fs, output="sos")
        self._mod_sos = [scipy.signal.butter(
            2, cfg.mod_lowpass_hz, fs=cfg.env_fs, output="sos")]
        for mfc in cfg.mod_centers_hz:
            bw_half = 0.5 / cfg.mod_q
            lo = mfc * (np.sqrt(1.0 + bw_half**2) - bw_half)
            hi = mfc * (np.sqrt(1.0 + bw_half**2) + bw_half)
            self._mod_sos.append(scipy.signal.butter(
                1, [lo, hi], btype="bandpass", fs=cfg.env_fs, output="sos"))
        # attachment mask: modulation channel only for bands with fc > 4*mfc
        mfcs = np.array([cfg.mod_lowpass_hz, *cfg.mod_centers_hz])
        self.attach = (self.fb.centers_hz[:, None]
                       > cfg.mod_attach_ratio * mfcs[None, :])
        self.attach[:, 0] = True      # low-pass channel feeds every band
        self.n_mod = len(mfcs)
        # channels faster than 10 Hz carry envelope (RMS) rather than the
        # signed waveform, which frame averaging would cancel
        self._mod_rms = mfcs > 10.0
        # adaptation constants
        taus = np.asarray(cfg.adapt_tau_s)
        self._adapt_a = np.exp(-1.0 / (taus * cfg.env_fs))
        m = cfg.adapt_min_level
        self._adapt_state0 = m ** (2.0 ** -np.arange(1, len(taus) + 1))
        lim = cfg.adapt_overshoot_limit
        self._adapt_max = (1.0 - self._adapt_state0**2) * lim - 1.0
        self._out_offset = m ** (2.0 ** -len(taus))

    @property
    def n_frames(self) -> int:
        return 86

    def _adaptation(self, env: np.ndarray) -> np.ndarray:
        """Five divisive adaptation loops with overshoot limiting.

        env: (n_bands, n) non-negative envelope at env_fs. The time recursion
        is sequential; bands run vectorized.
        """
        cfg = self.cfg
        n_bands, n = env.shape
        x = np.maximum(env, cfg.adapt_min_level)
        n_loops = len(self._adapt_a)
        state = np.tile(self._adapt_state0[:, None], (1, n_bands))
        out = np.empty_like(x)
        a = self._adapt_a
        b = 1.0 - a
        mx = self._adapt_max
        for t in range(n):
            v = x[:, t]
            for i in range(n_loops):
                v = v / state[i]
                if mx[i] > 0:
                    over = v > 1.0
                    if over.any():
                        v = np.where(
                            over,
                            1.0 + mx[i] * (1.0 - np.exp(-(v - 1.0) / mx[i])),
                            v)
                state[i] = a[i] * state[i] + b[i] * v
            out[:, t] = v
        return (out - self._out_offset) / (1.0 - self._out_offset) * 100.0

    def internal_representation(self, w: Waveform) -> np.ndarray:
        """Model units, shape (n_frames, n_bands, n_mod)."""
        cfg = self.cfg
        if w.fs != cfg.fs:
            raise ValueError(f"expected fs={cfg.fs}, got {w.fs}")
        n_expected = int(round(self.n_frames * cfg.frame_dur_s * cfg.fs))
        if len(w.samples) != n_expected:
            raise ValueError(
                f"expected {n_expected} samples, got {len(w.samples)}")
        x = scipy.signal.fftconvolve(w.samples, self._me_fir, mode="same")
        bands = self.fb.filter(x)
        env = scipy.signal.sosfilt(self._env_sos, np.maximum(bands, 0.0), axis=1)
        # decimate to the internal envelope rate by block averaging
        dec = cfg.fs // cfg.env_fs
        n_env = env.shape[1] // dec
        env = env[:, :n_env * dec].reshape(env.shape[0], n_env, dec).mean(axis=2)
        adapted = self._adaptation(env)
        frame_len = int(round(cfg.frame_dur_s * cfg.env_fs))
        n_frames = n_env // frame_len
        ir = np.empty((n_frames, adapted.shape[0], self.n_mod))
        for j, sos in enumerate(self._mod_sos):
            mod = scipy.signal.sosfilt(sos, adapted, axis=1)
            fr = mod[:, :n_frames * frame_len]
            fr = fr.reshape(mod.shape[0], n_frames, frame_len)
            if self._mod_rms[j]:
                fr = np.sqrt(np.mean(fr**2, axis=2))
            else:
                fr = fr.mean(axis=2)
            ir[:, :, j] = fr.T
        ir *= self.attach[None, :, :]
        return ir


def _normalized_ir_vec(front_end: AuditoryFrontEnd, w: Waveform) -> np.ndarray:
    ir = front_end.internal_representation(w).ravel()
    norm = np.linalg.norm(ir)
    return ir / norm if norm > 0 else ir


def _orthogonalize(vec: np.ndarray, nuisance: list[np.ndarray]) -> np.ndarray:
    v = vec.copy()
    basis = []
    for raw in nuisance:
        u = raw.copy()
        for b in basis:
            u -= (u @ b) * b
        n = np.linalg.norm(u)
        if n > 1e-12:
            basis.append(u / n)
    for b in basis:
        v -= (v @ b) * b
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("decision direction vanished in orthogonalization")
    return v / n


def derive_templates(target_aba: Waveform, target_ada: Waveform,
                     front_end: AuditoryFrontEnd,
                     rng: np.random.Generator,
                     conv: LevelConvention = DEFAULT_CONVENTION,
                     noise_spec: NoiseSpec | None = None,
                     n_calibration: int = 20) -> DecisionTemplates:
    """Build the template pair and the calibrated decision direction.

    Each target is embedded in fresh white-noise tokens at the template SNR;
    the mean internal representation (optionally minus a noise-alone
    reference) is normalized to unit energy. The same noise realizations
    serve both targets, so their common contribution cancels from the
    template difference that drives the decision. The difference direction
    is orthogonalized against the mean template, the clean-target common
    component and the mean noise-alone representation, then standardized on
    fresh calibration mixtures. The same white-noise templates serve all
    masker conditions.
    """
    cfg = front_end.cfg
    if noise_spec is None:
        noise_spec = NoiseSpec(kind=WHITE, fs=cfg.fs)
    acc = {"aba": None, "ada": None}
    ref = None
    noise_mean = None
    n_noise_ref = min(20, cfg.template_n_realizations)
    for i in range(cfg.template_n_realizations):
        seed = int(rng.integers(0, 2**63 - 1))
        token = generate(noise_spec, seed, conv)
        for target, tid in ((target_aba, "aba"), (target_ada, "ada")):
            mix = mix_at_snr(target, token.waveform, cfg.template_snr_db, conv)
            ir = front_end.internal_representation(mix)
            acc[tid] = ir if acc[tid] is None else acc[tid] + ir
        if i < n_noise_ref:
            ir0 = front_end.internal_representation(token.waveform)
            noise_mean = ir0 if noise_mean is None else noise_mean + ir0
    noise_mean /= n_noise_ref
    if cfg.subtract_noise_reference:
        ref = noise_mean
    templates = []
    for tid in ("aba", "ada"):
        mean_ir = acc[tid] / cfg.template_n_realizations
        if ref is not None:
            mean_ir = mean_ir - ref
        energy = np.sqrt(np.sum(mean_ir**2))
        if energy == 0:
            raise ValueError(f"degenerate template for {tid}: zero energy")
        templates.append(Template(target_id=tid, values=mean_ir / energy,
                                  snr_db=cfg.template_snr_db,
                                  n_realizations=cfg.template_n_realizations))
    t_aba, t_ada = templates

    clean_common = (front_end.internal_representation(target_aba).ravel()
                    + front_end.internal_representation(target_ada).ravel())
    nuisance = [t_aba.vec + t_ada.vec, clean_common, noise_mean.ravel()]
    for snr in cfg.nuisance_snrs_db:
        acc_c = None
        for _ in range(cfg.nuisance_n_tokens):
            seed = int(rng.integers(0, 2**63 - 1))
            token = generate(noise_spec, seed, conv)
            for target in (target_aba, target_ada):
                mix = mix_at_snr(target, token.waveform, snr, conv)
                ir = front_end.internal_representation(mix).ravel()
                acc_c = ir if acc_c is None else acc_c + ir
        nuisance.append(acc_c)
    diff = _orthogonalize(t_ada.vec - t_aba.vec, nuisance)

    # standardize the projection on fresh calibration mixtures
    proj = []
    for _ in range(n_calibration):
        seed = int(rng.integers(0, 2**63 - 1))
        token = generate(noise_spec, seed, conv)
        for target in (target_aba, target_ada):
            mix = mix_at_snr(target, token.waveform, cfg.template_snr_db, conv)
            proj.append(_normalized_ir_vec(front_end, mix) @ diff)
    proj = np.array(proj)
    d_center = float(proj.mean()) if len(proj) else 0.0
    d_scale = float(proj.std()) if len(proj) > 1 and proj.std() > 0 else 1.0
    return DecisionTemplates(t_aba=t_aba, t_ada=t_ada, diff_vec=diff,
                             d_center=d_center, d_scale=d_scale)


def decide(mixture: Waveform, templates: DecisionTemplates,
           state: DecisionState,
           front_end: AuditoryFrontEnd) -> tuple[str, DecisionState]:
    """Template-matching decision with adaptive response-balancing bias.

    The decision variable is the standardized projection of the
    unit-normalized mixture representation onto the calibrated template
    difference, plus the current bias; 'ada' wins strictly positive values,
    ties go to 'aba'. After responding, the bias moves against the running
    response imbalance.
    """
    u = _normalized_ir_vec(front_end, mixture)
    d = float((u @ templates.diff_vec - templates.d_center)
              / templates.d_scale + state.bias)
    response = "ada" if d > 0 else "aba"
    cfg = front_end.cfg
    new_state = DecisionState(
        bias=state.bias,
        n_aba=state.n_aba + (response == "aba"),
        n_ada=state.n_ada + (response == "ada"))
    new_state.bias = state.bias - cfg.bias_step * new_state.imbalance
    return response, new_state


class TemplateListener:
    """Stateful trial-by-trial listener for the experiment engine."""

    needs_audio = True

    def __init__(self, templates: DecisionTemplates,
                 front_end: AuditoryFrontEnd,
                 state: DecisionState | None = None):
        self.templates = templates
        self.front_end = front_end
        self.state = state or DecisionState()

    def respond(self, mixture: Waveform, target_id: str, snr_db: float) -> str:
        response, self.state = decide(mixture, self.templates, self.state,
                                      self.front_end)
        return response
