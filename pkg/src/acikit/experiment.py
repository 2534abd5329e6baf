"""Trial engine: weighted up-down staircase, block orchestration, preregistered
exclusion rules, and signal-detection metrics.

The staircase follows the weighted one-up one-down rule with an up:down step
ratio of 2.41, which converges to 70.7% correct (p*down = (1-p)*up at
p = 2.41/3.41). A block runs one independent adaptive track.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .waveform import Waveform

log = logging.getLogger(__name__)

TARGET_ABA = "aba"
TARGET_ADA = "ada"
TARGETS = (TARGET_ABA, TARGET_ADA)

UP_DOWN_RATIO = 2.41
MEASURE_START_REVERSAL = 4

PHASE_APPROACH = "approach"
PHASE_MEASURE = "measure"


@dataclass(frozen=True)
class StaircaseState:
    """State of one weighted up-down track."""

    snr_db: float = 0.0
    down_step_db: float = 1.0
    up_down_ratio: float = UP_DOWN_RATIO
    reversal_count: int = 0
    last_direction: str = "none"   # up, down, none
    trial_index: int = 0

    @property
    def up_step_db(self) -> float:
        return self.up_down_ratio * self.down_step_db


def staircase_update(state: StaircaseState, correct: bool) -> StaircaseState:
    """Advance the track by one response.

    Correct answers lower the SNR by the down step; incorrect answers raise
    it by ratio*down. A reversal is counted whenever the movement direction
    changes.
    """
    direction = "down" if correct else "up"
    reversal = state.last_direction not in ("none", direction)
    delta = -state.down_step_db if correct else state.up_step_db
    return replace(
        state,
        snr_db=state.snr_db + delta,
        reversal_count=state.reversal_count + int(reversal),
        last_direction=direction,
        trial_index=state.trial_index + 1,
    )


@dataclass
class TrialRecord:
    trial_index: int
    block_index: int
    noise_kind: str
    noise_seed: int
    target_id: str
    snr_db: float
    rove_db: float
    response: str
    correct: bool
    phase: str

    def __post_init__(self):
        if self.correct != (self.response == self.target_id):
            raise ValueError("correct flag inconsistent with response/target")


@dataclass(frozen=True)
class BlockConfig:
    n_trials: int = 400
    initial_snr_db: float = 0.0
    down_step_db: float = 1.0
    up_down_ratio: float = UP_DOWN_RATIO
    rove_half_range_db: float = 2.5


def draw_targets(n_trials: int, rng: np.random.Generator) -> list[str]:
    """Without-replacement shuffle of an (as near as possible) 50/50 split."""
    half = n_trials // 2
    targets = [TARGET_ABA] * half + [TARGET_ADA] * (n_trials - half)
    perm = rng.permutation(n_trials)
    return [targets[i] for i in perm]


def run_block(listener, block_index: int, noise_kind: str,
              config: BlockConfig, rng: np.random.Generator,
              make_noise=None, make_mixture=None,
              noise_seed_for=None) -> list[TrialRecord]:
    """Run one adaptive track of ``config.n_trials`` trials.

    ``listener`` must provide ``respond(mixture, target_id, snr_db) -> str``
    and a ``needs_audio`` attribute; when False the audio synthesis is
    skipped (useful for purely psychometric observers). ``make_noise(seed)``
    builds the trial's noise token waveform and ``make_mixture(target_id,
    noise_waveform, snr_db, rove_db)`` the roved noisy stimulus.

    On a listener failure the partial log is returned with a warning rather
    than lost.
    """
    state = StaircaseState(snr_db=config.initial_snr_db,
                           down_step_db=config.down_step_db,
                           up_down_ratio=config.up_down_ratio)
    targets = draw_targets(config.n_trials, rng)
    records: list[TrialRecord] = []
    needs_audio = getattr(listener, "needs_audio", True)
    for i, target_id in enumerate(targets):
        seed = int(noise_seed_for(i)) if noise_seed_for is not None \
            else int(rng.integers(0, 2**63 - 1))
        rove_db = float(rng.uniform(-config.rove_half_range_db,
                                    config.rove_half_range_db))
        mixture = None
        if needs_audio:
            noise_w = make_noise(seed)
            mixture = make_mixture(target_id, noise_w, state.snr_db, rove_db)
        try:
            response = listener.respond(mixture, target_id, state.snr_db)
        except Exception:
            log.exception("listener failed at block %d trial %d; "
                          "aborting block with partial log", block_index, i)
            return records
        if response not in TARGETS:
            raise ValueError(f"listener returned invalid response {response!r}")
        correct = response == target_id
        new_state = staircase_update(state, correct)
        phase = (PHASE_MEASURE
                 if new_state.reversal_count >= MEASURE_START_REVERSAL
                 else PHASE_APPROACH)
        records.append(TrialRecord(
            trial_index=i, block_index=block_index, noise_kind=noise_kind,
            noise_seed=seed, target_id=target_id, snr_db=state.snr_db,
            rove_db=rove_db, response=response, correct=correct, phase=phase))
        state = new_state
    _warn_on_response_bias(records, block_index)
    return records


def _warn_on_response_bias(records: list[TrialRecord], block_index: int) -> None:
    if not records:
        return
    ratio = np.mean([r.response == TARGET_ABA for r in records])
    if ratio > 0.60 or ratio < 0.40:
        log.warning("response bias in block %d: %.0f%% 'aba' responses",
                    block_index, 100 * ratio)


class PsychometricObserver:
    """Stochastic observer answering from a logistic psychometric function.

    P(correct | snr) = lapse-free logistic between guess rate 0.5 and 1.
    Used for staircase calibration; ignores the audio entirely.
    """

    needs_audio = False

    def __init__(self, threshold_db: float, slope_db: float,
                 rng: np.random.Generator):
        self.threshold_db = threshold_db
        self.slope_db = slope_db
        self.rng = rng

    def p_correct(self, snr_db: float) -> float:
        z = (snr_db - self.threshold_db) / self.slope_db
        return 0.5 + 0.5 / (1.0 + np.exp(-z))

    def respond(self, mixture, target_id: str, snr_db: float) -> str:
        if self.rng.random() < self.p_correct(snr_db):
            return target_id
        return TARGET_ADA if target_id == TARGET_ABA else TARGET_ABA


# ---------------------------------------------------------------------------
# preregistered exclusion rules


def exclude_approach_phase(records: list[TrialRecord]) -> list[TrialRecord]:
    """Drop all trials of a block before the trial at the 4th reversal.

    Blocks that never reach 4 reversals are excluded entirely (warning).
    """
    if not records:
        return []
    blocks = sorted({r.block_index for r in records})
    if len(blocks) > 1:
        out: list[TrialRecord] = []
        for b in blocks:
            out.extend(exclude_approach_phase(
                [r for r in records if r.block_index == b]))
        return out
    kept = [r for r in records if r.phase == PHASE_MEASURE]
    if not kept:
        log.warning("block %d has fewer than %d reversals; block excluded",
                    records[0].block_index, MEASURE_START_REVERSAL)
    return kept


def balance_responses(records: list[TrialRecord]) -> list[TrialRecord]:
    """Equalize 'aba' and 'ada' response counts.

    Only majority-response trials are removed, taken from the extremes of
    the SNR-sorted majority list, alternating max end then min end.
    """
    n_aba = sum(r.response == TARGET_ABA for r in records)
    n_ada = len(records) - n_aba
    if n_aba == n_ada:
        return list(records)
    majority = TARGET_ABA if n_aba > n_ada else TARGET_ADA
    excess = abs(n_aba - n_ada)
    maj_sorted = sorted((r for r in records if r.response == majority),
                        key=lambda r: (r.snr_db, r.block_index, r.trial_index))
    drop = set()
    lo, hi = 0, len(maj_sorted) - 1
    for k in range(excess):
        if k % 2 == 0:
            drop.add(id(maj_sorted[hi])); hi -= 1
        else:
            drop.add(id(maj_sorted[lo])); lo += 1
    return [r for r in records if id(r) not in drop]


# ---------------------------------------------------------------------------
# behavioral metrics


def _clamped_rate(k: int, n: int) -> float:
    """Hit/false-alarm rate clamped away from 0 and 1 by 1/(2n)."""
    return float(np.clip(k / n, 1.0 / (2 * n), 1.0 - 1.0 / (2 * n)))


def dprime_criterion(hit_rate: float, fa_rate: float) -> tuple[float, float]:
    """Classic equal-variance signal detection indices from two rates."""
    zh = scipy.stats.norm.ppf(hit_rate)
    zf = scipy.stats.norm.ppf(fa_rate)
    return float(zh - zf), float(-(zh + zf) / 2.0)


@dataclass
class SnrBinMetrics:
    snr_center_db: float
    n_aba: int
    n_ada: int
    pc_aba: float      # P(resp aba | aba presented), correct rejections
    pc_ada: float      # P(resp ada | ada presented), hits
    dprime: float
    criterion: float


def behavioral_metrics(records: list[TrialRecord],
                       bin_width_db: float = 1.0) -> list[SnrBinMetrics]:
    """Per-SNR-bin percent correct, d' and criterion.

    /ada/ plays the target-present role: hit = P(resp ada | ada),
    false alarm = P(resp ada | aba). Bins without both stimulus classes are
    omitted.
    """
    if not records:
        return []
    out = []
    centers = sorted({_bin_center(r.snr_db, bin_width_db) for r in records})
    for c in centers:
        in_bin = [r for r in records if _bin_center(r.snr_db, bin_width_db) == c]
        aba = [r for r in in_bin if r.target_id == TARGET_ABA]
        ada = [r for r in in_bin if r.target_id == TARGET_ADA]
        if not aba or not ada:
            continue
        hits = sum(r.response == TARGET_ADA for r in ada)
        fas = sum(r.response == TARGET_ADA for r in aba)
        hr = _clamped_rate(hits, len(ada))
        fr = _clamped_rate(fas, len(aba))
        d, crit = dprime_criterion(hr, fr)
        out.append(SnrBinMetrics(
            snr_center_db=c, n_aba=len(aba), n_ada=len(ada),
            pc_aba=1.0 - fas / len(aba), pc_ada=hits / len(ada),
            dprime=d, criterion=crit))
    return out


def _bin_center(snr_db: float, width: float) -> float:
    return float(np.floor(snr_db / width + 0.5) * width)


def block_threshold(records: list[TrialRecord]) -> float:
    """Mean SNR over a block's measuring-phase trials."""
    snrs = [r.snr_db for r in records if r.phase == PHASE_MEASURE]
    if not snrs:
        raise ValueError("no measuring-phase trials in block")
    return float(np.mean(snrs))


def percent_correct(records: list[TrialRecord]) -> float:
    if not records:
        raise ValueError("no trials")
    return 100.0 * float(np.mean([r.correct for r in records]))
