"""Out-of-sample evaluation: deviance and accuracy benefits, significance,
chance boundaries, incorrect-trials variants, and cross-prediction matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .glm import (ACI, CVResult, FitDataset, deviance_per_trial, sigmoid)
from .tfrep import VECTOR_LEN

log = logging.getLogger(__name__)

ONE_SIDED_Z = 1.645      # 95% one-sided normal quantile (chance boundary)
SEM_FACTOR = 1.64        # confidence factor on fold-wise SEM

ALL_TRIALS = "all_trials"
INCORRECT_ONLY = "incorrect_only"


def cvd_per_trial(aci: ACI, X: np.ndarray, y: np.ndarray) -> float:
    """Mean deviance (-2 log-likelihood) per trial of the model on a test set."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty test set")
    eta = (X / aci.x_scale) @ aci.weights_vec + aci.intercept
    return deviance_per_trial(eta, np.asarray(y, dtype=float))


def prediction_accuracy(aci: ACI, X: np.ndarray, y: np.ndarray,
                        condition_on: str = "response") -> float:
    """Percent coincidence between model predictions and actual responses.

    A trial scores 1 when the predicted probability of 'aba' is >= 0.5 and
    the participant answered 'aba' (y=1), or < 0.5 and they answered 'ada'.
    ``condition_on="target"`` instead scores against the presented target
    (requires y to carry targets); the response reading is the default.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty test set")
    eta = (X / aci.x_scale) @ aci.weights_vec + aci.intercept
    p = sigmoid(eta)
    predicted_aba = p >= 0.5
    actual_aba = np.asarray(y).astype(bool)
    return 100.0 * float(np.mean(predicted_aba == actual_aba))


def delta_pa(pa: float, pa_null: float) -> float:
    """Chance-corrected accuracy benefit: (PA - PA0) / (100 - PA0) * 100."""
    if pa_null >= 100.0:
        return 0.0
    return (pa - pa_null) / (100.0 - pa_null) * 100.0


def significance(per_fold_delta_cvd: np.ndarray) -> bool:
    """Significant benefit: mean + 1.64 * SEM below zero (one-sided)."""
    v = np.asarray(per_fold_delta_cvd, dtype=float)
    if len(v) < 2:
        raise ValueError("need at least 2 folds for a SEM-based test")
    sem = v.std(ddof=1) / np.sqrt(len(v))
    return bool(v.mean() + SEM_FACTOR * sem < 0.0)


def chance_boundary(n_trials: int, one_sided_z: float = ONE_SIDED_Z) -> float:
    """Accuracy (percent) above which a Binomial(n, 0.5) predictor is unlikely.

    Normal approximation; the matching delta-PA boundary is
    2 * (boundary - 50).
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    return 50.0 + 100.0 * one_sided_z * np.sqrt(0.25 / n_trials)


def chance_boundary_delta_pa(n_trials: int,
                             one_sided_z: float = ONE_SIDED_Z) -> float:
    return 2.0 * (chance_boundary(n_trials, one_sided_z) - 50.0)


@dataclass
class PredictionReport:
    """Fold-wise out-of-sample benefit of a fitted model over the null model."""

    variant: str
    delta_cvd_t: float
    delta_pa: float
    per_fold_delta_cvd: np.ndarray
    per_fold_delta_pa: np.ndarray
    significant: bool
    n_trials: int
    pa: float = float("nan")
    pa_null: float = float("nan")
    n_folds_used: int = 0

    def summary(self) -> str:
        flag = "significant" if self.significant else "not significant"
        return (f"{self.variant}: dCVD_t={self.delta_cvd_t:+.4e} "
                f"dPA={self.delta_pa:+.2f}% ({flag}, n={self.n_trials})")


def _fold_eval(model_eta, null_eta, y):
    """Per-fold deviance/accuracy of model vs null on one held-out fold."""
    dev_m = deviance_per_trial(model_eta, y)
    dev_0 = deviance_per_trial(null_eta, y)
    pa_m = 100.0 * np.mean((sigmoid(model_eta) >= 0.5) == y.astype(bool))
    pa_0 = 100.0 * np.mean((sigmoid(null_eta) >= 0.5) == y.astype(bool))
    return dev_m - dev_0, delta_pa(pa_m, pa_0), pa_m, pa_0


def auto_prediction_report(cv: CVResult, data: FitDataset,
                           basis=None, variant: str = ALL_TRIALS) -> PredictionReport:
    """Benefit of the cross-validated model on its own held-out folds.

    Each fold is scored with the model fitted on the other folds at the
    selected penalty, against the intercept-only null fitted on the same
    training folds. ``variant="incorrect_only"`` restricts scoring to trials
    answered incorrectly (folds without any are skipped with a warning).
    """
    from .glm import default_basis
    if basis is None:
        basis = default_basis()
    Z = data.scaled_X() @ basis.matrix
    y = data.y.astype(float)
    j = cv.lambda_index(cv.lambda_star)
    d_cvd, d_pa, pas, pa0s, n_used = [], [], [], [], 0
    for f in range(cv.n_folds):
        te = cv.fold_ids == f
        if variant == INCORRECT_ONLY:
            te = te & ~data.correct
            if not np.any(te):
                log.warning("fold %d has no incorrect trials; skipped", f)
                continue
        entry = cv.fold_paths[f][j]
        eta_m = Z[te] @ entry.beta + entry.intercept
        eta_0 = np.full(te.sum(), cv.fold_null_intercepts[f])
        dc, dp, pa_m, pa_0 = _fold_eval(eta_m, eta_0, y[te])
        d_cvd.append(dc); d_pa.append(dp); pas.append(pa_m); pa0s.append(pa_0)
        n_used += int(te.sum())
    if not d_cvd:
        raise ValueError(f"no usable folds for variant {variant!r}")
    d_cvd = np.array(d_cvd); d_pa = np.array(d_pa)
    return PredictionReport(
        variant=variant,
        delta_cvd_t=float(d_cvd.mean()),
        delta_pa=float(d_pa.mean()),
        per_fold_delta_cvd=d_cvd,
        per_fold_delta_pa=d_pa,
        significant=significance(d_cvd) if len(d_cvd) >= 2 else False,
        n_trials=n_used,
        pa=float(np.mean(pas)), pa_null=float(np.mean(pa0s)),
        n_folds_used=len(d_cvd))


def incorrect_only_report(cv: CVResult, data: FitDataset,
                          basis=None) -> PredictionReport:
    return auto_prediction_report(cv, data, basis, variant=INCORRECT_ONLY)


def evaluate_on_folds(aci: ACI, data: FitDataset, fold_ids: np.ndarray,
                      variant: str = ALL_TRIALS) -> PredictionReport:
    """Benefit of a fixed (foreign) model on another dataset's folds.

    The model is used as-is (no intercept refit); the null baseline is the
    intercept-only fit on the complement of each fold.
    """
    from .glm import fit_intercept_only
    y = data.y.astype(float)
    k = int(fold_ids.max()) + 1
    Xs = data.X / aci.x_scale
    eta_all = Xs @ aci.weights_vec + aci.intercept
    d_cvd, d_pa, pas, pa0s, n_used = [], [], [], [], 0
    for f in range(k):
        te = fold_ids == f
        c0 = fit_intercept_only(y[~te])
        if variant == INCORRECT_ONLY:
            te = te & ~data.correct
            if not np.any(te):
                log.warning("fold %d has no incorrect trials; skipped", f)
                continue
        eta_m = eta_all[te]
        eta_0 = np.full(int(te.sum()), c0)
        dc, dp, pa_m, pa_0 = _fold_eval(eta_m, eta_0, y[te])
        d_cvd.append(dc); d_pa.append(dp); pas.append(pa_m); pa0s.append(pa_0)
        n_used += int(te.sum())
    if not d_cvd:
        raise ValueError("no usable folds")
    d_cvd = np.array(d_cvd); d_pa = np.array(d_pa)
    return PredictionReport(
        variant=variant,
        delta_cvd_t=float(d_cvd.mean()),
        delta_pa=float(d_pa.mean()),
        per_fold_delta_cvd=d_cvd,
        per_fold_delta_pa=d_pa,
        significant=significance(d_cvd) if len(d_cvd) >= 2 else False,
        n_trials=n_used,
        pa=float(np.mean(pas)), pa_null=float(np.mean(pa0s)),
        n_folds_used=len(d_cvd))


@dataclass
class CrossPredMatrix:
    """Cross-prediction grid: cell (i, j) = model j evaluated on dataset i."""

    keys: list
    delta_pa: np.ndarray
    delta_cvd_t: np.ndarray
    significant: np.ndarray
    source_masked: np.ndarray      # True where the source model was excluded

    def summary(self) -> str:
        lines = ["cross-prediction dPA matrix (rows=data, cols=model):"]
        header = "        " + " ".join(f"{k:>8}" for k in self.keys)
        lines.append(header)
        for i, ki in enumerate(self.keys):
            cells = []
            for j in range(len(self.keys)):
                if self.source_masked[i, j]:
                    cells.append(f"{'--':>8}")
                else:
                    cells.append(f"{self.delta_pa[i, j]:8.2f}")
            lines.append(f"{ki:>8}" + " ".join(cells))
        return "\n".join(lines)


def cross_prediction(cv_results: dict, datasets: dict,
                     require_significant_sources: bool = True) -> CrossPredMatrix:
    """Exchange fitted models across datasets.

    Diagonal cells reproduce the auto-prediction (fold-fitted models);
    off-diagonal cells evaluate the source's final model on the target
    dataset's held-out folds. Sources whose auto-prediction is not
    significant are masked when ``require_significant_sources``.
    """
    if set(cv_results) != set(datasets):
        raise ValueError("cv_results and datasets must share the same keys")
    keys = sorted(cv_results)
    m = len(keys)
    dpa = np.full((m, m), np.nan)
    dcvd = np.full((m, m), np.nan)
    sig = np.zeros((m, m), dtype=bool)
    masked = np.zeros((m, m), dtype=bool)
    autos = {k: auto_prediction_report(cv_results[k], datasets[k]) for k in keys}
    for j, kj in enumerate(keys):
        source_ok = autos[kj].significant or not require_significant_sources
        for i, ki in enumerate(keys):
            if i == j:
                rep = autos[ki]
            elif source_ok:
                rep = evaluate_on_folds(cv_results[kj].aci, datasets[ki],
                                        cv_results[ki].fold_ids)
            else:
                masked[i, j] = True
                continue
            dpa[i, j] = rep.delta_pa
            dcvd[i, j] = rep.delta_cvd_t
            sig[i, j] = rep.significant
    return CrossPredMatrix(keys=keys, delta_pa=dpa, delta_cvd_t=dcvd,
                           significant=sig, source_masked=masked)
