"""Sparse logistic response model in a Gaussian-pyramid basis.

The time-frequency weight matrix is expressed as a linear combination of 2-D
Gaussian elements at four resolutions and fitted by L1-penalized logistic
regression (proximal gradient with acceleration), with the penalty weight
selected by k-fold cross-validated deviance.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .tfrep import N_BANDS, N_FRAMES, VECTOR_LEN, devectorize

log = logging.getLogger(__name__)

PYRAMID_LEVELS = (1, 2, 3, 4)
LAMBDA_GRID_SIZE = 20
LAMBDA_MIN = 1.1e-3
LAMBDA_MAX = 0.1

RESPONSE_ABA = 1    # y coding: aba = 1, ada = 0
RESPONSE_ADA = 0


def default_lambda_grid() -> np.ndarray:
    """Twenty penalty weights, log-spaced, strongest first."""
    return np.logspace(np.log10(LAMBDA_MAX), np.log10(LAMBDA_MIN),
                       LAMBDA_GRID_SIZE)


@dataclass
class PyramidBasis:
    """Multi-resolution 2-D Gaussian dictionary over the (frame, band) grid."""

    matrix: scipy.sparse.csc_matrix          # (VECTOR_LEN, n_elements)
    levels: np.ndarray                       # per column
    center_frames: np.ndarray
    center_bands: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.matrix.shape[1]

    def config_hash(self) -> str:
        key = f"pyramid:{N_FRAMES}x{N_BANDS}:levels={tuple(PYRAMID_LEVELS)}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def build_pyramid_basis(n_frames: int = N_FRAMES,
                        n_bands: int = N_BANDS,
                        levels=PYRAMID_LEVELS,
                        support_sigmas: float = 4.0) -> PyramidBasis:
    """Build the pyramid dictionary.

    Level L uses sigma = L bins in both directions with centres every L bins
    starting at bin 0, truncated at the grid edges (no shape renormalization),
    and each column scaled to unit Euclidean norm.
    """
    rows, cols, vals = [], [], []
    lev_list, cf_list, cb_list = [], [], []
    col = 0
    for lev in levels:
        sigma = float(lev)
        half = int(np.ceil(support_sigmas * sigma))
        for ci in range(0, n_frames, lev):
            for cj in range(0, n_bands, lev):
                i_lo, i_hi = max(0, ci - half), min(n_frames, ci + half + 1)
                j_lo, j_hi = max(0, cj - half), min(n_bands, cj + half + 1)
                ii = np.arange(i_lo, i_hi)
                jj = np.arange(j_lo, j_hi)
                gi = np.exp(-0.5 * ((ii - ci) / sigma) ** 2)
                gj = np.exp(-0.5 * ((jj - cj) / sigma) ** 2)
                patch = np.outer(gi, gj)
                patch /= np.linalg.norm(patch)
                # column-major layout: index = frame + n_frames * band
                idx = (ii[:, None] + n_frames * jj[None, :]).ravel()
                rows.append(idx)
                cols.append(np.full(idx.size, col))
                vals.append(patch.ravel())
                lev_list.append(lev)
                cf_list.append(ci)
                cb_list.append(cj)
                col += 1
    matrix = scipy.sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_frames * n_bands, col))
    return PyramidBasis(matrix=matrix,
                        levels=np.array(lev_list),
                        center_frames=np.array(cf_list),
                        center_bands=np.array(cb_list))


_basis_cache: dict[str, PyramidBasis] = {}


def default_basis() -> PyramidBasis:
    if "default" not in _basis_cache:
        _basis_cache["default"] = build_pyramid_basis()
    return _basis_cache["default"]


@dataclass
class ACI:
    """Fitted (or null) time-frequency weight matrix with intercept."""

    weights: np.ndarray                  # (N_FRAMES, N_BANDS)
    intercept: float
    beta: np.ndarray | None = None       # pyramid coefficients
    lambda_: float | None = None
    is_null: bool = False
    x_scale: float = 1.0
    basis_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (N_FRAMES, N_BANDS):
            raise ValueError("ACI weights must be "
                             f"{N_FRAMES}x{N_BANDS}, got {self.weights.shape}")

    @property
    def weights_vec(self) -> np.ndarray:
        return self.weights.flatten(order="F")


def null_aci(intercept: float = 0.0, x_scale: float = 1.0) -> ACI:
    return ACI(weights=np.zeros((N_FRAMES, N_BANDS)), intercept=intercept,
               beta=None, lambda_=None, is_null=True, x_scale=x_scale)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def predict_prob(aci: ACI, x: np.ndarray) -> np.ndarray | float:
    """Probability of an 'aba' response given vectorized noise envelopes.

    ``x`` is one vector of length 5504 or a matrix (n, 5504) in raw
    (physical) envelope units; the ACI's stored scale is applied internally.
    """
    x = np.asarray(x, dtype=float)
    eta = (x / aci.x_scale) @ aci.weights_vec + aci.intercept
    p = sigmoid(eta)
    return float(p) if np.ndim(p) == 0 else p


@dataclass
class FitDataset:
    """Trial-by-trial predictors and responses for one participant/condition.

    ``X`` holds raw vectorized noise-alone envelope matrices; ``x_scale`` is
    the mean per-column standard deviation, the single global constant that
    brings predictors to unit fluctuation scale so the fixed penalty grid is
    meaningful. ``y`` codes responses (aba=1, ada=0).
    """

    X: np.ndarray
    y: np.ndarray
    correct: np.ndarray
    x_scale: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.correct = np.asarray(self.correct, dtype=bool)
        if self.X.ndim != 2 or self.X.shape[1] != VECTOR_LEN:
            raise ValueError(f"X must be (n, {VECTOR_LEN})")
        if len(self.y) != len(self.X) or len(self.correct) != len(self.X):
            raise ValueError("X, y, correct must have equal length")
        if self.x_scale == 0.0:
            col_std = self.X.std(axis=0)
            self.x_scale = float(col_std.mean()) or 1.0

    @property
    def n_trials(self) -> int:
        return len(self.y)

    def scaled_X(self) -> np.ndarray:
        return self.X / self.x_scale


def _nll_mean(eta: np.ndarray, y: np.ndarray) -> float:
    # mean negative log-likelihood, numerically stable
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def deviance_per_trial(eta: np.ndarray, y: np.ndarray) -> float:
    return 2.0 * _nll_mean(eta, y)


@dataclass
class PathEntry:
    lambda_: float
    beta: np.ndarray
    intercept: float
    converged: bool
    n_iter: int
    train_deviance: float


def fit_lasso_path(Z: np.ndarray, y: np.ndarray,
                   lambdas: np.ndarray | None = None,
                   tol: float = 1e-6, max_iter: int = 10_000,
                   warm_path: list | None = None) -> list[PathEntry]:
    """L1-penalized logistic fits along a penalty path (strongest first).

    Minimizes mean logistic NLL + lambda * ||beta||_1 (intercept unpenalized)
    by iteratively reweighted least squares; each weighted-lasso subproblem
    is solved exactly on its working support (Newton solve with LARS-style
    sign backtracking and KKT screening over all columns), warm-started
    along the path. Convergence is declared when the relative change of the
    penalized objective falls below ``tol`` with clean KKT conditions;
    ``max_iter`` caps the support/Newton iterations per penalty. Degenerate
    all-same-response data yields intercept-only fits with a warning.
    """
    if lambdas is None:
        lambdas = default_lambda_grid()
    lambdas = np.asarray(sorted(lambdas, reverse=True), dtype=float)
    n, p = Z.shape
    y = np.asarray(y, dtype=float)
    ybar = y.mean()
    if ybar in (0.0, 1.0):
        log.warning("degenerate responses (all the same); intercept-only fits")
        c = 37.0 if ybar == 1.0 else -37.0
        eta = np.full(n, c)
        return [PathEntry(l, np.zeros(p), c, True, 0,
                          deviance_per_trial(eta, y)) for l in lambdas]
    ZT = np.ascontiguousarray(Z.T)
    beta = np.zeros(p)
    c = float(np.log(ybar / (1.0 - ybar)))
    out = []
    for j, lam in enumerate(lambdas):
        if warm_path is not None:
            beta = warm_path[j].beta.copy()
            c = warm_path[j].intercept
        beta, c, converged, n_it = _fit_one_lambda(ZT, y, lam, beta, c,
                                                   tol, max_iter)
        eta = beta @ ZT + c
        out.append(PathEntry(float(lam), beta.copy(), float(c),
                             converged, n_it, deviance_per_trial(eta, y)))
        if not converged:
            log.warning("lasso fit did not converge at lambda=%.4g", lam)
    return out


_KKT_SLACK = 1.0 + 1e-4
_W_FLOOR = 1e-5
_MAX_SUPPORT_FRACTION = 0.9   # of n, safety on the dense end


def _objective(eta, y, lam, beta):
    return _nll_mean(eta, y) + lam * np.abs(beta).sum()


class _WeightedGram:
    """Incrementally grown weighted Gram matrix for one (w, support) state.

    The heavy product runs in single precision (conditioning is set by the
    basis overlap, far above float32 noise); solves are double precision.
    """

    def __init__(self, ZT, w, z):
        self.ZT = ZT
        self.n = ZT.shape[1]
        self.w = w
        self.z = z
        self.sw32 = np.sqrt(w).astype(np.float32)
        self.w_sum = float(w.sum())
        self.wz_sum = float((w * z).sum())
        self.sup = np.empty(0, dtype=int)
        self.G = np.empty((0, 0))           # (ZT[sup] W ZT[sup]^T) / n
        self.col = np.empty(0)              # (ZT[sup] w) / n
        self.bvec = np.empty(0)             # (ZT[sup] (w*z)) / n
        self._rows32 = np.empty((0, self.n), dtype=np.float32)

    def set_support(self, sup):
        sup = np.asarray(sup, dtype=int)
        keep_mask = np.isin(self.sup, sup)
        kept = self.sup[keep_mask]
        self.G = self.G[np.ix_(keep_mask, keep_mask)]
        self.col = self.col[keep_mask]
        self.bvec = self.bvec[keep_mask]
        self._rows32 = self._rows32[keep_mask]
        new = sup[~np.isin(sup, kept)]
        if new.size:
            rows = self.ZT[new]
            rows32 = (rows * self.sw32).astype(np.float32)
            cross = (rows32 @ self._rows32.T).astype(np.float64) / self.n
            diag = (rows32 @ rows32.T).astype(np.float64) / self.n
            s_old = len(kept)
            s_new = s_old + len(new)
            G = np.empty((s_new, s_new))
            G[:s_old, :s_old] = self.G
            G[s_old:, :s_old] = cross
            G[:s_old, s_old:] = cross.T
            G[s_old:, s_old:] = diag
            self.G = G
            wrows = rows * self.w
            self.col = np.concatenate([self.col, wrows.sum(axis=1) / self.n])
            self.bvec = np.concatenate([self.bvec, (wrows @ self.z) / self.n])
            self._rows32 = np.vstack([self._rows32, rows32])
            self.sup = np.concatenate([kept, new])
        else:
            self.sup = kept
        return self.sup

    def solve(self, signs, lam):
        s = len(self.sup)
        A = np.empty((s + 1, s + 1))
        A[:s, :s] = self.G
        A[:s, s] = self.col
        A[s, :s] = self.col
        A[s, s] = self.w_sum / self.n
        b = np.empty(s + 1)
        b[:s] = self.bvec - lam * signs
        b[s] = self.wz_sum / self.n
        try:
            sol = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(A, b, rcond=None)[0]
        return sol[:s], float(sol[s])


_DIRECT_SOLVE_MAX = 400


class _CgSupportSolver:
    """Stationarity-system solver on large supports via preconditioned CG.

    Operates on the implicit weighted normal operator, so cost per
    iteration is two (s x n) products and no Gram is ever materialized.
    """

    def __init__(self, ZT, w, z):
        self.ZT = ZT
        self.n = ZT.shape[1]
        self.w = w
        self.wz = w * z
        self.w_sum = float(w.sum())
        self.wz_sum = float(self.wz.sum())

    def solve(self, sup, signs, lam, x0=None, rtol=1e-8):
        Zs = self.ZT[sup]
        n = self.n
        w = self.w
        s = len(sup)
        b = np.concatenate([(Zs @ self.wz) / n - lam * signs,
                            [self.wz_sum / n]])
        col = (Zs * w).sum(axis=1) / n
        diag = (Zs**2 * w).sum(axis=1) / n

        def matvec(v):
            u = Zs.T @ v[:s]
            out_s = (Zs @ (w * u)) / n + col * v[s]
            out_c = col @ v[:s] + self.w_sum / n * v[s]
            return np.concatenate([out_s, [out_c]])

        op = scipy.sparse.linalg.LinearOperator(
            (s + 1, s + 1), matvec=matvec, dtype=float)
        m_diag = np.concatenate([np.maximum(diag, 1e-12),
                                 [max(self.w_sum / n, 1e-12)]])
        pre = scipy.sparse.linalg.LinearOperator(
            (s + 1, s + 1), matvec=lambda v: v / m_diag, dtype=float)
        sol, info = scipy.sparse.linalg.cg(op, b, x0=x0, M=pre,
                                           rtol=rtol, maxiter=300)
        if info != 0:
            log.debug("support CG stopped early (info=%d, s=%d)", info, s)
        return sol[:s], float(sol[s])


def _solve_quadratic_lasso(ZT, w, z, lam, beta0, c0, max_support_iter):
    """Weighted lasso via support iteration: exact solves + KKT screening."""
    p, n = ZT.shape
    beta = beta0.copy()
    c = float(c0)
    gram = _WeightedGram(ZT, w, z)
    cg = _CgSupportSolver(ZT, w, z)
    sup = np.flatnonzero(beta)
    if len(sup) <= _DIRECT_SOLVE_MAX:
        sup = gram.set_support(sup)
    signs = np.sign(beta[sup])
    signs[signs == 0] = 1.0
    n_iter = 0
    max_support = int(_MAX_SUPPORT_FRACTION * n)
    for _ in range(max_support_iter):
        n_iter += 1
        if len(sup):
            warm = None
            for _backtrack in range(len(sup) + 1):
                if len(sup) <= _DIRECT_SOLVE_MAX:
                    cand, c_cand = gram.solve(signs, lam)
                else:
                    cand, c_cand = cg.solve(sup, signs, lam, x0=warm)
                flipped = np.flatnonzero(np.sign(cand) * signs < 0)
                if flipped.size == 0:
                    break
                # move to the first zero crossing on the segment from the
                # current iterate to the candidate and drop that coordinate
                prev = beta[sup]
                delta = cand - prev
                with np.errstate(divide="ignore", invalid="ignore"):
                    tcross = np.where(delta[flipped] != 0.0,
                                      -prev[flipped] / delta[flipped], np.inf)
                t1 = float(np.clip(np.min(tcross), 0.0, 1.0))
                beta_mid = prev + t1 * delta
                drop_mask = np.zeros(len(sup), dtype=bool)
                drop_mask[flipped[np.abs(beta_mid[flipped]) < 1e-12]] = True
                if not drop_mask.any():
                    drop_mask[flipped[int(np.argmin(tcross))]] = True
                beta_mid[drop_mask] = 0.0
                beta[sup] = beta_mid
                keep = ~drop_mask
                sup_new = sup[keep]
                signs = signs[keep]
                if len(sup_new) <= _DIRECT_SOLVE_MAX:
                    sup = gram.set_support(sup_new)
                else:
                    sup = sup_new
                if len(sup) == 0:
                    cand = np.empty(0)
                    c_cand = gram.wz_sum / gram.w_sum
                    break
                warm = np.concatenate([beta[sup], [c_cand]])
            beta = np.zeros(p)
            if len(sup):
                beta[sup] = cand
            c = c_cand
        else:
            c = gram.wz_sum / gram.w_sum
        # KKT over all columns of the quadratic problem
        resid = (beta @ ZT + c - z) * w
        grad = ZT @ resid / n
        ok = np.abs(grad) <= lam * _KKT_SLACK
        ok[sup] = True
        if ok.all():
            return beta, c, True, n_iter
        violators = np.flatnonzero(~ok)
        order = np.argsort(-np.abs(grad[violators]))
        room = max(0, max_support - len(sup))
        if room == 0:
            return beta, c, False, n_iter
        take = violators[order[:min(len(order), 500)]][:room]
        sign_of = dict(zip(sup.tolist(), signs.tolist()))
        sign_of.update(zip(take.tolist(), (-np.sign(grad[take])).tolist()))
        merged = np.concatenate([sup, take]).astype(int)
        sup = (gram.set_support(merged)
               if len(merged) <= _DIRECT_SOLVE_MAX else merged)
        signs = np.array([sign_of[j] for j in sup.tolist()])
    return beta, c, False, n_iter


def _kkt_satisfied(ZT, y, lam, beta, c, slack=1e-3):
    """Optimality of the true penalized logistic objective."""
    n = ZT.shape[1]
    grad = ZT @ (sigmoid(beta @ ZT + c) - y) / n
    on = beta != 0
    if np.any(np.abs(grad[~on]) > lam * (1.0 + slack)):
        return False
    if np.any(np.abs(grad[on] + lam * np.sign(beta[on])) > lam * slack + 1e-8):
        return False
    return abs(np.mean(sigmoid(beta @ ZT + c) - y)) <= 1e-6 + lam * slack


def _fit_one_lambda(ZT, y, lam, beta0, c0, tol, max_iter):
    """IRLS outer loop around exact weighted-lasso subproblem solves."""
    beta, c = beta0.copy(), float(c0)
    eta = beta @ ZT + c
    obj_prev = _objective(eta, y, lam, beta)
    total_iter = 0
    for _round in range(100):
        prob = sigmoid(eta)
        w = np.maximum(prob * (1.0 - prob), _W_FLOOR)
        z = eta + (y - prob) / w
        beta_new, c_new, _sub_ok, n_it = _solve_quadratic_lasso(
            ZT, w, z, lam, beta, c, max_support_iter=60)
        total_iter += n_it
        # damped step if the full IRLS step overshoots the true objective
        step = 1.0
        while step > 1e-4:
            b_try = beta + step * (beta_new - beta)
            c_try = c + step * (c_new - c)
            eta_try = b_try @ ZT + c_try
            obj_try = _objective(eta_try, y, lam, b_try)
            if obj_try <= obj_prev + 1e-12:
                break
            step *= 0.5
        beta, c, eta = b_try, c_try, eta_try
        obj = obj_try
        if abs(obj_prev - obj) <= tol * max(1.0, abs(obj_prev)):
            break
        obj_prev = obj
        if total_iter >= max_iter:
            break
    converged = _kkt_satisfied(ZT, y, lam, beta, c)
    return beta, c, converged, total_iter


def fit_intercept_only(y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    ybar = float(np.clip(y.mean(), 1e-12, 1.0 - 1e-12))
    return float(np.log(ybar / (1.0 - ybar)))


@dataclass
class CVResult:
    """Everything the out-of-sample evaluation needs from one fit."""

    lambda_star: float
    lambda_grid: np.ndarray
    fold_ids: np.ndarray                     # (n_trials,)
    heldout_deviance: np.ndarray             # (k, n_lambda) per-trial deviance
    train_deviance: np.ndarray               # (k, n_lambda)
    fold_paths: list                         # per fold: list[PathEntry]
    fold_null_intercepts: np.ndarray         # (k,)
    aci: ACI                                 # final refit on all data
    no_interior_minimum: bool = False

    @property
    def n_folds(self) -> int:
        return len(self.fold_null_intercepts)

    def lambda_index(self, lam: float) -> int:
        return int(np.argmin(np.abs(self.lambda_grid - lam)))


def cross_validate(data: FitDataset, basis: PyramidBasis | None = None,
                   lambdas: np.ndarray | None = None, k: int = 10,
                   rng: np.random.Generator | None = None,
                   tol: float = 1e-6, max_iter: int = 10_000) -> CVResult:
    """Select the penalty by k-fold cross-validated deviance and refit.

    The final model is refit on all trials at the selected penalty; when the
    deviance curve has no interior minimum and the best fit carries no
    nonzero coefficients, the result is flagged as a null model.
    """
    if basis is None:
        basis = default_basis()
    if lambdas is None:
        lambdas = default_lambda_grid()
    lambdas = np.asarray(sorted(lambdas, reverse=True), dtype=float)
    if rng is None:
        rng = np.random.default_rng(0)
    n = data.n_trials
    if k > n:
        raise ValueError(f"k={k} folds but only {n} trials")
    fold_ids = np.repeat(np.arange(k), int(np.ceil(n / k)))[:n]
    fold_ids = fold_ids[rng.permutation(n)]

    Z = data.scaled_X() @ basis.matrix
    if scipy.sparse.issparse(Z):
        Z = np.asarray(Z.todense())
    y = data.y.astype(float)

    # full-data path first; fold fits warm-start from it (the fold optimum
    # is unique and KKT-verified, so the start point only affects cost)
    full_path = fit_lasso_path(Z, y, lambdas, tol=tol, max_iter=max_iter)
    held = np.empty((k, len(lambdas)))
    train_dev = np.empty((k, len(lambdas)))
    fold_paths = []
    fold_nulls = np.empty(k)
    for f in range(k):
        tr = fold_ids != f
        te = ~tr
        path = fit_lasso_path(Z[tr], y[tr], lambdas, tol=tol,
                              max_iter=max_iter, warm_path=full_path)
        fold_paths.append(path)
        fold_nulls[f] = fit_intercept_only(y[tr])
        for j, entry in enumerate(path):
            eta_te = Z[te] @ entry.beta + entry.intercept
            held[f, j] = deviance_per_trial(eta_te, y[te])
            train_dev[f, j] = entry.train_deviance
    mean_held = held.mean(axis=0)
    j_star = int(np.argmin(mean_held))
    no_interior = j_star in (0, len(lambdas) - 1)
    lam_star = float(lambdas[j_star])
    final = full_path[j_star]
    is_null = not np.any(final.beta)
    weights_vec = basis.matrix @ final.beta
    aci = ACI(weights=devectorize(weights_vec).values,
              intercept=final.intercept,
              beta=final.beta, lambda_=lam_star,
              is_null=is_null, x_scale=data.x_scale,
              basis_hash=basis.config_hash(),
              meta={"k_folds": k, "n_trials": n,
                    "converged": final.converged,
                    "no_interior_minimum": no_interior})
    if is_null and no_interior:
        log.info("penalty selection found no interior minimum; null model")
    return CVResult(lambda_star=lam_star, lambda_grid=lambdas,
                    fold_ids=fold_ids, heldout_deviance=held,
                    train_deviance=train_dev, fold_paths=fold_paths,
                    fold_null_intercepts=fold_nulls, aci=aci,
                    no_interior_minimum=no_interior)
