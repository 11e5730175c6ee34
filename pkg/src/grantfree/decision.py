"""Thresholding of activity estimates and miss-detection / false-alarm statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def default_v_grid(n: int = 81, lo: float = -40.0, hi: float = 40.0) -> np.ndarray:
    return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class DetectionReport:
    estimated_active: frozenset[int]
    p_md: float
    p_fa: float
    v_db: float
    mse: float


def threshold_for(v_db, snr):
    """Per-device activity threshold ``v / sqrt(SNR_k)`` with ``v = 10**(v_db / 20)``."""
    snr = np.asarray(snr, dtype=float)
    if np.any(snr <= 0):
        raise ValueError("SNR must be positive")
    out = 10.0 ** (np.asarray(v_db, dtype=float) / 20.0) / np.sqrt(snr)
    return float(out) if out.ndim == 0 else out


def detect(gamma_hat, thresholds) -> set[int]:
    gamma_hat = np.asarray(gamma_hat)
    thresholds = np.asarray(thresholds, dtype=float)
    if gamma_hat.shape != thresholds.shape:
        raise ValueError(f"length mismatch: {gamma_hat.shape} vs {thresholds.shape}")
    return set(np.flatnonzero(np.abs(gamma_hat) >= thresholds).tolist())


def rates(true_active, estimated_active, K: int) -> tuple[float, float]:
    """``(p_md, p_fa)``; an empty denominator gives a rate of 0."""
    true_active = set(true_active)
    estimated_active = set(estimated_active)
    n_active = len(true_active)
    p_md = 1.0 - len(true_active & estimated_active) / n_active if n_active else 0.0
    p_fa = len(estimated_active - true_active) / (K - n_active) if n_active < K else 0.0
    return p_md, p_fa


def mse(gamma_hat, gamma_true) -> float:
    diff = np.asarray(gamma_hat) - np.asarray(gamma_true)
    return float(np.mean(np.abs(diff) ** 2))


def report(gamma_hat, gamma_true, true_active, snr, v_db: float) -> DetectionReport:
    est = detect(gamma_hat, threshold_for(v_db, snr))
    p_md, p_fa = rates(true_active, est, len(gamma_hat))
    return DetectionReport(frozenset(est), p_md, p_fa, float(v_db), mse(gamma_hat, gamma_true))


def trial_rates(gamma_hat, true_mask, snr, v_grid_db) -> tuple[np.ndarray, np.ndarray]:
    """Per-threshold ``(p_md, p_fa)`` arrays for one trial, vectorized over the grid.

    Same decisions as :func:`detect` applied to :func:`threshold_for` at each
    grid point.
    """
    amp = np.abs(np.asarray(gamma_hat))
    true_mask = np.asarray(true_mask, dtype=bool)
    thr = threshold_for(np.asarray(v_grid_db)[:, None], np.asarray(snr)[None, :])
    detected = amp[None, :] >= thr  # (V, K)
    n_act = int(true_mask.sum())
    n_inact = true_mask.size - n_act
    hits = detected[:, true_mask].sum(axis=1)
    false = detected[:, ~true_mask].sum(axis=1)
    p_md = 1.0 - hits / n_act if n_act else np.zeros(len(thr))
    p_fa = false / n_inact if n_inact else np.zeros(len(thr))
    return np.asarray(p_md, dtype=float), np.asarray(p_fa, dtype=float)


@dataclass
class RocCurve:
    """Trial-averaged ROC with the per-trial values kept for error bars."""

    v_db: np.ndarray
    p_md_trials: np.ndarray  # (N, V)
    p_fa_trials: np.ndarray  # (N, V)

    @property
    def p_md(self) -> np.ndarray:
        return self.p_md_trials.mean(axis=0)

    @property
    def p_fa(self) -> np.ndarray:
        return self.p_fa_trials.mean(axis=0)

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.v_db.tolist(), self.p_md.tolist(), self.p_fa.tolist()))

    def p_md_at(self, target_pfa: float) -> tuple[float, float]:
        """P_md at a target P_fa with its Monte-Carlo standard error.

        Linear interpolation in ``log(P_fa)`` between the two grid points that
        bracket the target (linear in ``P_fa`` when the lower one is zero). The
        standard error uses the same interpolation weights on the per-trial
        values. Targets outside the curve clamp to the nearest end.
        """
        return interpolate_pmd(self.v_db, self.p_md_trials, self.p_fa_trials, target_pfa)


def roc(gamma_hat_trials, true_masks, snr_trials, v_grid_db=None) -> RocCurve:
    v = default_v_grid() if v_grid_db is None else np.asarray(v_grid_db, dtype=float)
    md, fa = [], []
    for gh, mask, snr in zip(gamma_hat_trials, true_masks, snr_trials):
        a, b = trial_rates(gh, mask, snr, v)
        md.append(a)
        fa.append(b)
    return RocCurve(v, np.array(md), np.array(fa))


def interpolate_pmd(v_db, p_md_trials, p_fa_trials, target_pfa: float) -> tuple[float, float]:
    if not 0.0 < target_pfa < 1.0:
        raise ValueError(f"target P_fa must lie in (0, 1), got {target_pfa!r}")
    p_md_trials = np.atleast_2d(p_md_trials)
    p_fa_trials = np.atleast_2d(p_fa_trials)
    n = p_md_trials.shape[0]
    fa = p_fa_trials.mean(axis=0)
    # fa is non-increasing along the v grid
    idx = np.flatnonzero(fa >= target_pfa)
    if idx.size == 0:
        per_trial = p_md_trials[:, 0]
    elif idx[-1] == fa.size - 1:
        per_trial = p_md_trials[:, -1]
    else:
        i = int(idx[-1])
        f0, f1 = fa[i], fa[i + 1]
        if f0 == f1:
            w_hi = 0.0
        elif f1 > 0.0:
            w_hi = (math.log(f0) - math.log(target_pfa)) / (math.log(f0) - math.log(f1))
        else:
            w_hi = (f0 - target_pfa) / (f0 - f1)
        per_trial = (1.0 - w_hi) * p_md_trials[:, i] + w_hi * p_md_trials[:, i + 1]
    mean = float(per_trial.mean())
    se = float(per_trial.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return mean, se
