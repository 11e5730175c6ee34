"""Covariance of the unknown-channel-plus-noise term and the Gaussian log-likelihood.

``C = sum_k lam_k**2 |gamma_k|**2 s_k s_k^H + sigma2 I_T`` is kept as its
inverse together with ``ln|C|``. Single-device changes are applied with the
Sherman-Morrison formula and the matrix determinant lemma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DenominatorUnderflow(ArithmeticError):
    """Sherman-Morrison downdate denominator lost to cancellation."""


@dataclass
class CovarianceState:
    c_inv: np.ndarray
    log_det_c: float
    sigma2: float
    refresh_counter: int = 0

    @property
    def T(self) -> int:
        return self.c_inv.shape[0]

    def copy(self) -> "CovarianceState":
        return CovarianceState(self.c_inv.copy(), self.log_det_c, self.sigma2, self.refresh_counter)


def covariance_matrix(gamma, lam, pilots, sigma2) -> np.ndarray:
    weights = np.asarray(lam, dtype=float) ** 2 * np.abs(gamma) ** 2
    T = pilots.shape[1]
    # sum_k w_k s_k s_k^H with s_k = pilots[k] as a column
    return (pilots.T * weights) @ pilots.conj() + sigma2 * np.eye(T)


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def build_covariance(gamma, lam, pilots, sigma2: float) -> CovarianceState:
    gamma = np.asarray(gamma)
    lam = np.asarray(lam, dtype=float)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2!r}")
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(lam)) and np.all(np.isfinite(pilots))):
        raise ValueError("non-finite input to build_covariance")
    if gamma.shape != lam.shape or pilots.shape[0] != gamma.shape[0]:
        raise ValueError(
            f"dimension mismatch: gamma {gamma.shape}, lam {lam.shape}, pilots {pilots.shape}"
        )
    c = covariance_matrix(gamma, lam, pilots, sigma2)
    chol = np.linalg.cholesky(c)
    log_det = 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))
    eye = np.eye(c.shape[0])
    chol_inv = np.linalg.solve(chol, eye)
    c_inv = chol_inv.conj().T @ chol_inv
    return CovarianceState(_hermitize(c_inv), log_det, float(sigma2))


def downdate_inverse(c_inv, lam_k: float, gamma_k: complex, pilot_k, sigma2: float):
    """Remove device ``k`` from ``C``.

    Returns ``(C_{-k}^{-1}, d)`` with ``ln|C_{-k}| = ln|C| + d``. Raises
    :class:`DenominatorUnderflow` when ``1 - lam**2 |gamma|**2 s^H C^{-1} s``
    is at or below ``1e-12 / sigma2``.
    """
    w = lam_k * lam_k * (gamma_k.real * gamma_k.real + gamma_k.imag * gamma_k.imag)
    if w == 0.0:
        return c_inv, 0.0
    u = c_inv @ pilot_k
    den = 1.0 - w * np.vdot(pilot_k, u).real
    if den <= 1e-12 / sigma2:
        raise DenominatorUnderflow(f"downdate denominator {den!r}")
    out = c_inv + (w / den) * np.outer(u, u.conj())
    return _hermitize(out), math.log(den)


def update_inverse(c_minus_inv, r_new: float, lam_k: float, pilot_k):
    """Add device ``k`` with amplitude ``r_new`` to ``C_{-k}``.

    Returns ``(C^{-1}, d)`` with ``ln|C| = ln|C_{-k}| + d``.
    """
    if r_new < 0:
        raise ValueError(f"amplitude must be nonnegative, got {r_new!r}")
    w = (r_new * lam_k) ** 2
    if w == 0.0:
        return c_minus_inv, 0.0
    u = c_minus_inv @ pilot_k
    den = 1.0 + w * np.vdot(pilot_k, u).real
    out = c_minus_inv - (w / den) * np.outer(u, u.conj())
    return _hermitize(out), math.log(den)


def log_likelihood(y, gamma, g, pilots, state: CovarianceState) -> float:
    """Gaussian log-likelihood of all antennas given ``gamma``.

    ``-M ln|C| - M T ln(pi) - sum_m Theta_m^H C^{-1} Theta_m`` with
    ``Theta_m = y_m - sum_k g_{k,m} s_k gamma_k``.
    """
    T, M = y.shape
    theta = y - pilots.T @ (gamma[:, None] * g)
    quad = np.real(np.sum(theta.conj() * (state.c_inv @ theta)))
    return float(-M * state.log_det_c - M * T * math.log(math.pi) - quad)


def refresh(state: CovarianceState, gamma, lam, pilots) -> CovarianceState:
    """Rebuild the state from scratch, discarding accumulated rounding error."""
    return build_covariance(gamma, lam, pilots, state.sigma2)
