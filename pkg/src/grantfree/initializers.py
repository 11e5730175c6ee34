"""Starting points for the iterative detector.

All linear initializers treat the partial CSI as the full channel, which turns
detection into the linear model ``y = Gamma @ gamma + w`` where column ``k`` of
``Gamma`` stacks ``g_{k,m} s_k`` over antennas (antenna-major rows: row
``m * T + t`` holds pilot symbol ``t`` seen at antenna ``m``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ActivityVector

ZF_RCOND_MIN = 1e-10


class IllConditioned(np.linalg.LinAlgError):
    """The least-squares Gram matrix is singular or too close to singular."""


@dataclass(frozen=True)
class DesignMatrix:
    gamma_mat: np.ndarray  # (M*T, K)
    y_stacked: np.ndarray  # (M*T,)

    @property
    def K(self) -> int:
        return self.gamma_mat.shape[1]

    def gram(self) -> np.ndarray:
        return self.gamma_mat.conj().T @ self.gamma_mat

    def matched(self) -> np.ndarray:
        return self.gamma_mat.conj().T @ self.y_stacked


def build_design_matrix(g: np.ndarray, pilots: np.ndarray, y: np.ndarray) -> DesignMatrix:
    K, M = g.shape
    T = pilots.shape[1]
    if pilots.shape[0] != K or y.shape != (T, M):
        raise ValueError(f"dimension mismatch: g {g.shape}, pilots {pilots.shape}, y {y.shape}")
    # [m, t, k] = g[k, m] * s[k, t]
    gamma_mat = (g.T[:, None, :] * pilots.T[None, :, :]).reshape(M * T, K)
    return DesignMatrix(gamma_mat, y.T.reshape(M * T))


def prior_moments(epsilon_a: float, rho, K: int) -> np.ndarray:
    """Diagonal of ``E[gamma gamma^H]``: mean activity times mean transmit power."""
    return np.broadcast_to(epsilon_a * np.asarray(rho, dtype=float), (K,)).copy()


def _check_prior(prior) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if np.any(prior <= 0):
        raise ValueError("prior moments must be strictly positive to form D^-1")
    return prior


def init_zero(K: int) -> ActivityVector:
    return ActivityVector(np.zeros(K, dtype=complex))


def init_zf(design: DesignMatrix) -> ActivityVector:
    """Least-squares estimate ``(Gamma^H Gamma)^{-1} Gamma^H y``."""
    n_obs, K = design.gamma_mat.shape
    if K > n_obs:
        raise IllConditioned(f"K = {K} exceeds M*T = {n_obs}")
    gram = design.gram()
    if np.any(np.all(design.gamma_mat == 0, axis=0)):
        raise IllConditioned("design matrix has an all-zero column (device without partial CSI)")
    rcond = 1.0 / np.linalg.cond(gram)
    if not rcond > ZF_RCOND_MIN:
        raise IllConditioned(f"reciprocal condition number {rcond:.3g} below {ZF_RCOND_MIN:g}")
    return ActivityVector(np.linalg.solve(gram, design.matched()))


def init_lmmse(design: DesignMatrix, sigma2: float, prior) -> ActivityVector:
    """LMMSE estimate ``(Gamma^H Gamma + sigma2 D^{-1})^{-1} Gamma^H y``."""
    prior = _check_prior(prior)
    a = design.gram() + np.diag(sigma2 / prior)
    return ActivityVector(np.linalg.solve(a, design.matched()))


def init_mf(design: DesignMatrix, sigma2: float, prior) -> ActivityVector:
    """Matched filter: the LMMSE estimate with the Gram matrix reduced to its diagonal."""
    prior = _check_prior(prior)
    diag = np.sum(np.abs(design.gamma_mat) ** 2, axis=0)
    return ActivityVector(design.matched() / (diag + sigma2 / prior))


def init_genie(true_gamma) -> ActivityVector:
    return ActivityVector(np.array(true_gamma, dtype=complex, copy=True))


INITIALIZERS = ("zero", "zf", "lmmse", "mf", "genie")


def initialize(name: str, design: DesignMatrix, sigma2: float, prior, true_gamma=None) -> ActivityVector:
    if name == "zero":
        return init_zero(design.K)
    if name == "zf":
        return init_zf(design)
    if name == "lmmse":
        return init_lmmse(design, sigma2, prior)
    if name == "mf":
        return init_mf(design, sigma2, prior)
    if name == "genie":
        if true_gamma is None:
            raise ValueError("genie initialization needs the true activity vector")
        return init_genie(true_gamma)
    raise ValueError(f"unknown initializer {name!r}; expected one of {INITIALIZERS}")
