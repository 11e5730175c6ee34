"""System model: pilots, partial-CSI channels, device activity and received preambles.

Array conventions used throughout the package:

* pilots ``s`` have shape ``(K, T)``; row ``k`` is the preamble of device ``k``.
* channels ``g`` and ``h`` have shape ``(K, M)``.
* received preambles ``y`` have shape ``(T, M)``; column ``m`` is ``y_m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np


def crandn(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    """Draw circularly-symmetric complex Gaussian samples with variance ``scale**2``."""
    std = scale / math.sqrt(2.0)
    return rng.normal(0.0, std, shape) + 1j * rng.normal(0.0, std, shape)


@dataclass
class SystemConfig:
    """Simulation knobs. Defaults follow the paper's default parameter table."""

    K: int = 500
    M: int = 64
    T: int = 10
    snr_db: float = 20.0
    epsilon_a: float = 0.1
    lam: float = 0.3
    rho: float = 1.0
    beta: float = 1.0
    n_trials: int = 10_000
    n_sweeps: int = 4
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("K", "M", "T", "n_trials", "n_sweeps"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.epsilon_a <= 1.0:
            raise ValueError(f"epsilon_a must lie in [0, 1], got {self.epsilon_a!r}")
        if not self.lam >= 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam!r}")
        if not self.rho > 0.0:
            raise ValueError(f"rho must be > 0, got {self.rho!r}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta!r}")
        if self.lam**2 > self.beta:
            raise ValueError(f"lam**2 = {self.lam**2!r} exceeds beta = {self.beta!r}")
        if not math.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def sigma2(self) -> float:
        """Noise variance such that ``M * beta / sigma2`` equals the configured SNR."""
        return self.M * self.beta / self.snr_linear

    def lambdas(self) -> np.ndarray:
        return np.full(self.K, float(self.lam))

    def betas(self) -> np.ndarray:
        return np.full(self.K, float(self.beta))

    def rhos(self) -> np.ndarray:
        return np.full(self.K, float(self.rho))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ChannelSet:
    """Known partial CSI ``g``, true channel ``h = g + lam * eps`` and per-device scales."""

    g: np.ndarray
    lam: np.ndarray
    h: np.ndarray
    beta: np.ndarray

    @property
    def K(self) -> int:
        return self.g.shape[0]

    @property
    def M(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class ActivityVector:
    """Complex activity indicators ``gamma_k = sqrt(rho_k) a_k exp(j phi_k)``."""

    gamma: np.ndarray
    active: np.ndarray | None = field(default=None)

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.gamma)

    @property
    def phase(self) -> np.ndarray:
        phase = np.mod(np.angle(self.gamma), 2 * np.pi)
        return np.where(phase >= 2 * np.pi, 0.0, phase)

    @property
    def active_set(self) -> set[int]:
        if self.active is None:
            raise ValueError("activity flags are only stored for ground-truth vectors")
        return set(np.flatnonzero(self.active).tolist())


@dataclass(frozen=True)
class ReceivedBlock:
    y: np.ndarray  # (T, M)
    sigma2: float

    def __post_init__(self):
        if self.y.ndim != 2:
            raise ValueError(f"y must be a (T, M) array, got shape {self.y.shape}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2!r}")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def M(self) -> int:
        return self.y.shape[1]


def draw_pilots(rng: np.random.Generator, K: int, T: int) -> np.ndarray:
    """Draw a ``(K, T)`` matrix of i.i.d. CN(0, 1) pilot symbols."""
    return crandn(rng, (K, T))


def draw_channels(rng: np.random.Generator, K: int, M: int, lam, beta) -> ChannelSet:
    """Draw partial CSI and true channels.

    ``g`` is CN(0, beta_k - lam_k**2) per entry and ``h = g + lam_k * eps`` with
    unit-variance ``eps``. The stored ``beta`` is the realization value
    ``||g_k||**2 / M + lam_k**2``.
    """
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (K,)).copy()
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (K,))
    if np.any(lam < 0):
        raise ValueError("lam must be nonnegative")
    known = beta - lam**2
    if np.any(known < 0):
        bad = int(np.flatnonzero(known < 0)[0])
        raise ValueError(
            f"device {bad}: lam**2 = {lam[bad] ** 2!r} exceeds beta = {beta[bad]!r}"
        )
    g = crandn(rng, (K, M)) * np.sqrt(known)[:, None]
    eps = crandn(rng, (K, M))
    h = g + lam[:, None] * eps
    # lam_k == 0 must leave h bitwise equal to g
    h[lam == 0] = g[lam == 0]
    beta_real = np.sum(np.abs(g) ** 2, axis=1) / M + lam**2
    return ChannelSet(g=g, lam=lam, h=h, beta=beta_real)


def draw_activity(rng: np.random.Generator, K: int, epsilon_a: float, rho=1.0) -> ActivityVector:
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,))
    active = rng.random(K) < epsilon_a
    phi = rng.uniform(0.0, 2 * np.pi, K)
    gamma = np.where(active, np.sqrt(rho) * np.exp(1j * phi), 0.0 + 0.0j)
    return ActivityVector(gamma=gamma, active=active)


def synthesize_received(
    channels: ChannelSet,
    pilots: np.ndarray,
    gamma: np.ndarray,
    sigma2: float,
    rng: np.random.Generator | None = None,
) -> ReceivedBlock:
    """Form ``y_{t,m} = sum_k h_{k,m} s_{k,t} gamma_k + w_{t,m}``.

    With ``rng=None`` no noise is added; ``sigma2`` is still recorded as the
    noise level the detector should assume.
    """
    K, M = channels.h.shape
    if pilots.shape[0] != K or gamma.shape != (K,):
        raise ValueError(
            f"dimension mismatch: h {channels.h.shape}, pilots {pilots.shape}, gamma {gamma.shape}"
        )
    T = pilots.shape[1]
    y = pilots.T @ (gamma[:, None] * channels.h)
    if rng is not None:
        y = y + crandn(rng, (T, M), math.sqrt(sigma2))
    return ReceivedBlock(y=y, sigma2=float(sigma2))


def device_snr(channels: ChannelSet, sigma2: float, k: int | None = None):
    """Post-array SNR ``(||g_k||**2 + M lam_k**2) / sigma2`` of one device or all devices."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    M = channels.M
    snr = (np.sum(np.abs(channels.g) ** 2, axis=1) + M * channels.lam**2) / sigma2
    return snr if k is None else float(snr[k])


def channel_correlation(h_i: np.ndarray, h_j: np.ndarray) -> float:
    """Normalized correlation ``|h_i^H h_j| / (||h_i|| ||h_j||)``."""
    h_i = np.asarray(h_i)
    h_j = np.asarray(h_j)
    if h_i.shape != h_j.shape:
        raise ValueError(f"length mismatch: {h_i.shape} vs {h_j.shape}")
    ni = np.linalg.norm(h_i)
    nj = np.linalg.norm(h_j)
    if ni == 0 or nj == 0:
        raise ValueError("channel_correlation is undefined for zero-norm channels")
    return float(min(1.0, abs(np.vdot(h_i, h_j)) / (ni * nj)))
