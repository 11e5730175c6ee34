"""Iterative maximum-likelihood activity detector (cyclic coordinate ascent).

Each coordinate step isolates one device, removes it from the covariance with
a rank-one downdate, maximizes the likelihood over its amplitude in closed
form (roots of a cubic) and over its phase, then adds it back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    CovarianceState,
    DenominatorUnderflow,
    build_covariance,
    downdate_inverse,
    log_likelihood,
    update_inverse,
)
from .cubic import real_cubic_roots
from .decision import mse

logger = logging.getLogger(__name__)

EPS_DELTA = 1e-12
EPS_BETA = 1e-12
EPS_PHASE = np.finfo(float).tiny


@dataclass
class DetectorOptions:
    n_sweeps: int = 4
    early_stop_tol: float = math.inf
    ordering: str = "cyclic"
    trace: bool = False
    refresh_every: int | None = 1  # sweeps between direct re-inversions; None disables

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise ValueError(f"n_sweeps must be >= 1, got {self.n_sweeps}")
        if not self.early_stop_tol > 0:
            raise ValueError(f"early_stop_tol must be > 0, got {self.early_stop_tol}")
        if self.ordering != "cyclic":
            raise ValueError(f"unsupported ordering {self.ordering!r}")
        if self.refresh_every is not None and self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1 or None")


@dataclass(frozen=True)
class CubicConstants:
    alpha: float
    beta_c: float
    delta_c: float


@dataclass
class DetectorTrace:
    device: list[int] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)

    def record(self, k: int, ll: float, mse: float) -> None:
        self.device.append(k)
        self.loglik.append(ll)
        self.mse.append(mse)


@dataclass
class RunState:
    """Mutable state of one detector run.

    ``theta`` is the full residual ``y - sum_k g_k s_k gamma_k`` as a ``(T, M)``
    array, kept in step with ``gamma`` so per-device residuals cost ``O(MT)``.
    """

    y: np.ndarray
    g: np.ndarray
    lam: np.ndarray
    pilots: np.ndarray
    gamma: np.ndarray
    cov: CovarianceState
    theta: np.ndarray
    fallbacks: int = 0
    degenerate: int = 0

    @classmethod
    def start(cls, y, g, lam, pilots, sigma2, init_gamma) -> "RunState":
        gamma = np.array(init_gamma, dtype=complex)
        lam = np.asarray(lam, dtype=float)
        if gamma.shape != (g.shape[0],):
            raise ValueError(f"init_gamma must have length {g.shape[0]}, got {gamma.shape}")
        cov = build_covariance(gamma, lam, pilots, sigma2)
        theta = y - pilots.T @ (gamma[:, None] * g)
        return cls(y=y, g=g, lam=lam, pilots=pilots, gamma=gamma, cov=cov, theta=theta)

    @property
    def M(self) -> int:
        return self.y.shape[1]

    def loglik(self) -> float:
        return log_likelihood(self.y, self.gamma, self.g, self.pilots, self.cov)

    def refresh(self) -> None:
        self.cov = build_covariance(self.gamma, self.lam, self.pilots, self.cov.sigma2)
        self.theta = self.y - self.pilots.T @ (self.gamma[:, None] * self.g)


def residual(y, gamma, g, pilots, k: int) -> np.ndarray:
    """Observations with every device but ``k`` cancelled, shape ``(T, M)``."""
    others = np.array(gamma, dtype=complex)
    others[k] = 0.0
    return y - pilots.T @ (others[:, None] * g)


def cubic_constants(residuals, c_minus_inv, pilot_k, g_k, lam_k: float) -> CubicConstants:
    u = c_minus_inv @ pilot_k
    s_u = np.vdot(pilot_k, u).real
    q = residuals.conj().T @ u  # q_m = y_{k,m}^H C_{-k}^{-1} s_k
    alpha = lam_k**2 * float(np.vdot(q, q).real) - s_u * float(np.vdot(g_k, g_k).real)
    beta_c = 2.0 * abs(np.dot(q, g_k))
    delta_c = lam_k**2 * s_u
    return CubicConstants(float(alpha), float(beta_c), float(delta_c))


def objective_amplitude(r: float, constants: CubicConstants, M: int, log_det_c_minus: float) -> float:
    """Likelihood of amplitude ``r`` after the phase has been optimized out, up to a constant."""
    a, b, d = constants.alpha, constants.beta_c, constants.delta_c
    den = 1.0 + d * r * r
    return -M * (log_det_c_minus + math.log(den)) + (a * r * r + b * r) / den


def amplitude_cubic(constants: CubicConstants, M: int) -> tuple[float, float, float, float]:
    """Coefficients (highest degree first) of the stationarity polynomial in ``r``."""
    a, b, d = constants.alpha, constants.beta_c, constants.delta_c
    return (-2.0 * M * d * d, -b * d, 2.0 * a - 2.0 * M * d, b)


def _bracketed_polish(coeffs, r0: float) -> float:
    """Refine the unique positive root of the amplitude cubic.

    ``p(0) = beta_c > 0`` and ``p -> -inf``, so a sign bracket always exists;
    Newton steps are kept inside it and fall back to bisection.
    """
    a, b, c, d = coeffs

    def p(x):
        return ((a * x + b) * x + c) * x + d

    lo, hi = 0.0, max(r0, 1e-300)
    while p(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            return r0
    x = min(max(r0, lo), hi)
    for _ in range(100):
        px = p(x)
        if px == 0.0:
            return x
        if px > 0.0:
            lo = x
        else:
            hi = x
        dp = (3 * a * x + 2 * b) * x + c
        nx = x - px / dp if dp != 0.0 else 0.5 * (lo + hi)
        if not lo < nx < hi:
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= 4e-16 * max(abs(x), 1e-300):
            return nx
        x = nx
    return x


def solve_amplitude(constants: CubicConstants, M: int) -> float:
    """Amplitude maximizing the phase-free objective, dispatching the degenerate cases."""
    a, b, d = constants.alpha, constants.beta_c, constants.delta_c
    if d <= EPS_DELTA:
        # fully known channel: linear stationarity condition
        if a >= 0.0:
            return 0.0
        return max(0.0, -b / (2.0 * a))
    if b <= EPS_BETA:
        # no partial CSI: r = 0 or the positive root of a quadratic in r^2
        rad = (a - M * d) / (M * d * d)
        return math.sqrt(rad) if rad > 0.0 else 0.0
    return cubic_amplitude(constants, M)


def cubic_amplitude(constants: CubicConstants, M: int) -> float:
    """General-case amplitude: best of ``r = 0`` and the nonnegative roots of the cubic."""
    b = constants.beta_c
    coeffs = amplitude_cubic(constants, M)
    positive = [r for r in real_cubic_roots(*coeffs) if r > 0.0]
    if positive:
        candidates = [_bracketed_polish(coeffs, r) for r in positive]
    else:
        # closed form lost the root to rounding; start from the linearization
        candidates = [_bracketed_polish(coeffs, b / max(abs(coeffs[2]), 1e-300))]
    best, best_val = 0.0, objective_amplitude(0.0, constants, M, 0.0)
    for r in candidates:
        val = objective_amplitude(r, constants, M, 0.0)
        if val > best_val:
            best, best_val = r, val
    return best


def phase_estimate(c_inv, pilot_k, g_k, residuals) -> float:
    """Phase aligning the partial CSI with the device's isolated observations, in ``[0, 2pi)``."""
    z = np.vdot(c_inv @ pilot_k, residuals @ g_k.conj())
    if abs(z) <= EPS_PHASE:
        return 0.0
    phi = float(np.mod(np.angle(z), 2 * np.pi))
    # angles just below zero round up to exactly 2pi
    return 0.0 if phi >= 2 * np.pi else phi


def coordinate_update(state: RunState, k: int) -> RunState:
    s = state.pilots[k]
    g_k = state.g[k]
    lam_k = float(state.lam[k])
    gamma_k = complex(state.gamma[k])
    cov = state.cov

    y_k = state.theta + gamma_k * np.outer(s, g_k)
    try:
        c_minus_inv, d_logdet = downdate_inverse(cov.c_inv, lam_k, gamma_k, s, cov.sigma2)
        log_det_minus = cov.log_det_c + d_logdet
    except DenominatorUnderflow:
        state.fallbacks += 1
        logger.debug("downdate fallback for device %d", k)
        others = state.gamma.copy()
        others[k] = 0.0
        rebuilt = build_covariance(others, state.lam, state.pilots, cov.sigma2)
        c_minus_inv, log_det_minus = rebuilt.c_inv, rebuilt.log_det_c

    consts = cubic_constants(y_k, c_minus_inv, s, g_k, lam_k)
    if consts.delta_c <= EPS_DELTA or consts.beta_c <= EPS_BETA:
        state.degenerate += 1
    r = solve_amplitude(consts, state.M)
    # C^{-1} s and C_{-k}^{-1} s are parallel with a positive factor, so the
    # pre-update inverse gives the same angle as the downdated one.
    phi = phase_estimate(cov.c_inv, s, g_k, y_k)
    new_gamma = r * complex(math.cos(phi), math.sin(phi))

    c_inv, d_logdet = update_inverse(c_minus_inv, r, lam_k, s)
    cov.c_inv = c_inv
    cov.log_det_c = log_det_minus + d_logdet
    cov.refresh_counter += 1
    state.gamma[k] = new_gamma
    state.theta = y_k - new_gamma * np.outer(s, g_k)
    return state


@dataclass
class DetectorResult:
    gamma: np.ndarray
    trace: DetectorTrace
    state: RunState
    sweeps: int


def run_detector(
    received,
    g,
    lam,
    pilots,
    init_gamma,
    options: DetectorOptions | None = None,
    gamma_true=None,
) -> DetectorResult:
    """Run cyclic coordinate ascent from ``init_gamma``.

    ``received`` is a :class:`~grantfree.model.ReceivedBlock`. When
    ``options.trace`` is set the log-likelihood (and MSE against ``gamma_true``
    if given) is recorded before the first update and after every update.
    """
    options = options or DetectorOptions()
    state = RunState.start(received.y, g, lam, pilots, received.sigma2, init_gamma)
    K = state.gamma.shape[0]
    trace = DetectorTrace()
    want_mse = gamma_true is not None

    def snapshot(k):
        trace.record(k, state.loglik(), mse(state.gamma, gamma_true) if want_mse else math.nan)

    if options.trace:
        snapshot(-1)
    sweeps = 0
    for sweep in range(options.n_sweeps):
        if sweep > 0 and options.refresh_every is not None and sweep % options.refresh_every == 0:
            state.refresh()
        before = state.gamma.copy()
        for k in range(K):
            coordinate_update(state, k)
            if options.trace:
                snapshot(k)
        sweeps += 1
        if math.isfinite(options.early_stop_tol):
            if np.max(np.abs(state.gamma - before)) < options.early_stop_tol:
                break
    return DetectorResult(gamma=state.gamma.copy(), trace=trace, state=state, sweeps=sweeps)

