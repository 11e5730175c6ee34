"""Independent reference implementations used as test oracles.

Everything here is written with explicit loops or dense linear algebra and
shares no code with the package paths it checks.
"""

import math

import numpy as np


def naive_received(h, pilots, gamma):
    K, M = h.shape
    T = pilots.shape[1]
    y = np.zeros((T, M), dtype=complex)
    for t in range(T):
        for m in range(M):
            acc = 0j
            for k in range(K):
                acc += h[k, m] * pilots[k, t] * gamma[k]
            y[t, m] = acc
    return y


def naive_covariance(gamma, lam, pilots, sigma2):
    K, T = pilots.shape
    c = np.zeros((T, T), dtype=complex)
    for k in range(K):
        w = lam[k] ** 2 * abs(gamma[k]) ** 2
        for i in range(T):
            for j in range(T):
                c[i, j] += w * pilots[k, i] * np.conj(pilots[k, j])
    for i in range(T):
        c[i, i] += sigma2
    return c


def dense_loglik(y, gamma, g, lam, pilots, sigma2):
    T, M = y.shape
    K = len(gamma)
    c = naive_covariance(gamma, lam, pilots, sigma2)
    sign, logdet = np.linalg.slogdet(c)
    assert sign.real > 0
    total = -M * logdet - M * T * math.log(math.pi)
    for m in range(M):
        theta = y[:, m].copy()
        for k in range(K):
            theta -= g[k, m] * pilots[k] * gamma[k]
        total -= np.real(np.conj(theta) @ np.linalg.solve(c, theta))
    return float(total)


def naive_residual(y, gamma, g, pilots, k):
    T, M = y.shape
    out = y.copy()
    for m in range(M):
        for j in range(len(gamma)):
            if j != k:
                out[:, m] -= g[j, m] * pilots[j] * gamma[j]
    return out


def naive_constants(y_k, c_minus, s, g_k, lam_k):
    """Cubic constants from an explicitly inverted ``C_{-k}``, antenna by antenna."""
    c_inv = np.linalg.inv(c_minus)
    M = y_k.shape[1]
    s_c_s = np.real(np.conj(s) @ c_inv @ s)
    alpha = 0.0
    cross = 0j
    for m in range(M):
        v = np.conj(y_k[:, m]) @ c_inv @ s
        alpha += lam_k**2 * abs(v) ** 2
        cross += v * g_k[m]
    alpha -= s_c_s * sum(abs(x) ** 2 for x in g_k)
    return float(alpha), float(2 * abs(cross)), float(lam_k**2 * s_c_s)


def coordinate_objective(r, phi, y_k, s, g_k, lam_k, c_minus):
    """Likelihood of device ``k`` at amplitude ``r`` and phase ``phi`` (others fixed), up to a constant."""
    M = y_k.shape[1]
    c = c_minus + (lam_k * r) ** 2 * np.outer(s, np.conj(s))
    _, logdet = np.linalg.slogdet(c)
    e = y_k - np.outer(s, g_k) * r * np.exp(1j * phi)
    return float(-M * logdet - np.real(np.sum(np.conj(e) * np.linalg.solve(c, e))))


def grid_refine_maximize(fun, r_max, n_r=121, n_phi=72):
    """Exhaustive 2-D grid followed by Nelder-Mead refinement."""
    from scipy.optimize import minimize

    rs = np.linspace(0.0, r_max, n_r)
    phis = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    best = max((fun(r, p), r, p) for r in rs for p in phis)
    res = minimize(
        lambda x: -fun(abs(x[0]), x[1]),
        [best[1], best[2]],
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000},
    )
    return abs(res.x[0]), float(np.mod(res.x[1], 2 * np.pi)), -res.fun


def golden_max(fun, lo, hi, tol=1e-12):
    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def angle_diff(a, b):
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def dense_loglik_fast(y, gamma, g, lam, pilots, sigma2):
    """Same quantity as :func:`dense_loglik`, built with einsum instead of loops."""
    T, M = y.shape
    w = np.asarray(lam) ** 2 * np.abs(gamma) ** 2
    c = np.einsum("k,ki,kj->ij", w, pilots, pilots.conj()) + sigma2 * np.eye(T)
    sign, logdet = np.linalg.slogdet(c)
    assert sign.real > 0
    theta = y - np.einsum("km,kt,k->tm", g, pilots, gamma)
    quad = np.real(np.sum(theta.conj() * np.linalg.solve(c, theta)))
    return float(-M * logdet - M * T * math.log(math.pi) - quad)
