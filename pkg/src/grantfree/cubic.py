"""Closed-form real roots of a real cubic ``a x^3 + b x^2 + c x + d``."""

from __future__ import annotations

import math


def _polish(coeffs, x: float, steps: int = 3) -> float:
    a, b, c, d = coeffs
    best = x
    best_val = abs(((a * x + b) * x + c) * x + d)
    for _ in range(steps):
        p = ((a * x + b) * x + c) * x + d
        dp = (3 * a * x + 2 * b) * x + c
        if dp == 0.0:
            break
        x = x - p / dp
        val = abs(((a * x + b) * x + c) * x + d)
        if not val < best_val:
            break
        best, best_val = x, val
    return best


def real_cubic_roots(a: float, b: float, c: float, d: float) -> list[float]:
    """All real roots, sorted, each refined by Newton steps on the original polynomial.

    Degenerate leading coefficients fall through to the quadratic and linear
    formulas. Uses the trigonometric form when there are three real roots and
    Cardano's formula otherwise.
    """
    if a == 0.0:
        return _real_quadratic_roots(b, c, d)
    B, C, D = b / a, c / a, d / a
    # x = t - B/3 gives t^3 + p t + q
    shift = B / 3.0
    p = C - B * B / 3.0
    q = 2.0 * B**3 / 27.0 - B * C / 3.0 + D
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if p == 0.0 and q == 0.0:
        roots = [-shift]
    elif disc > 0.0:
        sq = math.sqrt(disc)
        # pick the sign that avoids cancellation
        w = -q / 2.0 - sq if q > 0 else -q / 2.0 + sq
        u = math.copysign(abs(w) ** (1.0 / 3.0), w)
        t = u - p / (3.0 * u) if u != 0.0 else 0.0
        roots = [t - shift]
        # deflate; rounding can hide a double root behind a tiny positive disc
        r0 = _polish((a, b, c, d), roots[0])
        qb = b + a * r0
        qc = c + qb * r0
        qdisc = qb * qb - 4.0 * a * qc
        if abs(qdisc) <= 1e-10 * (qb * qb + abs(4.0 * a * qc)):
            roots.append(-qb / (2.0 * a))
    else:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m) if p != 0.0 else 0.0
        theta = math.acos(max(-1.0, min(1.0, arg))) / 3.0
        roots = [m * math.cos(theta - 2.0 * math.pi * i / 3.0) - shift for i in range(3)]
    coeffs = (a, b, c, d)
    return sorted(_polish(coeffs, r) for r in roots)


def _real_quadratic_roots(a: float, b: float, c: float) -> list[float]:
    if a == 0.0:
        if b == 0.0:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    sq = math.sqrt(disc)
    qq = -0.5 * (b + math.copysign(sq, b))
    if qq == 0.0:
        return [0.0, 0.0]
    return sorted([qq / a, c / qq])


def sign_changes(coeffs) -> int:
    """Number of sign changes in a coefficient sequence, zeros skipped."""
    signs = [math.copysign(1.0, x) for x in coeffs if x != 0.0]
    return sum(1 for s0, s1 in zip(signs, signs[1:]) if s0 != s1)
