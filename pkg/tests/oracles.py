"""Reference computations built independently of the package code paths."""
import math

import numpy as np
from scipy import integrate

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def piecewise_gauss(f, cuts):
    """Composite Gauss-Legendre over consecutive intervals of sorted ``cuts``."""
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.dot(_GL_W, f(x))
    return total


def kernel_autocorrelation(breakpoints, values, x):
    """``C(x) = int w(y) w(y + x) dy`` by adaptive quadrature of the product."""
    bp = np.asarray(breakpoints, float)
    vals = np.asarray(values, float)

    def w(y):
        i = np.searchsorted(bp, y, side="right") - 1
        return vals[i] if 0 <= i < len(vals) else 0.0

    pts = sorted(set(bp.tolist()) | set((bp - x).tolist()))
    return integrate.quad(lambda y: w(y) * w(y + x), bp[0] - abs(x) - 1, bp[-1] + abs(x) + 1,
                          points=pts, limit=200)[0]


def triangle(z):
    return np.clip(1 - np.abs(z), 0, None)


def ratio_1d(C, kinks, b, x):
    """``int_{|z|<=R} exp(-b(|x - z| - |x|)) C(z) dz`` split at every kink."""
    cuts = sorted(set(kinks) | ({x} if kinks[0] < x < kinks[-1] else set()))
    return piecewise_gauss(lambda z: np.exp(-b * (np.abs(x - z) - abs(x))) * C(z), cuts)


def dense_count(H, E):
    return int(np.sum(np.linalg.eigvalsh(H) <= E))


def tridiag(diag, off):
    n = len(diag)
    return np.diag(diag) + np.diag(np.full(n - 1, off), 1) + np.diag(np.full(n - 1, off), -1)


def gauss_hermite_cbar(t=1.0, C0=1.0, T=12.0):
    f = lambda x: C0 * math.exp(-x * x / (2 * t * t)) * (1 - 7 * x * x / (16 * t * t) + x ** 4 / (32 * t ** 4))  # noqa: E731
    return integrate.quad(f, -T, T, limit=200)[0]
