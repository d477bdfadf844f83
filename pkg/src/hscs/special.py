"""Orthonormal polynomial families used by the spheroidal solvers.

Both families are returned in *reduced* form: the singular endpoint factor
(``(1 - eta^2)^{m/2}`` resp. ``exp(-x/2)``) is left to the caller.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def legendre_reduced(m: int, nterms: int, eta) -> np.ndarray:
    """Rows ``k = 0..nterms-1`` hold ``Pbar_{m+k}^m(eta) / (1 - eta^2)^{m/2}``.

    ``Pbar`` is normalized so that ``int_{-1}^{1} Pbar^2 deta = 1``; no
    Condon-Shortley phase, so every function is positive at ``eta = 1``.
    """
    eta = np.asarray(eta, dtype=float)
    out = np.empty((nterms,) + eta.shape)
    c = np.sqrt(0.5)
    for j in range(1, m + 1):
        c *= np.sqrt((2.0 * j + 1.0) / (2.0 * j))
    out[0] = c
    if nterms > 1:
        out[1] = np.sqrt(2.0 * m + 3.0) * eta * c
    for k in range(2, nterms):
        l = m + k
        a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
        b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
        out[k] = a * (eta * out[k - 1] - b * out[k - 2])
    return out


def legendre_reduced_derivative(m: int, nterms: int, eta) -> np.ndarray:
    """d/deta of :func:`legendre_reduced`, via ``Q_l^m' = sqrt((l+m+1)(l-m)) Q_l^{m+1}``."""
    eta = np.asarray(eta, dtype=float)
    out = np.zeros((nterms,) + eta.shape)
    if nterms > 1:
        up = legendre_reduced(m + 1, nterms - 1, eta)
        for k in range(1, nterms):
            l = m + k
            out[k] = np.sqrt((l + m + 1.0) * (l - m)) * up[k - 1]
    return out


@lru_cache(maxsize=256)
def legendre_reduced_endpoint(m: int, nterms: int, sign: int = 1) -> np.ndarray:
    """Value of the reduced functions at ``eta = +1`` (``sign=1``) or ``-1``; read-only."""
    from math import lgamma

    out = np.empty(nterms)
    for k in range(nterms):
        l = m + k
        # P_l^{(m)}(1) = (l+m)! / (2^m m! (l-m)!)
        log_val = lgamma(l + m + 1) - m * np.log(2.0) - lgamma(m + 1) - lgamma(l - m + 1)
        log_norm = 0.5 * (np.log((2 * l + 1) / 2.0) + lgamma(l - m + 1) - lgamma(l + m + 1))
        out[k] = np.exp(log_val + log_norm) * (1.0 if sign > 0 else (-1.0) ** (l + m))
    out.flags.writeable = False
    return out


def eta_matrix(m: int, nterms: int) -> np.ndarray:
    """Tridiagonal matrix of ``eta`` in the orthonormal ``Pbar_{m+k}^m`` basis."""
    l = m + np.arange(nterms - 1, dtype=float)
    off = np.sqrt(((l + 1.0) ** 2 - m * m) / ((2.0 * l + 1.0) * (2.0 * l + 3.0)))
    return np.diag(off, 1) + np.diag(off, -1)


def laguerre_normalized(alpha: float, nterms: int, x) -> np.ndarray:
    """Rows hold ``sqrt(k!/Gamma(k+alpha+1)) L_k^{(alpha)}(x)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nterms,) + x.shape)
    from math import exp, lgamma

    out[0] = exp(-0.5 * lgamma(alpha + 1.0))
    if nterms > 1:
        out[1] = (1.0 + alpha - x) * out[0] / np.sqrt(1.0 + alpha)
    for k in range(1, nterms - 1):
        r1 = np.sqrt((k + 1.0) / (k + alpha + 1.0))
        r2 = np.sqrt((k + 1.0) * k / ((k + alpha + 1.0) * (k + alpha)))
        out[k + 1] = ((2 * k + 1 + alpha - x) * out[k] * r1 - (k + alpha) * out[k - 1] * r2) / (k + 1.0)
    return out


def laguerre_normalized_derivative(alpha: float, nterms: int, x) -> np.ndarray:
    """d/dx of :func:`laguerre_normalized`, via ``L_k^{(a)}' = -L_{k-1}^{(a+1)}``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((nterms,) + x.shape)
    if nterms > 1:
        up = laguerre_normalized(alpha + 1.0, nterms - 1, x)
        k = np.sqrt(np.arange(1, nterms, dtype=float)).reshape((-1,) + (1,) * x.ndim)
        out[1:] = -k * up
    return out
