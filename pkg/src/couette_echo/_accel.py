"""Hot loops with a numba implementation and a pure-numpy fallback.

Set ``COUETTE_ECHO_NUMBA=0`` in the environment before import to force the
numpy paths.  Both variants of every kernel stay importable under the
``*_np`` / ``*_nb`` names so the benchmark and the tests can compare them.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("COUETTE_ECHO_NUMBA", "1") not in ("0", "false", "no")

_jit_opts = {"nogil": True, "cache": True, "fastmath": False}


def _jit(fn):
    if numba is None:
        return fn
    return numba.njit(**_jit_opts)(fn)


# -- banded Galerkin matrix for one z-mode ---------------------------------

def band_matrix_np(a_d, b_d, zeta, k2, bw):
    """LAPACK band storage of -k^2 I + T(a) diag(-zeta^2) + T(b) diag(i zeta).

    ``a_d``/``b_d`` hold coefficients indexed by the difference d = n_i - n_j
    in [-bw, bw] (offset bw); ``zeta`` is in centered order.
    """
    n = zeta.shape[0]
    ab = np.zeros((2 * bw + 1, n), dtype=np.complex128)
    col = -zeta ** 2
    der = 1j * zeta
    for d in range(-bw, bw + 1):
        # entries M[j + d, j] live in row bw + d of the band array
        lo = max(0, -d)
        hi = min(n, n - d)
        ab[bw + d, lo:hi] = a_d[bw + d] * col[lo:hi] + b_d[bw + d] * der[lo:hi]
    ab[bw, :] -= k2
    return ab


def _band_matrix_loop(a_d, b_d, zeta, k2, bw):
    n = zeta.shape[0]
    ab = np.zeros((2 * bw + 1, n), dtype=np.complex128)
    for j in range(n):
        z = zeta[j]
        c2 = -z * z
        c1 = 1j * z
        for d in range(-bw, bw + 1):
            i = j + d
            if i < 0 or i >= n:
                continue
            ab[bw + d, j] = a_d[bw + d] * c2 + b_d[bw + d] * c1
        ab[bw, j] -= k2
    return ab


band_matrix_nb = _jit(_band_matrix_loop)


# -- dense truncated-convolution (Toeplitz) matrix -------------------------

def toeplitz_np(coef_fft, n_vals):
    """T[i, j] = c(n_i - n_j) when the difference is representable, else 0."""
    nv = coef_fft.shape[0]
    d = n_vals[:, None] - n_vals[None, :]
    ok = (d >= -(nv // 2)) & (d <= nv // 2 - 1)
    return np.where(ok, coef_fft[np.mod(d, nv)], 0.0)


def _toeplitz_loop(coef_fft, n_vals):
    nv = coef_fft.shape[0]
    m = n_vals.shape[0]
    out = np.zeros((m, m), dtype=np.complex128)
    half = nv // 2
    for i in range(m):
        for j in range(m):
            d = n_vals[i] - n_vals[j]
            if d >= -half and d <= half - 1:
                out[i, j] = coef_fft[d % nv]
    return out


toeplitz_nb = _jit(_toeplitz_loop)


# -- resonance sums --------------------------------------------------------

def a_star_np(t, xi, beta, kmax):
    """sum_{|k|<=kmax} e^{-2|k|} A_k(t, xi) with A_0 = 1/(xi^2 + beta^2)."""
    xi = np.asarray(xi, dtype=float)
    out = 1.0 / (xi ** 2 + beta ** 2)
    for k in range(1, kmax + 1):
        w = np.exp(-2.0 * k)
        out = out + w / ((xi - k * t) ** 2 + beta ** 2 * k * k)
        out = out + w / ((xi + k * t) ** 2 + beta ** 2 * k * k)
    return out


def _a_star_loop(t, xi, beta, kmax):
    out = np.empty(xi.shape[0])
    b2 = beta * beta
    w = np.empty(kmax + 1)
    for k in range(kmax + 1):
        w[k] = np.exp(-2.0 * k)
    for i in range(xi.shape[0]):
        x = xi[i]
        s = 1.0 / (x * x + b2)
        for k in range(1, kmax + 1):
            kt = k * t
            c = b2 * k * k
            s += w[k] * (1.0 / ((x - kt) * (x - kt) + c) + 1.0 / ((x + kt) * (x + kt) + c))
        out[i] = s
    return out


a_star_nb = _jit(_a_star_loop)


def resonance_h_np(t, xi, ks, eps0, eta0, qmax):
    """sum_{k in ks} sum_{0<|q|<=qmax} e^{-2|k-q|} eps0 eta0 / ((xi - t q)^2 + q^2)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    q = np.concatenate([np.arange(-qmax, 0), np.arange(1, qmax + 1)]).astype(float)
    lor = eps0 * eta0 / ((xi[:, None] - t * q[None, :]) ** 2 + q[None, :] ** 2)
    w = np.exp(-2.0 * np.abs(np.asarray(ks, dtype=float)[:, None] - q[None, :])).sum(axis=0)
    return lor @ w


def _resonance_h_loop(t, xi, ks, eps0, eta0, qmax):
    out = np.zeros(xi.shape[0])
    for q in range(-qmax, qmax + 1):
        if q == 0:
            continue
        w = 0.0
        for k in ks:
            w += np.exp(-2.0 * abs(k - q))
        for i in range(xi.shape[0]):
            r = xi[i] - t * q
            out[i] += w * eps0 * eta0 / (r * r + q * q)
    return out


resonance_h_nb = _jit(_resonance_h_loop)


# -- log-domain weighted quadratic sums ------------------------------------

def log_weighted_sum_np(logw, amp2):
    """log(sum exp(logw) * amp2) computed without overflow; -inf for zero."""
    logw = np.ravel(logw)
    amp2 = np.ravel(amp2)
    mask = amp2 > 0
    if not np.any(mask):
        return -np.inf, -1
    terms = logw[mask] + np.log(amp2[mask])
    j = int(np.argmax(terms))
    top = terms[j]
    idx = int(np.flatnonzero(mask)[j])
    return float(top + np.log(np.sum(np.exp(terms - top)))), idx


def _log_weighted_sum_loop(logw, amp2):
    n = logw.shape[0]
    terms = np.empty(n)
    top = -np.inf
    idx = -1
    for i in range(n):
        if amp2[i] > 0:
            v = logw[i] + np.log(amp2[i])
            terms[i] = v
            if v > top:
                top = v
                idx = i
        else:
            terms[i] = -np.inf
    if idx < 0:
        return -np.inf, -1
    s = 0.0
    for i in range(n):
        if terms[i] > -np.inf:
            s += np.exp(terms[i] - top)
    return top + np.log(s), idx


_log_weighted_sum_nb = _jit(_log_weighted_sum_loop)


def log_weighted_sum_nb(logw, amp2):
    return _log_weighted_sum_nb(np.ascontiguousarray(logw).ravel(), np.ascontiguousarray(amp2).ravel())


if USE_NUMBA:
    band_matrix = band_matrix_nb
    toeplitz = toeplitz_nb
    a_star = a_star_nb
    resonance_h = resonance_h_nb
    log_weighted_sum = log_weighted_sum_nb
else:
    band_matrix = band_matrix_np
    toeplitz = toeplitz_np
    a_star = a_star_np
    resonance_h = resonance_h_np
    log_weighted_sum = log_weighted_sum_np


def backend():
    return "numba" if USE_NUMBA else "numpy"
