"""Numeric inner loops shared by the life-table, CKM and Monte-Carlo code.

Every kernel exists twice: a numba ``@njit`` version (``*_nb``) and a plain
numpy version (``*_np``).  The module-level names pick one at import time.
Set ``DEMONOISE_DISABLE_NUMBA=1`` to force the numpy path (also used when
numba is not importable).
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(
    "DEMONOISE_DISABLE_NUMBA", ""
).strip().lower() not in ("1", "true", "yes", "on")

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TO_UNIT = 2.0 ** -53


def _njit(*args, **kwargs):
    if numba is None:
        return lambda f: f
    return numba.njit(*args, cache=False, **kwargs)


# ---------------------------------------------------------------------------
# life table
# ---------------------------------------------------------------------------

def life_table_np(rates, radix):
    """Return (ell, L, T, E) for a single schedule of rates M_0..M_xbar."""
    n = rates.shape[0]
    factors = np.empty(n)
    factors[0] = radix
    factors[1:] = np.exp(-rates[:-1])
    ell = np.cumprod(factors)
    L = np.empty(n)
    L[:-1] = 0.5 * (ell[:-1] + ell[1:])
    L[-1] = ell[-1] / rates[-1]
    T = np.cumsum(L[::-1])[::-1]
    return ell, L, T, T / ell


@_njit
def life_table_nb(rates, radix):
    n = rates.shape[0]
    ell = np.empty(n)
    L = np.empty(n)
    T = np.empty(n)
    E = np.empty(n)
    ell[0] = radix
    for k in range(n - 1):
        ell[k + 1] = ell[k] * np.exp(-rates[k])
    for k in range(n - 1):
        L[k] = 0.5 * (ell[k] + ell[k + 1])
    L[n - 1] = ell[n - 1] / rates[n - 1]
    acc = 0.0
    for k in range(n - 1, -1, -1):
        acc += L[k]
        T[k] = acc
        E[k] = acc / ell[k]
    return ell, L, T, E


def life_expectancy_batch_np(rates, radix):
    """E_x for each row of a (replicates, ages) rate matrix."""
    n = rates.shape[1]
    factors = np.empty_like(rates)
    factors[:, 0] = radix
    factors[:, 1:] = np.exp(-rates[:, :-1])
    ell = np.cumprod(factors, axis=1)
    L = np.empty_like(rates)
    L[:, :-1] = 0.5 * (ell[:, :-1] + ell[:, 1:])
    L[:, n - 1] = ell[:, n - 1] / rates[:, n - 1]
    T = np.cumsum(L[:, ::-1], axis=1)[:, ::-1]
    return T / ell


@_njit
def life_expectancy_batch_nb(rates, radix):
    r, n = rates.shape
    out = np.empty((r, n))
    ell = np.empty(n)
    for i in range(r):
        ell[0] = radix
        for k in range(n - 1):
            ell[k + 1] = ell[k] * np.exp(-rates[i, k])
        acc = ell[n - 1] / rates[i, n - 1]
        out[i, n - 1] = acc / ell[n - 1]
        for k in range(n - 2, -1, -1):
            acc += 0.5 * (ell[k] + ell[k + 1])
            out[i, k] = acc / ell[k]
    return out


def ex_variance_np(ell, weights):
    """Var(E_x) for every x given per-age weights s_z^2 * Var(M_z).

    ``weights[z]`` must already hold the squared unnormalised sensitivity
    times the rate variance; the result divides by ell_x^2.
    """
    return np.cumsum(weights[::-1])[::-1] / (ell * ell)


@_njit
def ex_variance_nb(ell, weights):
    n = ell.shape[0]
    out = np.empty(n)
    acc = 0.0
    for k in range(n - 1, -1, -1):
        acc += weights[k]
        out[k] = acc / (ell[k] * ell[k])
    return out


# ---------------------------------------------------------------------------
# keyed uniforms + table sampling
# ---------------------------------------------------------------------------

def keyed_uniforms_np(keys, cells):
    """Uniforms in [0, 1) at position ``cells`` of the splitmix64 stream per key.

    Shape (len(keys), len(cells)); entry (r, c) depends only on keys[r] and
    cells[c].
    """
    keys = np.asarray(keys, dtype=np.uint64)
    cells = np.asarray(cells, dtype=np.uint64)
    z = keys[:, None] + _GAMMA * (cells[None, :] + _ONE)
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return (z >> _S11).astype(np.float64) * _TO_UNIT


@_njit
def keyed_uniforms_nb(keys, cells):
    r = keys.shape[0]
    n = cells.shape[0]
    out = np.empty((r, n))
    for i in range(r):
        for j in range(n):
            z = keys[i] + _GAMMA * (cells[j] + _ONE)
            z = (z ^ (z >> _S30)) * _MIX1
            z = (z ^ (z >> _S27)) * _MIX2
            z = z ^ (z >> _S31)
            out[i, j] = np.float64(z >> _S11) * _TO_UNIT
    return out


def sample_noise_np(u, rows, cdf, max_dev):
    """Inverse-CDF draw of a noise value per element; ``rows`` picks the cdf row."""
    k = (u[..., None] >= cdf[rows]).sum(axis=-1)
    return k.astype(np.int64) - max_dev


@_njit
def sample_noise_nb(u, rows, cdf, max_dev):
    flat_u = u.ravel()
    flat_rows = rows.ravel()
    width = cdf.shape[1]
    out = np.empty(flat_u.shape[0], dtype=np.int64)
    for i in range(flat_u.shape[0]):
        row = flat_rows[i]
        k = 0
        while k < width - 1 and cdf[row, k] <= flat_u[i]:
            k += 1
        out[i] = k - max_dev
    return out.reshape(u.shape)


if USE_NUMBA:
    life_table = life_table_nb
    life_expectancy_batch = life_expectancy_batch_nb
    ex_variance = ex_variance_nb
    keyed_uniforms = keyed_uniforms_nb
    sample_noise = sample_noise_nb
else:
    life_table = life_table_np
    life_expectancy_batch = life_expectancy_batch_np
    ex_variance = ex_variance_np
    keyed_uniforms = keyed_uniforms_np
    sample_noise = sample_noise_np


def backend():
    return "numba" if USE_NUMBA else "numpy"
