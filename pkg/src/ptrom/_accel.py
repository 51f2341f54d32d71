"""Compiled O(N^2) loops; numpy fallbacks keep the package importable without numba."""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

TWO_PI = 2.0 * np.pi


def _pairwise_py(chi, psi, gamma, offset, with_jacobian):
    n = chi.size
    u = np.zeros(n)
    v = np.zeros(n)
    uu = np.zeros(n)
    uv = np.zeros(n)
    vu = np.zeros(n)
    four_pi = 2.0 * TWO_PI
    for i in range(n):
        su = sv = suu = suv = svu = 0.0
        for j in range(n):
            if j == i:
                continue
            rx = chi[i] - chi[j]
            ry = psi[i] - psi[j]
            den = TWO_PI * (rx * rx + ry * ry) + offset
            if den == 0.0:
                return u, v, uu, uv, vu, False
            g = gamma[j] / den
            su -= g * ry
            sv += g * rx
            if with_jacobian:
                gd = g / den
                suu += four_pi * gd * rx * ry
                suv += four_pi * gd * ry * ry - g
                svu += g - four_pi * gd * rx * rx
        u[i], v[i], uu[i], uv[i], vu[i] = su, sv, suu, suv, svu
    return u, v, uu, uv, vu, True


def _log_energy_py(chi, psi, gamma):
    n = chi.size
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d2 = (chi[i] - chi[j]) ** 2 + (psi[i] - psi[j]) ** 2
            if d2 == 0.0:
                return 0.0, False
            total += gamma[i] * gamma[j] * np.log(d2)
    return total, True


if numba is not None:
    pairwise_sums = numba.njit(cache=True)(_pairwise_py)
    log_energy = numba.njit(cache=True)(_log_energy_py)
else:  # pragma: no cover
    pairwise_sums = None
    log_energy = None
