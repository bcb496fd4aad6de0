"""Fused pointwise kernels for the Hermitian adjoint Kerr substep.

In-place on ``f`` (``(B, m, n)`` complex): ``F = f e``,
``q = G (-2 h Im(F u))``, ``f = F + q conj(u)``.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def adjoint_kerr_scalar(f, u, e, g, h):
    batch, _, n = f.shape
    k = -2.0 * h * g
    for b in range(batch):
        for j in range(n):
            ur = u[0, j].real
            ui = u[0, j].imag
            big = f[b, 0, j] * e[0, j]
            q = k * (big.real * ui + big.imag * ur)
            f[b, 0, j] = complex(big.real + q * ur, big.imag - q * ui)
    return f


@numba.njit(cache=True)
def adjoint_kerr_pair(f, u, e, g, h):
    batch, _, n = f.shape
    for b in range(batch):
        for j in range(n):
            u0 = u[0, j]
            u1 = u[1, j]
            f0 = f[b, 0, j] * e[0, j]
            f1 = f[b, 1, j] * e[1, j]
            w0 = -2.0 * h * (f0.real * u0.imag + f0.imag * u0.real)
            w1 = -2.0 * h * (f1.real * u1.imag + f1.imag * u1.real)
            q0 = g[0, 0] * w0 + g[0, 1] * w1
            q1 = g[1, 0] * w0 + g[1, 1] * w1
            f[b, 0, j] = complex(f0.real + q0 * u0.real, f0.imag - q0 * u0.imag)
            f[b, 1, j] = complex(f1.real + q1 * u1.real, f1.imag - q1 * u1.imag)
    return f


def adjoint_kerr(f: np.ndarray, u: np.ndarray, e: np.ndarray, coupling: np.ndarray, h: float) -> np.ndarray:
    f = np.ascontiguousarray(f)
    if coupling.shape == (1, 1):
        return adjoint_kerr_scalar(f, u, e, float(coupling[0, 0]), h)
    return adjoint_kerr_pair(f, np.ascontiguousarray(u), e, np.ascontiguousarray(coupling), h)
