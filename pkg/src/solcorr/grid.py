"""Uniform periodic time grid and spectral helpers.

Transform convention (numpy's): ``u_hat[k] = sum_j u[j] exp(-2j*pi*j*k/n)``,
so ``u(t) = (1/n) sum_k u_hat[k] exp(+1j*omega[k]*(t - t[0]))`` and d/dt acts
as multiplication by ``+1j*omega``. The linear NLSE half-step therefore
multiplies bin k by ``exp(-0.5j*omega[k]**2*h)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

BOUNDARY_TOLERANCE = 1e-10


class GridError(ValueError):
    """Raised for invalid grid construction or mismatched grids."""


class BoundaryWarning(RuntimeWarning):
    """Field intensity at the window edge exceeds the allowed fraction of the peak."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Window ``[-t_half_span, t_half_span)`` sampled at ``n`` points."""

    n: int
    t_half_span: float

    def __post_init__(self):
        n = self.n
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise GridError(f"sample count must be an integer, got {n!r}")
        if n < 64 or n & (n - 1):
            raise GridError(f"sample count must be a power of two >= 64, got {n}")
        span = float(self.t_half_span)
        if not np.isfinite(span) or span <= 0:
            raise GridError(f"t_half_span must be positive and finite, got {self.t_half_span!r}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "t_half_span", span)

    @property
    def dt(self) -> float:
        return 2.0 * self.t_half_span / self.n

    @cached_property
    def t(self) -> np.ndarray:
        return _readonly(-self.t_half_span + self.dt * np.arange(self.n))

    @cached_property
    def omega(self) -> np.ndarray:
        return _readonly(2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dt))

    def dispersion_phase(self, h: float) -> np.ndarray:
        """Spectral multiplier of the linear NLSE flow over distance ``h``."""
        return np.exp(-0.5j * self.omega**2 * h)

    def index_of(self, time: float, *, tol: float = 1e-9) -> int:
        """Sample index of a grid-aligned time; ``time == t_half_span`` maps to ``n``."""
        k = (time + self.t_half_span) / self.dt
        kr = round(k)
        if abs(k - kr) > tol or not 0 <= kr <= self.n:
            raise GridError(f"time {time!r} is not aligned to the grid (dt={self.dt})")
        return int(kr)

    def nearest_index(self, time: float) -> int:
        return int(np.clip(round((time + self.t_half_span) / self.dt), 0, self.n))


def make_grid(n: int, t_half_span: float) -> TimeGrid:
    return TimeGrid(n, t_half_span)


def fft(u: np.ndarray, overwrite: bool = False) -> np.ndarray:
    return sfft.fft(u, axis=-1, overwrite_x=overwrite)


def ifft(u_hat: np.ndarray, overwrite: bool = False) -> np.ndarray:
    return sfft.ifft(u_hat, axis=-1, overwrite_x=overwrite)


def _check(grid: TimeGrid, field: np.ndarray) -> np.ndarray:
    field = np.asarray(field)
    if field.shape[-1] != grid.n:
        raise GridError(f"field has {field.shape[-1]} samples, grid has {grid.n}")
    return field


def second_derivative(grid: TimeGrid, field: np.ndarray) -> np.ndarray:
    """Spectral d^2/dt^2 along the last axis."""
    field = _check(grid, field)
    return ifft(-(grid.omega**2) * fft(field))


def derivative(grid: TimeGrid, field: np.ndarray) -> np.ndarray:
    field = _check(grid, field)
    return ifft(1j * grid.omega * fft(field))


def norm(grid: TimeGrid, field: np.ndarray) -> float:
    """Photon-number integral ``sum |u|^2 dt`` over every leading axis."""
    field = _check(grid, field)
    return float(np.sum(np.abs(field) ** 2) * grid.dt)


def spectral_norm(grid: TimeGrid, field: np.ndarray) -> float:
    """Same integral evaluated from the spectrum: ``(dt/n) sum |u_hat|^2``."""
    field = _check(grid, field)
    return float(np.sum(np.abs(fft(field)) ** 2) * grid.dt / grid.n)


def boundary_fraction(field: np.ndarray) -> float:
    """Largest edge-sample intensity relative to the peak intensity."""
    inten = np.abs(np.asarray(field)) ** 2
    peak = inten.max()
    if peak == 0:
        return 0.0
    edge = max(inten[..., 0].max(), inten[..., -1].max())
    return float(edge / peak)


def check_boundary(field: np.ndarray, *, context: str = "") -> str | None:
    """Warn (and return the message) if the field leaks onto the window edge."""
    frac = boundary_fraction(field)
    if frac > BOUNDARY_TOLERANCE:
        msg = f"edge intensity is {frac:.3e} of peak{' ' + context if context else ''}"
        warnings.warn(msg, BoundaryWarning, stacklevel=2)
        return msg
    return None
