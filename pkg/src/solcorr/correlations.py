"""Photon-number functionals, covariances and correlation coefficients.

The input fluctuation state is the coherent state about the classical input:
``<dU(t) dU^+(t')> = n0 * delta(t - t') -> n0/dt`` on the grid diagonal, all
other second moments zero.  A Hermitian functional back-propagated to
``p = f0.plus`` then has the symmetrized covariance

    cov(i, j) = n0 * dt * Re sum_{c,t} p_i[c, t] * conj(p_j[c, t])

and the imaginary part of the same sum is half the commutator expectation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import classical as cl
from .classical import Trajectory, ValidationError
from .fluctuations import DoubledField, backpropagate_arrays
from .grid import GridError, TimeGrid

_S2 = math.sqrt(2.0)
# (coefficient on U, coefficient on V) of each measurable component
COMPONENTS: dict[str, tuple[complex, complex]] = {
    "u": (1.0, 0.0),
    "v": (0.0, 1.0),
    "x": (1.0 / _S2, 1.0 / _S2),
    "y": (1.0 / (1j * _S2), -1.0 / (1j * _S2)),
}
CHUNK_ROWS = 40


@dataclass(frozen=True)
class SlotPartition:
    """Disjoint, ordered time slots whose edges sit on grid samples."""

    grid: TimeGrid
    edges: tuple[int, ...]
    width: float

    def __post_init__(self):
        e = tuple(int(x) for x in self.edges)
        if len(e) < 2 or any(b <= a for a, b in zip(e[:-1], e[1:])) or e[0] < 0 or e[-1] > self.grid.n:
            raise ValidationError(f"slot edges must be strictly increasing sample indices in [0, n]: {e}")
        object.__setattr__(self, "edges", e)

    def __len__(self) -> int:
        return len(self.edges) - 1

    @property
    def intervals(self) -> list[tuple[float, float]]:
        t0, dt = -self.grid.t_half_span, self.grid.dt
        return [(t0 + a * dt, t0 + b * dt) for a, b in zip(self.edges[:-1], self.edges[1:])]

    @property
    def centers(self) -> np.ndarray:
        return np.array([0.5 * (a + b) for a, b in self.intervals])

    @property
    def index_ranges(self) -> list[tuple[int, int]]:
        return list(zip(self.edges[:-1], self.edges[1:]))


def make_partition(grid: TimeGrid, t_lo: float = -8.0, t_hi: float = 8.0, width: float = 0.1) -> SlotPartition:
    """Slots of nominal ``width`` over ``[t_lo, t_hi)``, each edge snapped to the nearest sample."""
    if width <= 0 or t_hi <= t_lo:
        raise ValidationError(f"bad slot layout: [{t_lo}, {t_hi}) width {width}")
    count = int(round((t_hi - t_lo) / width))
    edges = [grid.nearest_index(t_lo + k * width) for k in range(count + 1)]
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ValidationError(f"slot width {width} is below the grid spacing {grid.dt}")
    return SlotPartition(grid, tuple(edges), float(width))


def component_field(fields: np.ndarray, component: str | None) -> np.ndarray:
    """Classical amplitude of the measured component from the ``(m, n)`` fields."""
    fields = np.atleast_2d(fields)
    if fields.shape[0] == 1:
        if component not in (None, "u"):
            raise ValidationError(f"scalar system has no component {component!r}")
        return fields[0]
    if component not in COMPONENTS:
        raise ValidationError(f"unknown component {component!r}; choose from {sorted(COMPONENTS)}")
    cu, cv = COMPONENTS[component]
    return cu * fields[0] + cv * fields[1]


def weighted_rows(fields: np.ndarray, weights: np.ndarray, component: str | None) -> np.ndarray:
    """``plus`` coefficients ``(len(weights), m, n)`` of weighted photon-number functionals."""
    fields = np.atleast_2d(fields)
    m = fields.shape[0]
    amp = component_field(fields, component).conj()
    coeff = np.array([1.0]) if m == 1 else np.array(COMPONENTS[component])
    return weights[:, None, :] * amp[None, None, :] * coeff[None, :, None]


def _indicator(n: int, ranges: Sequence[tuple[int, int]]) -> np.ndarray:
    w = np.zeros((len(ranges), n))
    for r, (lo, hi) in enumerate(ranges):
        w[r, lo:hi] = 1.0
    return w


def number_rows(fields: np.ndarray, ranges: Sequence[tuple[int, int]], component: str | None) -> np.ndarray:
    """``plus`` coefficients ``(len(ranges), m, n)`` of slot photon-number functionals."""
    return weighted_rows(fields, _indicator(np.atleast_2d(fields).shape[-1], ranges), component)


def number_functional(
    traj: Trajectory, z: float, interval: tuple[float, float], component: str | None = None
) -> DoubledField:
    """Functional of the photon-number fluctuation in ``[t_lo, t_hi)`` at distance ``z``."""
    grid = traj.grid
    try:
        lo, hi = grid.index_of(interval[0]), grid.index_of(interval[1])
    except GridError as exc:
        raise ValidationError(f"interval {interval} is not aligned to grid samples") from exc
    if hi <= lo:
        raise ValidationError(f"empty interval {interval}")
    if traj.is_vector and component is None:
        raise ValidationError("vector system needs a component ('u', 'v', 'x' or 'y')")
    row = number_rows(traj.field_at(z), [(lo, hi)], component)[0]
    return DoubledField.hermitian(row if traj.is_vector else row[0])


def slot_photon_numbers(grid: TimeGrid, amp: np.ndarray, ranges: Sequence[tuple[int, int]]) -> np.ndarray:
    inten = np.abs(amp) ** 2
    return np.array([inten[lo:hi].sum() * grid.dt for lo, hi in ranges])


def covariance(f_i0: DoubledField, f_j0: DoubledField, dt: float, n0: float = 1.0) -> float:
    """Symmetrized coherent-state covariance of two functionals referred to z = 0."""
    if f_i0.plus.shape != f_j0.plus.shape:
        raise GridError("functionals live on different grids")
    return float(n0 * dt * np.sum(f_i0.plus * f_j0.plus.conj()).real)


def covariance_matrix(rows: np.ndarray, dt: float, n0: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric real covariance and antisymmetric imaginary part of back-propagated rows."""
    flat = rows.reshape(len(rows), -1)
    gram = n0 * dt * (flat @ flat.conj().T)
    real = 0.5 * (gram.real + gram.real.T)
    imag = 0.5 * (gram.imag - gram.imag.T)
    return real, imag


def normalized(cov: np.ndarray, shot: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """``C_ij = (cov_ij - delta_ij shot_i) / sqrt(cov_ii cov_jj)`` and the mask of dead slots."""
    diag = np.diag(cov).copy()
    mask = ~(diag > 0)
    safe = np.where(mask, 1.0, diag)
    numer = cov.copy()
    if shot is not None:
        numer[np.diag_indices_from(numer)] -= shot
    denom = np.sqrt(np.outer(safe, safe))
    c = numer / denom
    c[mask, :] = 0.0
    c[:, mask] = 0.0
    c = 0.5 * (c + c.T)
    return c, mask


@dataclass(frozen=True, eq=False)
class CorrelationMap:
    partition: SlotPartition
    z: float
    c: np.ndarray
    shot: np.ndarray
    cov: np.ndarray
    commutator: np.ndarray
    mask: np.ndarray
    component: str | None = None


def _chunked_backprop(
    traj: Trajectory, indices: Sequence[int], rows: Sequence[np.ndarray], threads: int
) -> list[np.ndarray]:
    """Back-propagate row groups in fixed-size chunks so results do not depend on ``threads``."""
    n_rows = len(rows[0])
    chunks = [(a, min(a + CHUNK_ROWS, n_rows)) for a in range(0, n_rows, CHUNK_ROWS)]

    def run(bounds):
        a, b = bounds
        return backpropagate_arrays(traj, indices, [r[a:b] for r in rows])

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return [np.concatenate([p[g] for p in parts]) for g in range(len(indices))]


def correlation_maps(
    traj: Trajectory,
    zs: Sequence[float],
    partition: SlotPartition,
    component: str | None = None,
    *,
    n0: float = 1.0,
    threads: int = 1,
) -> list[CorrelationMap]:
    """Slot-resolved normally ordered correlation maps at each ``z`` (one reverse sweep)."""
    if partition.grid != traj.grid:
        raise GridError("partition and trajectory grids differ")
    if traj.is_vector and component is None:
        component = "x"
    ranges = partition.index_ranges
    indices = [traj.index_at(z) for z in zs]
    fields = [traj.field(k) for k in indices]
    rows = [number_rows(f, ranges, component) for f in fields]
    back = _chunked_backprop(traj, indices, rows, threads)
    maps = []
    for z, f, p in zip(zs, fields, back):
        cov, imag = covariance_matrix(p, traj.grid.dt, n0)
        shot = n0 * slot_photon_numbers(traj.grid, component_field(f, component), ranges)
        c, mask = normalized(cov, shot)
        maps.append(CorrelationMap(partition, float(z), c, shot, cov, imag, mask, component))
    return maps


def correlation_map(
    traj: Trajectory, z: float, partition: SlotPartition, component: str | None = None, **kwargs
) -> CorrelationMap:
    return correlation_maps(traj, [z], partition, component, **kwargs)[0]


@dataclass(frozen=True)
class PairCorrelation:
    z: float
    c12: float
    boundary: float
    resolved: bool = True
    cov: tuple[float, float, float] = (0.0, 0.0, 0.0)  # var1, var2, cov12
    shot: tuple[float, float] = (0.0, 0.0)


def pair_boundary(grid: TimeGrid, intensity: np.ndarray) -> tuple[int, bool]:
    """Sample index of the intensity minimum between the two main peaks.

    Falls back to the sample at t = 0 (flagged unresolved) when the pulses
    have merged.
    """
    peaks = cl.two_peaks(grid, intensity)
    if peaks is None:
        return grid.nearest_index(0.0), False
    i, j = peaks
    return i + int(np.argmin(intensity[i : j + 1])), True


def pair_weights(grid: TimeGrid, intensity: np.ndarray, mode: str, window: float | None):
    """Sample weights ``(2, n)`` of the two soliton slots, plus boundary index and resolution flag.

    In ``half`` mode the boundary sample is shared equally, so a mirror
    symmetric field yields mirror symmetric slots and the weights sum to one.
    """
    b, resolved = pair_boundary(grid, intensity)
    n = grid.n
    if mode == "half":
        w = np.zeros((2, n))
        w[0, :b] = 1.0
        w[1, b + 1:] = 1.0
        if b < n:
            w[:, b] = 0.5
        return w, b, resolved
    if mode == "window":
        if not window or window <= 0:
            raise ValidationError("window mode needs a positive window width")
        peaks = cl.two_peaks(grid, intensity)
        centers = peaks if peaks is not None else (b - 1, b)
        half = int(round(0.5 * window / grid.dt))
        ranges = [(max(centers[0] - half, 0), min(centers[0] + half, b)),
                  (max(centers[1] - half, b), min(centers[1] + half, n))]
        return _indicator(n, ranges), b, resolved
    raise ValidationError(f"unknown pair mode {mode!r}")


def _pair_from_rows(z, p, dt, n0, shot, overlap, boundary, resolved) -> PairCorrelation:
    cov, _ = covariance_matrix(p, dt, n0)
    v1, v2, c12 = cov[0, 0], cov[1, 1], cov[0, 1]
    denom = math.sqrt(v1 * v2) if v1 > 0 and v2 > 0 else 0.0
    value = (c12 - overlap) / denom if denom else 0.0
    return PairCorrelation(float(z), float(value), float(boundary), resolved,
                           (float(v1), float(v2), float(c12)), (float(shot[0]), float(shot[1])))


def pair_correlations(
    traj: Trajectory,
    zs: Sequence[float],
    *,
    mode: str = "half",
    window: float | None = None,
    component: str | None = None,
    n0: float = 1.0,
    use_conservation: bool = True,
) -> list[PairCorrelation]:
    """C_12 between the earlier and the later soliton at each ``z``.

    In ``half`` mode the two slot weights sum to one everywhere, so the second
    functional is the total-number functional minus the first.  The total
    functional back-propagates to itself (photon number is an exact invariant
    of the discrete flow), which ``use_conservation`` exploits to sweep only
    one functional per checkpoint.  The numerator is normally ordered; it
    differs from the raw covariance only through the shared boundary sample.
    """
    grid = traj.grid
    indices = [traj.index_at(z) for z in zs]
    layouts = []
    rows = []
    conserve = use_conservation and mode == "half"
    for k in indices:
        fields = traj.field(k)
        amp = component_field(fields, component)
        inten = np.abs(amp) ** 2
        w, b, resolved = pair_weights(grid, inten, mode, window)
        shot = w @ inten * grid.dt
        overlap = float(np.sum(w[0] * w[1] * inten) * grid.dt)
        layouts.append((shot, overlap, grid.t[b] if b < grid.n else grid.t_half_span, resolved))
        r = weighted_rows(fields, w, component)
        rows.append(r[:1] if conserve else r)
    back = backpropagate_arrays(traj, indices, rows)
    if conserve:
        total = number_rows(traj.field(0), [(0, grid.n)], component)[0]
        back = [np.stack([p[0], total - p[0]]) for p in back]
    return [
        _pair_from_rows(z, p, grid.dt, n0, n0 * shot, n0 * overlap, b, res)
        for z, p, (shot, overlap, b, res) in zip(zs, back, layouts)
    ]


def pair_correlation(traj: Trajectory, z: float, **kwargs) -> PairCorrelation:
    return pair_correlations(traj, [z], **kwargs)[0]


def polarization_pair_correlations(
    traj: Trajectory,
    zs: Sequence[float],
    *,
    mode: str = "total",
    n0: float = 1.0,
    use_conservation: bool = True,
) -> list[PairCorrelation]:
    """Correlation between the x- and y-polarized photon numbers.

    ``total`` correlates whole-window component totals; ``split`` correlates
    the x photons left of t = 0 with the y photons right of it.
    """
    if not traj.is_vector:
        raise ValidationError("polarization correlation needs a vector trajectory")
    grid = traj.grid
    mid = grid.nearest_index(0.0)
    if mode == "total":
        rx, ry = [(0, grid.n)], [(0, grid.n)]
    elif mode == "split":
        rx, ry = [(0, mid)], [(mid, grid.n)]
    else:
        raise ValidationError(f"unknown polarization mode {mode!r}")
    indices = [traj.index_at(z) for z in zs]
    conserve = use_conservation and mode == "total"
    rows, shots = [], []
    for k in indices:
        fields = traj.field(k)
        fx = number_rows(fields, rx, "x")
        fy = number_rows(fields, ry, "y")
        shots.append((
            slot_photon_numbers(grid, component_field(fields, "x"), rx)[0],
            slot_photon_numbers(grid, component_field(fields, "y"), ry)[0],
        ))
        rows.append(fx if conserve else np.concatenate([fx, fy]))
    back = backpropagate_arrays(traj, indices, rows)
    if conserve:
        fields0 = traj.field(0)
        total = number_rows(fields0, [(0, grid.n)], "u")[0] + number_rows(fields0, [(0, grid.n)], "v")[0]
        back = [np.stack([p[0], total - p[0]]) for p in back]
    boundary = 0.0 if mode == "split" else grid.t_half_span
    return [
        _pair_from_rows(z, p, grid.dt, n0, (n0 * s[0], n0 * s[1]), 0.0, boundary, True)
        for z, p, s in zip(zs, back, shots)
    ]


def polarization_pair_correlation(traj: Trajectory, z: float, **kwargs) -> PairCorrelation:
    return polarization_pair_correlations(traj, [z], **kwargs)[0]
