"""Small signal helpers for z-traces: extrema, crossings, periods."""

from __future__ import annotations

import numpy as np


def autocorrelation(y: np.ndarray) -> np.ndarray:
    """Unbiased, mean-removed autocorrelation normalized to 1 at lag 0."""
    x = np.asarray(y, dtype=float)
    x = x - x.mean()
    n = len(x)
    full = np.correlate(x, x, "full")[n - 1 :] / np.arange(n, 0, -1)
    if full[0] == 0:
        return np.zeros(n)
    return full / full[0]


def _refine(y: np.ndarray, i: int) -> float:
    """Parabolic sub-sample position of the extremum at index ``i``."""
    if 0 < i < len(y) - 1:
        a, b, c = y[i - 1], y[i], y[i + 1]
        den = a - 2 * b + c
        if den != 0:
            return i + 0.5 * (a - c) / den
    return float(i)


def autocorrelation_period(z: np.ndarray, y: np.ndarray, max_fraction: float = 0.5) -> tuple[float, float]:
    """Period from the first autocorrelation peak following its first trough.

    Returns ``(period, autocorrelation at that lag)``; ``(nan, nan)`` when no
    such peak exists within ``max_fraction`` of the record.
    """
    z = np.asarray(z, dtype=float)
    ac = autocorrelation(y)
    limit = max(3, int(len(ac) * max_fraction))
    d = np.diff(ac[:limit])
    troughs = np.flatnonzero((d[:-1] < 0) & (d[1:] >= 0)) + 1
    if not len(troughs):
        return float("nan"), float("nan")
    start = troughs[0]
    rises = np.flatnonzero((d[start:-1] > 0) & (d[start + 1 :] <= 0)) + start + 1
    if not len(rises):
        return float("nan"), float("nan")
    k = rises[0]
    dz = z[1] - z[0]
    return float(_refine(ac, k) * dz), float(ac[k])


def local_extrema(y: np.ndarray, prominence: float = 0.0) -> list[tuple[int, str]]:
    """Interior local extrema ``(index, 'min'|'max')``; plateaus report their midpoint.

    An extremum is kept only if it differs from both neighbouring opposite
    extrema (or the record ends) by more than ``prominence``.
    """
    y = np.asarray(y, dtype=float)
    # collapse plateaus
    keep = np.concatenate([[True], np.diff(y) != 0])
    idx = np.flatnonzero(keep)
    vals = y[idx]
    ends = np.append(idx[1:], len(y)) - 1
    out: list[tuple[int, str]] = []
    for k in range(1, len(vals) - 1):
        mid = (idx[k] + ends[k]) // 2
        if vals[k] < vals[k - 1] and vals[k] < vals[k + 1]:
            out.append((int(mid), "min"))
        elif vals[k] > vals[k - 1] and vals[k] > vals[k + 1]:
            out.append((int(mid), "max"))
    if prominence <= 0 or not out:
        return out
    pruned = []
    for i, (pos, kind) in enumerate(out):
        lo = y[: pos + 1] if i == 0 else y[out[i - 1][0] : pos + 1]
        hi = y[pos:] if i == len(out) - 1 else y[pos : out[i + 1][0] + 1]
        ref = [lo.max(), hi.max()] if kind == "min" else [lo.min(), hi.min()]
        if all(abs(y[pos] - r) > prominence for r in ref):
            pruned.append((pos, kind))
    return pruned


def extremum_positions(z: np.ndarray, y: np.ndarray, kind: str, prominence: float = 0.0) -> np.ndarray:
    """Sub-sample z positions of local minima or maxima."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    dz = z[1] - z[0]
    pos = []
    for i, k in local_extrema(y, prominence):
        if k != kind:
            continue
        plateau = i > 0 and i < len(y) - 1 and (y[i - 1] == y[i] or y[i + 1] == y[i])
        pos.append(z[0] + (i if plateau else _refine(y, i)) * dz)
    return np.array(pos)


def extremum_period(z: np.ndarray, y: np.ndarray, kind: str = "min", prominence: float = 0.0) -> float:
    """Mean spacing of successive minima (or maxima); nan if fewer than two."""
    pos = extremum_positions(z, y, kind, prominence)
    if len(pos) < 2:
        return float("nan")
    return float(np.mean(np.diff(pos)))


def first_crossing(z: np.ndarray, y: np.ndarray, level: float) -> float:
    """Linearly interpolated z where ``y`` first rises through ``level``; nan if never."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    above = np.flatnonzero(y >= level)
    if not len(above):
        return float("nan")
    k = above[0]
    if k == 0:
        return float(z[0])
    return float(z[k - 1] + (level - y[k - 1]) * (z[k] - z[k - 1]) / (y[k] - y[k - 1]))
