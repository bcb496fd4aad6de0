"""Linearized quantum fluctuations about a classical trajectory.

A fluctuation (or a measurement functional) is a doubled field ``(plus,
minus)``: the coefficients of ``dU`` and ``dU^dagger`` at every sample and
component.  The forward map is the exact tangent of the classical split-step
map, so one solver step acts as

    dispersion:  plus -> C plus,  minus -> conj(C) minus,  C = F^-1 exp(-i w^2 h/2) F
    Kerr:        plus_c -> e_c (plus_c + i h u_c r_c),  minus_c -> conj(e_c)(minus_c - i h conj(u_c) r_c)
                 with r = G (conj(u) plus + u minus),  e_c = exp(i h (G|u|^2)_c)

where ``u`` is the pre-Kerr field of that step.  Functionals pair with states
through the bilinear form

    <f, w> = dt * sum(f.plus * w.plus + f.minus * w.minus)

and are carried back to z = 0 by the transpose of every substep in reverse
order.  ``C`` is symmetric, so the transposed dispersion is ``C`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels
from . import grid as gridmod
from .classical import Trajectory, ValidationError

HERMITIAN_TOLERANCE = 1e-10
GREEN_MAX_SAMPLES = 512


@dataclass(frozen=True, eq=False)
class DoubledField:
    """Coefficient pair multiplying ``(dU, dU^dagger)``.

    ``plus``/``minus`` have shape ``(n,)`` for the scalar system and
    ``(2, n)`` (U row, V row) for the vector system.
    """

    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        p = np.array(self.plus, dtype=complex)
        q = np.array(self.minus, dtype=complex)
        if p.shape != q.shape or p.ndim not in (1, 2):
            raise ValidationError(f"plus/minus shapes differ or are invalid: {p.shape}, {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValidationError("doubled field contains non-finite samples")
        object.__setattr__(self, "plus", p)
        object.__setattr__(self, "minus", q)

    @classmethod
    def hermitian(cls, plus: np.ndarray) -> "DoubledField":
        plus = np.asarray(plus, dtype=complex)
        return cls(plus, plus.conj())

    @property
    def components(self) -> np.ndarray:
        """``(2, m, n)`` view: plus then minus, components on axis 1."""
        return np.stack([np.atleast_2d(self.plus), np.atleast_2d(self.minus)])

    def hermiticity_error(self) -> float:
        scale = max(float(np.abs(self.plus).max(initial=0.0)), 1e-300)
        return float(np.abs(self.minus - self.plus.conj()).max(initial=0.0)) / scale

    def is_hermitian(self, tol: float = HERMITIAN_TOLERANCE) -> bool:
        return self.hermiticity_error() <= tol

    def pairing(self, other: "DoubledField", dt: float) -> complex:
        return complex(dt * (np.sum(self.plus * other.plus) + np.sum(self.minus * other.minus)))

    def __add__(self, other: "DoubledField") -> "DoubledField":
        return DoubledField(self.plus + other.plus, self.minus + other.minus)

    def __mul__(self, scalar: complex) -> "DoubledField":
        return DoubledField(self.plus * scalar, self.minus * scalar)

    __rmul__ = __mul__


def _as_doubled(arr: np.ndarray, vector: bool) -> DoubledField:
    return DoubledField(arr[0] if vector else arr[0, 0], arr[1] if vector else arr[1, 0])


def _check_shape(traj: Trajectory, f: DoubledField) -> None:
    expected = (traj.components, traj.grid.n) if traj.is_vector else (traj.grid.n,)
    if f.plus.shape != expected:
        raise gridmod.GridError(f"doubled field shape {f.plus.shape} does not match trajectory {expected}")


def _kerr_inputs(traj: Trajectory, k_lo: int, k_hi: int, reverse: bool) -> Iterator[tuple[float, np.ndarray]]:
    """``(h, pre_kerr_field)`` for steps in ``[k_lo, k_hi)`` in traversal order."""
    chunks = []
    for a, b in traj.segments():
        a, b = max(a, k_lo), min(b, k_hi)
        if a < b:
            chunks.append((a, b))
    if reverse:
        chunks.reverse()
    for a, b in chunks:
        pre = traj.kerr_inputs(a, b)
        idx = range(b - 1, a - 1, -1) if reverse else range(a, b)
        for k in idx:
            yield float(traj.steps[k]), pre[k - a]


class _Kernel:
    """Batched tangent/adjoint step operations for one coupling matrix."""

    def __init__(self, traj: Trajectory, doubled: bool, fast: bool = True):
        self.grid = traj.grid
        self.fast = fast
        self.coupling = traj.coupling
        self.scalar_g = float(self.coupling[0, 0]) if traj.components == 1 else None
        self.doubled = doubled
        self._disp: dict[float, np.ndarray] = {}

    def dispersion(self, h: float) -> np.ndarray:
        mult = self._disp.get(h)
        if mult is None:
            d = self.grid.dispersion_phase(h)
            mult = np.stack([d, d.conj()])[:, None, :] if self.doubled else d
            self._disp[h] = mult
        return mult

    def _mix(self, s: np.ndarray) -> np.ndarray:
        if self.scalar_g is not None:
            return self.scalar_g * s
        return np.einsum("cd,...dn->...cn", self.coupling, s)

    def _phase(self, u: np.ndarray, h: float) -> np.ndarray:
        return np.exp(1j * h * (self.coupling @ (u.real**2 + u.imag**2)))

    def forward(self, w: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
        e = self._phase(u, h)
        if self.doubled:
            x, y = w[:, 0], w[:, 1]
            r = self._mix(u.conj() * x + u * y)
            out = np.empty_like(w)
            out[:, 0] = e * (x + 1j * h * u * r)
            out[:, 1] = e.conj() * (y - 1j * h * u.conj() * r)
            return out
        r = self._mix(2.0 * (u.conj() * w).real)
        return e * (w + 1j * h * u * r)

    def adjoint(self, f: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
        e = self._phase(u, h)
        if self.doubled:
            big_f = f[:, 0] * e
            big_g = f[:, 1] * e.conj()
            q = self._mix(1j * h * (big_f * u - big_g * u.conj()))
            out = np.empty_like(f)
            out[:, 0] = big_f + q * u.conj()
            out[:, 1] = big_g + q * u
            return out
        if self.fast:
            return _kernels.adjoint_kerr(f, u, e, self.coupling, h)
        big_f = f * e
        q = self._mix(-2.0 * h * (big_f * u).imag)
        return big_f + q * u.conj()


def _sweep(kernel: _Kernel, batch: np.ndarray, steps: Iterable[tuple[float, np.ndarray]], adjoint: bool) -> np.ndarray:
    """Strang sweep with the inner dispersion half-steps merged."""
    apply = kernel.adjoint if adjoint else kernel.forward
    spec = None
    prev_h = None
    for h, u in steps:
        if spec is None:
            spec = gridmod.fft(batch)
            spec *= kernel.dispersion(0.5 * h)
        else:
            spec *= kernel.dispersion(0.5 * (prev_h + h))
        spec = gridmod.fft(apply(gridmod.ifft(spec, overwrite=True), u, h), overwrite=True)
        prev_h = h
    if spec is None:
        return batch.copy()
    spec *= kernel.dispersion(0.5 * prev_h)
    return gridmod.ifft(spec, overwrite=True)


def _hermitian_batch(traj: Trajectory, fields: Sequence[DoubledField]) -> np.ndarray:
    rows = []
    for f in fields:
        _check_shape(traj, f)
        if not f.is_hermitian():
            raise ValidationError(
                f"functional is not Hermitian (error {f.hermiticity_error():.2e} > {HERMITIAN_TOLERANCE})"
            )
        rows.append(np.atleast_2d(f.plus))
    return np.array(rows, dtype=complex).reshape(len(rows), traj.components, traj.grid.n)


def forward_linearized(w0: DoubledField, traj: Trajectory, z: float | None = None) -> DoubledField:
    """Propagate a doubled field from z = 0 to ``z`` (default: trajectory end)."""
    return forward_many([w0], traj, z)[0]


def forward_many(ws: Sequence[DoubledField], traj: Trajectory, z: float | None = None) -> list[DoubledField]:
    k = traj.n_steps if z is None else traj.index_at(z)
    for w in ws:
        _check_shape(traj, w)
    batch = np.array([w.components for w in ws], dtype=complex)
    out = _sweep(_Kernel(traj, doubled=True), batch, _kerr_inputs(traj, 0, k, reverse=False), adjoint=False)
    return [_as_doubled(row, traj.is_vector) for row in out]


def backpropagate_functional(fL: DoubledField, traj: Trajectory, z: float | None = None) -> DoubledField:
    """Equivalent functional at z = 0 of a Hermitian functional applied at ``z``."""
    k = traj.n_steps if z is None else traj.index_at(z)
    return backpropagate_many(traj, [(k, [fL])])[0][0]


def backpropagate_doubled(fL: DoubledField, traj: Trajectory, z: float | None = None) -> DoubledField:
    """Transpose propagation of an arbitrary (not necessarily Hermitian) doubled field."""
    return backpropagate_doubled_many([fL], traj, z)[0]


def backpropagate_doubled_many(
    fs: Sequence[DoubledField], traj: Trajectory, z: float | None = None
) -> list[DoubledField]:
    k = traj.n_steps if z is None else traj.index_at(z)
    for f in fs:
        _check_shape(traj, f)
    batch = np.array([f.components for f in fs], dtype=complex)
    out = _sweep(_Kernel(traj, doubled=True), batch, _kerr_inputs(traj, 0, k, reverse=True), adjoint=True)
    return [_as_doubled(row, traj.is_vector) for row in out]


def backpropagate_many(
    traj: Trajectory, requests: Sequence[tuple[int, Sequence[DoubledField]]]
) -> list[list[DoubledField]]:
    """Back-propagate groups of Hermitian functionals, each applied at step index ``k``.

    All groups share one reverse sweep; a group joins the batch when the
    sweep reaches its step index.
    """
    if not requests:
        return []
    batches = [_hermitian_batch(traj, fs) for _, fs in requests]
    return [
        [_as_doubled(np.stack([row, row.conj()]), traj.is_vector) for row in out]
        for out in backpropagate_arrays(traj, [k for k, _ in requests], batches)
    ]


def backpropagate_arrays(
    traj: Trajectory, indices: Sequence[int], batches: Sequence[np.ndarray], *, fast: bool = True
) -> list[np.ndarray]:
    """Array-level core of :func:`backpropagate_many`: ``plus`` rows ``(B, m, n)`` in, same out.

    ``fast=False`` swaps the fused numba Kerr kernel for the plain numpy one.
    """
    kernel = _Kernel(traj, doubled=False, fast=fast)
    order = sorted(range(len(indices)), key=lambda i: -indices[i])
    for k in indices:
        if not 0 <= k <= traj.n_steps:
            raise IndexError(k)
    current = None
    sizes: list[tuple[int, int]] = []
    k_cur = indices[order[0]]
    for i in order:
        k = indices[i]
        if current is not None and k < k_cur:
            current = _sweep(kernel, current, _kerr_inputs(traj, k, k_cur, reverse=True), adjoint=True)
        k_cur = k
        sizes.append((i, len(batches[i])))
        current = batches[i] if current is None else np.concatenate([current, batches[i]])
    if k_cur > 0:
        current = _sweep(kernel, current, _kerr_inputs(traj, 0, k_cur, reverse=True), adjoint=True)
    results: list[np.ndarray] = [np.empty(0)] * len(indices)
    start = 0
    for i, size in sizes:
        results[i] = current[start:start + size]
        start += size
    return results


@dataclass(frozen=True, eq=False)
class GreenMatrix:
    """``w(L) = S w(0)`` with ``w = (dU samples, dU^dagger samples)``, components stacked."""

    s: np.ndarray
    size: int  # m * n

    @property
    def p(self) -> np.ndarray:
        return self.s[: self.size, : self.size]

    @property
    def q(self) -> np.ndarray:
        return self.s[: self.size, self.size :]

    def block_error(self) -> float:
        """Deviation from the ``[[P, Q], [Q*, P*]]`` structure."""
        m = self.size
        return float(
            max(
                np.abs(self.s[m:, :m] - self.q.conj()).max(),
                np.abs(self.s[m:, m:] - self.p.conj()).max(),
            )
        )

    def bogoliubov_errors(self) -> tuple[float, float]:
        """Max-abs residuals of ``P P^+ - Q Q^+ - I`` and ``P Q^T - Q P^T``."""
        p, q = self.p, self.q
        unit = p @ p.conj().T - q @ q.conj().T - np.eye(self.size)
        sym = p @ q.T - q @ p.T
        return float(np.abs(unit).max()), float(np.abs(sym).max())

    def apply(self, w: DoubledField) -> DoubledField:
        vec = np.concatenate([w.plus.ravel(), w.minus.ravel()])
        out = self.s @ vec
        shape = w.plus.shape
        return DoubledField(out[: self.size].reshape(shape), out[self.size :].reshape(shape))

    def transpose_apply(self, f: DoubledField) -> DoubledField:
        """Back-propagation via the matrix: ``f0 = S^T fL`` under the bilinear pairing."""
        vec = np.concatenate([f.plus.ravel(), f.minus.ravel()])
        out = self.s.T @ vec
        shape = f.plus.shape
        return DoubledField(out[: self.size].reshape(shape), out[self.size :].reshape(shape))

    def covariance(self, fi: DoubledField, fj: DoubledField, dt: float, n0: float = 1.0) -> complex:
        """``dt^2 fi^T S Sigma0 S^T fj`` with coherent-state input ``<dU dU^+> = n0/dt``."""
        m = self.size
        sigma0 = np.zeros((2 * m, 2 * m), dtype=complex)
        sigma0[:m, m:] = np.eye(m) * (n0 / dt)
        vi = np.concatenate([fi.plus.ravel(), fi.minus.ravel()])
        vj = np.concatenate([fj.plus.ravel(), fj.minus.ravel()])
        return complex(dt**2 * (vi @ self.s @ sigma0 @ self.s.T @ vj))


def build_green_matrix(traj: Trajectory, z: float | None = None) -> GreenMatrix:
    """Brute-force Green matrix from ``2 m n`` forward runs on basis vectors."""
    n = traj.grid.n
    if n > GREEN_MAX_SAMPLES:
        raise ValidationError(
            f"Green matrix refused for n={n} > {GREEN_MAX_SAMPLES}; use backpropagate_functional instead"
        )
    m = traj.components
    size = m * n
    k = traj.n_steps if z is None else traj.index_at(z)
    eye = np.eye(2 * size, dtype=complex).reshape(2 * size, 2, m, n)
    out = _sweep(_Kernel(traj, doubled=True), eye, _kerr_inputs(traj, 0, k, reverse=False), adjoint=False)
    return GreenMatrix(out.reshape(2 * size, 2 * size).T.copy(), size)
