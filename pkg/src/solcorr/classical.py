"""Classical soliton-pair inputs and split-step propagation.

Both the scalar NLSE ``iU_z + U_tt/2 + g|U|^2 U = 0`` and the coupled pair

    iU_z + U_tt/2 + (A|U|^2 + B|V|^2) U = 0
    iV_z + V_tt/2 + (A|V|^2 + B|U|^2) V = 0

are handled by one kernel acting on an ``(m, n)`` array of components with a
symmetric ``m x m`` coupling matrix (``[[g]]`` or ``[[A, B], [B, A]]``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import grid as gridmod
from .grid import TimeGrid

OVERHANG_TOLERANCE = 1e-5


class ValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Envelope:
    """Sampled classical field on a grid."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=complex)
        if s.shape != (self.grid.n,):
            raise ValidationError(f"expected {self.grid.n} samples, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("envelope contains non-finite samples")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def photon_number(self) -> float:
        return gridmod.norm(self.grid, self.samples)


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SolitonPairSpec:
    """``sech(t + rho) + gamma * sech(t - rho) * exp(i theta)``."""

    gamma: float = 1.0
    theta: float = math.pi / 2
    rho: float = 3.5

    def __post_init__(self):
        gamma = _finite("gamma", self.gamma)
        rho = _finite("rho", self.rho)
        theta = _finite("theta", self.theta)
        if gamma <= 0:
            raise ValidationError(f"gamma must be positive, got {gamma}")
        if rho < 0:
            raise ValidationError(f"rho must be non-negative, got {rho}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho", rho)
        theta %= 2 * math.pi
        object.__setattr__(self, "theta", 0.0 if theta == 2 * math.pi else theta)


@dataclass(frozen=True)
class VectorPairSpec:
    t1: float = 3.5
    a_coeff: float = 1.0
    b_coeff: float = 2.0

    def __post_init__(self):
        t1 = _finite("t1", self.t1)
        a = _finite("a_coeff", self.a_coeff)
        b = _finite("b_coeff", self.b_coeff)
        if t1 < 0:
            raise ValidationError(f"t1 must be non-negative, got {t1}")
        if a <= 0:
            raise ValidationError(f"a_coeff must be positive, got {a}")
        if b < 0:
            raise ValidationError(f"b_coeff must be non-negative, got {b}")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "a_coeff", a)
        object.__setattr__(self, "b_coeff", b)

    @property
    def coupling(self) -> np.ndarray:
        return np.array([[self.a_coeff, self.b_coeff], [self.b_coeff, self.a_coeff]])


def sech(x):
    return 1.0 / np.cosh(x)


def _warn_overhang(grid: TimeGrid, offset: float) -> None:
    tail = float(sech(grid.t_half_span - offset))
    if tail >= OVERHANG_TOLERANCE:
        warnings.warn(
            f"pulse at |t|={offset} overhangs the window (edge amplitude {tail:.2e})",
            gridmod.BoundaryWarning,
            stacklevel=3,
        )


def init_scalar_pair(spec: SolitonPairSpec, grid: TimeGrid) -> Envelope:
    _warn_overhang(grid, spec.rho)
    t = grid.t
    u = sech(t + spec.rho) + spec.gamma * sech(t - spec.rho) * np.exp(1j * spec.theta)
    return Envelope(grid, u)


def init_vector_pair(spec: VectorPairSpec, grid: TimeGrid) -> tuple[Envelope, Envelope]:
    _warn_overhang(grid, spec.t1)
    t = grid.t
    left, right = sech(t + spec.t1), sech(t - spec.t1)
    return Envelope(grid, left + right), Envelope(grid, left - right)


def linear_polarizations(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``E_x = (U + V)/sqrt2`` and ``E_y = (U - V)/(i sqrt2)`` from circular components."""
    s = math.sqrt(2.0)
    return (u + v) / s, (u - v) / (1j * s)


def step_sizes(z_target: float, step: float) -> np.ndarray:
    """Uniform steps covering ``[0, z_target]``; a remainder becomes a shorter last step."""
    step = float(step)
    z_target = float(z_target)
    if not (math.isfinite(step) and step > 0):
        raise ValidationError(f"step must be positive, got {step!r}")
    if not (math.isfinite(z_target) and z_target >= 0):
        raise ValidationError(f"z_target must be non-negative, got {z_target!r}")
    n_full = math.floor(z_target / step + 1e-9)
    steps = np.full(n_full, step)
    rem = z_target - n_full * step
    if rem > 1e-9 * step:
        steps = np.append(steps, rem)
    return steps


class _Stepper:
    """Strang step ``D(h/2) K(h) D(h/2)`` with cached dispersion multipliers."""

    def __init__(self, grid: TimeGrid, coupling: np.ndarray):
        self.grid = grid
        self.coupling = np.asarray(coupling, dtype=float)
        self._half: dict[float, np.ndarray] = {}

    def half(self, h: float) -> np.ndarray:
        mult = self._half.get(h)
        if mult is None:
            mult = self._half[h] = self.grid.dispersion_phase(0.5 * h)
        return mult

    def kerr_phase(self, u: np.ndarray, h: float) -> np.ndarray:
        return h * (self.coupling @ (u.real**2 + u.imag**2))

    def step(self, u_hat: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Advance one spectrum; returns the new spectrum and the pre-Kerr field."""
        half = self.half(h)
        pre = gridmod.ifft(u_hat * half)
        post = pre * np.exp(1j * self.kerr_phase(pre, h))
        return gridmod.fft(post) * half, pre


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Classical background along z.

    Spectra are stored every ``store_every`` solver steps; any intermediate
    step is regenerated bit-for-bit by re-running the stepper from the
    nearest stored spectrum.
    """

    grid: TimeGrid
    coupling: np.ndarray
    steps: np.ndarray
    store_every: int
    stored: dict[int, np.ndarray] = field(repr=False)
    warnings: tuple[str, ...] = ()

    @property
    def components(self) -> int:
        return self.coupling.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.components == 2

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def step(self) -> float:
        return float(self.steps[0]) if self.n_steps else 0.0

    @property
    def z_checkpoints(self) -> np.ndarray:
        z = np.arange(self.n_steps + 1) * self.step
        if self.n_steps:
            z[-1] = z[-2] + self.steps[-1]
        return z

    @property
    def z_end(self) -> float:
        return float(self.z_checkpoints[-1])

    def index_at(self, z: float) -> int:
        zs = self.z_checkpoints
        k = int(np.argmin(np.abs(zs - z)))
        if abs(zs[k] - z) > 1e-6 * max(self.step, 1e-12):
            raise ValidationError(f"z={z} is not a stored checkpoint (step {self.step})")
        return k

    def _stepper(self) -> _Stepper:
        return _Stepper(self.grid, self.coupling)

    def spectrum(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.n_steps:
            raise IndexError(k)
        base = (k // self.store_every) * self.store_every
        u_hat = self.stored[base]
        if base == k:
            return u_hat
        stepper = self._stepper()
        for j in range(base, k):
            u_hat, _ = stepper.step(u_hat, float(self.steps[j]))
        return u_hat

    def field(self, k: int) -> np.ndarray:
        """Time-domain components ``(m, n)`` after ``k`` steps."""
        return gridmod.ifft(self.spectrum(k))

    def field_at(self, z: float) -> np.ndarray:
        return self.field(self.index_at(z))

    def kerr_inputs(self, k0: int, k1: int) -> np.ndarray:
        """Pre-Kerr fields ``(k1 - k0, m, n)`` of steps ``k0 .. k1-1``."""
        out = np.empty((k1 - k0, self.components, self.grid.n), dtype=complex)
        u_hat = self.spectrum(k0)
        stepper = self._stepper()
        for i, j in enumerate(range(k0, k1)):
            u_hat, out[i] = stepper.step(u_hat, float(self.steps[j]))
        return out

    def segments(self, reverse: bool = False) -> Iterator[tuple[int, int]]:
        """Step ranges aligned to the storage stride."""
        bounds = list(range(0, self.n_steps, self.store_every)) + [self.n_steps]
        pairs = list(zip(bounds[:-1], bounds[1:]))
        return iter(pairs[::-1] if reverse else pairs)

    def iter_fields(self, every: int = 1) -> Iterator[tuple[float, np.ndarray]]:
        """Yield ``(z, field)`` for every ``every``-th step, plus the endpoint."""
        zs = self.z_checkpoints
        stepper = self._stepper()
        u_hat = self.stored[0]
        for k in range(self.n_steps + 1):
            if k % every == 0 or k == self.n_steps:
                yield float(zs[k]), gridmod.ifft(u_hat)
            if k < self.n_steps:
                u_hat, _ = stepper.step(u_hat, float(self.steps[k]))


def _propagate(
    grid: TimeGrid,
    fields: np.ndarray,
    coupling: np.ndarray,
    z_target: float,
    step: float,
    store_every: int,
    monitor_every: int,
) -> Trajectory:
    steps = step_sizes(z_target, step)
    stepper = _Stepper(grid, coupling)
    u_hat = gridmod.fft(np.asarray(fields, dtype=complex))
    stored = {0: u_hat}
    notes: list[str] = []
    for k, h in enumerate(steps, start=1):
        u_hat, _ = stepper.step(u_hat, float(h))
        if k % store_every == 0 or k == len(steps):
            stored[k] = u_hat
        if k % monitor_every == 0 or k == len(steps):
            u = gridmod.ifft(u_hat)
            if not np.all(np.isfinite(u)):
                raise FloatingPointError(f"non-finite field at step {k}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", gridmod.BoundaryWarning)
                msg = gridmod.check_boundary(u, context=f"at z={k * step:.6g}")
            if msg and not notes:
                notes.append(msg)
                warnings.warn(msg, gridmod.BoundaryWarning, stacklevel=3)
    return Trajectory(grid, np.asarray(coupling, dtype=float), steps, store_every, stored, tuple(notes))


def propagate_scalar(
    field: Envelope,
    z_target: float,
    step: float = 1e-3,
    *,
    nonlinearity: float = 1.0,
    store_every: int = 500,
    monitor_every: int = 100,
) -> Trajectory:
    """Integrate the scalar NLSE by symmetric split-step to ``z_target``."""
    return _propagate(
        field.grid, field.samples[None, :], np.array([[nonlinearity]]), z_target, step,
        store_every, monitor_every,
    )


def propagate_vector(
    u: Envelope,
    v: Envelope,
    z_target: float,
    step: float = 1e-3,
    spec: VectorPairSpec | None = None,
    *,
    store_every: int = 500,
    monitor_every: int = 100,
) -> Trajectory:
    if u.grid != v.grid:
        raise gridmod.GridError("U and V live on different grids")
    spec = spec or VectorPairSpec()
    return _propagate(
        u.grid, np.stack([u.samples, v.samples]), spec.coupling, z_target, step,
        store_every, monitor_every,
    )


@dataclass(frozen=True)
class Conserved:
    photon_number: float
    momentum: float
    hamiltonian: float
    component_numbers: tuple[float, ...]


def conserved_quantities(grid: TimeGrid, fields: np.ndarray, coupling=None) -> Conserved:
    """Photon number, momentum and Hamiltonian of one or more components.

    ``H = sum_c 1/2 int |u_c,t|^2 dt - 1/2 sum_cd G_cd int |u_c|^2 |u_d|^2 dt``;
    ``P = sum_c int omega |u_hat_c|^2 (dt/n)``.
    """
    u = np.atleast_2d(np.asarray(fields, dtype=complex))
    m = u.shape[0]
    g = np.eye(m) if coupling is None else np.atleast_2d(np.asarray(coupling, dtype=float))
    dt = grid.dt
    inten = np.abs(u) ** 2
    spec = np.abs(gridmod.fft(u)) ** 2 * (dt / grid.n)
    numbers = tuple(float(x) for x in inten.sum(axis=-1) * dt)
    kinetic = 0.5 * float(np.sum(spec * grid.omega**2))
    potential = -0.5 * float(np.einsum("cd,ct,dt->", g, inten, inten) * dt)
    momentum = float(np.sum(spec * grid.omega))
    return Conserved(float(sum(numbers)), momentum, kinetic + potential, numbers)


def intensity_peaks(grid: TimeGrid, intensity: np.ndarray) -> list[int]:
    """Indices of local maxima sorted by height, ties broken toward larger |t|."""
    inten = np.asarray(intensity, dtype=float)
    left = np.roll(inten, 1)
    right = np.roll(inten, -1)
    idx = np.flatnonzero((inten > left) & (inten >= right))
    return sorted(idx.tolist(), key=lambda i: (-inten[i], -abs(grid.t[i])))


def two_peaks(grid: TimeGrid, intensity: np.ndarray, min_ratio: float = 0.05) -> tuple[int, int] | None:
    """The two dominant peaks (ordered in t), or None if only one is resolvable."""
    peaks = intensity_peaks(grid, intensity)
    if len(peaks) < 2:
        return None
    i, j = peaks[0], peaks[1]
    inten = np.asarray(intensity)
    if inten[j] < min_ratio * inten[i]:
        return None
    return (i, j) if i < j else (j, i)


def peak_separation(grid: TimeGrid, intensity: np.ndarray) -> float:
    """Distance between the two largest local maxima; 0 when they have merged."""
    pair = two_peaks(grid, intensity)
    if pair is None:
        return 0.0
    inten = np.asarray(intensity, dtype=float)
    pos = []
    for i in pair:
        a, b, c = inten[i - 1], inten[i], inten[(i + 1) % len(inten)]
        den = a - 2 * b + c
        pos.append(grid.t[i] + (0.5 * (a - c) / den * grid.dt if den else 0.0))
    return float(pos[1] - pos[0])
