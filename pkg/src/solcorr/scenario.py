"""Scenario configuration, figure presets and the run driver."""

from __future__ import annotations

import copy
import itertools
import json
import math
import re
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from . import classical as cl
from . import correlations as co
from . import fluctuations as fl
from .grid import BoundaryWarning, GridError, make_grid


class ConfigError(ValueError):
    pass


SWEEP_KEYS = {"rho", "theta", "gamma", "t1", "a_coeff", "b_coeff"}
SWEEP_ALIASES = {"B": "b_coeff", "A": "a_coeff"}
OBSERVABLE_KINDS = ("map", "pair", "polarization_pair")
_PI_EXPR = re.compile(r"^\s*([0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def parse_number(value: Any) -> float:
    """Float from a number or a simple multiple of pi such as ``"pi/4"`` or ``"3*pi/2"``."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_EXPR.match(value)
        if m:
            sign = {"": 1.0, "+": 1.0, "-": -1.0}
            try:
                num = sign[m.group(1)] if m.group(1) in sign else float(m.group(1))
            except ValueError:
                raise ConfigError(f"expected a number, got {value!r}") from None
            den = float(m.group(2)) if m.group(2) else 1.0
            return num * math.pi / den
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"expected a number, got {value!r}")


@dataclass
class GridConfig:
    n: int = 1024
    t_half_span: float = 20.0


@dataclass
class SolverConfig:
    z_step: float = 1e-3
    store_every: int = 500


@dataclass
class TraceConfig:
    """Classical z-trace written alongside the observables."""

    every: float = 0.02
    slot_width: float = 2.0


@dataclass
class Observable:
    kind: str
    z_checkpoints: Any
    slot_width: float = 0.1
    window: list[float] = field(default_factory=lambda: [-8.0, 8.0])
    mode: str | None = None
    component: str | None = None
    pair_window: float | None = None

    def checkpoints(self) -> list[float]:
        zc = self.z_checkpoints
        if isinstance(zc, dict):
            try:
                start, stop, step = (parse_number(zc[k]) for k in ("start", "stop", "step"))
            except KeyError as exc:
                raise ConfigError(f"z_checkpoints range needs start/stop/step, missing {exc}") from None
            if step <= 0 or stop < start:
                raise ConfigError(f"bad z_checkpoints range {zc}")
            count = int(math.floor((stop - start) / step + 1e-9))
            return [start + i * step for i in range(count + 1)]
        if isinstance(zc, (list, tuple)) and zc:
            return [parse_number(z) for z in zc]
        raise ConfigError(f"z_checkpoints must be a non-empty list or a start/stop/step mapping, got {zc!r}")


@dataclass
class ScenarioConfig:
    system: str = "scalar"
    initial: dict[str, Any] = field(default_factory=dict)
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    observables: list[Observable] = field(default_factory=list)
    sweep: dict[str, list[Any]] = field(default_factory=dict)
    output: str = "out"
    oracle: bool = False
    fluctuation_scale: float = 1.0
    heatmaps: bool = True
    trace: TraceConfig = field(default_factory=TraceConfig)
    name: str = "custom"
    figure: str | None = None
    description: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a mapping")
        data = copy.deepcopy(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            grid = GridConfig(**(data.pop("grid", None) or {}))
            solver = SolverConfig(**(data.pop("solver", None) or {}))
            trace = TraceConfig(**(data.pop("trace", None) or {}))
            observables = [Observable(**o) for o in data.pop("observables", None) or []]
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(grid=grid, solver=solver, trace=trace, observables=observables, **data)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"unreadable scenario file: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file: {exc}") from None
        return cls.from_yaml(text)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # -- resolution -----------------------------------------------------

    def sweep_tuples(self) -> list[dict[str, float]]:
        keys = [SWEEP_ALIASES.get(k, k) for k in self.sweep]
        values = [[parse_number(v) for v in vals] for vals in self.sweep.values()]
        return [dict(zip(keys, combo)) for combo in itertools.product(*values)] or [{}]

    def spec_for(self, overrides: dict[str, float]):
        params = {SWEEP_ALIASES.get(k, k): parse_number(v) for k, v in self.initial.items()}
        params.update(overrides)
        try:
            if self.system == "scalar":
                allowed = {"gamma", "theta", "rho"}
                self._check_keys(params, allowed)
                return cl.SolitonPairSpec(**params)
            allowed = {"t1", "a_coeff", "b_coeff"}
            self._check_keys(params, allowed)
            return cl.VectorPairSpec(**params)
        except cl.ValidationError as exc:
            raise ConfigError(str(exc)) from None

    @staticmethod
    def _check_keys(params, allowed):
        extra = set(params) - allowed
        if extra:
            raise ConfigError(f"parameters {sorted(extra)} do not apply; expected {sorted(allowed)}")

    def z_max(self) -> float:
        return max(max(o.checkpoints()) for o in self.observables)

    def validate(self) -> None:
        if self.system not in ("scalar", "vector"):
            raise ConfigError(f"system must be 'scalar' or 'vector', got {self.system!r}")
        try:
            make_grid(self.grid.n, self.grid.t_half_span)
        except GridError as exc:
            raise ConfigError(str(exc)) from None
        if self.oracle and self.grid.n > 256:
            raise ConfigError(f"oracle cross-checks need n <= 256, got n={self.grid.n}")
        h = self.solver.z_step
        if not (isinstance(h, (int, float)) and h > 0):
            raise ConfigError(f"solver.z_step must be positive, got {h!r}")
        if int(self.solver.store_every) < 1:
            raise ConfigError("solver.store_every must be >= 1")
        if not self.fluctuation_scale > 0:
            raise ConfigError("fluctuation_scale must be positive")
        for key in self.sweep:
            if SWEEP_ALIASES.get(key, key) not in SWEEP_KEYS:
                raise ConfigError(f"cannot sweep over {key!r}")
            if not isinstance(self.sweep[key], list) or not self.sweep[key]:
                raise ConfigError(f"sweep.{key} must be a non-empty list")
        for combo in self.sweep_tuples():
            self.spec_for(combo)
        if not self.observables:
            raise ConfigError("at least one observable is required")
        for obs in self.observables:
            if obs.kind not in OBSERVABLE_KINDS:
                raise ConfigError(f"observable kind must be one of {OBSERVABLE_KINDS}, got {obs.kind!r}")
            if obs.kind == "polarization_pair" and self.system != "vector":
                raise ConfigError("polarization_pair needs system: vector")
            for z in obs.checkpoints():
                if z < 0 or abs(z / h - round(z / h)) > 1e-6:
                    raise ConfigError(f"checkpoint z={z} is not a non-negative multiple of z_step={h}")
            if obs.kind == "map":
                if len(obs.window) != 2 or obs.window[0] >= obs.window[1]:
                    raise ConfigError(f"map window must be [t_lo, t_hi], got {obs.window}")
                if obs.slot_width <= 0:
                    raise ConfigError("slot_width must be positive")
            if obs.kind == "pair" and (obs.mode or "half") not in ("half", "window"):
                raise ConfigError(f"pair mode must be half or window, got {obs.mode!r}")
            if obs.kind == "polarization_pair" and (obs.mode or "total") not in ("total", "split"):
                raise ConfigError(f"polarization mode must be total or split, got {obs.mode!r}")
        tr = self.trace
        if tr.every <= 0 or abs(tr.every / h - round(tr.every / h)) > 1e-6:
            raise ConfigError(f"trace.every={tr.every} must be a positive multiple of z_step")


# -- presets ------------------------------------------------------------------

def _preset(name: str, figure: str, description: str, **kw) -> ScenarioConfig:
    return ScenarioConfig(name=name, figure=figure, description=description, output=f"out/{name}", **kw)


def _presets() -> dict[str, ScenarioConfig]:
    curve = {"start": 0.0, "stop": 100.0, "step": 1.0}
    return {
        "fig1": _preset(
            "fig1", "Fig. 1",
            "slot-resolved photon-number correlation maps of an out-of-phase pair at z = 6, 30, 50",
            initial={"gamma": 1.0, "theta": math.pi / 2, "rho": 3.5},
            observables=[Observable("map", [6.0, 30.0, 50.0], slot_width=0.1, window=[-8.0, 8.0])],
        ),
        "fig2a": _preset(
            "fig2a", "Fig. 2(a)",
            "inter-soliton correlation C12(z) for separations rho = 3.0, 3.5, 4.0",
            initial={"gamma": 1.0, "theta": math.pi / 2, "rho": 3.5},
            sweep={"rho": [3.0, 3.5, 4.0]},
            observables=[Observable("pair", dict(curve), mode="half")],
        ),
        "fig2b": _preset(
            "fig2b", "Fig. 2(b)",
            "inter-soliton correlation C12(z) for relative phases theta = 0, pi/4, pi/2",
            initial={"gamma": 1.0, "theta": math.pi / 2, "rho": 3.5},
            sweep={"theta": [0.0, math.pi / 4, math.pi / 2]},
            observables=[Observable("pair", dict(curve), mode="half")],
        ),
        "fig3": _preset(
            "fig3", "Fig. 3",
            "x/y polarization photon-number correlation of a vector soliton pair (A:B = 1:2, t1 = 3.5 chosen)",
            system="vector",
            initial={"t1": 3.5, "a_coeff": 1.0, "b_coeff": 2.0},
            observables=[Observable("polarization_pair", {"start": 0.0, "stop": 50.0, "step": 0.5}, mode="total")],
        ),
    }


PRESETS = _presets()


def get_preset(name: str) -> ScenarioConfig:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def list_presets() -> list[dict[str, Any]]:
    return [
        {"name": c.name, "figure": c.figure, "description": c.description, "config": c.to_dict()}
        for c in PRESETS.values()
    ]


# -- running --------------------------------------------------------------------

def fmt(x: float) -> str:
    return f"{x:.12e}"


def _write_csv(path: Path, header: list[str], rows: list[list[float]]) -> None:
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _write_pgm(path: Path, c: np.ndarray, mask: np.ndarray) -> None:
    pix = np.clip(np.round((np.nan_to_num(c) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    pix[mask, :] = 0
    pix[:, mask] = 0
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def _label(combo: dict[str, float]) -> str:
    return " ".join(f"{k}={v!r}" for k, v in combo.items())


def _ztag(z: float) -> str:
    return f"{z:g}".replace(".", "p")


@dataclass
class TupleResult:
    params: dict[str, float]
    status: str = "ok"
    error: str | None = None
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    maps: dict[int, list[co.CorrelationMap]] = field(default_factory=dict)
    pairs: dict[int, list[co.PairCorrelation]] = field(default_factory=dict)
    trace: dict[str, np.ndarray] = field(default_factory=dict)


def _diagnostics(traj: cl.Trajectory) -> dict[str, float]:
    first = cl.conserved_quantities(traj.grid, traj.field(0), traj.coupling)
    last = cl.conserved_quantities(traj.grid, traj.field(traj.n_steps), traj.coupling)
    drift = {
        f"component_{i}_number_drift": abs(b - a) / a
        for i, (a, b) in enumerate(zip(first.component_numbers, last.component_numbers))
    }
    return {
        "photon_number": first.photon_number,
        "photon_number_drift": abs(last.photon_number - first.photon_number) / first.photon_number,
        "hamiltonian_drift": abs(last.hamiltonian - first.hamiltonian) / abs(first.hamiltonian),
        "momentum_change": abs(last.momentum - first.momentum),
        **drift,
    }


def _trace(cfg: ScenarioConfig, traj: cl.Trajectory, spec) -> dict[str, np.ndarray]:
    every = int(round(cfg.trace.every / cfg.solver.z_step))
    grid = traj.grid
    zs, vals, totals = [], [], []
    if traj.is_vector:
        half = 0.5 * cfg.trace.slot_width
        lo, hi = grid.nearest_index(-spec.t1 - half), grid.nearest_index(-spec.t1 + half)
    for z, f in traj.iter_fields(every):
        zs.append(z)
        if traj.is_vector:
            ex, _ = cl.linear_polarizations(f[0], f[1])
            inten = np.abs(ex) ** 2
            vals.append(inten[lo:hi].sum() * grid.dt)
            totals.append(inten.sum() * grid.dt)
        else:
            vals.append(cl.peak_separation(grid, np.abs(f[0]) ** 2))
    out = {"z": np.array(zs), "value": np.array(vals)}
    if totals:
        out["total"] = np.array(totals)
    return out


def _oracle_check(traj: cl.Trajectory, z: float, rows: np.ndarray, back: np.ndarray, n0: float) -> float:
    """Worst relative mismatch between swept covariances and the Green-matrix ones."""
    green = fl.build_green_matrix(traj, z)
    dt = traj.grid.dt
    fast, _ = co.covariance_matrix(back, dt, n0)
    worst = 0.0
    shape = (traj.components, traj.grid.n) if traj.is_vector else (traj.grid.n,)
    fields = [fl.DoubledField.hermitian(r.reshape(shape)) for r in rows]
    for i, fi in enumerate(fields):
        for j, fj in enumerate(fields[: i + 1]):
            ref = green.covariance(fi, fj, dt, n0).real
            scale = max(abs(ref), math.sqrt(abs(fast[i, i] * fast[j, j])), 1e-300)
            worst = max(worst, abs(ref - fast[i, j]) / scale)
    return worst


def run_tuple(cfg: ScenarioConfig, combo: dict[str, float], threads: int = 1) -> TupleResult:
    res = TupleResult(params=combo)
    spec = cfg.spec_for(combo)
    grid = make_grid(cfg.grid.n, cfg.grid.t_half_span)
    h = cfg.solver.z_step
    n0 = cfg.fluctuation_scale
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BoundaryWarning)
            if cfg.system == "scalar":
                traj = cl.propagate_scalar(cl.init_scalar_pair(spec, grid), cfg.z_max(), h,
                                           store_every=cfg.solver.store_every)
            else:
                u, v = cl.init_vector_pair(spec, grid)
                traj = cl.propagate_vector(u, v, cfg.z_max(), h, spec, store_every=cfg.solver.store_every)
        res.warnings.extend(str(w.message) for w in caught)
        res.timings["classical"] = time.perf_counter() - t0
        res.diagnostics.update(_diagnostics(traj))
        res.trace = _trace(cfg, traj, spec)
        for i, obs in enumerate(cfg.observables):
            t1 = time.perf_counter()
            zs = obs.checkpoints()
            if obs.kind == "map":
                part = co.make_partition(grid, obs.window[0], obs.window[1], obs.slot_width)
                res.maps[i] = co.correlation_maps(traj, zs, part, obs.component, n0=n0, threads=threads)
            elif obs.kind == "pair":
                res.pairs[i] = co.pair_correlations(
                    traj, zs, mode=obs.mode or "half", window=obs.pair_window,
                    component=obs.component, n0=n0)
            else:
                res.pairs[i] = co.polarization_pair_correlations(traj, zs, mode=obs.mode or "total", n0=n0)
            res.timings[f"observable_{i}"] = time.perf_counter() - t1
            if cfg.oracle:
                res.diagnostics[f"oracle_rel_error_{i}"] = _oracle_for(cfg, traj, obs, zs, n0)
        for i, pairs in res.pairs.items():
            if not all(p.resolved for p in pairs):
                res.warnings.append(f"observable {i}: pulses merged at some z, boundary fell back to t=0")
        if any(not np.all(np.isfinite(m.c)) for ms in res.maps.values() for m in ms):
            raise FloatingPointError("non-finite correlation values")
    except (FloatingPointError, cl.ValidationError, GridError) as exc:
        res.status, res.error = "failed", f"{type(exc).__name__}: {exc}"
    res.timings["total"] = time.perf_counter() - t0
    return res


def _oracle_for(cfg, traj, obs, zs, n0) -> float:
    z = max(zs)
    k = traj.index_at(z)
    fields = traj.field(k)
    grid = traj.grid
    if obs.kind == "map":
        part = co.make_partition(grid, obs.window[0], obs.window[1], obs.slot_width)
        ranges = part.index_ranges[:: max(1, len(part) // 8)]
        rows = co.number_rows(fields, ranges, obs.component or ("x" if traj.is_vector else None))
    elif obs.kind == "pair":
        w, _, _ = co.pair_weights(grid, np.abs(co.component_field(fields, obs.component)) ** 2,
                                  obs.mode or "half", obs.pair_window)
        rows = co.weighted_rows(fields, w, obs.component)
    else:
        rows = np.concatenate([co.number_rows(fields, [(0, grid.n)], "x"),
                               co.number_rows(fields, [(0, grid.n)], "y")])
    back = fl.backpropagate_arrays(traj, [k], [rows])[0]
    return _oracle_check(traj, z, rows, back, n0)


@dataclass
class RunReport:
    name: str
    output: str
    files: list[str]
    tuples: list[TupleResult]
    elapsed: float

    @property
    def failed(self) -> bool:
        return all(t.status != "ok" for t in self.tuples)

    def summary(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "output": self.output,
            "files": self.files,
            "elapsed_s": round(self.elapsed, 3),
            "tuples": [
                {"params": t.params, "status": t.status, "error": t.error, "warnings": t.warnings,
                 "diagnostics": t.diagnostics, "timings": {k: round(v, 3) for k, v in t.timings.items()}}
                for t in self.tuples
            ],
        }


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None, threads: int = 1) -> RunReport:
    """Run every sweep tuple, then write all artifacts from a single thread in a fixed order."""
    cfg.validate()
    start = time.perf_counter()
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    combos = cfg.sweep_tuples()
    if threads > 1 and len(combos) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: run_tuple(cfg, c, threads), combos))
    else:
        results = [run_tuple(cfg, c, threads) for c in combos]
    files = _write_outputs(cfg, out, combos, results)
    report = RunReport(cfg.name, str(out), files, results, time.perf_counter() - start)
    meta = {"software": {"package": "solcorr", "version": __version__},
            "config": cfg.to_dict(), "report": report.summary()}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=float) + "\n", encoding="utf-8")
    report.files.append("meta.json")
    return report


def _write_outputs(cfg: ScenarioConfig, out: Path, combos, results: list[TupleResult]) -> list[str]:
    files: list[str] = []
    multi = len(combos) > 1
    for i, obs in enumerate(cfg.observables):
        zs = obs.checkpoints()
        if obs.kind == "map":
            for combo, res in zip(combos, results):
                if res.status != "ok":
                    continue
                prefix = f"cmap_{_label(combo).replace(' ', '_').replace('=', '')}_" if multi else "cmap_"
                for m in res.maps[i]:
                    name = f"{prefix}z{_ztag(m.z)}"
                    c = np.where(m.mask[:, None] | m.mask[None, :], np.nan, m.c)
                    _write_csv(out / f"{name}.csv", [fmt(x) for x in m.partition.centers], c.tolist())
                    files.append(f"{name}.csv")
                    if cfg.heatmaps:
                        _write_pgm(out / f"{name}.pgm", m.c, m.mask)
                        files.append(f"{name}.pgm")
            continue
        name = "c12_vs_z.csv" if obs.kind == "pair" else "cxy_vs_z.csv"
        if len(cfg.observables) > 1:
            name = name.replace(".csv", f"_{i}.csv")
        header = ["z"] + [(_label(c) or ("c12" if obs.kind == "pair" else "cxy")) for c in combos]
        cols = [[p.c12 for p in r.pairs[i]] if r.status == "ok" else [math.nan] * len(zs) for r in results]
        _write_csv(out / name, header, [[z] + [col[k] for col in cols] for k, z in enumerate(zs)])
        files.append(name)
    ok = [r for r in results if r.status == "ok"]
    if ok:
        zt = ok[0].trace["z"]
        name = "x_component_trace.csv" if cfg.system == "vector" else "separation_vs_z.csv"
        header = ["z"]
        cols = []
        for combo, r in zip(combos, results):
            lab = _label(combo)
            good = r.status == "ok"
            if cfg.system == "vector":
                header += [f"slot {lab}".strip(), f"total {lab}".strip()]
                cols.append(r.trace["value"] if good else np.full(len(zt), np.nan))
                cols.append(r.trace["total"] if good else np.full(len(zt), np.nan))
            else:
                header.append(lab or "separation")
                cols.append(r.trace["value"] if good else np.full(len(zt), np.nan))
        _write_csv(out / name, header, [[z] + [c[k] for c in cols] for k, z in enumerate(zt)])
        files.append(name)
    return files
