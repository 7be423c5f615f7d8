"""Tracking metrics and the scenario-matrix benchmark harness.

A run of the matrix writes a deterministic ``report.json`` (RMSE, gains,
prediction curves, clip counts, speeds), a ``timing.json`` with wall-clock
solver statistics, an aligned text table, and CSV plot data named
``<scenario>_<metric>.csv``. Timing lives in its own file because it is the
only part of a run that is not reproducible bit for bit.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from numpy.typing import NDArray

from .controllers import PredictionRecord, make_controller
from .exceptions import ConfigError, DivergedState, DurationMismatch, LolNmpcError
from .ocp import OcpConfig
from .params import VehicleParams, default_params, load_vehicle
from .plant import FlightLog, PlantConfig, run_closed_loop
from .trajectories import ReferenceTrajectory, make_preset

SHAPES = ("fig8", "slanted_fig8", "hypotrochoid")
G_LEVELS = (2.5, 3.5)
CONTROLLERS = ("standard", "lol")
# estimate noise: position (m), velocity (m/s), attitude (rad), body rate (rad/s)
BENCH_NOISE = (0.01, 0.05, 0.01, 0.1)
THREADS_ENV = "LOLNMPC_THREADS"
REPORT_SCHEMA_VERSION = 1


# -- metrics -----------------------------------------------------------------


def position_rmse(log: FlightLog, ref: ReferenceTrajectory, duration: float | None = None) -> float:
    """RMSE of truth position against the reference over the control ticks."""
    span = ref.duration if duration is None else duration
    if log.tick_t.size == 0:
        raise DurationMismatch("log has no control ticks")
    period = log.tick_t[1] - log.tick_t[0] if log.tick_t.size > 1 else 0.0
    covered = log.tick_t[-1] + period
    if covered + 1e-9 < span - period:
        raise DurationMismatch(f"log covers {covered:.3f} s but the reference needs {span:.3f} s")
    mask = log.tick_t <= span + 1e-9
    err = log.tick_states[mask, :3] - ref.position(log.tick_t[mask])
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


@dataclass
class PredictionCurves:
    lead: NDArray[np.float64]
    position: NDArray[np.float64]  # m, leads 0..N
    force: NDArray[np.float64]  # N, leads 1..N (NaN at lead 0)
    samples: NDArray[np.int64]

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}


def _pred_sums(records: list[PredictionRecord], log: FlightLog, f_max: float):
    if not records:
        raise DurationMismatch("no prediction records")
    t0, t1 = log.t[0], log.t[-1]
    if records[0].t < t0 - 1e-9 or records[-1].t > t1 + 1e-9:
        raise DurationMismatch("prediction records fall outside the log")
    n_lead = records[0].states.shape[0]
    dt = records[0].dt
    pos_sq = np.zeros(n_lead)
    frc_sq = np.zeros(n_lead)
    counts = np.zeros(n_lead, dtype=np.int64)
    rec_t = np.array([r.t for r in records])
    P = np.stack([r.positions for r in records])  # (R, N+1, 3)
    F = np.stack([r.forces for r in records])  # (R, N, 4)
    for k in range(n_lead):
        tq = rec_t + k * dt
        ok = tq <= t1 + 1e-9
        if not np.any(ok):
            continue
        truth = np.column_stack([np.interp(tq[ok], log.t, log.states[:, j]) for j in range(20)])
        pos_sq[k] = np.sum((P[ok, k] - truth[:, :3]) ** 2)
        if k > 0:
            f_true = f_max * truth[:, 16:20] ** 2
            frc_sq[k] = np.sum((F[ok, k - 1] - f_true) ** 2)
        counts[k] = int(np.sum(ok))
    return pos_sq, frc_sq, counts, dt


def _curves_from_sums(pos_sq, frc_sq, counts, dt) -> PredictionCurves:
    n = np.maximum(counts, 1)
    pos = np.sqrt(pos_sq / n)
    frc = np.sqrt(frc_sq / (4 * n))
    frc[0] = np.nan
    pos[counts == 0] = np.nan
    frc[counts == 0] = np.nan
    return PredictionCurves(np.arange(len(counts)) * dt, pos, frc, counts)


def prediction_rmse(records: list[PredictionRecord], log: FlightLog,
                    params: VehicleParams | None = None) -> PredictionCurves:
    """Prediction error per horizon lead against interpolated plant truth.

    Position error is the RMS Euclidean distance; force error is the RMS over
    records and motors of predicted minus ``f_max r_truth^2``.
    """
    f_max = (params or default_params()).f_max
    return _curves_from_sums(*_pred_sums(records, log, f_max))


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    shape: str
    g_level: float
    controller: str
    repetitions: int = 1
    seed: int = 0
    motor_variant: str = "speed"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")

    @property
    def name(self) -> str:
        ctrl = self.controller if self.controller == "lol" else f"standard-{self.motor_variant}"
        return f"{self.shape}_{self.g_level:g}g_{ctrl}"


@dataclass
class ScenarioMatrix:
    scenarios: list[Scenario]
    plant: PlantConfig = field(default_factory=lambda: PlantConfig(noise_std=BENCH_NOISE))
    ocp: OcpConfig = field(default_factory=OcpConfig)
    vehicle: VehicleParams = field(default_factory=default_params)
    duration: float | None = None

    @classmethod
    def grid(cls, shapes: Iterable[str] = SHAPES, g_levels: Iterable[float] = G_LEVELS,
             controllers: Iterable[str] = CONTROLLERS, repetitions: int = 5, seed: int = 0,
             motor_variant: str = "speed", **kwargs) -> "ScenarioMatrix":
        sc = [Scenario(s, float(g), c, repetitions, seed, motor_variant)
              for s in shapes for g in g_levels for c in controllers]
        return cls(sc, **kwargs)

    @classmethod
    def default(cls) -> "ScenarioMatrix":
        """3 shapes x {2.5g, 3.5g} x {standard, lol} x 5 noise seeds."""
        return cls.grid()

    def cells(self) -> list[tuple[int, Scenario, int]]:
        out = []
        for sc in self.scenarios:
            for rep in range(sc.repetitions):
                out.append((len(out), sc, rep))
        return out

    def to_dict(self) -> dict:
        return {
            "scenarios": [asdict(s) for s in self.scenarios],
            "plant": self.plant.to_dict(),
            "ocp": asdict(self.ocp),
            "vehicle": self.vehicle.to_dict(),
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "ScenarioMatrix":
        try:
            if "scenarios" in data:
                scenarios = [Scenario(**s) for s in data["scenarios"]]
            else:
                grid = {k: data[k] for k in ("shapes", "g_levels", "controllers", "repetitions",
                                             "seed", "motor_variant") if k in data}
                m = cls.grid(**grid)
                scenarios = m.scenarios
            plant = PlantConfig(**_tupled(data["plant"])) if "plant" in data else PlantConfig(
                noise_std=BENCH_NOISE)
            ocp = OcpConfig(**data["ocp"]) if "ocp" in data else OcpConfig()
            if isinstance(data.get("vehicle"), dict):
                vehicle = VehicleParams.from_dict(data["vehicle"])
            elif isinstance(data.get("vehicle"), str):
                path = Path(data["vehicle"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                vehicle = load_vehicle(path)
            else:
                vehicle = default_params()
            for sc in scenarios:
                if sc.shape not in SHAPES:
                    raise ConfigError(f"unknown shape {sc.shape!r}")
            return cls(scenarios, plant, ocp, vehicle, data.get("duration"))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid scenario matrix: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioMatrix":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"matrix file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


# -- execution ---------------------------------------------------------------


@dataclass
class CellResult:
    index: int
    scenario: Scenario
    repetition: int
    seed: int
    ok: bool
    error: str = ""
    rmse: float = float("nan")
    max_speed: float = float("nan")
    clip_events: int = 0
    stale_ticks: int = 0
    mixer_min: float = float("nan")
    mixer_max: float = float("nan")
    pred_sums: tuple | None = None
    solve_times: NDArray[np.float64] | None = None


def _reference(shape: str, g: float, vehicle: VehicleParams) -> ReferenceTrajectory:
    return make_preset(shape, g, params=vehicle)


def run_cell(matrix: ScenarioMatrix, index: int, scenario: Scenario, rep: int) -> CellResult:
    seed = scenario.seed + rep
    res = CellResult(index, scenario, rep, seed, ok=False)
    try:
        ref = _reference(scenario.shape, scenario.g_level, matrix.vehicle)
        ctrl = make_controller(scenario.controller, scenario.motor_variant, params=matrix.vehicle,
                               ocp_config=matrix.ocp)
        log = run_closed_loop(ctrl, ref, matrix.duration, matrix.plant, seed=seed)
        res.rmse = position_rmse(log, ref, matrix.duration)
        res.max_speed = log.max_speed
        res.clip_events = log.clip_events
        res.stale_ticks = int(np.sum(log.stale))
        if scenario.controller == "lol":
            res.mixer_min = float(np.nanmin(log.mixer_output))
            res.mixer_max = float(np.nanmax(log.mixer_output))
        res.pred_sums = _pred_sums(log.predictions, log, matrix.vehicle.f_max)
        res.solve_times = log.solve_time
        res.ok = True
    except (DivergedState, LolNmpcError, np.linalg.LinAlgError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _run_cell_packed(args):
    return run_cell(*args)


def worker_count(jobs: int | None = None) -> int:
    """Pool size from ``jobs``, capped by ``LOLNMPC_THREADS`` and the CPU count."""
    n = jobs if jobs is not None else (os.cpu_count() or 1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {cap}")
        n = min(n, cap)
    return max(1, int(n))


def run_matrix(matrix: ScenarioMatrix, jobs: int | None = 1,
               progress: Callable[[CellResult], None] | None = None) -> "BenchReport":
    """Execute every cell and aggregate; crashed cells are reported as DNF."""
    cells = matrix.cells()
    workers = min(worker_count(jobs), max(1, len(cells)))
    t0 = time.perf_counter()
    results: list[CellResult] = []
    if workers == 1:
        for idx, sc, rep in cells:
            r = run_cell(matrix, idx, sc, rep)
            results.append(r)
            if progress:
                progress(r)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r in pool.map(_run_cell_packed, [(matrix, i, s, k) for i, s, k in cells]):
                results.append(r)
                if progress:
                    progress(r)
    results.sort(key=lambda r: r.index)
    return BenchReport.aggregate(matrix, results, time.perf_counter() - t0)


# -- report ------------------------------------------------------------------


@dataclass
class ScenarioStats:
    scenario: Scenario
    n_ok: int
    n_dnf: int
    rmse_mean: float
    rmse_std: float
    clip_events: int
    max_speed: float
    stale_ticks: int
    mixer_min: float
    mixer_max: float
    prediction: PredictionCurves | None
    errors: list[str]

    def to_dict(self) -> dict:
        return {
            "name": self.scenario.name,
            **asdict(self.scenario),
            "runs_ok": self.n_ok,
            "runs_dnf": self.n_dnf,
            "rmse_mean_m": _num(self.rmse_mean),
            "rmse_std_m": _num(self.rmse_std),
            "clip_events": self.clip_events,
            "max_speed_mps": _num(self.max_speed),
            "stale_ticks": self.stale_ticks,
            "mixer_output_min": _num(self.mixer_min),
            "mixer_output_max": _num(self.mixer_max),
            "prediction": None if self.prediction is None else {
                "lead_s": self.prediction.lead.tolist(),
                "position_rmse_m": [_num(v) for v in self.prediction.position],
                "force_rmse_n": [_num(v) for v in self.prediction.force],
            },
            "errors": self.errors,
        }


@dataclass
class GainRow:
    shape: str
    g_level: float
    standard: float
    lol: float

    @property
    def gain(self) -> float:
        """(standard - lol) / standard in percent."""
        if not (np.isfinite(self.standard) and np.isfinite(self.lol)) or self.standard == 0:
            return float("nan")
        return 100.0 * (self.standard - self.lol) / self.standard

    def to_dict(self) -> dict:
        return {"shape": self.shape, "g_level": self.g_level, "standard_rmse_m": _num(self.standard),
                "lol_rmse_m": _num(self.lol), "gain_percent": _num(self.gain)}


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _timing_stats(times: NDArray) -> dict:
    t = np.asarray(times, dtype=float)
    t = t[np.isfinite(t)] * 1e6
    if t.size == 0:
        return {"count": 0}
    return {"count": int(t.size), "mean_us": float(np.mean(t)), "p50_us": float(np.percentile(t, 50)),
            "p99_us": float(np.percentile(t, 99)), "max_us": float(np.max(t))}


@dataclass
class BenchReport:
    matrix: ScenarioMatrix
    scenarios: list[ScenarioStats]
    gains: list[GainRow]
    timing: dict
    solve_times: dict[str, NDArray[np.float64]]
    wall_time: float
    cells: list[CellResult] = field(default_factory=list)

    @classmethod
    def aggregate(cls, matrix: ScenarioMatrix, results: list[CellResult], wall_time: float = 0.0):
        stats = []
        solve_times = {}
        for sc in matrix.scenarios:
            rs = [r for r in results if r.scenario == sc]
            ok = [r for r in rs if r.ok]
            rm = np.array([r.rmse for r in ok])
            curves = None
            if ok:
                sums = [r.pred_sums for r in ok]
                pos = np.sum([s[0] for s in sums], axis=0)
                frc = np.sum([s[1] for s in sums], axis=0)
                cnt = np.sum([s[2] for s in sums], axis=0)
                curves = _curves_from_sums(pos, frc, cnt, sums[0][3])
                solve_times[sc.name] = np.concatenate([r.solve_times for r in ok])
            mix_lo = min((r.mixer_min for r in ok), default=float("nan"))
            mix_hi = max((r.mixer_max for r in ok), default=float("nan"))
            stats.append(ScenarioStats(
                sc, len(ok), len(rs) - len(ok),
                float(np.mean(rm)) if rm.size else float("nan"),
                float(np.std(rm)) if rm.size else float("nan"),
                int(sum(r.clip_events for r in ok)),
                max((r.max_speed for r in ok), default=float("nan")),
                int(sum(r.stale_ticks for r in ok)),
                mix_lo, mix_hi, curves,
                [f"rep {r.repetition}: {r.error}" for r in rs if not r.ok],
            ))
        gains = []
        pairs: dict[tuple, dict] = {}
        for st in stats:
            key = (st.scenario.shape, st.scenario.g_level)
            pairs.setdefault(key, {})[st.scenario.controller] = st.rmse_mean
        for (shape, g), d in pairs.items():
            if "standard" in d and "lol" in d:
                gains.append(GainRow(shape, g, d["standard"], d["lol"]))
        timing = {name: _timing_stats(t) for name, t in solve_times.items()}
        all_t = np.concatenate(list(solve_times.values())) if solve_times else np.empty(0)
        timing["all"] = _timing_stats(all_t)
        return cls(matrix, stats, gains, timing, solve_times, wall_time, results)

    # summary numbers used by the acceptance checks
    @property
    def mean_gain(self) -> float:
        g = [row.gain for row in self.gains if np.isfinite(row.gain)]
        return float(np.mean(g)) if g else float("nan")

    @property
    def pairs_lol_not_worse(self) -> int:
        return sum(1 for row in self.gains if np.isfinite(row.gain) and row.lol <= row.standard)

    def stats_for(self, shape: str, g_level: float, controller: str) -> ScenarioStats:
        for st in self.scenarios:
            s = st.scenario
            if s.shape == shape and s.g_level == g_level and s.controller == controller:
                return st
        raise KeyError((shape, g_level, controller))

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "matrix": self.matrix.to_dict(),
            "scenarios": [s.to_dict() for s in self.scenarios],
            "gains": [g.to_dict() for g in self.gains],
            "summary": {
                "pairs": len(self.gains),
                "pairs_lol_not_worse": self.pairs_lol_not_worse,
                "mean_gain_percent": _num(self.mean_gain),
                "dnf_runs": int(sum(s.n_dnf for s in self.scenarios)),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def timing_json(self) -> str:
        return json.dumps({"solve_time": self.timing, "wall_time_s": self.wall_time},
                          indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Aligned comparison table, one row per (shape, g) pair."""
        header = f"{'trajectory':<14} {'acc.':>5} {'standard (m)':>17} {'lol (m)':>17} {'gain (%)':>9} {'max v':>7}"
        lines = [header, "-" * len(header)]
        for row in self.gains:
            s = self.stats_for(row.shape, row.g_level, "standard")
            o = self.stats_for(row.shape, row.g_level, "lol")
            vmax = np.nanmax([s.max_speed, o.max_speed])
            gain = "DNF" if not np.isfinite(row.gain) else f"{row.gain:9.2f}"
            lines.append(f"{row.shape:<14} {row.g_level:>4g}g {_cell(s):>17} {_cell(o):>17} "
                         f"{gain:>9} {vmax:7.2f}")
        lines.append("-" * len(header))
        lines.append(f"mean gain {self.mean_gain:.2f} %, lol not worse in "
                     f"{self.pairs_lol_not_worse}/{len(self.gains)} pairs")
        return "\n".join(lines)

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "timing.json").write_text(self.timing_json())
        (out / "report.txt").write_text(self.table() + "\n")
        for st in self.scenarios:
            if st.prediction is not None:
                _write_csv(out / f"{st.scenario.name}_prediction.csv",
                           ["lead_s", "position_rmse_m", "force_rmse_n", "samples"],
                           zip(st.prediction.lead, st.prediction.position, st.prediction.force,
                               st.prediction.samples))
            if st.scenario.name in self.solve_times:
                t = self.solve_times[st.scenario.name]
                t = t[np.isfinite(t)] * 1e6
                counts, edges = np.histogram(t, bins=50)
                _write_csv(out / f"{st.scenario.name}_solve_time.csv",
                           ["bin_lo_us", "bin_hi_us", "count"], zip(edges[:-1], edges[1:], counts))
        return out


def _cell(st: ScenarioStats) -> str:
    if st.n_ok == 0:
        return "DNF"
    txt = f"{st.rmse_mean:.4f} ± {st.rmse_std:.4f}"
    return txt + ("*" if st.n_dnf else "")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v))
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def with_overrides(matrix: ScenarioMatrix, **kwargs) -> ScenarioMatrix:
    return replace(matrix, **kwargs)
