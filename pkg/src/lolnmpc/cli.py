"""Command-line entry point: ``lolnmpc {run,bench,selftest}``.

Exit codes: 0 success, 1 run failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from . import __version__
from .bench import BENCH_NOISE, SHAPES, ScenarioMatrix, position_rmse, run_matrix, worker_count
from .controllers import make_controller
from .exceptions import ConfigError, InvalidParam, LolNmpcError, ParseError
from .ocp import OcpConfig
from .params import load_vehicle
from .plant import Desaturation, PlantConfig, run_closed_loop
from .trajectories import PRESETS, load_csv, make_preset

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

NOISE_PROFILES = {"none": (0.0, 0.0, 0.0, 0.0), "bench": BENCH_NOISE}


@dataclass
class RunConfig:
    """Everything one closed-loop run needs; built from a JSON file plus flags."""

    traj: str = "fig8"
    g: float = 2.5
    controller: str = "lol"
    motor_variant: str = "speed"
    vehicle: str | None = None
    ocp: dict = field(default_factory=dict)
    plant: dict = field(default_factory=dict)
    noise: str = "bench"
    out: str = "out"
    seed: int = 0
    duration: float | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"run config not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        cfg = cls(**data)
        # relative file references resolve against the config's directory
        if cfg.vehicle and not Path(cfg.vehicle).is_absolute():
            cfg.vehicle = str(path.parent / cfg.vehicle)
        if cfg.traj.endswith(".csv") and not Path(cfg.traj).is_absolute():
            cfg.traj = str(path.parent / cfg.traj)
        return cfg

    def validate(self) -> None:
        if self.controller not in ("lol", "standard"):
            raise ConfigError(f"controller must be 'lol' or 'standard', got {self.controller!r}")
        if self.motor_variant not in ("none", "speed", "force"):
            raise ConfigError(f"motor variant must be none, speed or force, got {self.motor_variant!r}")
        if self.noise not in NOISE_PROFILES:
            raise ConfigError(f"noise must be one of {sorted(NOISE_PROFILES)}, got {self.noise!r}")
        if self.vehicle is not None and not Path(self.vehicle).is_file():
            raise ConfigError(f"vehicle file not found: {self.vehicle}")
        if self.traj.endswith(".csv"):
            if not Path(self.traj).is_file():
                raise ConfigError(f"trajectory file not found: {self.traj}")
        elif self.traj not in PRESETS and self.traj != "hover":
            raise ConfigError(f"unknown trajectory {self.traj!r}; choose from {sorted(PRESETS)} or a CSV path")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        self.ocp_config()
        self.plant_config()

    def ocp_config(self) -> OcpConfig:
        try:
            return OcpConfig(**self.ocp)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid OCP override: {exc}") from None

    def plant_config(self) -> PlantConfig:
        opts = {k: tuple(v) if isinstance(v, list) else v for k, v in self.plant.items()}
        opts.setdefault("noise_std", NOISE_PROFILES[self.noise])
        if "desaturation" in opts:
            try:
                opts["desaturation"] = Desaturation(opts["desaturation"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            return PlantConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid plant option: {exc}") from None

    @property
    def name(self) -> str:
        traj = Path(self.traj).stem if self.traj.endswith(".csv") else f"{self.traj}_{self.g:g}g"
        ctrl = self.controller if self.controller == "lol" else f"standard-{self.motor_variant}"
        return f"{traj}_{ctrl}_seed{self.seed}"


# -- subcommands ---------------------------------------------------------------


def cmd_run(cfg: RunConfig) -> int:
    cfg.validate()
    params = load_vehicle(cfg.vehicle)
    if cfg.traj.endswith(".csv"):
        ref = load_csv(cfg.traj, params)
    else:
        ref = make_preset(cfg.traj, cfg.g, params=params)
    ctrl = make_controller(cfg.controller, cfg.motor_variant, params=params, ocp_config=cfg.ocp_config())
    log = run_closed_loop(ctrl, ref, cfg.duration, cfg.plant_config(), seed=cfg.seed)
    log.metadata["run_config"] = asdict(cfg)
    out = Path(cfg.out)
    csv_path = log.write_csv(out / f"{cfg.name}.csv")
    log.write_metadata(out / f"{cfg.name}.json")
    s = log.summary()
    rmse = position_rmse(log, ref, cfg.duration)
    print(f"{cfg.name}: rmse {rmse:.4f} m, max speed {s['max_speed']:.2f} m/s, "
          f"mean solve {s['mean_solve_us']:.0f} us, clip events {s['clip_events']} -> {csv_path}")
    return EXIT_OK


def default_matrix_path() -> Path:
    return Path(str(resources.files("lolnmpc").joinpath("data/default_matrix.json")))


def cmd_bench(matrix_file: str | None, out: str = "bench_out", jobs: int | None = None,
              overrides: dict | None = None) -> int:
    matrix = ScenarioMatrix.load(matrix_file or default_matrix_path())
    matrix = _apply_bench_overrides(matrix, overrides or {})
    if not matrix.scenarios:
        raise ConfigError("no scenarios left after filtering")
    n_cells = len(matrix.cells())
    workers = min(worker_count(jobs), n_cells)
    print(f"running {n_cells} runs on {workers} worker(s)", file=sys.stderr)
    t0 = time.perf_counter()
    done = [0]

    def progress(r):
        done[0] += 1
        status = f"rmse {r.rmse:.4f}" if r.ok else "DNF"
        print(f"  [{done[0]}/{n_cells}] {r.scenario.name} rep {r.repetition}: {status}", file=sys.stderr)

    report = run_matrix(matrix, workers, progress)
    out_dir = report.write(out)
    print(report.table())
    print(f"report written to {out_dir} ({time.perf_counter() - t0:.1f} s)")
    if all(not c.ok for c in report.cells):
        return EXIT_FAILURE
    return EXIT_OK


def _unique(values):
    return list(dict.fromkeys(values))


def _apply_bench_overrides(matrix: ScenarioMatrix, ov: dict) -> ScenarioMatrix:
    """Rebuild the grid when any axis or per-scenario setting is overridden."""
    if ov.get("traj"):
        bad = [s for s in ov["traj"] if s not in SHAPES]
        if bad:
            raise ConfigError(f"unknown bench trajectory {bad[0]!r}; choose from {list(SHAPES)}")
    axes = ("traj", "g", "controller", "reps", "seed", "motor_variant")
    if any(ov.get(k) is not None for k in axes) and matrix.scenarios:
        sc = matrix.scenarios
        first = sc[0]
        try:
            grid = ScenarioMatrix.grid(
                shapes=_unique(ov.get("traj") or [s.shape for s in sc]),
                g_levels=_unique(ov.get("g") or [s.g_level for s in sc]),
                controllers=_unique(ov.get("controller") or [s.controller for s in sc]),
                repetitions=ov["reps"] if ov.get("reps") is not None else first.repetitions,
                seed=ov["seed"] if ov.get("seed") is not None else first.seed,
                motor_variant=ov.get("motor_variant") or first.motor_variant,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        matrix = replace(matrix, scenarios=grid.scenarios)
    if ov.get("vehicle"):
        matrix = replace(matrix, vehicle=load_vehicle(ov["vehicle"]))
    if ov.get("duration") is not None:
        matrix = replace(matrix, duration=float(ov["duration"]))
    return matrix


def cmd_selftest(only: list[str] | None = None) -> int:
    from .selftest import run_selftest

    t0 = time.perf_counter()
    results = run_selftest(only=only, echo=print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f} s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_FAILURE
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lolnmpc", description="Rate-loop-aware NMPC simulation bench.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="fly one closed-loop run")
    r.add_argument("--config", help="JSON run config; flags override its entries")
    r.add_argument("--traj", help="preset name or reference CSV path")
    r.add_argument("--g", type=float, help="peak acceleration in g for presets")
    r.add_argument("--controller", choices=["lol", "standard"])
    r.add_argument("--motor-variant", choices=["none", "speed", "force"])
    r.add_argument("--vehicle", help="vehicle parameter JSON")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float, help="seconds to fly (default: one lap)")
    r.add_argument("--noise", choices=sorted(NOISE_PROFILES), help="state-estimate noise profile")
    r.add_argument("--latency", type=int, help="command latency in low-level ticks")
    r.add_argument("--desaturation", choices=[d.value for d in Desaturation])

    b = sub.add_parser("bench", help="run a scenario matrix and write a report")
    b.add_argument("matrix", nargs="?", help="matrix JSON (default: the shipped matrix)")
    b.add_argument("--out", default="bench_out")
    b.add_argument("--jobs", type=int, help="worker processes (capped by LOLNMPC_THREADS)")
    b.add_argument("--traj", action="append", help="shape to run (repeatable; replaces the matrix shapes)")
    b.add_argument("--g", type=float, action="append", help="g level to run (repeatable; replaces the matrix levels)")
    b.add_argument("--controller", action="append", choices=["lol", "standard"])
    b.add_argument("--motor-variant", choices=["none", "speed", "force"])
    b.add_argument("--vehicle")
    b.add_argument("--seed", type=int, help="base noise seed")
    b.add_argument("--reps", type=int, help="repetitions per scenario")
    b.add_argument("--duration", type=float)

    s = sub.add_parser("selftest", help="run the numerical property suite")
    s.add_argument("--only", action="append", help="run only this check (repeatable)")
    return p


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in ("traj", "g", "controller", "motor_variant", "vehicle", "out", "seed", "duration", "noise"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    plant = dict(cfg.plant)
    if args.latency is not None:
        plant["latency_ticks"] = args.latency
    if args.desaturation is not None:
        plant["desaturation"] = args.desaturation
    cfg.plant = plant
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_run_config(args))
        if args.command == "bench":
            overrides = {k: getattr(args, k) for k in ("traj", "g", "controller", "motor_variant",
                                                       "vehicle", "seed", "reps", "duration")}
            return cmd_bench(args.matrix, args.out, args.jobs, overrides)
        return cmd_selftest(args.only)
    except (ConfigError, InvalidParam, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LolNmpcError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
