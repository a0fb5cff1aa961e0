"""Command-line entry point: ``mhdlab run|verify|converge|initdata``.

Configuration is an INI file (sections ``grid``, ``time``, ``recipe``,
``eos``, ``diagnostics``, ``output``, ``verify``, ``converge``).  Every key
has a default; unknown sections or keys are rejected before anything is
allocated.  Every artifact written carries the hash of the resolved
configuration.

Exit codes: 0 ok, 2 config, 3 numerics, 4 verification failure, 5 I/O.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import dynamics as dy
from . import grid as g
from . import initdata as idt
from . import norms as nm
from . import tensor as tn
from . import verification as vf
from .errors import ConfigError, MhdLabError, NumericsError, PersistenceError, VerificationError
from .state import MaterialState, save_snapshot

logger = logging.getLogger("mhdlab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_VERIFY = 4
EXIT_IO = 5

# order-8 energy stacks are only affordable on small grids
ORDER8_MAX_POINTS = 16 * 16 * 17

RECIPE_NAMES = ("smooth", "static", "zero")
SUITE_NAMES = tuple(vf.SUITES) + ("acceptance", "all")
AXES = ("dt", "n3", "n_tan")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "off") else float(text)


@dataclass(frozen=True)
class RunConfig:
    # grid
    n1: int = 16
    n2: int = 16
    n3: int = 17
    mode: str = g.SLAB
    # time
    dt: float = 0.0  # 0 picks half the stable step
    t_end: float = 0.01
    cfl: float = dy.CFL_DEFAULT
    # recipe
    recipe: str = "smooth"
    beta: tuple[float, float, float] = (0.5, 0.0, 0.0)
    psi_amp: float = 0.05
    v_amp: float = 0.05
    taylor: float = 1.0
    taylor_mod: float = 0.1
    q_pert: float = 0.0
    q_mean: float = 0.0
    modes: int = 2
    order: int = 0
    project: bool = False
    c0: float = idt.TAYLOR_C0
    seed: int = 0
    # eos
    rho_bar: float = 1.0
    # diagnostics
    cadence: int = 1
    energy_order: int = nm.DEFAULT_ENERGY_ORDER
    energy_cadence: int = 0
    allow_order8: bool = False
    coevolve_b: bool = False
    jacobian_floor: float | None = tn.JACOBIAN_FLOOR
    filtered: bool = False
    halt_on_apriori: bool = False
    # output
    out: str = "out"
    snapshot_every: int = 0
    # verify
    suite: str = "all"
    corrupt_a: float = 0.0
    # converge
    axis: str = "dt"
    levels: int = 3
    expected: float = 3.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name, n, lo in (("n1", self.n1, 4), ("n2", self.n2, 4), ("n3", self.n3, 5)):
            if n < lo:
                raise ConfigError(f"{name} must be >= {lo}, got {n}")
        if self.mode not in (g.SLAB, g.TORUS):
            raise ConfigError(f"mode must be slab or torus, got {self.mode!r}")
        if self.dt < 0.0 or self.t_end < 0.0 or not self.cfl > 0.0:
            raise ConfigError("dt and t_end must be >= 0 and cfl > 0")
        if self.recipe not in RECIPE_NAMES:
            raise ConfigError(f"recipe must be one of {RECIPE_NAMES}, got {self.recipe!r}")
        if len(self.beta) != 3:
            raise ConfigError("beta needs three components")
        if not 0 <= self.order <= idt.MAX_COMPAT_ORDER:
            raise ConfigError(f"order must be in 0..{idt.MAX_COMPAT_ORDER}")
        if (self.project or self.order > 0) and self.mode != g.SLAB:
            raise ConfigError("compatibility projection needs slab mode")
        if not self.rho_bar > 0.0:
            raise ConfigError("rho_bar must be positive")
        if self.cadence < 1 or self.energy_cadence < 0 or self.snapshot_every < 0:
            raise ConfigError("cadences must be non-negative (diagnostics cadence >= 1)")
        if not 0 <= self.energy_order <= nm.MAX_ORDER:
            raise ConfigError(f"energy_order must be in 0..{nm.MAX_ORDER}")
        if self.energy_order > nm.DEFAULT_ENERGY_ORDER:
            if not self.allow_order8:
                raise ConfigError(f"energy_order > {nm.DEFAULT_ENERGY_ORDER} needs allow_order8 = true")
            if self.n1 * self.n2 * self.n3 > ORDER8_MAX_POINTS:
                raise ConfigError(f"energy_order > {nm.DEFAULT_ENERGY_ORDER} is limited to "
                                  f"{ORDER8_MAX_POINTS} grid points")
        if self.suite not in SUITE_NAMES:
            raise ConfigError(f"suite must be one of {SUITE_NAMES}, got {self.suite!r}")
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.levels < 3:
            raise ConfigError("convergence studies need at least three levels")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        return d

    @property
    def hash(self) -> str:
        return config_hash(self)

    def data_recipe(self) -> idt.DataRecipe:
        if self.recipe == "static":
            return idt.DataRecipe(name=idt.STATIC.name, beta=self.beta, psi_amp=0.0, v_amp=0.0, taylor=0.0,
                                  taylor_mod=0.0, rho_bar=self.rho_bar, seed=self.seed, order=self.order)
        psi = 0.0 if self.recipe == "zero" else self.psi_amp
        beta = (0.0, 0.0, 0.0) if self.recipe == "zero" else self.beta
        return idt.DataRecipe(name=self.recipe, beta=beta, psi_amp=psi, v_amp=self.v_amp,
                              taylor=self.taylor, taylor_mod=self.taylor_mod, q_pert=self.q_pert,
                              q_mean=self.q_mean, modes=self.modes, rho_bar=self.rho_bar,
                              seed=self.seed, order=self.order)

    def build_grid(self) -> g.Grid:
        return g.build_grid(self.n1, self.n2, self.n3, self.mode)


# (section, key) -> (field name, parser)
_SCHEMA = {
    "grid": {"n1": int, "n2": int, "n3": int, "mode": str},
    "time": {"dt": float, "t_end": float, "cfl": float},
    "recipe": {"name": str, "beta": _floats, "psi_amp": float, "v_amp": float, "taylor": float,
               "taylor_mod": float, "q_pert": float, "q_mean": float, "modes": int, "order": int,
               "project": _bool, "c0": float, "seed": int},
    "eos": {"rho_bar": float},
    "diagnostics": {"cadence": int, "energy_order": int, "energy_cadence": int, "allow_order8": _bool,
                    "coevolve_b": _bool, "jacobian_floor": _optional_float, "filtered": _bool,
                    "halt_on_apriori": _bool},
    "output": {"dir": str, "snapshot_every": int},
    "verify": {"suite": str, "corrupt_a": float},
    "converge": {"axis": str, "levels": int, "expected": float},
}
_RENAME = {("recipe", "name"): "recipe", ("output", "dir"): "out"}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                   inline_comment_prefixes=(";",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict[str, object] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            parser = _SCHEMA[section].get(key)
            if parser is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values[_RENAME.get((section, key), key)] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PersistenceError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def config_hash(cfg: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON config.

    The output directory is left out so that relocating a run keeps its hash.
    """
    d = cfg.to_dict()
    d.pop("out")
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# --- verbs -------------------------------------------------------------------------


def initial_state(cfg: RunConfig, grid: g.Grid) -> MaterialState:
    recipe = cfg.data_recipe()
    if cfg.project or cfg.order > 0:
        return idt.project_compatible(recipe, grid, order=cfg.order, c0=cfg.c0)
    return idt.recipe_state(recipe, grid)


def _step_size(cfg: RunConfig, grid: g.Grid, state: MaterialState) -> float:
    if cfg.dt > 0.0:
        return cfg.dt
    return 0.5 * dy.max_stable_dt(grid, state, cfg.cfl)


def cmd_run(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    state = initial_state(cfg, grid)
    state.check(grid)
    dt = _step_size(cfg, grid, state)
    h = cfg.hash
    records: list[dg.DiagnosticsRecord] = []
    flags: list[dict] = []
    snaps: list[str] = []
    a0 = [state.eos.effective_A0(state.q)]
    writer = dg.SeriesWriter(out / "series.csv", h)

    def hook(step: int, st: MaterialState):
        if step % cfg.cadence == 0:
            energy = cfg.energy_order if cfg.energy_cadence and step % cfg.energy_cadence == 0 else None
            rec = dg.diagnose(grid, st, step, energy_order=energy, floor=cfg.jacobian_floor)
            writer.append(rec)
            records.append(rec)
            a0.append(st.eos.effective_A0(st.q))
            fl = dg.apriori_monitor(grid, st, c0=cfg.c0)
            if not fl.ok:
                flags.append({"step": step, "t": st.t, **asdict(fl)})
                if cfg.halt_on_apriori:
                    raise NumericsError(f"a priori assumption violated at step {step}: {fl}")
        if cfg.snapshot_every and step % cfg.snapshot_every == 0:
            name = f"snapshot_{step:06d}"
            save_snapshot(out / name, grid, st, {"config_hash": h})
            snaps.append(name)

    try:
        final, _ = dy.evolve(grid, state, cfg.t_end, dt, hooks=[hook], coevolve_b=cfg.coevolve_b,
                             cfl=cfg.cfl, floor=cfg.jacobian_floor, filtered=cfg.filtered)
    finally:
        writer.close()
    summary = {
        "config": cfg.to_dict(),
        "version": __version__,
        "dt": dt,
        "t_final": final.t,
        "summary": dg.summarize(records),
        "effective_A0": max(a0),
        "apriori_violations": flags,
        "snapshots": snaps,
    }
    dg.write_json(out / "summary.json", summary, h)
    logger.info("run finished at t=%.6g after %d records; output in %s", final.t, len(records), out)
    return EXIT_OK


def _suite_calls(cfg: RunConfig, suite: str) -> list[tuple[str, object]]:
    seed = cfg.seed
    calls = {
        "geometry": [("piola", lambda: vf.piola_study(seed=seed)),
                     ("variation", lambda: vf.variation_study(seed=seed))],
        "goodunknown": [("goodunknown", lambda: vf.goodunknown_study(seed=seed, corrupt_A=cfg.corrupt_a))],
        "norms": [("norms", lambda: vf.norms_study(seed=seed))],
        "initdata": [("initdata", lambda: vf.initdata_study(seed=seed)),
                     ("compatibility", vf.compatibility_study)],
    }
    if suite == "acceptance":
        return [(f"criterion_{n}", fn) for n, _, fn in vf.ACCEPTANCE]
    if suite == "all":
        return [c for name in vf.SUITES for c in calls[name]]
    return calls[suite]


def cmd_verify(cfg: RunConfig, out: Path, suite: str | None = None) -> int:
    suite = suite or cfg.suite
    if suite not in SUITE_NAMES:
        raise ConfigError(f"suite must be one of {SUITE_NAMES}, got {suite!r}")
    results = []
    for name, call in _suite_calls(cfg, suite):
        study = call()
        logger.info("%-14s %s", name, "PASS" if study.passed else "FAIL")
        results.append(study.to_dict())
    passed = all(r["passed"] for r in results)
    dg.write_json(out / f"verify_{suite}.json",
                  {"config": cfg.to_dict(), "suite": suite, "passed": passed, "studies": results}, cfg.hash)
    if not passed:
        failed = [r["name"] for r in results if not r["passed"]]
        raise VerificationError(f"suite {suite} failed: {', '.join(failed)}")
    return EXIT_OK


def _converge_dt(cfg: RunConfig, out: Path, levels: int) -> dict[str, dg.SlopeFit]:
    grid = cfg.build_grid()
    s0 = initial_state(cfg, grid)
    dt0 = _step_size(cfg, grid, s0)
    dts = [dt0 / 2**j for j in range(levels)]
    e0 = dg.physical_energy(grid, s0).total
    drift, frozen = [], []
    for j, dt in enumerate(dts):
        writer = dg.SeriesWriter(out / f"series_dt{j}.csv", cfg.hash)
        hook = lambda k, s: writer.append(dg.diagnose(grid, s, k, floor=cfg.jacobian_floor))  # noqa: E731
        try:
            s, _ = dy.evolve(grid, s0, cfg.t_end, dt, hooks=[hook], coevolve_b=cfg.coevolve_b,
                             cfl=cfg.cfl, floor=cfg.jacobian_floor, filtered=cfg.filtered)
        finally:
            writer.close()
        rec = dg.diagnose(grid, s, 0, floor=cfg.jacobian_floor)
        drift.append(abs(rec.E_total - e0) / abs(e0))
        if rec.frozen_field_residual is not None:
            frozen.append(rec.frozen_field_residual)
    fits = {"relative_energy_drift": dg.fit_slope(dts, drift, cfg.expected)}
    if frozen:
        fits["frozen_field_residual"] = dg.fit_slope(dts, frozen, cfg.expected)
    return fits


def _converge_space(cfg: RunConfig, levels: int, axis: str) -> dict[str, dg.SlopeFit]:
    eta_amp = 0.05
    if axis == "n3":
        if cfg.mode != g.SLAB:
            raise ConfigError("n3 refinement needs slab mode (torus is spectral in y3)")
        sizes = [(cfg.n3 - 1) * 2**j + 1 for j in range(levels)]
        grids = [g.build_grid(cfg.n1, cfg.n2, n, cfg.mode) for n in sizes]
        steps = [gr.h3 for gr in grids]
    else:
        sizes = [cfg.n1 * 2**j for j in range(levels)]
        grids = [g.build_grid(n, n, cfg.n3, cfg.mode) for n in sizes]
        steps = [gr.h1 for gr in grids]
    # tangential refinement is spectral: without y3 dependence the residual
    # sits on the round-off floor at every level
    normal = axis == "n3"
    piola = []
    for gr in grids:
        eta = vf.smooth_displacement(gr, eta_amp, cfg.seed, normal=normal)
        snap = tn.geometry(gr, eta, floor=cfg.jacobian_floor)
        piola.append(float(np.abs(tn.piola_residual(gr, snap)).max()))
    return {"piola_max": dg.fit_slope(steps, piola, cfg.expected)}


def cmd_converge(cfg: RunConfig, out: Path, axis: str | None = None, levels: int | None = None) -> int:
    axis = axis or cfg.axis
    levels = cfg.levels if levels is None else levels
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    if levels < 3:
        raise ConfigError("convergence studies need at least three levels")
    fits = _converge_dt(cfg, out, levels) if axis == "dt" else _converge_space(cfg, levels, axis)
    report = {k: asdict(f) for k, f in fits.items()}
    passed = all(f.passed for f in fits.values())
    for k, f in fits.items():
        logger.info("%-24s slope %.3f (%s, expected >= %.2f)", k, f.slope, f.status, f.expected)
    dg.write_json(out / f"converge_{axis}.json",
                  {"config": cfg.to_dict(), "axis": axis, "levels": levels, "passed": passed, "fits": report},
                  cfg.hash)
    if not passed:
        raise VerificationError(f"convergence along {axis} below the expected order")
    return EXIT_OK


def save_jet(path: Path, jet: idt.JetAtZero, config_hash_: str) -> Path:
    """Write a time jet next to a snapshot, one ``.bin`` per stack entry."""
    entries = {}
    try:
        path.mkdir(parents=True, exist_ok=True)
        for name in ("v", "q", "Q", "b"):
            for j, arr in enumerate(getattr(jet, name)):
                fname = f"jet_{name}_{j}"
                np.ascontiguousarray(arr, dtype="<f8").tofile(path / f"{fname}.bin")
                entries[fname] = list(np.shape(arr))
        (path / "jet.json").write_text(json.dumps(
            {"config_hash": config_hash_, "order": jet.order, "t": jet.t, "fields": entries,
             "dtype": "<f8"}, indent=2, sort_keys=True))
    except OSError as exc:
        raise PersistenceError(f"cannot write jet to {path}: {exc}") from exc
    return path


def cmd_initdata(cfg: RunConfig, out: Path, order: int | None = None) -> int:
    order = cfg.order if order is None else order
    if not 0 <= order <= idt.MAX_COMPAT_ORDER:
        raise ConfigError(f"order must be in 0..{idt.MAX_COMPAT_ORDER}")
    grid = cfg.build_grid()
    if grid.is_slab:
        state = idt.project_compatible(cfg.data_recipe(), grid, order=order, c0=cfg.c0)
    else:
        state = idt.recipe_state(cfg.data_recipe(), grid)
    jet = idt.time_jet(grid, state, order)
    h = cfg.hash
    snap_dir = save_snapshot(out / "initdata", grid, state, {"config_hash": h})
    save_jet(snap_dir, jet, h)
    report = {"config": cfg.to_dict(), "order": order,
              "div_b0": float(np.abs(dg.div_b0(grid, state.b0)).max())}
    if grid.is_slab:
        report["compatibility_residuals"] = idt.compatibility_residuals(grid, jet)
        report["taylor_sign"] = dg.taylor_sign(grid, state)
    dg.write_json(out / "initdata.json", report, h)
    return EXIT_OK


# --- argument handling ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhdlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "verify", "converge", "initdata"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", type=Path, default=None, help="INI file (defaults apply if omitted)")
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        if verb == "verify":
            sp.add_argument("--suite", choices=SUITE_NAMES, default=None)
        if verb == "converge":
            sp.add_argument("--levels", type=int, default=None)
            sp.add_argument("--axis", choices=AXES, default=None)
        if verb in ("initdata", "run"):
            sp.add_argument("--order", type=int, default=None, help="compatibility order")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {"out": str(args.out) if args.out else None}
        if args.verb == "run":
            overrides["order"] = args.order
        cfg = load_config(args.config, overrides)
        out = Path(cfg.out)
        if args.verb == "run":
            return cmd_run(cfg, out)
        if args.verb == "verify":
            return cmd_verify(cfg, out, args.suite)
        if args.verb == "converge":
            return cmd_converge(cfg, out, args.axis, args.levels)
        return cmd_initdata(cfg, out, args.order)
    except ConfigError as exc:
        logger.error("config: %s", exc)
        return EXIT_CONFIG
    except NumericsError as exc:
        logger.error("numerics: %s", exc)
        return EXIT_NUMERICS
    except VerificationError as exc:
        logger.error("verification: %s", exc)
        return EXIT_VERIFY
    except PersistenceError as exc:
        logger.error("i/o: %s", exc)
        return EXIT_IO
    except MhdLabError as exc:  # pragma: no cover - every subclass is mapped above
        logger.error("%s", exc)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
