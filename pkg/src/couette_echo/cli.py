"""Command-line experiment driver.

    couette-echo <experiment> --config <path> [--out <dir>] [--threads N]

The config is flat ``key = value`` text with dotted section prefixes
(``params.k0 = 8``); a ``.toml`` file with the same sections is accepted too.
Every experiment writes its artifacts and a JSON manifest into the output
directory.  Exit status: 0 success, 2 invalid config, 3 numerical failure.
"""
import argparse
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .params import ParamError, derive_params, growth_product
from .spectral import Grid

EXPERIMENTS = ("background", "linear", "echo", "taylor", "fullrun", "report")

# key -> (type, default); None default means required
SCHEMA = {
    "params.k0": (int, None),
    "params.regime": (str, "desk"),
    "params.sigma": (float, None),
    "params.alpha": (float, None),
    "params.eps0": (float, None),
    "params.eps1": (float, 1e-3),
    "params.C0": (float, 1.5),
    "params.D": (float, 100.0),
    "params.E": (float, 10.0),
    "grid.K_z": (int, 0),
    "grid.N_v": (int, 0),
    "grid.L_v": (float, 4.0 * math.pi),
    "grid.coarse_K_z": (int, 4),
    "evolve.dt_base": (float, 0.25),
    "evolve.refine_factor": (int, 10),
    "evolve.critical_window": (float, 5.0),
    "evolve.green": (str, "neumann"),
    "evolve.green_tol": (float, 1e-13),
    "evolve.t_end": (float, 0.0),
    "echo.flat": (bool, False),
    "echo.intervals": (int, 1),
    "taylor.n_max": (int, 3),
    "taylor.p_max": (int, 4),
    "taylor.intervals": (int, 3),
    "taylor.box_D": (float, 12.0),
    "fullrun.N0": (int, 2),
    "report.trajectory": (str, ""),
    "report.samples": (int, 9),
    "output.dir": (str, "out"),
    "seed": (int, 0),
}


class ConfigError(ValueError):
    pass


# -- config ---------------------------------------------------------------------

def _parse_value(raw):
    s = raw.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def read_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            return _flatten(tomllib.loads(text))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"malformed TOML: {e}") from None
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        raw[k.strip()] = _parse_value(v)
    return raw


def validate(raw, experiment=None):
    """Fill defaults and check types; the first violated constraint is raised."""
    unknown = sorted(set(raw) - set(SCHEMA) - {"experiment"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    cfg = {}
    for key, (typ, default) in SCHEMA.items():
        if key in raw:
            v = raw[key]
            if typ is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if typ is bool and not isinstance(v, bool) or typ is not bool and isinstance(v, bool):
                raise ConfigError(f"{key}: expected {typ.__name__}")
            if not isinstance(v, typ):
                raise ConfigError(f"{key}: expected {typ.__name__}, got {v!r}")
            cfg[key] = v
        elif default is None:
            if key != "params.k0" and raw.get("params.regime") == "paper":
                continue
            raise ConfigError(f"missing required key {key}")
        else:
            cfg[key] = default
    exp = experiment or raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    cfg["experiment"] = exp
    try:
        p = build_params(cfg)
    except ParamError as e:
        raise ConfigError(f"params: {e}") from None
    if cfg["evolve.green"] not in ("neumann", "direct"):
        raise ConfigError("evolve.green must be 'neumann' or 'direct'")
    if not 0 < cfg["evolve.dt_base"] <= 0.5:
        raise ConfigError("evolve.dt_base must lie in (0, 0.5]")
    for key in ("grid.K_z", "grid.N_v"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} must be >= 0")
    if cfg["grid.N_v"] and cfg["grid.N_v"] & (cfg["grid.N_v"] - 1):
        raise ConfigError("grid.N_v must be a power of two")
    if exp == "fullrun" and p.regime != "desk":
        raise ConfigError("fullrun requires params.regime = desk")
    return cfg, p


def build_params(cfg):
    ov = {k.split(".", 1)[1]: cfg[k] for k in ("params.sigma", "params.alpha", "params.eps0", "params.eps1",
                                                "params.C0", "params.D", "params.E") if k in cfg}
    if cfg["params.regime"] == "paper":
        ov = {k: v for k, v in ov.items() if k in ("C0", "D", "E")}
    return derive_params(cfg["params.k0"], cfg["params.regime"], ov)


def digest(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _versions():
    import scipy
    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
           "couette_echo": __version__}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    from . import _accel
    out["backend"] = _accel.backend()
    return out


# -- experiments -----------------------------------------------------------------

def _grid(cfg, K_default, N_default):
    K = cfg["grid.K_z"] or K_default
    N = cfg["grid.N_v"] or N_default
    return Grid(K, N, cfg["grid.L_v"])


def _evo(cfg, t_span, **kw):
    from .evolve import EvolutionConfig
    base = dict(dt_base=cfg["evolve.dt_base"], refine_factor=cfg["evolve.refine_factor"],
                critical_window=cfg["evolve.critical_window"], green=cfg["evolve.green"],
                green_tol=cfg["evolve.green_tol"])
    base.update(kw)
    return EvolutionConfig(tuple(t_span), **base)


def _background(cfg, p, grid, t_end, store_every=None):
    from .evolve import evolve_background
    coarse = Grid(min(cfg["grid.coarse_K_z"], grid.K_z), grid.N_v, grid.L_v)
    return evolve_background(p, _evo(cfg, (1.0, t_end), store_every=store_every), coarse)


def _sample_times(a, b, n):
    return [float(x) for x in np.linspace(a, b, n)]


def exp_background(cfg, p, out):
    from .diagnostics import energy_report, write_reports_csv
    from .evolve import fit_exponent
    grid = _grid(cfg, 4, 256)
    t_end = cfg["evolve.t_end"] or p.T0
    traj = _background(cfg, p, grid, t_end, store_every=1.0)
    traj.save(out / "background.traj")
    ts = _sample_times(1.0, t_end, cfg["report.samples"])
    reps = [energy_report(traj.at(t), t, p, shift=(0, 0.0), box=((1, 0.0), (1, 8.0))) for t in ts]
    write_reports_csv(out / "energy.csv", reps)
    times = np.array([t for t in traj.times if 2 * t <= t_end and t >= 2.0])
    metrics = {"t_end": t_end}
    if times.size >= 3:
        th = [traj.at(t).theta.l2() for t in times]
        df = [(traj.at(t).f - traj.at(2 * t).f).l2() for t in times]
        metrics["theta_exponent"] = fit_exponent(times, th)
        metrics["f_difference_exponent"] = fit_exponent(times, df)
    return metrics, ["background.traj", "energy.csv"]


def exp_echo(cfg, p, out):
    from .echo import build_profiles, run_growth, seed_state
    lib = build_profiles(p)
    grid = _grid(cfg, p.k0 + 2, 4096)
    s0 = seed_state(p, lib, grid, None, "forward", True, p.eps1)
    steps = p.k0 - p.k1
    _, B, F, table = run_growth(s0, steps, lib, p, flat=cfg["echo.flat"])
    table.write_csv(out / "growth.csv")
    log_prod = float(np.sum(np.log(table.ratios)))
    expected = growth_product(p, p.k1 + 1, p.k0)
    return {"steps": steps, "log_ratio_product": log_prod, "log_growth_product": expected,
            "band_ok": bool(np.all(table.band_check(p.sigma, 10.0))),
            "B_final": float(B[-1]) if len(B) else 0.0}, ["growth.csv"]


def _write_rows(path, rows):
    import csv
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    cols = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in cols])


def exp_linear(cfg, p, out):
    from .echo import build_profiles, compare_to_pde, seed_state, t_star
    lib = build_profiles(p)
    grid = _grid(cfg, p.k0 + 2, 4096)
    s0 = seed_state(p, lib, grid, None, "forward", True, p.eps1)
    n = cfg["echo.intervals"]
    t_end = t_star(p.k0 - n, s0.carrier) + 0.5
    bg = _background(cfg, p, grid, t_end)
    rows = compare_to_pde(s0, bg, _evo(cfg, (1.0, t_end)), lib, p, grid, intervals=n)
    _write_rows(out / "comparison.csv", rows)
    return {"increment_error": max(r["increment_error"] for r in rows),
            "off_resonant": max(r["off_resonant"] for r in rows)}, ["comparison.csv"]


def _taylor_setup(cfg, p):
    from .echo import build_profiles, seed_state, t_star, to_state
    from .evolve import evolve_nonlinear
    lib = build_profiles(p)
    grid = _grid(cfg, 14, 512)
    s0 = seed_state(p, lib, grid, None, "forward", True, p.eps1)
    ta = t_star(p.k0, s0.carrier)
    tb = t_star(max(p.k0 - cfg["taylor.intervals"], 1), s0.carrier)
    coarse = _background(cfg, p, grid, ta)
    gT0 = coarse.final().resample(grid)
    ecfg = _evo(cfg, (ta, tb), store_every=None)
    bg = evolve_nonlinear(gT0, ecfg, grid)
    return lib, grid, s0, ecfg, bg, gT0, to_state(s0, grid, ta, charged=True), to_state(s0, grid, ta)


def exp_taylor(cfg, p, out):
    from .taylor import ball_radius, build_hierarchy
    lib, grid, s0, ecfg, bg, gT0, seed, _ = _taylor_setup(cfg, p)
    H = build_hierarchy(seed, bg, ecfg, n_max=cfg["taylor.n_max"], p_max=cfg["taylor.p_max"])
    ts = _sample_times(*ecfg.t_span, cfg["report.samples"])
    radius = lambda n: ball_radius(p, n, cfg["taylor.box_D"])
    H.write_summary_csv(out / "hierarchy.csv", ts, p.k0, s0.carrier, radius)
    arts = ["hierarchy.csv"]
    for (n, q), tr in sorted(H.components.items()):
        name = f"g_{n}_{q}.traj"
        tr.save(out / name)
        arts.append(name)
    masses = [H.box_mass(n, q, t, p.k0, s0.carrier, radius(n)) for (n, q) in H.components for t in ts
              if H.component(n, q, t).norm() > 0]
    return {"min_box_mass": min(masses) if masses else 1.0,
            "level_norms_end": {str(n): H.level(n, ecfg.t_span[1]).norm() for n in range(1, H.n_max + 1)}}, arts


def exp_fullrun(cfg, p, out):
    from .coords import StateTriple
    from .echo import from_state, l2, recurrence_step, t_star
    from .evolve import evolve_nonlinear
    from .taylor import build_hierarchy
    lib, grid, s0, ecfg, bg, gT0, seed, pert = _taylor_setup(cfg, p)
    H = build_hierarchy(seed, bg, ecfg, n_max=cfg["taylor.n_max"], p_max=cfg["taylor.p_max"])
    ng = evolve_nonlinear(gT0 + pert, ecfg, grid)
    N0 = cfg["fullrun.N0"]
    weight = (1.0 + grid.k[:, None].astype(float) ** 2) ** (N0 / 2)

    def dz_norm(F):
        return float(np.sqrt(np.sum(np.abs(F.coeffs * weight) ** 2) * grid.dxi))

    ta = ecfg.t_span[0]
    base = dz_norm(ng.at(ta).f)
    rows = []
    for t in _sample_times(*ecfg.t_span, cfg["report.samples"]):
        gs = ng.at(t) - bg.at(t)
        G = StateTriple.zeros(grid, t)
        for n in range(1, H.n_max + 1):
            G = G + H.level(n, t)
        gsn = gs.norm()
        rows.append(dict(t=t, gstar=gsn, gap=(gs - G).norm(), rel_gap=(gs - G).norm() / gsn if gsn > 0 else 0.0,
                         amplification=dz_norm(ng.at(t).f) / base if base > 0 else 0.0))
    _write_rows(out / "fullrun.csv", rows)
    # mode k0 - 1 across the first critical interval, against one recurrence step
    m = p.k0
    t1 = t_star(m - 1, s0.carrier)
    obs = from_state(ng.at(t1) - bg.at(t1), s0, m - 1)
    model = recurrence_step(s0, lib, p)
    ref = l2(s0.beta[m], grid)
    amp_obs = l2(obs.beta.get(m - 1, 0 * s0.v), grid) / ref
    amp_model = l2(model.beta.get(m - 1, 0 * s0.v), grid) / ref
    return {"max_rel_gap": max(r["rel_gap"] for r in rows),
            "amplification_end": rows[-1]["amplification"],
            "mode_amplification_observed": amp_obs, "mode_amplification_model": amp_model,
            "mode_amplification_rel_error": abs(amp_obs / amp_model - 1.0) if amp_model > 0 else None}, ["fullrun.csv"]


def exp_report(cfg, p, out):
    from .diagnostics import energy_report, write_reports_csv, write_summary_json
    from .evolve import Trajectory
    path = cfg["report.trajectory"]
    if path:
        traj = Trajectory.load(path)
    else:
        grid = _grid(cfg, 4, 256)
        traj = _background(cfg, p, grid, cfg["evolve.t_end"] or p.T0, store_every=1.0)
    a, b = traj.span
    reps = [energy_report(traj.at(t), t, p, shift=(0, 0.0), box=((1, 0.0), (1, 8.0)))
            for t in _sample_times(a, b, cfg["report.samples"])]
    write_reports_csv(out / "energy.csv", reps)
    write_summary_json(out / "energy.json", reps)
    return {"reports": len(reps), "saturated": sorted({s for r in reps for s in r.saturated})}, ["energy.csv", "energy.json"]


RUNNERS = {"background": exp_background, "linear": exp_linear, "echo": exp_echo,
           "taylor": exp_taylor, "fullrun": exp_fullrun, "report": exp_report}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def run(experiment, config_path, out=None, threads=None):
    """Run one experiment; returns the process exit status."""
    try:
        raw = read_config(config_path)
        if "experiment" in raw and raw["experiment"] != experiment:
            raise ConfigError(f"config names experiment {raw['experiment']!r}, command line {experiment!r}")
        cfg, p = validate(raw, experiment)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    outdir = Path(out or cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    if threads:
        _set_threads(threads)
    np.random.seed(cfg["seed"])
    from .evolve import IntegrationFailure
    from .green import NeumannDivergence, SingularMap
    try:
        metrics, artifacts = RUNNERS[experiment](cfg, p, outdir)
    except (IntegrationFailure, NeumannDivergence, SingularMap, FloatingPointError) as e:
        report = outdir / "failure.json"
        info = {"experiment": experiment, "error": type(e).__name__, "message": str(e),
                "last_good_time": getattr(e, "last_good_time", None)}
        report.write_text(json.dumps(_jsonable(info), indent=2, sort_keys=True), encoding="utf-8")
        print(f"numerical failure: {e} (report: {report})", file=sys.stderr)
        return 3
    manifest = {"experiment": experiment, "config": cfg, "config_digest": digest(cfg),
                "params": p.to_dict(), "versions": _versions(), "metrics": metrics,
                "artifacts": sorted(artifacts)}
    (outdir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True, default=str),
                                          encoding="utf-8")
    return 0


def _set_threads(n):
    try:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


def main(argv=None):
    ap = argparse.ArgumentParser(prog="couette-echo", description="Couette echo-cascade experiments")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=None)
    a = ap.parse_args(argv)
    return run(a.experiment, a.config, a.out, a.threads)


if __name__ == "__main__":
    sys.exit(main())
