"""Scenario driver: ``hjhomog --config scenario.yaml --out runs/``."""
from __future__ import annotations

import argparse
import copy
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel, bridge, cell, effective, ergodic, io, oracles, pde
from .env import compute_envelopes, environment_from_config, validate_assumptions
from .errors import ConfigError, HJHomogError, MismatchedTask

TASKS = ("validate", "envelopes", "branches", "effective", "bridge", "pde_converge", "ergodic",
         "full_pipeline")

REQUIRED = {
    "validate": ("p_max", "n_samples"),
    "envelopes": ("p_max",),
    "branches": ("lambdas",),
    "effective": ("lambda_lo", "lambda_hi", "n_lambda"),
    "bridge": ("lambda_lo", "lambda_hi", "n_lambda", "deltas"),
    "pde_converge": ("thetas", "epsilons"),
    "ergodic": ("lambdas", "seeds", "window", "burn_in"),
    "full_pipeline": ("lambda_lo", "lambda_hi", "n_lambda", "thetas", "epsilons"),
}

DEFAULT_TOLERANCES = {"ode": 1e-10, "bridge": 1e-12, "verify": 1e-6, "joint": 1e-6,
                      "ergodic": 1e-10}


@dataclass
class ScenarioConfig:
    environment: dict
    task: str
    params: dict = field(default_factory=dict)
    output: str = "runs"
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    workers: int | None = None

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config", "must be a mapping")
        unknown = set(data) - {"environment", "task", "params", "output", "seed", "tolerances",
                               "workers"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown top-level field")
        if "task" not in data:
            raise ConfigError("task", "missing")
        if data["task"] not in TASKS:
            raise ConfigError("task", f"must be one of {', '.join(TASKS)}")
        if "environment" not in data:
            raise ConfigError("environment", "missing")
        tol = dict(data.get("tolerances") or {})
        for k, v in tol.items():
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"tolerances.{k}", "must be a positive number")
        cfg = cls(environment=dict(data["environment"]), task=data["task"],
                  params=dict(data.get("params") or {}), output=str(data.get("output", "runs")),
                  seed=int(data.get("seed", 0)), tolerances=tol, workers=data.get("workers"))
        cfg.validate()
        return cfg

    def validate(self):
        for name in REQUIRED[self.task]:
            if name not in self.params:
                raise ConfigError(f"params.{name}", f"missing (required by task {self.task})")
        self.build_environment()
        return self

    def build_environment(self):
        block = dict(self.environment)
        if block.get("kind") in ("random_phase_trig", "smoothed_bumps"):
            block.setdefault("seed", self.seed)
        return environment_from_config(block)

    def tol(self, name):
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    def to_dict(self):
        return {"environment": copy.deepcopy(self.environment), "task": self.task,
                "params": copy.deepcopy(self.params), "output": self.output, "seed": self.seed,
                "tolerances": dict(self.tolerances), "workers": self.workers}

    @property
    def hash(self):
        # output location and worker count do not change results
        d = self.to_dict()
        d.pop("output")
        d.pop("workers")
        return io.content_hash(d)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

class _Run:
    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.files = []
        self.runtimes = {}
        self.summary = {}
        self.oracles = {}

    def csv(self, name, header, rows):
        io.write_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name, obj):
        io.write_json(self.out / name, obj)
        self.files.append(name)

    def timed(self, label, fn, *args, **kwargs):
        t = time.perf_counter()
        out = fn(*args, **kwargs)
        self.runtimes[label] = time.perf_counter() - t
        return out


def _seeds(cfg):
    s = cfg.params["seeds"]
    if isinstance(s, int):
        return list(range(cfg.seed + 1, cfg.seed + s + 1))
    return [int(v) for v in s]


def _hill_ok(env):
    try:
        oracles._check_hill(env)
    except ValueError:
        return False
    return True


def _task_validate(run, env):
    p = run.cfg.params
    rep = run.timed("validate", validate_assumptions, env, float(p["p_max"]), int(p["n_samples"]))
    run.json("assumptions.json", {"kappa_hat": rep.kappa_hat, "violations": rep.violations,
                                  "lipschitz": {str(k): v for k, v in rep.lipschitz_table.items()},
                                  "ok": rep.ok})
    run.summary["violations"] = len(rep.violations)


def _task_envelopes(run, env):
    p = run.cfg.params
    pm = float(p["p_max"])
    grid = np.linspace(-pm, pm, 2 * int(p.get("n_p", 2000)) + 1)
    envl = run.timed("envelopes", compute_envelopes, env, grid, int(p.get("x_samples", 64)))
    run.csv("envelopes.csv", ["p", "gl", "gu"], envl.rows().tolist())
    run.summary["interp_tol"] = envl.interp_tol
    return envl


def _task_branches(run, env, lambdas=None):
    p = run.cfg.params
    lambdas = p["lambdas"] if lambdas is None else lambdas
    rows, profiles = [], []
    t = time.perf_counter()
    for lam in lambdas:
        for k, b in enumerate(cell.find_periodic_solutions(env, float(lam),
                                                           int(p.get("scan_points", 201)),
                                                           run.cfg.tol("ode"))):
            rows.append((float(lam), k, b.theta, b.initial_value, b.stability_index,
                         b.period_defect, b.f_solution.max_residual))
            x = np.linspace(0.0, b.period, 65)
            profiles.extend((float(lam), k, xi, fi) for xi, fi in zip(x, b(x)))
    run.runtimes["branches"] = time.perf_counter() - t
    run.csv("branches.csv", ["lambda", "branch", "theta", "p0", "stability", "period_defect",
                             "max_residual"], rows)
    run.csv("branch_profiles.csv", ["lambda", "branch", "x", "f"], profiles)
    run.summary["branch_count"] = len(rows)


def _effective(run, env):
    p = run.cfg.params
    cache_dir = Path(run.cfg.output) / "cache"
    key = io.content_hash({"env": env.describe(), "lo": p["lambda_lo"], "hi": p["lambda_hi"],
                           "n": p["n_lambda"], "tol": run.cfg.tol("ode"),
                           "scan": p.get("scan_points", 201)})
    cached = cache_dir / f"effective-{key[:16]}.json"
    if cached.exists():
        data = io.read_json(cached)
        gaps = [effective.Gap(**g) for g in data["gaps"]]
        envl = env.envelopes_for_level(float(p["lambda_hi"]))
        eff = effective.EffectiveHamiltonian(np.array(data["e_samples"]), gaps, envl,
                                             p0=np.array(data["p0"]), metadata=data["metadata"])
        run.runtimes["effective"] = 0.0
        run.summary["effective_cache"] = "hit"
        return eff
    eff = run.timed("effective", effective.build_effective, env, float(p["lambda_lo"]),
                    float(p["lambda_hi"]), int(p["n_lambda"]), tol=run.cfg.tol("ode"),
                    scan_points=int(p.get("scan_points", 201)), workers=run.cfg.workers)
    io.write_json(cached, {"e_samples": eff.e_samples, "p0": eff.p0, "metadata": eff.metadata,
                           "gaps": [vars(g) for g in eff.gaps]})
    run.summary["effective_cache"] = "miss"
    return eff


def _task_effective(run, env):
    eff = _effective(run, env)
    run.csv("effective.csv", ["theta", "hbar", "region"], eff.rows())
    run.json("gaps.json", [g.to_dict() for g in eff.gaps])
    run.summary["gap_count"] = len(eff.gaps)
    run.summary["theta_range"] = list(eff.theta_range)
    if env.x_independent:
        th = eff.theta
        run.oracles["x_independent_max_error"] = float(np.abs(eff.lam - env.h_eval(th, 0.0)).max())
    elif _hill_ok(env):
        # sampled points against the oracle, then the interpolant between them
        run.oracles["hill_max_error"] = max(
            abs(abs(t) - oracles.hill_theta(env, lam)) for t, lam in eff.e_samples if abs(t) > 1e-3)
        lo, hi = eff.theta_range
        th = np.linspace(0.8 * lo, 0.8 * hi, 20)
        run.oracles["hill_query_max_error"] = max(
            abs(float(eff(t)) - oracles.hill_lambda(env, abs(t))) for t in th)
    return eff


def _bridge_rows(run, name, prof):
    run.csv(name, ["x", "f", "F", "piece"], prof.rows())


def _task_bridge(run, env):
    p = run.cfg.params
    eff = _task_effective(run, env)
    reports = []
    t = time.perf_counter()
    pairs = []
    if eff.gaps:
        for j, g in enumerate(eff.gaps):
            f1, f2 = bridge.gap_branches(env, g, run.cfg.tol("bridge"))
            pairs.append((f"gap{j}", f1, f2, g.lambda_bar))
    elif "bulge" in p:
        b = p["bulge"]
        lam_bar = float(b["lambda_bar"])
        f1, f2 = bridge.bulge_pair(env, lam_bar, float(b.get("split", 0.0)), run.cfg.tol("bridge"))
        pairs.append(("bulge", f1, f2, lam_bar))
    else:
        run.summary["bridge"] = "no gaps detected; nothing to bridge"
    for tag, f1, f2, lam_bar in pairs:
        for delta in p["deltas"]:
            for direction in ("up", "down"):
                prof = bridge.build_bridge_between(env, f1, f2, lam_bar, float(delta), direction,
                                                   tol=run.cfg.tol("bridge"))
                rep = bridge.verify_piecewise_supersolution(prof, tol=run.cfg.tol("verify"),
                                                            joint_tol=run.cfg.tol("joint"))
                _bridge_rows(run, f"bridge_{tag}_{direction}_{delta:g}.csv", prof)
                reports.append({**prof.summary(), "report": rep.to_dict(), "pair": tag})
    run.runtimes["bridge"] = time.perf_counter() - t
    run.json("bridges.json", reports)
    run.summary["bridges"] = len(reports)
    run.summary["bridges_ok"] = all(r["report"]["ok"] for r in reports)


def _reference(env, eff, theta, tol):
    if eff is not None:
        try:
            return float(eff(theta))
        except HJHomogError:
            pass
    if env.period is not None:
        return cell.lambda_of_theta(env, theta, tol).lam
    return float("nan")


def _task_pde(run, env, eff=None):
    p = run.cfg.params
    rows = []
    manifests = {}
    t = time.perf_counter()
    for theta in p["thetas"]:
        est = pde.estimate_effective_value(env, float(theta), p["epsilons"],
                                           nx=int(p.get("nx", 100)))
        ref = _reference(env, eff, float(theta), run.cfg.tol("ode"))
        for e, v in est.rows():
            rows.append((float(theta), e, v, ref, abs(v - ref)))
        tag = f"{float(theta):g}"
        run.csv(f"probe_theta{tag}.csv", ["t", "u0", "u0_over_t"], est.run.probe_rows())
        run.csv(f"profile_theta{tag}.csv", ["x", "u"], est.run.profile_rows())
        manifests[tag] = {**est.run.manifest(), "richardson": est.richardson,
                          "monotone_trend": est.monotone_trend}
    run.runtimes["pde"] = time.perf_counter() - t
    run.csv("pde.csv", ["theta", "epsilon", "value", "reference", "error"], rows)
    run.json("pde_runs.json", manifests)
    run.summary["pde_max_final_error"] = max(
        (r[4] for r in rows if r[1] == min(p["epsilons"])), default=float("nan"))


def _task_ergodic(run, env):
    p = run.cfg.params
    rows = []
    t = time.perf_counter()
    seeds = _seeds(run.cfg)
    for lam in p["lambdas"]:
        for est in ergodic.estimate_theta_random(env, float(lam), seeds, float(p["window"]),
                                                 float(p["burn_in"]), run.cfg.tol("ergodic"),
                                                 int(p.get("n_initial", 8))):
            rows.append(est.row())
    run.runtimes["ergodic"] = time.perf_counter() - t
    run.csv("ergodic.csv", ["lambda", "theta_hat", "ci", "seed_count", "window"], rows)
    run.summary["regimes"] = len(rows)


def _task_full(run, env):
    p = run.cfg.params
    pm = float(p.get("p_max", 4.0))
    run.cfg.params.setdefault("p_max", pm)
    rep = validate_assumptions(env, pm, int(p.get("n_samples", 256)))
    run.json("assumptions.json", {"violations": rep.violations, "ok": rep.ok})
    _task_envelopes(run, env)
    lams = p.get("lambdas") or list(np.linspace(float(p["lambda_lo"]), float(p["lambda_hi"]), 3)[1:])
    _task_branches(run, env, lams)
    eff = _task_effective(run, env)
    _task_pde(run, env, eff)
    if _hill_ok(env):
        run.oracles["pde_vs_hill"] = {
            f"{float(t):g}": oracles.hill_lambda(env, abs(float(t))) for t in p["thetas"]}


TASK_FUNCS = {"validate": _task_validate, "envelopes": _task_envelopes,
              "branches": _task_branches, "effective": _task_effective, "bridge": _task_bridge,
              "pde_converge": _task_pde, "ergodic": _task_ergodic, "full_pipeline": _task_full}


def _versions():
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__,
            "backend": _accel.backend_name()}


def run_scenario(config, out_dir=None):
    """Run one scenario; returns ``(exit_status, manifest_dict)``."""
    cfg = config if isinstance(config, ScenarioConfig) else ScenarioConfig.from_dict(config)
    env = cfg.build_environment()
    root = Path(cfg.output if out_dir is None else out_dir)
    cfg.output = str(root)
    out = root / f"{cfg.task}-{cfg.hash[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out)
    t0 = time.perf_counter()
    TASK_FUNCS[cfg.task](run, env)
    run.runtimes["total"] = time.perf_counter() - t0
    manifest = {
        "task": cfg.task, "config": cfg.to_dict(), "config_hash": cfg.hash,
        "versions": _versions(), "runtimes": run.runtimes,
        "tolerances": {k: cfg.tol(k) for k in DEFAULT_TOLERANCES},
        "oracles": run.oracles, "summary": run.summary,
        "files": {name: io.file_hash(out / name) for name in run.files},
        "directory": str(out),
    }
    io.write_json(out / "manifest.json", manifest)
    return 0, manifest


def _load_manifest(m):
    if isinstance(m, dict):
        return m
    path = Path(m)
    if path.is_dir():
        path = path / "manifest.json"
    data = io.read_json(path)
    data.setdefault("directory", str(path.parent))
    return data


def _column_diffs(a_path, b_path):
    ha, ra = io.read_csv(a_path)
    hb, rb = io.read_csv(b_path)
    ca, cb = io.numeric_columns(ha, ra), io.numeric_columns(hb, rb)
    shared = [c for c in ca if c in cb]
    out = {}
    if len(ra) == len(rb):
        for c in shared:
            out[c] = float(np.max(np.abs(ca[c] - cb[c]))) if ca[c].size else 0.0
        return out
    # different sample counts: compare on the first column by interpolation
    key = ha[0]
    if key not in ca or key not in cb or np.any(np.diff(cb[key]) <= 0):
        return {c: float("inf") for c in shared}
    lo, hi = max(ca[key].min(), cb[key].min()), min(ca[key].max(), cb[key].max())
    sel = (ca[key] >= lo) & (ca[key] <= hi)
    for c in shared:
        if c == key:
            continue
        out[c] = float(np.max(np.abs(ca[c][sel] - np.interp(ca[key][sel], cb[key], cb[c]))))
    return out


def compare_runs(manifest_a, manifest_b, tol):
    """Per-file, per-column maximal deviations between two runs of the same task."""
    a, b = _load_manifest(manifest_a), _load_manifest(manifest_b)
    if a["task"] != b["task"]:
        raise MismatchedTask(f"cannot compare task {a['task']!r} with {b['task']!r}")
    da, db = Path(a["directory"]), Path(b["directory"])
    report = {"task": a["task"], "files": {}, "exceedances": []}
    for name in sorted(set(a["files"]) & set(b["files"])):
        if not name.endswith(".csv"):
            continue
        diffs = _column_diffs(da / name, db / name)
        report["files"][name] = diffs
        for col, dev in diffs.items():
            if dev > tol:
                report["exceedances"].append((name, col, dev))
    report["max_deviation"] = max((d for f in report["files"].values() for d in f.values()),
                                  default=0.0)
    report["ok"] = not report["exceedances"]
    return report


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="hjhomog",
                                 description="Effective Hamiltonians of 1-D viscous HJ equations")
    ap.add_argument("--config", help="scenario file (YAML or JSON)")
    ap.add_argument("--out", help="output root directory")
    ap.add_argument("--workers", type=int, help="worker processes for level sweeps")
    ap.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance")
    ap.add_argument("--seed", type=int, help="override the scenario seed")
    ap.add_argument("--compare", nargs=2, metavar=("RUN_A", "RUN_B"),
                    help="compare two run directories or manifests instead of running")
    ap.add_argument("--compare-tol", type=float, default=1e-8)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.compare:
            rep = compare_runs(args.compare[0], args.compare[1], args.compare_tol)
            print(io.dumps(rep))
            return 0 if rep["ok"] else 1
        if not args.config:
            raise ConfigError("--config", "required unless --compare is given")
        data = io.load_config(args.config)
        if not isinstance(data, dict):
            raise ConfigError("config", "must be a mapping")
        if args.seed is not None:
            data["seed"] = args.seed
        if args.workers is not None:
            data["workers"] = args.workers
        if args.tol_scale != 1.0:
            if not args.tol_scale > 0:
                raise ConfigError("--tol-scale", "must be positive")
            tol = dict(data.get("tolerances") or {})
            for k, v in DEFAULT_TOLERANCES.items():
                tol[k] = float(tol.get(k, v)) * args.tol_scale
            data["tolerances"] = tol
        cfg = ScenarioConfig.from_dict(data)
        status, manifest = run_scenario(cfg, args.out)
        print(manifest["directory"])
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HJHomogError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
