"""Command-line front end.

    bbmld TASK [--config FILE] [options]

TASK is one of simulate, estimate, exponents, fkpp, scan. A config file holds
``key=value`` lines (``#`` starts a comment); a key given several times forms
a grid, e.g. ``t=4`` and ``t=6`` on separate lines. Command-line flags
override file values. Every run writes ``results.csv``, ``summary.json`` and
``manifest.txt`` into ``--out``; the manifest is itself a config file that
reproduces the run.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import exponents, fkpp, rare
from .analytic import GaussianRate, KernelRate, LatticeRate, load_kernel
from .params import MODELS, ModelParams
from .sim import initial_state, make_rng, advance

TASKS = ("simulate", "estimate", "exponents", "fkpp", "scan")

log = logging.getLogger("bbmld")


class ConfigError(ValueError):
    pass


# key -> (type, is_grid, default)
KEYS = {
    "task": (str, False, None),
    "model": (str, False, "bbm"),
    "sigma": (float, False, 1.0),
    "rate": (float, False, 1.0),
    "L": (float, True, None),
    "N": (int, True, None),
    "mu": (float, True, None),
    "check_dt": (float, False, None),
    "kernel": (str, False, None),
    "gaussian": (bool, False, False),
    "conjectured": (bool, False, False),
    "v": (float, True, None),
    "t": (float, True, None),
    "runs": (int, False, 1000),
    "seed": (int, False, None),
    "out": (str, False, "."),
    "levels": (float, True, None),
    "method": (str, False, "naive"),
    "engine": (str, False, "auto"),
    "prune_tol": (float, False, 1e-12),
    "workers": (int, False, 1),
    "n_per_level": (int, False, 500),
    "n_macro": (int, False, 16),
    "dx": (float, False, 0.05),
    "dt": (float, False, None),
    "x_lo": (float, False, -40.0),
    "x_hi": (float, False, 120.0),
    "level": (float, False, 0.5),
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _convert(key, raw):
    typ = KEYS[key][0]
    text = str(raw).strip()
    try:
        if typ is bool:
            return _BOOL[text.lower()]
        if typ is int:
            x = float(text)
            if x != int(x):
                raise ValueError
            return int(x)
        if typ is float:
            return float(text)
        return text
    except (KeyError, ValueError):
        raise ConfigError(f"config.{key}: cannot read {text!r} as {typ.__name__}") from None


def read_config(path) -> dict:
    """Parse a ``key=value`` file into ``{key: [raw values]}``."""
    if not os.path.exists(path):
        raise ConfigError(f"config: file {path!r} not found")
    out: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            out.setdefault(key, []).append(val)
    return out


@dataclass
class ExperimentConfig:
    task: str
    params: ModelParams
    v: list
    t: list
    n_runs: int
    seed: int
    out: str
    values: dict = field(default_factory=dict)

    def get(self, key):
        return self.values.get(key, KEYS[key][2])

    def manifest_lines(self) -> list:
        lines = []
        for key in KEYS:
            val = self.values.get(key)
            if val is None:
                continue
            for x in (val if isinstance(val, list) else [val]):
                lines.append(f"{key}={_fmt(x)}")
        return lines


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def resolve(file_values: dict, cli_values: dict) -> ExperimentConfig:
    """Merge file and command-line values (command line wins) and validate."""
    merged = {}
    for key, (typ, grid, _default) in KEYS.items():
        raw = cli_values.get(key)
        if raw is None or raw == []:
            raw = file_values.get(key)
        if raw is None:
            continue
        items = raw if isinstance(raw, list) else [raw]
        conv = [_convert(key, x) for x in items]
        if not grid and len(conv) > 1:
            raise ConfigError(f"config.{key}: given {len(conv)} times but takes a single value")
        merged[key] = conv if grid else conv[0]
    task = merged.get("task")
    if task not in TASKS:
        raise ConfigError(f"config.task: expected one of {TASKS}, got {task!r}")
    if "seed" not in merged and task not in ("exponents", "fkpp"):
        raise ConfigError("config.seed: a seed is required")
    seed = merged.get("seed", 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("config.seed: must be a 64-bit unsigned integer")
    if merged.get("kernel") and not os.path.exists(merged["kernel"]):
        raise ConfigError(f"config.kernel: file {merged['kernel']!r} not found")
    model = merged.get("model", "bbm")
    if model not in MODELS:
        raise ConfigError(f"config.model: expected one of {MODELS}, got {model!r}")
    single = {}
    for key in ("L", "N", "mu"):
        vals = merged.get(key)
        if vals and (task != "scan" or len(vals) == 1):
            if len(vals) > 1:
                raise ConfigError(f"config.{key}: several values only make sense for the scan task")
            single[key] = vals[0]
    try:
        params = ModelParams(model=model, sigma=merged.get("sigma", 1.0), branch_rate=merged.get("rate", 1.0),
                             check_dt=merged.get("check_dt"), **single)
    except ValueError as exc:
        raise ConfigError(f"config.{exc}") from None
    v = merged.get("v") or []
    t = merged.get("t") or []
    if task in ("estimate", "scan", "simulate") and not t:
        raise ConfigError("config.t: at least one time is required")
    if task in ("estimate", "scan", "exponents") and not v:
        raise ConfigError("config.v: at least one velocity is required")
    if t and (any(x <= 0 for x in t) or any(b <= a for a, b in zip(t, t[1:]))):
        raise ConfigError("config.t: times must be positive and strictly increasing")
    runs = merged.get("runs", KEYS["runs"][2])
    if runs < 1:
        raise ConfigError("config.runs: must be >= 1")
    merged["seed"] = seed
    merged["task"] = task
    return ExperimentConfig(task, params, v, t, runs, seed, merged.get("out", "."), merged)


# ---------------------------------------------------------------------------
# tasks


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _rate_function(cfg: ExperimentConfig):
    p = cfg.params
    if cfg.get("gaussian"):
        return GaussianRate(p.sigma)
    if cfg.get("kernel"):
        return KernelRate(load_kernel(cfg.get("kernel")))
    if p.model == "cbrw":
        return LatticeRate(p.sigma)
    return GaussianRate(p.sigma)


def task_simulate(cfg: ExperimentConfig):
    times = np.array(cfg.t)
    rows = []
    final = []
    for i in range(cfg.n_runs):
        state = initial_state(cfg.params, rng=make_rng(cfg.seed, i))
        res = advance(state, float(times[-1]), times)
        for t, a, c, b in res.series.rows():
            rows.append((i, t, a, c, b))
        final.append(res.series.x_max[-1])
    summary = {"n_runs": cfg.n_runs, "mean_final_x_max": float(np.mean(final)),
               "params": cfg.params.to_dict()}
    return ("replica", "t", "x_max", "count", "x_min"), rows, summary, 0


def task_estimate(cfg: ExperimentConfig):
    rows, summaries, code = [], [], 0
    splitting = cfg.get("method") == "splitting" or cfg.get("levels")
    for v in cfg.v:
        if splitting:
            for t in cfg.t:
                res = rare.estimate_splitting(cfg.params.model, cfg.params, v, t, cfg.get("levels"),
                                              cfg.get("n_per_level"), cfg.seed, cfg.get("n_macro"))
                rows.append({"model": cfg.params.model, "control": "", "v": v, "t": t,
                             "method": rare.SPLITTING, "P_hat": res.p_hat, "stderr": res.stderr,
                             "n": res.n_per_level * res.n_macro})
                s = res.summary()
                s.update(v=v, t=t, neg_log_p_over_t=-math.log(res.p_hat) / t if res.p_hat > 0 else math.inf)
                summaries.append(s)
                if res.starved == res.n_macro:
                    code = 3
        else:
            est = rare.estimate_naive(cfg.params.model, cfg.params, v, cfg.t, cfg.n_runs, cfg.seed,
                                      engine=cfg.get("engine"), prune_tol=cfg.get("prune_tol"),
                                      workers=cfg.get("workers"))
            rows.extend(est.rows())
            summaries.append(est.summary())
            if not math.isfinite(est.psi_hat) and len(cfg.t) >= 3:
                code = 3
    return rare.CSV_COLUMNS, [[r[k] for k in rare.CSV_COLUMNS] for r in rows], {"estimates": summaries}, code


def task_exponents(cfg: ExperimentConfig):
    f = _rate_function(cfg)
    p = cfg.params
    rows, out = [], []
    for v in cfg.v:
        res = exponents.closed_form(p.model, v, f, p, conjectured=cfg.get("conjectured"))
        oracle = exponents.kill_exponent_bruteforce(v, p.model, f, p)
        diff = abs(oracle - res.exponent)
        rows.append((p.model, v, res.y, res.regime, res.exponent, oracle, diff))
        out.append(res.as_row() | {"oracle_exponent": oracle, "abs_diff": diff})
    header = ("model", "v", "y", "regime", "exponent", "oracle_exponent", "abs_diff")
    return header, rows, {"rate_function": repr(f), "results": out}, 0


def task_fkpp(cfg: ExperimentConfig):
    p = cfg.params
    dx = cfg.get("dx")
    dt = cfg.get("dt") or 0.5 * dx * dx / p.sigma**2
    times = cfg.t or [10.0]
    prof = fkpp.step_profile(cfg.get("x_lo"), cfg.get("x_hi"), dx, p.sigma, p.branch_rate)
    level = cfg.get("level")
    rows, traj = [], []
    moving = not cfg.v
    for t in times:
        prof = fkpp.integrate_fkpp(prof, t, dt, moving_window=moving)
        x = fkpp.front_position(prof, level)
        traj.append({"t": t, "x_level": x})
        for v in cfg.v or [math.nan]:
            rows.append((t, level, x, v, prof.at(v * t) if math.isfinite(v) else math.nan))
    prof.to_csv(os.path.join(cfg.out, "profile.csv"))
    summary = {"dx": dx, "dt": dt, "level": level, "trajectory": traj, "clamped": prof.clamped,
               "speed": traj[-1]["x_level"] / times[-1]}
    return ("t", "level", "x_level", "v", "P"), rows, summary, 0


def task_scan(cfg: ExperimentConfig):
    p = cfg.params
    ctrl = [k for k in ("L", "N", "mu") if cfg.values.get(k)]
    ctrl = [k for k in ctrl if len(cfg.values[k]) > 1] or ctrl
    if len(ctrl) != 1:
        raise ConfigError("config: scan needs exactly one of L, N, mu with its values")
    key = ctrl[0]
    plist = [p.with_(**{key: val}) for val in cfg.values[key]]
    rows, summaries = [], []
    for v in cfg.v:
        res = rare.correction_scan(p.model, plist, v, cfg.t, cfg.n_runs, cfg.seed, workers=cfg.get("workers"))
        rows.extend(res.reference.rows(control="reference"))
        for r in res.rows:
            rows.extend(r.estimate.rows(control=f"{key}={_fmt(r.value)}"))
        summaries.append(res.summary())
    return rare.CSV_COLUMNS, [[r[k] for k in rare.CSV_COLUMNS] for r in rows], {"scans": summaries}, 0


TASK_FUNCS = {"simulate": task_simulate, "estimate": task_estimate, "exponents": task_exponents,
              "fkpp": task_fkpp, "scan": task_scan}


def run(cfg: ExperimentConfig) -> int:
    """Run the configured task and write its artifacts; returns the exit code."""
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "manifest.txt"), "w") as fh:
        fh.write("\n".join(cfg.manifest_lines()) + "\n")
    header, rows, summary, code = TASK_FUNCS[cfg.task](cfg)
    _write_csv(os.path.join(cfg.out, "results.csv"), header, rows)
    summary = {"task": cfg.task, "seed": cfg.seed, "model": cfg.params.model, **summary}
    rare.write_summary_json(os.path.join(cfg.out, "summary.json"), summary)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbmld", description=__doc__.split("\n\n")[0])
    ap.add_argument("task", nargs="?", choices=TASKS, help="task to run (may come from the config file)")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--model", choices=MODELS)
    ap.add_argument("--sigma", help="diffusion scale / lattice spacing")
    ap.add_argument("--rate", help="branching rate (r for the CBRW)")
    ap.add_argument("--L", nargs="+", help="L-BBM lag (several values for a scan)")
    ap.add_argument("--N", nargs="+", help="N-BBM capacity (several values for a scan)")
    ap.add_argument("--mu", nargs="+", help="CBRW coalescence rate (several values for a scan)")
    ap.add_argument("--check-dt", dest="check_dt", help="L-BBM elimination checkpoint spacing")
    ap.add_argument("--kernel", help="jump kernel file with 'y rate' lines")
    ap.add_argument("--gaussian", action="store_const", const="true", help="use the Brownian rate function")
    ap.add_argument("--conjectured", action="store_const", const="true", help="N-BBM: conjectured beta")
    ap.add_argument("--v", nargs="+", help="velocity grid")
    ap.add_argument("--t", nargs="+", help="time grid")
    ap.add_argument("--runs", help="number of replicas")
    ap.add_argument("--seed", help="master seed (required for stochastic tasks)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--levels", nargs="+", help="splitting levels (implies --method splitting)")
    ap.add_argument("--method", choices=("naive", "splitting"))
    ap.add_argument("--engine", choices=("auto", "dfs", "event"))
    ap.add_argument("--prune-tol", dest="prune_tol")
    ap.add_argument("--workers")
    ap.add_argument("--n-per-level", dest="n_per_level")
    ap.add_argument("--n-macro", dest="n_macro")
    ap.add_argument("--dx")
    ap.add_argument("--dt")
    ap.add_argument("--x-lo", dest="x_lo")
    ap.add_argument("--x-hi", dest="x_hi")
    ap.add_argument("--level", help="FKPP level whose crossing is tracked")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    cli_values = {k: v for k, v in vars(args).items() if k in KEYS and v is not None}
    try:
        file_values = read_config(args.config) if args.config else {}
        cfg = resolve(file_values, cli_values)
        code = run(cfg)
    except ConfigError as exc:
        print(f"bbmld: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"bbmld: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if code:
        print(f"bbmld: run finished with flagged errors (see {cfg.out}/summary.json)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
