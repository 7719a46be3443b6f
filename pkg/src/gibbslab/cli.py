"""Command-line front end: ``gibbslab <subcommand> ...``.

Every stochastic subcommand needs ``--seed``.  Exit status is 0 on success,
2 on bad input or a failed computation and 3 when coupling trials hit the
step cap (output is still written).  Options resolve as
command-line flag, then ``--config`` JSON file, then built-in default; the
resolved settings are embedded in each output (a ``# config:`` line at the
top of CSV files, a ``config`` field in JSON).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from typing import Any

import numpy as np

from .core import Configuration, ModelSpec
from .coupling import INITS, default_threads, run_coupling
from .equilibrium import find_beta_c, find_beta_s, find_equilibria, local_ratio
from .glauber import RngStream, build_lumped_kernel, exact_mixing_time, simulate
from .path_coupling import (
    check_condition_contraction,
    check_condition_local,
    check_condition_riemann,
)

log = logging.getLogger("gibbslab")

ORDER_TOL = 1e-4

DEFAULTS: dict[str, dict[str, Any]] = {
    "critical": {"q": 3, "r": 2.0},
    "equilibrium": {"q": 3, "r": 2.0, "beta": None, "beta_frac_s": None, "beta_frac_c": None,
                    "grid": None, "no_grid": False},
    "check": {"q": 3, "r": 2.0, "beta": None, "beta_frac_s": None, "beta_frac_c": None,
              "eps": 0.02, "grid": None},
    "simulate": {"q": 3, "r": 2.0, "beta": None, "beta_frac_s": None, "beta_frac_c": None,
                 "n": 100, "steps": 10_000, "seed": None, "record_every": 1, "init": "random"},
    "couple": {"q": 3, "r": 2.0, "beta": None, "beta_frac_s": None, "beta_frac_c": None,
               "n": "200", "trials": 200, "seed": None, "init": "worst_pure_pair",
               "cap": 10**9, "record_every": None, "curve": None, "summary": None},
    "mixing-exact": {"q": 3, "r": 2.0, "beta": None, "beta_frac_s": None, "beta_frac_c": None,
                     "n": "10:40:10", "eps": 0.25, "all_starts": False, "curves": None},
    "phase-diagram": {"q": 3, "r": 2.0, "beta": "0.5:3.5:0.5", "grid": 60},
}
STOCHASTIC = {"simulate", "couple"}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting helpers
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def write_csv(header: list[str], rows, config: dict | None) -> str:
    buf = io.StringIO(newline="")
    if config is not None:
        buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(payload: dict, config: dict) -> str:
    return json.dumps(_jsonable({"config": config, **payload}), sort_keys=True, indent=2) + "\n"


def parse_range(text, cast=float) -> list:
    """``a:b:s`` (inclusive of ``b``), a comma list, or a single value."""
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(f"range must look like a:b:s, got {text!r}")
        a, b, s = (float(p) for p in parts)
        if s <= 0:
            raise CliError("range step must be positive")
        count = int(math.floor((b - a) / s + 1e-9)) + 1
        return [cast(a + i * s) if cast is float else cast(round(a + i * s)) for i in range(count)]
    return [cast(v) for v in text.split(",") if v.strip()]


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


class _JsonLineFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(), "logger": record.name,
                           "message": record.getMessage()}, sort_keys=True)


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def resolve_config(command: str, flags: dict, config_path: str | None) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path:
        with open(config_path) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(cfg) - {"format", "threads"}
        if unknown:
            raise CliError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in flags.items():
        if value is not None:
            cfg[key] = value
    if command in STOCHASTIC and cfg.get("seed") is None:
        raise CliError(f"{command} needs an explicit --seed")
    return cfg


def _beta(cfg: dict, q: int, r: float) -> float:
    given = [k for k in ("beta", "beta_frac_s", "beta_frac_c") if cfg.get(k) is not None]
    if len(given) != 1:
        raise CliError("give exactly one of --beta, --beta-frac-s, --beta-frac-c")
    key = given[0]
    if key == "beta":
        return float(cfg["beta"])
    if key == "beta_frac_s":
        return float(cfg[key]) * find_beta_s(q, r)
    return float(cfg[key]) * find_beta_c(q, r)


def _model(cfg: dict) -> ModelSpec:
    q, r = int(cfg["q"]), float(cfg["r"])
    return ModelSpec.gcwp(q, r, _beta(cfg, q, r))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_critical(cfg: dict, fmt_: str) -> str:
    q, r = int(cfg["q"]), float(cfg["r"])
    bc = find_beta_c(q, r)
    bs = find_beta_s(q, r)
    order = "first" if abs(bc - bs) > ORDER_TOL else "second"
    row = {"q": q, "r": r, "beta_c": bc, "beta_s": bs, "gap": bc - bs, "order": order}
    if fmt_ == "json":
        return write_json(row, cfg)
    return write_csv(list(row), [list(row.values())], cfg)


def cmd_equilibrium(cfg: dict, fmt_: str) -> str:
    model = _model(cfg)
    sol = find_equilibria(model, grid_search=not cfg["no_grid"], grid_resolution=cfg["grid"])
    payload = {"beta": model.beta, "q": model.q, "r": model.r, **sol.to_dict()}
    if fmt_ == "json":
        return write_json(payload, cfg)
    header = ["beta", "u", "min_value", "phase"] + [f"z_{k + 1}" for k in range(model.q)]
    row = [model.beta, sol.u, sol.min_value, sol.phase] + list(sol.z_beta.coords)
    return write_csv(header, [row], cfg)


def cmd_check(cfg: dict, fmt_: str) -> str:
    model = _model(cfg)
    eq = find_equilibria(model, grid_search=model.q <= 4)
    reports = [
        check_condition_contraction(model, cfg["grid"], equilibrium=eq),
        check_condition_riemann(model, float(cfg["eps"]), cfg["grid"], equilibrium=eq),
        check_condition_local(model, equilibrium=eq),
    ]
    all_hold = all(rep.holds for rep in reports)
    if fmt_ == "json":
        return write_json({"all_hold": all_hold, "reports": [rep.to_dict() for rep in reports]}, cfg)
    header = ["condition", "holds", "sup_ratio", "beta", "q", "r", "epsilon", "grid_resolution"]
    rows = [[d["condition"], d["holds"], d["sup_ratio"], d["beta"], d["q"], d["r"],
             d["epsilon"], d["grid_resolution"]] for d in (rep.to_dict() for rep in reports)]
    return write_csv(header, rows, cfg)


def cmd_simulate(cfg: dict, fmt_: str) -> str:
    model = _model(cfg)
    n, seed = int(cfg["n"]), int(cfg["seed"])
    rng = RngStream(seed, 0)
    if cfg["init"] == "random":
        config = Configuration.random(n, model.q, rng.generator)
    elif cfg["init"] == "pure":
        config = Configuration.pure(n, model.q)
    else:
        raise CliError("init must be 'random' or 'pure'")
    traj = simulate(model, config, int(cfg["steps"]), rng, int(cfg["record_every"]))
    header = ["t"] + [f"count_{k + 1}" for k in range(model.q)]
    if fmt_ == "json":
        return write_json({"t": traj.times, "counts": traj.counts}, cfg)
    rows = ([t, *c] for t, c in zip(traj.times.tolist(), traj.counts.tolist()))
    return write_csv(header, rows, cfg)


def cmd_couple(cfg: dict, fmt_: str, threads: int) -> tuple[str, bool]:
    model = _model(cfg)
    ns = parse_range(cfg["n"], int)
    if cfg["init"] not in INITS:
        raise CliError(f"init must be one of {INITS}")
    results = [run_coupling(model, n, cfg["init"], int(cfg["trials"]), int(cfg["seed"]),
                            cap=int(cfg["cap"]), record_every=cfg["record_every"], threads=threads)
               for n in ns]
    for res in results:
        if res.censored.any():
            log.warning("n=%d: %d of %d trials hit the cap", res.n, int(res.censored.sum()), res.censored.size)
    if cfg.get("curve"):
        rows = ([res.n, t, d] for res in results for t, d in zip(res.curve_times.tolist(), res.mean_distance))
        _emit(write_csv(["n", "t", "mean_distance"] if len(ns) > 1 else ["t", "mean_distance"],
                        (row if len(ns) > 1 else row[1:] for row in rows), cfg), cfg["curve"])
    summaries = []
    for res in results:
        s = res.summary()
        s["median_over_nlogn"] = s["median"] / (res.n * math.log(res.n)) if res.n > 1 else None
        summaries.append(s)
    if cfg.get("summary"):
        _emit(write_json({"summaries": summaries}, cfg), cfg["summary"])
    converged = not any(res.censored.any() for res in results)
    if fmt_ == "json":
        return write_json({"summaries": summaries}, cfg), converged
    if len(ns) == 1:
        res = results[0]
        rows = ([i, t, c] for i, (t, c) in enumerate(zip(res.times.tolist(), res.censored.tolist())))
        return write_csv(["trial", "coupling_time", "censored"], rows, cfg), converged
    rows = ([res.n, i, t, c] for res in results
            for i, (t, c) in enumerate(zip(res.times.tolist(), res.censored.tolist())))
    return write_csv(["n", "trial", "coupling_time", "censored"], rows, cfg), converged


def cmd_mixing_exact(cfg: dict, fmt_: str) -> str:
    model = _model(cfg)
    ns = parse_range(cfg["n"], int)
    eps = float(cfg["eps"])
    out = []
    curves = []
    for n in ns:
        kernel = build_lumped_kernel(model, n)
        res = exact_mixing_time(kernel, eps, all_starts=bool(cfg["all_starts"]))
        out.append({"n": n, "t_mix": res.t_mix,
                    "t_mix_over_nlogn": res.t_mix / (n * math.log(n)) if n > 1 else None})
        curves.append(res.d_curve)
        log.info("n=%d t_mix=%d", n, res.t_mix)
    if cfg.get("curves"):
        rows = ([n, t, d] for n, c in zip(ns, curves) for t, d in enumerate(c.tolist()))
        _emit(write_csv(["n", "t", "d_tv"] if len(ns) > 1 else ["t", "d_tv"],
                        (row if len(ns) > 1 else row[1:] for row in rows), cfg), cfg["curves"])
    if fmt_ == "json":
        return write_json({"beta": model.beta, "q": model.q, "r": model.r, "epsilon": eps, "results": out}, cfg)
    return write_csv(["n", "t_mix", "t_mix_over_nlogn"],
                     ([d["n"], d["t_mix"], d["t_mix_over_nlogn"]] for d in out), cfg)


def cmd_phase_diagram(cfg: dict, fmt_: str) -> str:
    q, r = int(cfg["q"]), float(cfg["r"])
    bc, bs = find_beta_c(q, r), find_beta_s(q, r)
    rows = []
    for beta in parse_range(cfg["beta"]):
        model = ModelSpec.gcwp(q, r, beta)
        eq = find_equilibria(model, grid_search=False)
        sup = None
        if eq.unique:
            sup = check_condition_contraction(model, int(cfg["grid"]), equilibrium=eq, refine=False).sup_ratio
        rows.append({"beta": beta, "beta_c": bc, "beta_s": bs, "phase": eq.phase, "u": eq.u,
                     "local_ratio": local_ratio(q, r, beta), "contraction_sup": sup})
    if fmt_ == "json":
        return write_json({"rows": rows}, cfg)
    header = list(rows[0]) if rows else ["beta"]
    return write_csv(header, ([row[h] for h in header] for row in rows), cfg)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_model_args(p: argparse.ArgumentParser, beta: bool = True) -> None:
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=float)
    if beta:
        p.add_argument("--beta", type=float)
        p.add_argument("--beta-frac-s", dest="beta_frac_s", type=float,
                       help="beta as a multiple of the rapid-mixing threshold")
        p.add_argument("--beta-frac-c", dest="beta_frac_c", type=float,
                       help="beta as a multiple of the equilibrium critical value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gibbslab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--threads", type=int, help="worker threads (default: $GIBBSLAB_THREADS or cores)")
    common.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("critical", parents=[common], help="critical values beta_c and beta_s")
    _add_model_args(p, beta=False)

    p = sub.add_parser("equilibrium", parents=[common], help="equilibrium macrostate")
    _add_model_args(p)
    p.add_argument("--grid", type=int)
    p.add_argument("--no-grid", dest="no_grid", action="store_const", const=True)

    p = sub.add_parser("check", parents=[common], help="contraction-condition reports")
    _add_model_args(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--grid", type=int)

    p = sub.add_parser("simulate", parents=[common], help="Glauber trajectory")
    _add_model_args(p)
    p.add_argument("--n", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--record-every", dest="record_every", type=int)
    p.add_argument("--init", choices=("random", "pure"))

    p = sub.add_parser("couple", parents=[common], help="greedy coupling experiment")
    _add_model_args(p)
    p.add_argument("--n", type=str, help="size or range a:b:s")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=INITS)
    p.add_argument("--cap", type=int)
    p.add_argument("--record-every", dest="record_every", type=int)
    p.add_argument("--curve", help="write the t,mean_distance CSV here")
    p.add_argument("--summary", help="write the JSON summary here")

    p = sub.add_parser("mixing-exact", parents=[common], help="exact lumped-chain mixing times")
    _add_model_args(p)
    p.add_argument("--n", type=str, help="size or range a:b:s")
    p.add_argument("--eps", type=float)
    p.add_argument("--all-starts", dest="all_starts", action="store_const", const=True)
    p.add_argument("--curves", help="write the t,d_tv CSV here")

    p = sub.add_parser("phase-diagram", parents=[common], help="beta sweep of phases and ratios")
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--beta", type=str, help="range a:b:s")
    p.add_argument("--grid", type=int)
    return parser


_CONTROL = {"config", "output", "format", "threads", "verbose", "command"}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLineFormatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    log.propagate = False
    flags = {k: v for k, v in vars(args).items() if k not in _CONTROL}
    try:
        cfg = resolve_config(args.command, flags, args.config)
        out_format = args.format or "csv"
        threads = args.threads or default_threads()
        converged = True
        if args.command == "critical":
            text = cmd_critical(cfg, out_format)
        elif args.command == "equilibrium":
            text = cmd_equilibrium(cfg, out_format)
        elif args.command == "check":
            text = cmd_check(cfg, out_format)
        elif args.command == "simulate":
            text = cmd_simulate(cfg, out_format)
        elif args.command == "couple":
            text, converged = cmd_couple(cfg, out_format, threads)
        elif args.command == "mixing-exact":
            text = cmd_mixing_exact(cfg, out_format)
        else:
            text = cmd_phase_diagram(cfg, out_format)
    except (CliError, ValueError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return 2
    _emit(text, args.output)
    # censored coupling trials are reported but count as non-convergence
    return 0 if converged else 3


if __name__ == "__main__":
    sys.exit(main())
