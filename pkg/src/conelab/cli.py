"""Command-line front end: JSON spec in, manifest/result JSON and CSV traces out.

    conelab <command> --input spec.json --out DIR [--seed 42] [--jobs N]
                      [--tolerance T] [--grid-nodes N] [--set key=value ...]

A spec containing {"grid": {"param": "link.beta", "values": [...]}} is run as a
scan: one row per value, written to scan.csv in input order.

Exit status: 0 success, 2 validation error, 3 numerical non-convergence,
4 an unbounded-below verdict (mu = -inf on the cone, or a diverging probe).
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy

from . import __version__
from .numcore import ConelabError

log = logging.getLogger("conelab")

COMMANDS = ("lambda", "mu", "nu", "classify-cone", "probe-divergence", "verify-inequalities",
            "flow", "smooth", "scan-beta", "envelope-check")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_UNBOUNDED = 0, 2, 3, 4

NUMERICAL_CODES = {
    "eigen_no_convergence", "non_convergence", "unstable_step", "too_many_steps",
    "no_round_limit", "past_extinction", "tau0_not_found", "link_flow_not_ready",
    "flow_singular", "trajectory_too_short",
}


class SpecError(Exception):
    pass


@dataclass
class RunSpec:
    command: str
    input_path: Optional[Path]
    output_dir: Path
    overrides: dict = field(default_factory=dict)
    seed: int = 42
    jobs: int = 1
    tolerance: Optional[float] = None
    grid_nodes: Optional[int] = None


@dataclass
class Outcome:
    result: dict
    tolerances: dict
    traces: dict = field(default_factory=dict)   # name -> (header, rows)
    unbounded: bool = False


# ---------------------------------------------------------------------------
# spec helpers

def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _req(p: dict, key: str):
    if key not in p:
        raise SpecError(f"missing parameter {key!r}")
    return p[key]


def _link(p: dict, ctx: dict):
    from .links import LinkGeometry, perturbed_sphere_profile
    spec = _req(p, "link")
    kind = spec.get("kind", "round_sphere")
    n = int(_req(spec, "n"))
    nodes = int(ctx.get("grid_nodes") or spec.get("nodes", 2048))
    if kind == "round_sphere":
        return LinkGeometry.round_sphere(n, float(spec.get("beta", 1.0)), nodes)
    if kind == "perturbed_sphere":
        return perturbed_sphere_profile(n, [float(c) for c in spec.get("coeffs", [])], nodes)
    if kind == "einstein":
        return LinkGeometry.einstein(n, float(_req(spec, "lambda")), float(_req(spec, "volume")))
    if kind == "profile":
        return LinkGeometry.profile(n, _req(spec, "psi"), float(_req(spec, "length")))
    raise SpecError(f"unknown link kind {kind!r}")


def _tol(ctx: dict, default: float) -> float:
    return ctx["tolerance"] if ctx.get("tolerance") is not None else default


def _numeric_keys(result: dict) -> list:
    return [k for k, v in result.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)]


def _all_tol(result: dict, tol: float, **exact) -> dict:
    out = {k: tol for k in _numeric_keys(result)}
    out.update(exact)
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_lambda(p, ctx):
    from .cones import exact_lambda
    from .links import lambda_link
    link = _link(p, ctx)
    lam = lambda_link(link)
    res = {"lambda": lam}
    ex = exact_lambda(link)
    if ex is not None:
        res["lambda_closed_form"] = ex
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-10), lambda_closed_form=0.0))


def cmd_mu(p, ctx):
    from .links import FunctionalQuery, mu_einstein_closed_form, mu_link_detailed
    link = _link(p, ctx)
    tau = float(_req(p, "tau"))
    r = mu_link_detailed(link, FunctionalQuery(tau, link.dim), _tol(ctx, 1e-11))
    res = {"mu": r.value, "tau": tau, "status": r.status, "label": r.label}
    if link.variant in ("round_sphere", "einstein"):
        try:
            res["mu_closed_form"] = mu_einstein_closed_form(link, FunctionalQuery(tau, link.dim))
        except ConelabError:
            pass
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-11), tau=0.0, mu_closed_form=0.0))


def cmd_nu(p, ctx):
    from .links import NU_TAU_GRID, nu_link
    link = _link(p, ctx)
    taus = p.get("tau_grid", list(NU_TAU_GRID))
    nu, tau_star = nu_link(link, taus, _tol(ctx, 1e-11))
    res = {"nu": nu, "tau_star": tau_star, "label": "upper_bound"}
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-4)))


def cmd_classify(p, ctx):
    from .cones import cone_finiteness_classify, cone_nu_lower_bound
    link = _link(p, ctx)
    res = cone_finiteness_classify(link)
    if p.get("with_bound") and res["verdict"] == "mu_finite":
        res["nu_lower_bound"] = cone_nu_lower_bound(link)
    unbounded = res["verdict"] == "mu_infinite"
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-10), threshold=0.0), unbounded=unbounded)


def cmd_probe(p, ctx):
    from .cones import ProbeFamily, cone_finiteness_classify, divergence_probe, probe_exponent_for
    link = _link(p, ctx)
    cls = cone_finiteness_classify(link)
    a = p.get("a")
    if a is None:
        a = probe_exponent_for(link, cls["verdict"] == "mu_infinite")
    eps = p.get("eps", [float(x) for x in np.logspace(-1, -5, 9)])
    tr = divergence_probe(link, ProbeFamily(float(a)), eps, nodes=int(ctx.get("grid_nodes") or 2048))
    res = {"verdict": tr.verdict, "a_exponent": float(a), "monotone_decreasing": tr.monotone_decreasing,
           "exponent_fit": tr.exponent_fit, "predicted_exponent": tr.predicted_exponent,
           "classification": cls["verdict"], "lambda_link": cls["lambda_link"]}
    rows = [[e, v, b] for e, v, b in zip(tr.eps, tr.values, tr.b_norms)]
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-8), a_exponent=0.0, predicted_exponent=0.0),
                   {"probe_trace": (["eps", "W", "b_norm"], rows)},
                   unbounded=tr.verdict == "unbounded")


def cmd_inequalities(p, ctx):
    from . import inequalities as iq
    from .numcore import ScalarField
    which = _req(p, "inequality")
    rng = np.random.default_rng(ctx["seed"])
    n = int(p.get("n", p.get("link", {}).get("n", 2)))
    count = int(p.get("random_fields", 200))
    if which == "hardy":
        delta = float(p.get("delta", 0.003))
        ext = iq.weighted_hardy_gap(iq.near_extremal_hardy_field(n, delta), n).ratio
        g = iq.RadialGrid.uniform(0.0, 8.0, int(ctx.get("grid_nodes") or 2048))
        ratios = [iq.weighted_hardy_gap(ScalarField(g, iq.random_bump_field(g, rng)), n).ratio
                  for _ in range(count)]
        res = {"inequality": "hardy", "n": n, "delta": delta, "extremal_ratio": ext,
               "max_random_ratio": float(max(ratios)) if ratios else None,
               "passed": bool(all(r < 1 for r in ratios))}
        return Outcome(res, _all_tol(res, _tol(ctx, 1e-6), n=0.0, delta=0.0))
    if which == "log_sobolev":
        tau0 = float(p.get("tau0", 1.0))
        g = iq.log_sobolev_grid(tau0, int(ctx.get("grid_nodes") or 2048))
        gauss = iq.radial_log_sobolev_gap(ScalarField(g, iq.gaussian_profile(g, n, tau0)), n, tau0)
        s = math.sqrt(tau0)
        gaps = []
        for _ in range(count):
            w = iq.normalize_radial(g, iq.random_bump_field(g, rng, span=(0.05 * s, 6 * s)), n)
            gaps.append(iq.radial_log_sobolev_gap(ScalarField(g, w), n, tau0))
        res = {"inequality": "log_sobolev", "n": n, "tau0": tau0, "gaussian_gap": gauss,
               "min_random_gap": float(min(gaps)) if gaps else None,
               "passed": bool(abs(gauss) < 1e-5 and all(x > -1e-6 for x in gaps))}
        return Outcome(res, _all_tol(res, _tol(ctx, 1e-6), n=0.0, tau0=0.0))
    if which in ("sphere_perturbation", "l_bound"):
        link = _link(p, ctx)
        betas = iq.PerturbationBetas(float(_req(p, "beta1")), float(_req(p, "beta2")), link.dim)
        probes = iq.random_link_probes(len(link.grid), rng, int(p.get("probes", 50)))
        if which == "sphere_perturbation":
            rep = iq.sphere_perturbation_bounds_check(link, betas, probes, float(p.get("tau", 1.0)))
        else:
            eps = iq.epsilons_from_betas(betas, p.get("convention", "display"))
            rep = iq.l_bound_check(link, eps, probes, p.get("tau_grid", [0.1, 1.0, 10.0]))
        rep = {k: v for k, v in rep.items() if k not in ("f_margins", "n_margins")}
        return Outcome(rep, _all_tol(rep, _tol(ctx, 1e-8), n=0.0, probe_count=0.0))
    raise SpecError(f"unknown inequality {which!r}")


def cmd_flow(p, ctx):
    from . import flows as fl
    n = int(_req(p, "n"))
    nodes = int(ctx.get("grid_nodes") or p.get("nodes", 65))
    beta = float(p.get("beta", 1.0))
    if p.get("round", False):
        state = fl.FlowState.round(n, beta, 0.0)
    else:
        state = fl.FlowState.perturbed_sphere(n, p.get("coeffs", [0.05]), nodes=nodes, beta=beta)
    cfg = fl.FlowConfig(alpha_rule=p.get("alpha_rule", "none"), alpha=p.get("alpha"),
                        dt_safety=float(p.get("dt_safety", 0.2)), t_end=float(p.get("t_end", 0.05)))
    traj = fl.integrate_flow(state, cfg)
    tau_end = float(p.get("tau_end", 1.0))
    stride = max(1, len(traj) // int(p.get("trace_points", 200)))
    sample = traj[::stride] + ([traj[-1]] if (len(traj) - 1) % stride else [])
    mono = fl.monotonicity_check(sample, tau_end)
    rows = [[s.time, s.beta_sq, s.volume, F, W, s.sup_rm]
            for s, F, W in zip(sample, mono["F"], mono["W"])]
    res = {"steps": len(traj) - 1, "t_end": traj[-1].time, "min_dF": mono["min_dF"],
           "min_dW": mono["min_dW"], "F_monotone": mono["F_monotone"], "W_monotone": mono["W_monotone"],
           "final_volume": traj[-1].volume, "final_roundness": traj[-1].roundness}
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-5), steps=0.0),
                   {"flow_trace": (["t", "beta_sq", "volume", "F", "W", "sup_rm"], rows)})


def cmd_smooth(p, ctx):
    from .smoothing import near_gaussian_probes, smoothing_gap_sweep
    beta = float(_req(p, "beta"))
    n = int(p.get("n", 3))
    A_values = [float(a) for a in p.get("A_values", [10, 100, 1000])]
    probes = near_gaussian_probes(int(p.get("probes", 50)), np.random.default_rng(ctx["seed"]))
    rep = smoothing_gap_sweep(beta, A_values, probes, p.get("tau_grid", [0.1, 0.3, 1.0]), n,
                              int(ctx.get("grid_nodes") or 4001))
    rows = [[A, w, r, h] for A, w, r, h in zip(rep["A_values"], rep["worst_delta_per_A"],
                                              rep["residual_per_A"], rep["holds_per_A"])]
    res = {k: rep[k] for k in ("beta", "n", "c", "holds", "residual_exponent",
                               "residual_exponent_tail", "delta_limit_worst")}
    res["comparison"] = "cone" if beta > 1 else ("euclidean" if beta < 1 else "identity")
    res["tau_independent_bound"] = True
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-8), beta=0.0, n=0.0),
                   {"gap_sweep": (["A", "worst_delta", "residual", "holds"], rows)})


def cmd_scan_beta(p, ctx):
    from .smoothing import ETA_3, ANALYTIC_WINDOW_3, PERTURBATION_WINDOW_3, beta_window_scan
    n = int(_req(p, "n"))
    eta = p.get("eta", ETA_3 if n == 3 else None)
    if eta is None:
        raise SpecError("eta must be configured for link dimension other than 3")
    rep = beta_window_scan(n, tuple(p.get("beta_range", (0.5, 1.5))), float(p.get("A", 1e6)),
                           float(eta), int(p.get("points", 1001)), float(p.get("c", 1.0)))
    win = rep["window"]

    def within(ref):
        return win is not None and ref[0] <= win[0] and win[1] <= ref[1]

    def inside(b, ref):
        return ref[0] <= b <= ref[1]

    rows = [[b, e, rep["c"], e >= -eta, inside(b, PERTURBATION_WINDOW_3), inside(b, ANALYTIC_WINDOW_3)]
            for b, e in zip(rep["betas"], rep["estimates"])]
    res = {"n": n, "manifold_dim": n + 1, "eta": float(eta), "A": rep["A"],
           "window_lo": win[0] if win else None, "window_hi": win[1] if win else None,
           "within_perturbation_window": within(PERTURBATION_WINDOW_3),
           "within_analytic_window": within(ANALYTIC_WINDOW_3),
           "dimension_caveat": True}
    return Outcome(res, _all_tol(res, _tol(ctx, 2.0 / int(p.get("points", 1001))), n=0.0,
                                 manifold_dim=0.0, eta=0.0, A=0.0),
                   {"beta_scan": (["beta", "nu_lower_estimate", "gap_constant_c", "inside",
                                   "inside_perturbation_window", "inside_analytic_window"], rows)})


def cmd_envelope(p, ctx):
    from .links import lambda_link, mu_envelope_check, mu_table
    link = _link(p, ctx)
    taus = [float(t) for t in p.get("tau_grid", np.logspace(-1, 1, 9))]
    mus = mu_table(link, taus, _tol(ctx, 1e-11))
    lam = lambda_link(link)
    tol = float(p.get("violation_tolerance", 1e-3))
    rep = mu_envelope_check(zip(taus, mus), lam, link.dim, tol)
    res = {"worst_violation": rep["worst_violation"], "passed": rep["passed"], "samples": rep["samples"],
           "lambda_link": lam, "violation_tolerance": tol}
    return Outcome(res, _all_tol(res, _tol(ctx, 1e-8), samples=0.0, violation_tolerance=0.0),
                   {"mu_grid": (["tau", "mu"], [[t, m] for t, m in zip(taus, mus)])})


HANDLERS: dict[str, Callable] = {
    "lambda": cmd_lambda, "mu": cmd_mu, "nu": cmd_nu, "classify-cone": cmd_classify,
    "probe-divergence": cmd_probe, "verify-inequalities": cmd_inequalities, "flow": cmd_flow,
    "smooth": cmd_smooth, "scan-beta": cmd_scan_beta, "envelope-check": cmd_envelope,
}

# scalar columns reported per scan row
SCAN_COLUMNS = {
    "lambda": ["lambda"], "mu": ["mu", "mu_closed_form"], "nu": ["nu", "tau_star"],
    "classify-cone": ["verdict", "lambda_link", "lambda_cone"],
    "probe-divergence": ["verdict", "a_exponent", "exponent_fit"],
    "verify-inequalities": ["passed", "extremal_ratio", "worst_margin"],
    "flow": ["min_dF", "min_dW", "F_monotone", "W_monotone"],
    "smooth": ["c", "holds", "residual_exponent"],
    "scan-beta": ["window_lo", "window_hi"],
    "envelope-check": ["worst_violation", "passed"],
}


# ---------------------------------------------------------------------------
# serialization

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v) or math.isnan(v):
            return str(_clean(v))
        return f"{v:.17g}"
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _versions() -> dict:
    return {"conelab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# ---------------------------------------------------------------------------
# running

def _error_status(exc: BaseException) -> tuple:
    if isinstance(exc, ConelabError):
        code = exc.code
        return (EXIT_NUMERICAL if code in NUMERICAL_CODES else EXIT_VALIDATION), code, str(exc)
    return EXIT_VALIDATION, "invalid_spec", str(exc)


def execute(command: str, params: dict, ctx: dict) -> Outcome:
    if command not in HANDLERS:
        raise SpecError(f"unknown command {command!r}")
    return HANDLERS[command](params, ctx)


def _run_row(args):
    command, params, ctx = args
    try:
        out = execute(command, params, ctx)
        return "ok", out.result
    except (ConelabError, SpecError, KeyError, ValueError, TypeError) as exc:
        return _error_status(exc)[1], {}


def load_params(spec: RunSpec) -> dict:
    params = {}
    if spec.input_path is not None:
        try:
            params = json.loads(Path(spec.input_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecError(f"cannot read spec: {exc}") from exc
        if not isinstance(params, dict):
            raise SpecError("spec must be a JSON object")
    for k, v in spec.overrides.items():
        _set_path(params, k, v)
    return params


def run(spec: RunSpec) -> int:
    """Execute a spec and write manifest.json, result.json and CSV traces; returns the exit status."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = {"seed": spec.seed, "tolerance": spec.tolerance, "grid_nodes": spec.grid_nodes}
    manifest = {"command": spec.command, "overrides": spec.overrides, "seed": spec.seed,
                "jobs": spec.jobs, "tolerance": spec.tolerance, "grid_nodes": spec.grid_nodes,
                "versions": _versions(), "input": None}
    try:
        if spec.command not in COMMANDS:
            raise SpecError(f"unknown command {spec.command!r}")
        params = load_params(spec)
        manifest["input"] = params
        if "grid" in params:
            status = _run_scan(spec, params, ctx, out)
            result = None
        else:
            outcome = execute(spec.command, params, ctx)
            status = EXIT_UNBOUNDED if outcome.unbounded else EXIT_OK
            result = dict(outcome.result)
            result["tolerances"] = outcome.tolerances
            for name, (header, rows) in outcome.traces.items():
                (out / f"{name}.csv").write_text(csv_text(header, rows))
            (out / "result.json").write_text(dump_json(result))
    except (ConelabError, SpecError, KeyError, ValueError, TypeError) as exc:
        status, code, detail = _error_status(exc)
        log.error("%s", detail)
        (out / "result.json").write_text(dump_json({"error": code, "detail": detail}))
    manifest["exit_status"] = status
    (out / "manifest.json").write_text(dump_json(manifest))
    return status


def _run_scan(spec: RunSpec, params: dict, ctx: dict, out: Path) -> int:
    grid = params["grid"]
    if not isinstance(grid, dict) or "param" not in grid:
        raise SpecError("grid needs 'param' and 'values'")
    name = grid["param"]
    values = list(grid.get("values", []))
    base = {k: v for k, v in params.items() if k != "grid"}
    jobs_args = []
    for v in values:
        p = copy.deepcopy(base)
        _set_path(p, name, v)
        jobs_args.append((spec.command, p, ctx))
    if spec.jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            rows = list(pool.map(_run_row, jobs_args))
    else:
        rows = [_run_row(a) for a in jobs_args]
    cols = SCAN_COLUMNS[spec.command]
    header = [name, "status"] + cols
    table = [[v, st] + [res.get(c) for c in cols] for v, (st, res) in zip(values, rows)]
    (out / "scan.csv").write_text(csv_text(header, table))
    summary = {"rows": len(table), "failed": sum(1 for _, (st, _) in zip(values, rows) if st != "ok"),
               "param": name, "tolerances": {"rows": 0.0, "failed": 0.0}}
    (out / "result.json").write_text(dump_json(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conelab", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--input", type=Path, help="JSON spec")
    ap.add_argument("--out", type=Path, default=Path("conelab_out"))
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--tolerance", type=float)
    ap.add_argument("--grid-nodes", type=int)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a spec entry (dotted keys, JSON values)")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CONELAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"bad override {item!r}", file=sys.stderr)
            return EXIT_VALIDATION
        k, v = item.split("=", 1)
        overrides[k] = _parse_value(v)
    spec = RunSpec(args.command, args.input, args.out, overrides, args.seed, max(1, args.jobs),
                   args.tolerance, args.grid_nodes)
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
