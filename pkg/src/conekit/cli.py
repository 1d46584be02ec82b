"""Command-line front end: ``conekit <command> --config <path> [options]``.

Exit codes: 0 success, 1 error, 2 computed but a check failed, 64 bad config.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import holder_metrics as hm
from . import ma_solver as ms
from .io import SCHEMA, ConfigError, RunConfig, load_config, read_json, write_csv, write_grid, write_json
from .model_geometry import eval_metric_field
from .numeric_curvature import (
    curvature_batch,
    fit_blowup_rate,
    frame_bisectional,
    log_radii,
    uniform_lower_bound_scan,
)
from .symbolic_curvature import verify_cancellation, verify_positivity

EXIT_OK, EXIT_ERROR, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2, 64


class MergeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def source_values(name: str, grid: ms.ReducedGrid, **args) -> np.ndarray:
    """Raw source ``f`` of a catalog entry on ``grid``."""
    amp = float(args.get("amplitude", 0.5))
    if name == "zero":
        return np.zeros(grid.shape)
    if name == "constant":
        return np.full(grid.shape, float(args.get("value", 1.0)))
    if name == "cosine":
        if grid.n == 1:
            return amp * np.cos(2 * np.pi * grid.rho_field() / grid.rho_max)
        return amp * np.cos(2 * np.pi * grid.x_field() / grid.period)
    if name == "radial_bump":
        return amp * (1 - (grid.rho_field() / grid.rho_max) ** 2) ** 2
    raise ConfigError(f"unknown source {name!r}")


def solver_grid(cfg: RunConfig) -> ms.ReducedGrid:
    s = cfg.section("solve")
    res = cfg.domain.resolution
    radial = s.get("radial", "sinh")
    return ms.ReducedGrid(
        n=cfg.domain.n,
        n_rho=int(s.get("n_rho", res[0])),
        n_x=int(s.get("n_x", res[1] if len(res) > 1 else res[0])),
        radial=radial,
        rho_max=cfg.domain.rho_max,
        rho_min=cfg.domain.rho_min if radial == "log" else 0.0,
        beta=float(s.get("beta", 3.0)),
        period=cfg.domain.period,
    )


def save_svg(path: Path, series: dict, xlabel: str, ylabel: str, logx: bool = True,
             logy: bool = True) -> None:
    """Deterministic SVG line chart of ``{label: (x, y)}``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "conekit"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o", ms=3, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _report(cfg: RunConfig, results: dict, checks: dict) -> dict:
    return {"schema": SCHEMA, "run_id": cfg.derived_run_id(), "command": cfg.command,
            "config": cfg.to_json(), "results": results, "checks": checks,
            "passed": all(checks.values())}


# ---------------------------------------------------------------------------
# commands


def cmd_metric(cfg: RunConfig, out: Path, opts) -> dict:
    pts = cfg.domain.radial_points()
    field = eval_metric_field(cfg.params, cfg.weight_object(), cfg.base_object(), pts, cfg.domain)
    eig = np.linalg.eigvalsh(field.G)
    res = {"radii": cfg.domain.radii(), "min_eigenvalue": float(eig.min()),
           "hermitian_defect": field.hermitian_defect(), "g11": field.G[:, 0, 0].real}
    if opts.emit_csv:
        rows = [[r] + list(G.real.ravel()) for r, G in zip(cfg.domain.radii(), field.G)]
        n = cfg.domain.n
        write_csv(out / "metric.csv", ["radius"] + [f"g{a + 1}{b + 1}" for a in range(n) for b in range(n)], rows)
    return _report(cfg, res, {"positive_definite": bool(eig.min() > 0)})


def cmd_symbolic(cfg: RunConfig, out: Path, opts) -> dict:
    sign = cfg.params.correction_sign
    canc = verify_cancellation(sign)
    pos = verify_positivity(sign)
    res = {"cancellation_coefficient": canc["cancellation_coefficient"],
           "worst_exponent": [str(v) for v in canc["exponent"]], "contributions": canc["contributions"],
           "leading_exponent": [str(v) for v in pos["exponent"]], "leading_coefficient": pos["leading_coefficient"],
           "leading_expanded": pos["expanded"], "sign": pos["sign"]}
    return _report(cfg, res, {"cancellation": bool(canc["passed"]),
                                 "positivity": bool(pos["sign"] == 1 and pos["tag_free"])})


def _radial_curvature(cfg: RunConfig, eps: float):
    pts = cfg.domain.radial_points()
    G, R = curvature_batch(cfg.params.with_(epsilon=eps), cfg.weight_object(), pts, cfg.base_object())
    return frame_bisectional(R, G)["11"]


def cmd_curvature_scan(cfg: RunConfig, out: Path, opts) -> dict:
    s = cfg.section("curvature_scan")
    eps_list = [float(e) for e in s.get("eps_list", [1e-1, 1e-2, 1e-3, 1e-4])]
    scan = uniform_lower_bound_scan(cfg.params, cfg.weight_object(), eps_list, cfg.domain,
                                    cfg.base_object(), int(s.get("random_pairs", 8)), cfg.seed)
    res = {"eps": eps_list, "infima": [scan.infima[e] for e in eps_list],
           "argmin_radius": [scan.argmin_radius[e] for e in eps_list], "spread": scan.spread(),
           "overall": scan.overall}
    checks = {}
    if "max_spread" in s:
        checks["spread"] = scan.spread() <= float(s["max_spread"])
    r = cfg.domain.radii()
    curves = {e: _radial_curvature(cfg, e) for e in eps_list}
    if opts.emit_csv:
        rows = [[e, ri, v] for e in eps_list for ri, v in zip(r, curves[e])]
        write_csv(out / "curvature.csv", ["eps", "radius", "bisectional_11"], rows)
    if opts.emit_svg:
        save_svg(out / "curvature.svg", {f"eps={e:g}": (r, np.abs(curves[e])) for e in eps_list},
                 "|z_1|", "|R_11 / g_11^2|")
    return _report(cfg, res, checks)


def cmd_rate_fit(cfg: RunConfig, out: Path, opts) -> dict:
    s = cfg.section("rate_fit")
    radii = log_radii(float(s.get("r_max", 1e-1)), float(s.get("r_min", 1e-3)), int(s.get("per_decade", 4)))
    fit = fit_blowup_rate(cfg.params, cfg.weight_object(), radii, s.get("direction", "11"),
                          s.get("quantity", "component"), cfg.base_object(), n=cfg.domain.n)
    res = fit.to_json()
    checks = {}
    if "expected" in s:
        exp = float(s["expected"])
        checks["exponent"] = abs(fit.exponent - exp) <= float(s.get("rel_tol", 0.05)) * abs(exp)
    if s.get("require_positive", False):
        checks["positive_samples"] = bool(np.all(np.asarray(fit.values) > 0))
    if opts.emit_csv:
        write_csv(out / "rate.csv", ["radius", "value"], zip(fit.radii, fit.values))
    if opts.emit_svg:
        save_svg(out / "rate.svg", {"samples": (np.asarray(fit.radii), np.abs(fit.values))}, "|z_1|", "|value|")
    return _report(cfg, res, checks)


HOLDER_FUNCTIONS = {
    "cone_power": lambda tau: (lambda p: np.abs(p[:, 0]) ** (2 * tau)),
    "real_part": lambda tau: (lambda p: p[:, 0].real),
    "angular": lambda tau: (lambda p: np.where(np.abs(p[:, 0]) > 0,
                                               p[:, 0].real / np.maximum(np.abs(p[:, 0]), 1e-300), 0.0)),
}


def cmd_holder(cfg: RunConfig, out: Path, opts) -> dict:
    s = cfg.section("holder")
    tau = float(s.get("tau", cfg.params.tau))
    name = s.get("function", "cone_power")
    if name not in HOLDER_FUNCTIONS:
        raise ConfigError(f"unknown holder function {name!r}")
    fn = HOLDER_FUNCTIONS[name](tau)
    resolutions = [int(r) for r in s.get("resolutions", [16, 32, 64])]
    rep = hm.refinement_sweep(lambda res: hm.grid_function(fn, hm.cone_disc_points(res, tau)), resolutions,
                              float(s.get("alpha", 1.0)), tau, int(s.get("pair_budget", 10_000_000)),
                              s.get("convention", "xi"))
    res = rep.to_json()
    res["resolutions"] = resolutions
    checks = {}
    expect = s.get("expect")
    if expect in ("bounded", "diverging"):
        checks["behaviour"] = rep.diverging == (expect == "diverging")
    return _report(cfg, res, checks)


def _solve_one(cfg: RunConfig, eps: float, grid: ms.ReducedGrid, tol: float):
    p = cfg.params.with_(epsilon=eps)
    metric = ms.grid_metric(p, cfg.weight_object(), cfg.base_object(), grid)
    source = ms.build_rhs(source_values(cfg.source, grid, **cfg.source_args), metric)
    phi, rep = ms.newton_solve(p, metric, source, tol)
    return metric, source, phi, rep


def cmd_solve(cfg: RunConfig, out: Path, opts) -> dict:
    s = cfg.section("solve")
    grid = solver_grid(cfg)
    tol = float(s.get("tol", 1e-10))
    schedule = [float(e) for e in s.get("eps_schedule", [cfg.params.epsilon])]
    if len(schedule) > 1:
        steps = ms.epsilon_continuation(cfg.params, cfg.weight_object(),
                                        lambda g, e: source_values(cfg.source, g, **cfg.source_args),
                                        schedule, tol, cfg.base_object(), grid)
        solves = [dict(st.report.to_json(), cauchy=st.cauchy, source_lp_gap=st.source_lp_gap) for st in steps]
        last = steps[-1]
        metric = ms.grid_metric(cfg.params.with_(epsilon=last.epsilon), cfg.weight_object(), cfg.base_object(), grid)
        phi, source, rep = last.phi, last.source, last.report
    else:
        metric, source, phi, rep = _solve_one(cfg, schedule[0], grid, tol)
        solves = [rep.to_json()]
    write_grid(out / "phi.bin", phi.values, {"grid": grid.__dict__, "epsilon": schedule[-1]})
    if opts.emit_csv:
        lap = ms.laplacian(metric, phi.values)
        H = ms.discrete_hessian(grid, phi.values)
        mask = grid.unknown_mask()
        resid = np.zeros(grid.shape)
        resid[mask] = (np.log(np.linalg.det(metric.G[mask] + H[mask]).real)
                       - np.log(np.linalg.det(metric.G[mask]).real) - source.values[mask])
        rho, x = grid.rho_field(), grid.x_field()
        rows = zip(np.ravel(rho), np.ravel(x), phi.values.ravel(), lap.ravel(), resid.ravel())
        write_csv(out / "solution.csv", ["rho", "x", "phi", "laplacian", "residual"], rows)
    if opts.emit_svg and len(schedule) > 1:
        eps = [r["epsilon"] for r in solves[1:]]
        cau = [r["cauchy"] for r in solves[1:]]
        save_svg(out / "cauchy.svg", {"sup |phi_k - phi_(k-1)|": (eps, cau)}, "eps", "Cauchy difference")
    res = {"solves": solves, "grid": grid.__dict__}
    checks = {"residual": rep.residual <= tol}
    if "phi_sup_max" in s:
        checks["phi_sup"] = rep.phi_sup <= float(s["phi_sup_max"])
    return _report(cfg, res, checks)


def _sweep_member(args):
    cfg, c = args
    s = cfg.section("sweep")
    eps_list = [float(e) for e in s.get("eps_list", [1e-1, 1e-2, 1e-3, 1e-4])]
    params = cfg.params.with_(c_coef=c) if c > 0 else cfg.params.with_(c_coef=0.0)
    if c > 0 and params.tau_prime is None:
        params = params.with_(tau_prime=float(s.get("tau_prime", 0.9)))
    scan = uniform_lower_bound_scan(params, cfg.weight_object(), eps_list, cfg.domain, cfg.base_object(),
                                    int(s.get("random_pairs", 8)), cfg.seed)
    return c, eps_list, [scan.infima[e] for e in eps_list], scan.spread()


def cmd_sweep(cfg: RunConfig, out: Path, opts) -> dict:
    s = cfg.section("sweep")
    c_values = [float(c) for c in s.get("c_values", [0.0, 0.3])]
    jobs = [(cfg, c) for c in c_values]
    if opts.workers > 1:
        with ProcessPoolExecutor(max_workers=opts.workers) as pool:
            members = list(pool.map(_sweep_member, jobs))
    else:
        members = [_sweep_member(j) for j in jobs]
    runs = []
    for c, eps, inf, spread in members:
        drop = inf[-1] / inf[0] if inf[0] != 0 else float("inf")
        runs.append({"c_coef": c, "eps": eps, "infima": inf, "spread": spread, "drop": drop})
    checks = {}
    if "good_max_spread" in s:
        checks["good_uniform"] = all(r["spread"] <= float(s["good_max_spread"]) for r in runs if r["c_coef"] > 0)
    if "naive_min_drop" in s:
        checks["naive_drops"] = all(r["drop"] >= float(s["naive_min_drop"]) for r in runs if r["c_coef"] == 0)
    if opts.emit_svg:
        save_svg(out / "sweep.svg", {f"c={r['c_coef']:g}": (r["eps"], np.abs(r["infima"])) for r in runs},
                 "eps", "|inf normalized bisectional|")
    if opts.emit_csv:
        write_csv(out / "sweep.csv", ["c_coef", "eps", "infimum"],
                  [[r["c_coef"], e, v] for r in runs for e, v in zip(r["eps"], r["infima"])])
    return _report(cfg, {"runs": runs}, checks)


def report_merge(paths: Sequence[str | Path]) -> dict:
    """Merge report files into one document keyed by run id.

    Raises
    ------
    MergeError
        On a schema mismatch or when two inputs share a run id.
    """
    runs, origin = {}, {}
    for p in paths:
        doc = read_json(p)
        if doc.get("schema") != SCHEMA or "run_id" not in doc:
            raise MergeError(f"{p}: schema mismatch (expected schema {SCHEMA})")
        if doc.get("command") == "report":
            items = doc["runs"].items()
        else:
            items = [(doc["run_id"], doc)]
        for rid, rep in items:
            if rid in runs:
                raise MergeError(f"run id {rid!r} appears in both {origin[rid]} and {p}")
            runs[rid], origin[rid] = rep, str(p)
    summary, cauchy = [], []
    for rid in sorted(runs):
        for solve in runs[rid].get("results", {}).get("solves", []):
            summary.append({"run_id": rid, **{k: solve.get(k) for k in (
                "epsilon", "phi_sup", "sup_laplacian", "inf_f", "inf_laplacian_f_neg", "inf_bisectional")}})
            # the first step of a continuation has no predecessor ("nan")
            if isinstance(solve.get("cauchy"), (int, float)):
                cauchy.append({"run_id": rid, "epsilon": solve["epsilon"], "cauchy": solve["cauchy"]})
    cauchy.sort(key=lambda r: (-float(r["epsilon"]), r["run_id"]))
    summary.sort(key=lambda r: (r["run_id"], -float(r["epsilon"])))
    return {"schema": SCHEMA, "command": "report", "run_id": "merged", "runs": runs,
            "summary": summary, "cauchy": cauchy}


COMMAND_TABLE = {
    "metric": cmd_metric,
    "symbolic-verify": cmd_symbolic,
    "curvature-scan": cmd_curvature_scan,
    "rate-fit": cmd_rate_fit,
    "holder": cmd_holder,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conekit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=list(COMMAND_TABLE) + ["report"])
    ap.add_argument("--config", help="TOML run configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="seed for randomized checks (overrides the config)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--emit-csv", action="store_true")
    ap.add_argument("--emit-svg", action="store_true")
    ap.add_argument("--inputs", nargs="*", default=None, help="report files to merge (report command)")
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    try:
        opts = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if opts.command == "report" and opts.inputs:
        out = Path(opts.out or "out")
        cfg = None
    else:
        if not opts.config:
            print("error: --config is required", file=sys.stderr)
            return EXIT_CONFIG
        try:
            cfg = load_config(opts.config, opts.command)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if opts.seed is not None:
            cfg.seed = opts.seed
        out = Path(opts.out or cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if opts.command == "report":
            inputs = opts.inputs or (cfg.section("report").get("inputs", []) if cfg else [])
            if not inputs:
                raise ConfigError("report needs input files")
            doc = report_merge(inputs)
            write_json(out / "merged.json", doc)
            return EXIT_OK
        doc = COMMAND_TABLE[opts.command](cfg, out, opts)
        write_json(out / "report.json", doc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # mapped to exit 1 with a diagnostic
        write_json(out / "error.json", {"schema": SCHEMA, "command": opts.command, "error": type(exc).__name__,
                                        "message": str(exc), "traceback": traceback.format_exc()})
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if doc["passed"] else EXIT_CHECK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
