"""Command-line surface: ingest market data, tabulate alpha curves and
weight paths, integrate the risk-aversion PDE, run the verification bundle
and the manufactured-solution convergence study.

Exit codes: 0 success, 1 failed verification check, 2 configuration or
usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .alpha import (
    AlphaEngineError,
    closed_form_n2,
    solve_alpha,
    weights_path,
)
from .analysis import (
    contraction_budget,
    energy_estimate_report,
    maximum_principle_report,
    monotonicity_certificate,
)
from .config import ConfigError, load_run
from .model import ModelError, ingest_market_data
from .pde import PDEConfig, SolverError, solve

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _write_csv(path: Path, header, rows):
    # repr floats give shortest round-trip text, so identical runs give
    # byte-identical files
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _manifest(out_dir: Path, doc, outputs, timings, extra=None):
    man = {
        "config": doc,
        "versions": {"riccati_hjb": __version__, "numpy": np.__version__},
        "timings_s": timings,
        "outputs": sorted(outputs),
    }
    if extra:
        man.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man, indent=2, default=str) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    model = ingest_market_data(args.mu, args.sigma)
    doc = {
        "model": {
            "assets": {"mu": model.mu.tolist()},
            "covariance": model.sigma.tolist(),
            "decision_set": "simplex",
        }
    }
    path = out / "model.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"ingested {model.n} assets -> {path}")
    return EXIT_OK


def _phi_grid(args):
    if not (0.0 < args.phi_min < args.phi_max):
        raise ConfigError(
            f"need 0 < phi_min < phi_max, got ({args.phi_min}, {args.phi_max})")
    return np.linspace(args.phi_min, args.phi_max, args.n_points)


def cmd_alpha_curve(args) -> int:
    doc, model, _, _, _ = load_run(args.config)
    out = _out_dir(args)
    grid = _phi_grid(args)
    t0 = time.perf_counter()
    path_data = weights_path(model, grid)
    header = ["phi", "alpha", "dalpha_dphi"] + [
        f"theta_{i + 1}" for i in range(model.n)]
    rows = np.column_stack([path_data["phi"], path_data["alpha"],
                            path_data["dalpha_dphi"], path_data["theta"]])
    extra = {}
    try:
        cf = closed_form_n2(model)
        rows = np.column_stack([rows, cf.evaluate(grid)])
        header.append("alpha_closed")
        extra["breakpoints"] = {"phi_lo": cf.phi_lo, "phi_hi": cf.phi_hi}
        extra["closed_form"] = {
            "A": cf.a_const, "B": cf.b_const, "C": cf.c_const,
            "E_minus": cf.e_minus, "D_minus": cf.d_minus,
            "E_plus": cf.e_plus, "D_plus": cf.d_plus,
        }
    except AlphaEngineError:
        pass
    csv_path = out / "alpha_curve.csv"
    _write_csv(csv_path, header, rows)
    outputs = [csv_path.name]
    if args.gnuplot:
        gp = out / "alpha_curve.gp"
        gp.write_text(
            "set datafile separator ','\n"
            f"plot 'alpha_curve.csv' using 1:2 with lines title 'alpha'\n")
        outputs.append(gp.name)
    _manifest(out, doc, outputs, {"alpha_curve": time.perf_counter() - t0}, extra)
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_weights_path(args) -> int:
    doc, model, _, _, _ = load_run(args.config)
    out = _out_dir(args)
    grid = _phi_grid(args)
    t0 = time.perf_counter()
    path_data = weights_path(model, grid)
    header = ["phi", "alpha", "dalpha_dphi"] + [
        f"theta_{i + 1}" for i in range(model.n)]
    rows = np.column_stack([path_data["phi"], path_data["alpha"],
                            path_data["dalpha_dphi"], path_data["theta"]])
    csv_path = out / "weights_path.csv"
    _write_csv(csv_path, header, rows)
    _manifest(out, doc, [csv_path.name],
              {"weights_path": time.perf_counter() - t0})
    print(f"wrote {csv_path}")
    return EXIT_OK


def _slice_indices(tau_values, slices):
    if slices:
        wanted = [float(s) for s in slices.split(",")]
    else:
        wanted = list(np.linspace(0.0, tau_values[-1], 5))
    return sorted({int(np.argmin(np.abs(tau_values - t))) for t in wanted})


def _emit_slices(out, model, sol, slices):
    outputs = []
    for k in _slice_indices(sol.tau_values, slices):
        tau = sol.tau_values[k]
        phi_row = sol.phi[k]
        theta = np.empty((len(phi_row), model.n))
        alpha = np.empty(len(phi_row))
        for i, (x, p) in enumerate(zip(sol.grid.centers, phi_row)):
            r = solve_alpha(model, float(x), float(p))
            theta[i] = r.theta_hat
            alpha[i] = r.value
        header = ["x", "phi", "alpha"] + [f"theta_{i + 1}" for i in range(model.n)]
        rows = np.column_stack([sol.grid.centers, phi_row, alpha, theta])
        name = f"slice_tau_{tau:.6g}.csv"
        _write_csv(out / name, header, rows)
        outputs.append(name)
    return outputs


def _diag_summary(sol):
    return {
        "max_picard_iterations": max(d.picard_iterations for d in sol.diagnostics),
        "max_residual": max(d.residual for d in sol.diagnostics),
        "alpha_range": [min(d.alpha_min for d in sol.diagnostics),
                        max(d.alpha_max for d in sol.diagnostics)],
        "cutoff": None if sol.cutoff is None else {
            "m": sol.cutoff.m, "lambda": sol.cutoff.lam,
            "lower": sol.cutoff.lower, "upper": sol.cutoff.upper,
            "excess": sol.cutoff_excess},
    }


def cmd_solve(args) -> int:
    doc, model, utility, pde_cfg, checks = load_run(args.config)
    if utility is None or pde_cfg is None:
        raise ConfigError("solve needs both a utility and a pde section")
    out = _out_dir(args)
    t0 = time.perf_counter()
    sol = solve(model, utility, pde_cfg)
    solve_time = time.perf_counter() - t0
    outputs = _emit_slices(out, model, sol, args.slices)
    extra = {"diagnostics": _diag_summary(sol)}
    if args.verify:
        reports = _verification_bundle(model, utility, pde_cfg, sol, checks)
        extra["checks"] = {r.check_name: r.to_dict() for r in reports}
    if args.gnuplot:
        gp = out / "slices.gp"
        gp.write_text("set datafile separator ','\n" + "\n".join(
            f"replot '{name}' using 1:2 with lines" for name in outputs) + "\n")
        outputs.append(gp.name)
    _manifest(out, doc, outputs, {"solve": solve_time}, extra)
    print(f"solved {pde_cfg.n_steps} steps on {pde_cfg.grid.n_cells} cells "
          f"in {solve_time:.2f}s -> {out}")
    if args.verify and not all(c["passed"] for c in extra["checks"].values()):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _verification_bundle(model, utility, pde_cfg, sol, checks):
    reports = [
        monotonicity_certificate(model, seed=checks["seed"],
                                 n_pairs=checks["n_pairs"],
                                 phi_range=checks["phi_range"]),
        maximum_principle_report(sol, model, tol=checks["tolerance"]),
    ]
    coarse = energy_estimate_report(sol, model)
    reports.append(coarse)

    fine_cfg = PDEConfig(
        grid=type(pde_cfg.grid)(pde_cfg.grid.x_min, pde_cfg.grid.x_max,
                                2 * pde_cfg.grid.n_cells),
        t_final=pde_cfg.t_final, n_steps=2 * pde_cfg.n_steps,
        picard_tol=pde_cfg.picard_tol, picard_max=pde_cfg.picard_max,
        cutoff_m=pde_cfg.cutoff_m, boundary=pde_cfg.boundary,
        dirichlet_values=pde_cfg.dirichlet_values, upwind=pde_cfg.upwind,
    )
    fine = energy_estimate_report(solve(model, utility, fine_cfg), model)
    ratio_c = coarse.context["ratio"]
    ratio_f = fine.context["ratio"]
    from .analysis import CheckReport
    reports.append(CheckReport(
        check_name="energy-refinement",
        bound_lhs=float(ratio_f),
        bound_rhs=float(1.10 * ratio_c),
        tolerance=1e-12,
        context={"ratio_coarse": ratio_c, "ratio_fine": ratio_f},
    ))

    budget = contraction_budget(model, sol)
    reports.append(CheckReport(
        check_name="contraction-budget",
        bound_lhs=0.0 if budget.t0 > 0 else np.inf,
        bound_rhs=0.0,
        tolerance=0.0,
        context={
            "omega": budget.omega, "beta": budget.beta,
            "beta_tilde": budget.beta_tilde, "t0": budget.t0,
            "horizon": budget.horizon, "windows": budget.windows(),
            "horizon_exceeds_t0": budget.horizon > budget.t0,
        },
    ))
    return reports


def cmd_verify(args) -> int:
    doc, model, utility, pde_cfg, checks = load_run(args.config)
    if utility is None or pde_cfg is None:
        raise ConfigError("verify needs both a utility and a pde section")
    if args.seed is not None:
        checks["seed"] = args.seed
    out = _out_dir(args)
    t0 = time.perf_counter()
    sol = solve(model, utility, pde_cfg)
    reports = _verification_bundle(model, utility, pde_cfg, sol, checks)
    payload = {
        "passed": all(r.passed for r in reports),
        "checks": {r.check_name: r.to_dict() for r in reports},
    }
    path = out / "verify.json"
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")
    _manifest(out, doc, [path.name], {"verify": time.perf_counter() - t0})
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check_name}: "
              f"worst violation {r.worst_violation:.3e} "
              f"(tol {r.tolerance:.1e})")
    return EXIT_OK if payload["passed"] else EXIT_CHECK_FAILED


def cmd_mms(args) -> int:
    from .model import DecisionSet, PortfolioModel
    from .pde import mms_convergence_study
    out = _out_dir(args)
    model = PortfolioModel(np.array([0.06]), np.array([[0.04]]),
                           DecisionSet.simplex(1))
    t0 = time.perf_counter()
    study = mms_convergence_study(model)
    rows = []
    for kind in ("spatial", "temporal"):
        tab = study[kind]
        for i in range(len(tab["error"])):
            rows.append((kind, tab["n_cells"][i], tab["n_steps"][i],
                         tab["error"][i]))
    lines = ["refinement,n_cells,n_steps,max_error"]
    lines += [f"{k},{c},{s},{e!r}" for k, c, s, e in rows]
    csv_path = out / "mms_convergence.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    _manifest(out, {"mms": "builtin single-asset"}, [csv_path.name],
              {"mms": time.perf_counter() - t0},
              {"orders": {"spatial": study["spatial"]["orders"],
                          "temporal": study["temporal"]["orders"]}})
    print(f"spatial orders: {study['spatial']['orders']}")
    print(f"temporal orders: {study['temporal']['orders']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="riccati-hjb",
        description="Optimal-portfolio HJB solver via the risk-aversion "
                    "transform: parametric QP diffusion function, implicit "
                    "finite-volume PDE integration, analytic-bound checks.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pi = sub.add_parser("ingest", help="validate market-data CSVs")
    pi.add_argument("--mu", required=True, help="mean returns CSV")
    pi.add_argument("--sigma", required=True, help="covariance CSV")
    pi.add_argument("--out", default="out")
    pi.set_defaults(func=cmd_ingest)

    for name, fn in (("alpha-curve", cmd_alpha_curve),
                     ("weights-path", cmd_weights_path)):
        pc = sub.add_parser(name, help=f"tabulate {name.replace('-', ' ')}")
        pc.add_argument("--config", required=True)
        pc.add_argument("--out", default="out")
        pc.add_argument("--phi-min", type=float, default=0.5)
        pc.add_argument("--phi-max", type=float, default=10.0)
        pc.add_argument("--n-points", type=int, default=200)
        pc.add_argument("--gnuplot", action="store_true")
        pc.set_defaults(func=fn)

    ps = sub.add_parser("solve", help="integrate the risk-aversion PDE")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", default="out")
    ps.add_argument("--slices", default="",
                    help="comma-separated tau values to emit")
    ps.add_argument("--verify", action="store_true",
                    help="run the verification bundle inline")
    ps.add_argument("--gnuplot", action="store_true")
    ps.set_defaults(func=cmd_solve)

    pv = sub.add_parser("verify", help="run all analytic-bound checks")
    pv.add_argument("--config", required=True)
    pv.add_argument("--out", default="out")
    pv.add_argument("--seed", type=int, default=None)
    pv.set_defaults(func=cmd_verify)

    pm = sub.add_parser("mms", help="manufactured-solution convergence study")
    pm.add_argument("--out", default="out")
    pm.set_defaults(func=cmd_mms)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors, matching EXIT_CONFIG
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, AlphaEngineError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
