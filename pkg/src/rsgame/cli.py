"""Command-line runner: ``rsgame validate | solve | verify | diagnose``.

Exit codes: 0 success, 1 usage or configuration error, 2 assumption or
invariant failure, 3 no pure grid equilibrium, 4 Nash verification failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .bsde import feedback_from_tables, fixed_control_generator, growth_envelope, ladder_convergence, positivity_ok, solve_backward
from .config import ConfigError, config_hash, load_model
from .density import check_aronson_envelope, estimate_density
from .feedback import FeedbackControls
from .girsanov import dolean_dade, game_integrand, probe_lp_bound, reweighted_mean
from .hamiltonian import NoEquilibrium, build_isaacs_map
from .io import load_slices, write_csv, write_json, write_manifest, write_slices
from .model import SingularDiffusionError, validate_model
from .nash import default_deviation_suite, verify_nash, write_margin_csv
from .payoff import PayoffOverflowError, check_bsde_representation
from .regression import RankDeficiencyWarning, RegressionBasis
from .sde import TimeGrid, moment_diagnostics, simulate_bounded_drift, simulate_driftless

EXIT_OK, EXIT_USAGE, EXIT_ASSUMPTION, EXIT_NO_EQUILIBRIUM, EXIT_NASH_FAIL = 0, 1, 2, 3, 4

log = logging.getLogger("rsgame")


class UsageError(Exception):
    pass


def _workers(flag):
    env = os.environ.get("RSG_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"RSG_WORKERS must be an integer, got {env!r}") from exc
    return max(1, int(flag)) if flag else 1


def _pick(flag, section: dict, key: str, default, cast=lambda v: v):
    if flag is not None:
        return cast(flag)
    if key in section:
        return cast(section[key])
    return default


def _int_list(v):
    if isinstance(v, str):
        return [int(s) for s in v.replace(" ", "").split(",") if s]
    if isinstance(v, (list, tuple)):
        return [int(s) for s in v]
    return [int(v)]


def _float_list(v):
    if isinstance(v, str):
        return [float(s) for s in v.replace(" ", "").split(",") if s]
    if isinstance(v, (list, tuple)):
        return [float(s) for s in v]
    return [float(v)]


# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    model, cfg = load_model(args.config)
    report = validate_model(model, n_probe=args.probe, seed=args.seed)
    print(report.format())
    if args.out:
        out = Path(args.out)
        write_json(out / "validation.json", report.to_dict())
    if report.passed:
        print("all assumption checks passed")
        return EXIT_OK
    names = ", ".join(c.name for c in report.failures)
    print(f"assumption checks failed: {names}", file=sys.stderr)
    return EXIT_ASSUMPTION


def _solver_params(args, cfg, model) -> dict:
    sec = cfg.get("solver", {})
    basis_spec = _pick(args.basis, sec, "basis", RegressionBasis.default(model.dim_m).label, str)
    return {
        "n_paths": _pick(args.paths, sec, "n_paths", 100_000, int),
        "n_steps": _pick(args.steps, sec, "n_steps", 50, int),
        "ladder": _pick(args.ladder, sec, "ladder", [4, 16, 64], _int_list),
        "basis": basis_spec,
        "seed": _pick(args.seed, sec, "seed", 0, int),
        "picard": _pick(args.picard, sec, "picard", 2, int),
    }


def cmd_solve(args) -> int:
    model, cfg = load_model(args.config)
    params = _solver_params(args, cfg, model)
    try:
        basis = RegressionBasis.parse(params["basis"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    workers = _workers(args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid.for_model(model, params["n_steps"])
    paths = simulate_driftless(model, grid, params["n_paths"], params["seed"], workers=workers)
    isaacs = build_isaacs_map(model)
    ladder = params["ladder"]
    if len(ladder) < 2:
        print(f"warning: ladder {ladder} has a single level; Cauchy check skipped", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        if len(ladder) >= 2:
            conv, sol = ladder_convergence(model, isaacs, paths, basis, ladder, params["picard"])
            if conv.passed is None:
                print(f"warning: {conv.note}", file=sys.stderr)
        else:
            conv = None
            sol = solve_backward(model, isaacs, paths, basis, ladder[0], params["picard"])
    if sol.ridge_slices:
        print(f"warning: ridge fallback used on slices {sol.ridge_slices}", file=sys.stderr)
    env = growth_envelope(sol)
    pos = positivity_ok(sol)

    outputs = []
    rows = []
    for i in (1, 2):
        rows.append(
            {
                "player": i,
                "Y0": sol.y0[i - 1],
                "Y0_se": sol.y0_se[i - 1],
                "J": math.exp(sol.y0[i - 1]),
                "J_se": sol.ybar0_se[i - 1],
                "floor_fraction": sol.floor_fraction,
            }
        )
    outputs.append(write_csv(out / "summary.csv", rows))
    meta = {"ladder_n": sol.ladder_n, "generator": sol.generator, "config_hash": config_hash(cfg)}
    outputs.append(write_slices(out / "solution" / "slices.csv", sol.tables, grid, meta))
    outputs.append(out / "solution" / "slices.json")
    mrows = [
        {"k": k, "t": grid.times[k], "player": i + 1, "mean": sol.martingale[k, i, 0], "std_error": sol.martingale[k, i, 1]}
        for k in range(grid.n_steps)
        for i in range(2)
    ]
    outputs.append(write_csv(out / "martingale.csv", mrows))
    if conv is not None:
        outputs.append(write_csv(out / "ladder.csv", conv.rows(), ["n_from", "n_to", "y_max_diff", "z_l2_diff"]))
    outputs.append(write_json(out / "envelope.json", env.to_dict()))
    outputs.append(write_json(out / "isaacs.json", dict(isaacs.stats)))

    ok = env.passed and pos
    verdict = {
        "growth_envelope": env.passed,
        "positivity": pos,
        "flags": sol.flags,
        "ladder_cauchy": None if conv is None else conv.passed,
    }
    write_manifest(out, "solve", config_hash(cfg), {**params, "workers": workers, "config": str(args.config)}, outputs, verdict)

    for r in rows:
        print(f"player {r['player']}: Y0 = {r['Y0']:.6f} +- {3 * r['Y0_se']:.2e} (3 SE), J = {r['J']:.6f}")
    if conv is not None:
        state = "skipped" if conv.passed is None else ("PASS" if conv.passed else "FAIL")
        print(f"ladder {ladder}: Cauchy check {state}; y diffs {[f'{d:.3g}' for d in conv.y_diffs]}")
    print(f"growth envelope: {'PASS' if env.passed else 'FAIL'} (worst ratio {env.worst_ratio:.3g})")
    print(f"positivity: {'PASS' if pos else 'FAIL'} (floored fraction {sol.floor_fraction:.3g})")
    print(f"isaacs: {isaacs.stats['multiple']} of {isaacs.stats['points']} evaluations had several equilibria")
    return EXIT_OK if ok else EXIT_ASSUMPTION


def _load_solution(model, solution_dir):
    sdir = Path(solution_dir)
    slices = sdir / "solution" / "slices.csv"
    if not slices.is_file():
        raise UsageError(f"no solution found under {sdir} (expected {slices})")
    tables, grid, info = load_slices(slices)
    if abs(grid.t_end - model.horizon_T) > 1e-12 or tables[0].frame.m != model.dim_m:
        raise UsageError("solution does not match the model (horizon or dimension differ)")
    return tables, grid, info


def cmd_verify(args) -> int:
    model, cfg = load_model(args.config)
    tables, grid, _ = _load_solution(model, args.solution)
    sec = cfg.get("verify", {})
    n_paths = _pick(args.paths, sec, "n_paths", 20_000, int)
    n_dev = _pick(args.deviations, sec, "deviations", 10, int)
    seed = _pick(args.seed, sec, "seed", 1, int)
    k = _pick(args.k, sec, "k", 3.0, float)
    workers = _workers(args.workers)
    out = Path(args.out) if args.out else Path(args.solution) / "verify"
    out.mkdir(parents=True, exist_ok=True)

    isaacs = build_isaacs_map(model)
    feedback = feedback_from_tables(tables, grid, isaacs, perturb=args.perturb, player=args.perturb_player)
    suite = default_deviation_suite(model, seed, n_random=n_dev, dt=grid.dt)
    cert = verify_nash(model, feedback, suite, grid, n_paths, seed, k=k, workers=workers)

    # representation identity for the extracted controls: fixed-control BSDE
    # on fresh reference paths against an independent direct estimate
    ref = simulate_driftless(model, grid, n_paths, seed + 1, workers=workers)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        fixed = solve_backward(model, None, ref, RegressionBasis.parse(tables[0].frame.basis.label), generator=fixed_control_generator(model, feedback))
    rep = check_bsde_representation(model, feedback, fixed, tol_se=k, n_paths=n_paths, seed=seed + 2)

    outputs = []
    cert.write_json(out / "certificate.json")
    outputs.append(out / "certificate.json")
    write_margin_csv(cert, out / "margins.csv")
    outputs.append(out / "margins.csv")
    outputs.append(write_csv(out / "representation.csv", rep.rows()))
    verdict = {"nash": "PASS" if cert.passed else "FAIL", "representation": "PASS" if rep.passed else "FAIL"}
    params = {"n_paths": n_paths, "deviations": n_dev, "seed": seed, "k": k, "perturb": args.perturb, "solution": str(args.solution)}
    write_manifest(out, "verify", config_hash(cfg), params, outputs, verdict)

    for i, (j, s) in enumerate(cert.baseline):
        print(f"baseline J{i + 1} = {j:.6f} +- {s:.2e}")
    fails = [d for d in cert.deviations if not d.passed]
    print(f"nash: {'PASS' if cert.passed else 'FAIL'} ({len(cert.deviations)} deviations, {len(fails)} below -{k:g} SE)")
    for d in fails[:10]:
        print(f"  player {d.player} {d.description}: margin {d.margin:.4g} (SE {d.margin_se:.2g})")
    for c in rep.cases:
        print(f"representation player {c.which}: exp(Y0) = {c.bsde_value:.6f}, J = {c.mc_value:.6f}, z = {c.z_score:.2f}")
    print("note: " + cert.note)
    return EXIT_OK if (cert.passed and rep.passed) else EXIT_NASH_FAIL


def cmd_diagnose(args) -> int:
    model, cfg = load_model(args.config)
    sec = cfg.get("diagnose", {})
    n_paths = _pick(args.paths, sec, "n_paths", 100_000, int)
    n_steps = _pick(args.steps, sec, "n_steps", 50, int)
    seed = _pick(args.seed, sec, "seed", 0, int)
    workers = _workers(args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid.for_model(model, n_steps)
    outputs = []
    ok = True

    if args.what == "girsanov":
        p_grid = _pick(args.p_grid, sec, "p_grid", [1.1, 1.25, 1.5, 1.75, 1.9], _float_list)
        paths = simulate_driftless(model, grid, n_paths, seed, workers=workers)
        if args.solution:
            tables, sgrid, _ = _load_solution(model, args.solution)
            feedbacks = [feedback_from_tables(tables, sgrid, build_isaacs_map(model))]
        else:
            feedbacks = [
                FeedbackControls.constant(model, i, j)
                for i in range(model.control_grid_1.size)
                for j in range(model.control_grid_2.size)
            ]
        rows, lp_rows = [], []
        for fb in feedbacks:
            w = dolean_dade(paths, game_integrand(model, fb))
            mean, se, n_used, n_flag = reweighted_mean(np.ones(n_paths), w)
            within = abs(mean - 1.0) <= 3 * se + 1e-12
            ok &= within
            lp = probe_lp_bound(w, p_grid)
            rows.append({"feedback": fb.tag, "E_zeta_T": mean, "std_error": se, "n_used": n_used, "n_flagged": n_flag, "within_3se": within, "best_p": lp.best_p if lp.best_p is not None else ""})
            lp_rows.extend({"feedback": fb.tag, **r} for r in lp.rows())
            print(f"{fb.tag}: E[zeta_T] = {mean:.6f} +- {se:.2e}, largest stable p = {lp.best_p}")
        outputs.append(write_csv(out / "girsanov.csv", rows))
        outputs.append(write_csv(out / "lp_bound.csv", lp_rows))
    elif args.what == "moments":
        q_list = _pick(args.q, sec, "q_list", [1.0, 2.0], _float_list)
        lam = _pick(args.lam, sec, "lam", 1.0, float)
        ell = _pick(args.l, sec, "l", 1.0, float)
        try:
            reports = {
                "driftless": moment_diagnostics(simulate_driftless(model, grid, n_paths, seed, workers=workers), q_list, lam, ell),
                "bounded-drift": moment_diagnostics(
                    simulate_bounded_drift(model.bounded_drift, model, grid, n_paths, seed, workers=workers), q_list, lam, ell
                ),
            }
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        rows = []
        for name, rep in reports.items():
            ok &= rep.finite
            rows.extend({"process": name, **r} for r in rep.rows())
            for r in rep.rows():
                print(f"{name}: {r['quantity']} = {r['value']:.6g} +- {r['std_error']:.2g}")
        outputs.append(write_csv(out / "moments.csv", rows))
    elif args.what == "density":
        s = _pick(args.s, sec, "s", model.horizon_T, float)
        paths = simulate_bounded_drift(model.bounded_drift, model, grid, n_paths, seed, workers=workers)
        try:
            est = estimate_density(paths, s)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        env = check_aronson_envelope(est)
        ok &= env.passed
        fields = [f"x{c}" for c in range(model.dim_m)] + ["kde", "lower", "upper", "inside"]
        outputs.append(write_csv(out / "density.csv", env.rows(), fields))
        outputs.append(write_json(out / "envelope.json", {**env.summary(), "mass": est.mass(), "bandwidth": est.bandwidth}))
        print(f"density at s={s:g}: mass {est.mass():.4f}, envelope {'PASS' if env.passed else 'FAIL'}")
        print(f"  rho1 = {env.rho1:.4g}, rho2 = {env.rho2:.4g}, Lambda = {env.Lam:.4g}, lambda = {env.lam:.4g}, coverage {env.coverage:.2%}")
    else:  # argparse restricts the choices; kept for direct calls
        raise UsageError(f"unknown diagnostic {args.what!r}")

    params = {"what": args.what, "n_paths": n_paths, "n_steps": n_steps, "seed": seed}
    write_manifest(out, f"diagnose:{args.what}", config_hash(cfg), params, outputs, {"passed": bool(ok)})
    return EXIT_OK if ok else EXIT_ASSUMPTION


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsgame", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="probe the model assumptions")
    v.add_argument("config")
    v.add_argument("--probe", type=int, default=256)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="solve the coupled BSDE system")
    s.add_argument("config")
    s.add_argument("--paths", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--ladder", help='comma-separated ladder levels, e.g. "4,16,64"')
    s.add_argument("--basis", help="deg<N> or pwl<N>")
    s.add_argument("--seed", type=int)
    s.add_argument("--picard", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("verify", help="Nash certificate for a solved feedback")
    r.add_argument("config")
    r.add_argument("--solution", required=True)
    r.add_argument("--deviations", type=int)
    r.add_argument("--paths", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--k", type=float)
    r.add_argument("--perturb", choices=["worst"], help="replace a player's control by its worst grid response")
    r.add_argument("--perturb-player", type=int, choices=[1, 2], default=1)
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_verify)

    d = sub.add_parser("diagnose", help="Girsanov, moment or density diagnostics")
    d.add_argument("config")
    d.add_argument("--what", required=True, choices=["girsanov", "moments", "density"])
    d.add_argument("--paths", type=int)
    d.add_argument("--steps", type=int)
    d.add_argument("--seed", type=int)
    d.add_argument("--solution")
    d.add_argument("--q", help="comma-separated q values")
    d.add_argument("--lam", type=float)
    d.add_argument("--l", type=float)
    d.add_argument("--p-grid", dest="p_grid")
    d.add_argument("--s", type=float, help="density time (default: horizon)")
    d.add_argument("--workers", type=int)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoEquilibrium as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_EQUILIBRIUM
    except (SingularDiffusionError, PayoffOverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
