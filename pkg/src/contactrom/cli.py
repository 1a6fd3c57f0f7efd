"""Command-line front end: scenario generation, runs, offline reduction and
trajectory comparison.

Exit codes: 0 success, 1 solver failure, 2 usage or I/O error.  Independent
runs dispatch in parallel; CONTACTROM_THREADS caps the worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from contactrom import report as _report
from contactrom import scenario as _scenario
from contactrom.mor import save_reduced
from contactrom.sim import SimError, Trajectory, build_reduced_model, run as run_sim

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2

_PLOT_LOCK = threading.Lock()   # matplotlib rendering is not thread-safe


def _worker_count() -> int:
    env = os.environ.get("CONTACTROM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"CONTACTROM_THREADS={env!r} is not an integer")
    return min(4, os.cpu_count() or 1)


def _summary(traj: Trajectory, sc, seed, csv_path) -> dict:
    return {
        "label": sc.label,
        "mode": traj.mode,
        "dims": traj.dims,
        "steps": int(traj.n_steps),
        "time": {"t0": float(traj.t[0]), "h": float(sc.h), "t_end": float(traj.t[-1])},
        "solver": {"tol": sc.solver_tol, "max_iter": sc.max_iter, "s_eval": sc.s_eval},
        "totals": {
            "ncp_iterations": int(traj.iterations.sum()),
            "wall_clock_s": float(traj.wall_clock.sum()),
            "pairing_updates": int(traj.pairing_version.max()),
        },
        "max_complementarity": float(traj.max_complementarity),
        "seed": seed,
        "csv": str(csv_path),
    }


def _run_one(args, scenario_path: Path) -> int:
    sc = _scenario.load_scenario(scenario_path, mode_override=args.mode)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{sc.label}_{sc.mode}"
    try:
        traj = run_sim(sc)
    except SimError as exc:
        print(f"error: {scenario_path}: {exc}", file=sys.stderr)
        if exc.trajectory is not None:
            partial = outdir / f"{stem}_partial.csv"
            exc.trajectory.save_csv(partial)
            print(f"partial trajectory written to {partial}", file=sys.stderr)
        return EXIT_SOLVER
    csv_path = outdir / f"{stem}.csv"
    traj.save_csv(csv_path)
    if sc.mode in ("rom-cb", "rom-plain"):
        save_reduced(build_reduced_model(sc), outdir / f"{stem}.crom")
    summary = _summary(traj, sc, args.seed, csv_path)
    (outdir / f"{stem}.summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not args.no_plots:
        with _PLOT_LOCK:
            _report.render_run_figures(csv_path)
    if args.verbose:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"{stem}: {traj.n_steps} steps, dims {traj.dims}, "
              f"total iterations {int(traj.iterations.sum())}, csv {csv_path}")
    return EXIT_OK


def cmd_run(args) -> int:
    paths = [Path(p) for p in args.scenario]
    for p in paths:
        if not p.exists():
            print(f"error: scenario file not found: {p}", file=sys.stderr)
            return EXIT_USAGE
    if len(paths) == 1:
        return _run_one(args, paths[0])
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        codes = list(pool.map(lambda p: _run_one(args, p), paths))
    return max(codes)


def cmd_reduce(args) -> int:
    path = Path(args.scenario)
    if not path.exists():
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    mode = args.mode or "rom-cb"
    if mode == "full":
        print("error: reduce needs a ROM mode (rom-cb or rom-plain)", file=sys.stderr)
        return EXIT_USAGE
    sc = _scenario.load_scenario(path, mode_override=mode)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    model = build_reduced_model(sc)
    offline = time.perf_counter() - tic
    sidecar = outdir / f"{sc.label}_{mode}.crom"
    save_reduced(model, sidecar)
    info = {"label": sc.label, "mode": mode, "sidecar": str(sidecar),
            "dims": {"N": model.n_full, "n": model.n_reduced, "m": model.m,
                     "n_s": model.n_s},
            "offline_wall_clock_s": offline}
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def _column_errors(a: np.ndarray, b: np.ndarray) -> dict:
    diff = a - b
    return {"max_abs": float(np.abs(diff).max()),
            "l2_rel": float(np.linalg.norm(diff) / (1.0 + np.linalg.norm(a)))}


def _reverify(cols: dict, name: str) -> dict:
    g, p = cols["gap"], cols["pressure"]
    scale = 1e-8 * (1.0 + np.abs(g).max()) * (1.0 + np.abs(p).max())
    return {"trajectory": name,
            "lambda_nonnegative": bool(p.min() >= -scale),
            "gap_nonnegative": bool(g.min() >= -scale),
            "max_product": float(np.abs(g * p).max()),
            "complementarity_ok": bool(np.abs(g * p).max() <= scale)}


def cmd_compare(args) -> int:
    path_a, path_b = Path(args.traj_a), Path(args.traj_b)
    for p in (path_a, path_b):
        if not p.exists():
            print(f"error: trajectory file not found: {p}", file=sys.stderr)
            return EXIT_USAGE
    a = _report.read_csv(path_a)
    b = _report.read_csv(path_b)
    if len(a["t"]) != len(b["t"]) or not np.array_equal(a["t"], b["t"]):
        n = min(len(a["t"]), len(b["t"]))
        mism = np.nonzero(a["t"][:n] != b["t"][:n])[0]
        at = float(a["t"][mism[0]]) if len(mism) else float(a["t"][min(n, len(a["t"]) - 1)])
        print(f"error: time grids differ (first divergence at t={at!r})", file=sys.stderr)
        return EXIT_USAGE
    sensors_a = _report._sensor_columns(a)
    sensors_b = _report._sensor_columns(b)
    if sensors_a != sensors_b:
        print(f"error: sensor sets differ: {sensors_a} vs {sensors_b}", file=sys.stderr)
        return EXIT_USAGE

    report = {
        "reference": str(path_a),
        "candidate": str(path_b),
        "sensors": {s: {"ux": _column_errors(a[f"{s}_ux"], b[f"{s}_ux"]),
                        "uy": _column_errors(a[f"{s}_uy"], b[f"{s}_uy"])}
                    for s in sensors_a},
        "contact": {"gap": _column_errors(a["gap"], b["gap"]),
                    "pressure": _column_errors(a["pressure"], b["pressure"])},
        "iteration_histogram": {
            Path(path_a).stem: {str(k): int(v) for k, v in
                                zip(*np.unique(a["ncp_iterations"].astype(int),
                                               return_counts=True))},
            Path(path_b).stem: {str(k): int(v) for k, v in
                                zip(*np.unique(b["ncp_iterations"].astype(int),
                                               return_counts=True))},
        },
        "complementarity": [_reverify(a, path_a.stem), _reverify(b, path_b.stem)],
    }
    speedup = _speedup(path_a, path_b)
    if speedup is not None:
        report["speedup"] = speedup

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"compare_{path_a.stem}_vs_{path_b.stem}"
    (outdir / f"{stem}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(outdir / f"{stem}.csv", "w") as fh:
        fh.write("column,max_abs,l2_rel\n")
        for s in sensors_a:
            for comp in ("ux", "uy"):
                e = report["sensors"][s][comp]
                fh.write(f"{s}_{comp},{e['max_abs']!r},{e['l2_rel']!r}\n")
        for c in ("gap", "pressure"):
            e = report["contact"][c]
            fh.write(f"{c},{e['max_abs']!r},{e['l2_rel']!r}\n")
    if not args.no_plots:
        _report.render_compare_figures(path_a, path_b, outdir, stem)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _speedup(path_a: Path, path_b: Path) -> float | None:
    def wall(p: Path):
        summary = p.parent / (p.stem + ".summary.json")
        if summary.exists():
            return json.loads(summary.read_text())["totals"]["wall_clock_s"]
        return None

    wa, wb = wall(path_a), wall(path_b)
    if wa and wb and wb > 0:
        return float(wa / wb)
    return None


def cmd_gen(args) -> int:
    outdir = Path(args.out)
    if args.which == "crack":
        sc = _scenario.crack_scenario(nx=args.nx, ny=args.ny, mode=args.mode,
                                      h=args.h, n_steps=args.steps, n_s=args.ns)
    else:
        sc = _scenario.wheelrail_scenario(mode=args.mode, h=args.h, n_steps=args.steps,
                                          n_s=args.ns)
    path = _scenario.write_scenario(sc, outdir)
    print(f"wrote {path} (mesh alongside)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contactrom",
                                 description="2D dynamic contact with node-to-segment "
                                             "constraints and contact-preserving MOR")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="emit a reference scenario (mesh + TOML)")
    g.add_argument("which", choices=("crack", "wheelrail"))
    g.add_argument("--out", default=".", help="output directory")
    g.add_argument("--nx", type=int, default=40)
    g.add_argument("--ny", type=int, default=40)
    g.add_argument("--mode", default="full", choices=("full", "rom-cb", "rom-plain"))
    g.add_argument("--h", type=float, default=None)
    g.add_argument("--steps", type=int, default=None)
    g.add_argument("--ns", type=int, default=None)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run one or more scenarios")
    r.add_argument("--scenario", nargs="+", required=True)
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--mode", default=None, choices=("full", "rom-cb", "rom-plain"))
    r.add_argument("--seed", type=int, default=0, help="recorded in the run summary")
    r.add_argument("--no-plots", action="store_true")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("reduce", help="offline build of the reduced-model sidecar")
    d.add_argument("--scenario", required=True)
    d.add_argument("--out", default=".")
    d.add_argument("--mode", default=None, choices=("rom-cb", "rom-plain", "full"))
    d.set_defaults(func=cmd_reduce)

    c = sub.add_parser("compare", help="compare two trajectory CSVs")
    c.add_argument("traj_a")
    c.add_argument("traj_b")
    c.add_argument("--out", default=".")
    c.add_argument("--no-plots", action="store_true")
    c.set_defaults(func=cmd_compare)
    return ap


_GEN_DEFAULTS = {
    "crack": {"h": 0.05, "steps": 400, "ns": 3},
    "wheelrail": {"h": 2.5e-3, "steps": 200, "ns": 6},
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    if args.command == "gen":
        defaults = _GEN_DEFAULTS[args.which]
        for key, val in defaults.items():
            if getattr(args, key) is None:
                setattr(args, key, val)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
