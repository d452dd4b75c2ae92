"""Command-line runner: ``evolve``, ``predict``, ``compare`` and ``basis``.

Exit codes: 0 ok, 1 configuration error, 2 numerical failure, 3 tolerance
failure. Every CSV starts with ``#`` manifest lines followed by a header.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import __version__, kernels
from .config import ConfigError, ExperimentConfig, load_config
from .liouville import (
    DensityMatrix,
    LindbladGenerator,
    PositivityError,
    StepSizeError,
    evolve_master,
    state_vector,
)
from .model import SectorBasis, write_triplets
from .observables import ObservableRequest, evaluate
from .predictors import (
    CLOSED_FORMS,
    closed_form_labels,
    closed_form_validity,
    dephasing_decoherence_rate,
    dissipative_decoherence_rate,
    effective_frequencies,
    manifold_rate_closed,
    rate_matrix,
    sector_populations,
    solve_rate_equations,
)
from .trajectory import PropagatorError, run_ensemble

log = logging.getLogger("transmon_open")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 1, 2, 3


class ToleranceFailure(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if np.isnan(x) else f"{float(x):.16e}"
    return str(x)


def _manifest_lines(cfg: ExperimentConfig, command: str, extra: dict | None = None) -> list[str]:
    info = {"command": command, "version": __version__, "kernels": kernels.backend.NAME}
    info.update(cfg.resolved())
    if extra:
        info.update(extra)
    return [f"# {k} = {json.dumps(v, sort_keys=True)}" for k, v in info.items()]


def write_csv(path: Path, manifest: list[str], header: list[str], rows) -> None:
    buf = io.StringIO()
    for line in manifest:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


def _request(names, cfg: ExperimentConfig) -> ObservableRequest:
    try:
        req = ObservableRequest.parse(names, cfg.L)
        req.validate(cfg.space())
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"observables: {exc}") from exc
    return req


def _rho0(cfg: ExperimentConfig, space):
    return DensityMatrix.from_state(space, cfg.initial)


def run_master(cfg: ExperimentConfig, request: ObservableRequest, out_dir: Path | None = None):
    space = cfg.space()
    gen = LindbladGenerator.from_params(cfg.params, space)
    res = evolve_master(
        _rho0(cfg, space), cfg.t_grid, generator=gen, method=cfg.integrator,
        rtol=cfg.rtol, atol=cfg.atol, observe=lambda r: evaluate(r, request),
        store_states=cfg.dump_states,
    )
    if cfg.dump_states and out_dir is not None:
        for i, rho in enumerate(res.states):
            with open(out_dir / f"{cfg.output_path}_rho_{i:05d}.txt", "w") as fh:
                write_triplets(rho.to_dense(), fh)
    return res


def run_trajectories(cfg: ExperimentConfig, request: ObservableRequest, threads: int):
    space = cfg.space()
    psi0 = state_vector(space, cfg.initial)
    return run_ensemble(
        psi0, cfg.t_grid, cfg.params, cfg.n_traj, cfg.seed, space=space,
        postselect=cfg.postselect_N, observables=request, threads=threads,
        keep_jump_logs=cfg.jump_log,
    )


def cmd_evolve(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    request = _request(cfg.observables, cfg)
    t = cfg.t_grid
    if cfg.method == "master":
        res = run_master(cfg, request, out)
        header = ["t_us"] + request.names
        rows = [[t[i]] + [res.values[n][i] for n in request.names] for i in range(len(t))]
        extra = {"integrator_used": res.method}
    else:
        if not all(o.diagonal for o in request.items):
            raise ConfigError("observables: trajectories support n_l, P_N and P_a only")
        ens = run_trajectories(cfg, request, threads)
        header = ["t_us"] + request.names + [f"{n}_se" for n in request.names] + ["n_contributing"]
        rows = [[t[i], *ens.mean[i], *ens.stderr[i], ens.counts[i]] for i in range(len(t))]
        extra = {"trajectories": ens.n_traj}
        if cfg.jump_log:
            jrows = [
                [k, tj, kind, site] for k, logk in enumerate(ens.jump_logs) for tj, kind, site in logk
            ]
            write_csv(out / f"{cfg.output_path}_jumps.csv", _manifest_lines(cfg, "evolve", extra),
                      ["trajectory", "t_us", "kind", "site"], jrows)
    write_csv(out / f"{cfg.output_path}.csv", _manifest_lines(cfg, "evolve", extra), header, rows)
    (out / f"{cfg.output_path}_manifest.json").write_text(
        json.dumps({"command": "evolve", "version": __version__, **cfg.resolved(), **extra},
                   indent=2, sort_keys=True) + "\n"
    )
    return EXIT_OK


def _predict_rows(cfg: ExperimentConfig):
    """Rows ``quantity, from, to, value_per_us, note`` for every applicable prediction."""
    p = cfg.params
    N, L = cfg.N, cfg.L
    rows = []
    for n, m in cfg.pairs:
        rows.append(["K_gamma", n.digits(), m.digits(), dissipative_decoherence_rate(n, m, p.gamma), ""])
        rows.append(["K_kappa", n.digits(), m.digits(), dephasing_decoherence_rate(n, m, p.kappa), ""])
    basis = SectorBasis(L, N)
    uniform_U = np.ptp(p.U) == 0
    if np.any(p.kappa > 0) and L > 1 and uniform_U:
        R = rate_matrix(basis, p)
        for i, a in enumerate(R.labels):
            for j, b in enumerate(R.labels):
                if i != j and R.matrix[i, j] > 0:
                    rows.append(["Gamma", a, b, R.matrix[i, j], "trace formula"])
        uniform = np.ptp(p.kappa) == 0 and (L < 2 or np.ptp(p.J) == 0)
        for kind in CLOSED_FORMS:
            reason = closed_form_validity(kind, L, N)
            a, b = closed_form_labels(kind, N)
            if reason is None and not uniform:
                reason = "closed forms need uniform J and kappa"
            if reason is not None:
                rows.append([f"Gamma_closed_{kind}", a, b, float("nan"), reason])
                continue
            val = manifold_rate_closed(kind, L, N, float(p.J[0]), float(p.U[0]), float(p.kappa[0]))
            rows.append([f"Gamma_closed_{kind}", a, b, val, ""])
    elif np.any(p.kappa > 0) and not uniform_U:
        rows.append(["Gamma", "", "", float("nan"), "manifold rates need a uniform U"])
    J0 = float(p.J[0]) if L > 1 else 0.0
    eff = effective_frequencies(N, J0, float(p.U.mean())) if N >= 1 else None
    if eff is not None:
        rows.append(["J_tilde", N, "", eff.J_tilde, "rad/us"])
        rows.append(["Xi", "", "", eff.Xi, "rad/us"])
    return rows


def cmd_predict(cfg: ExperimentConfig, out: Path) -> int:
    rows = _predict_rows(cfg)
    write_csv(out / f"{cfg.output_path}_predict.csv", _manifest_lines(cfg, "predict"),
              ["quantity", "from", "to", "value_per_us", "note"], rows)
    t = cfg.t_grid
    cols, header = [], []
    p = cfg.params
    if np.any(p.gamma > 0):
        if np.ptp(p.gamma) == 0:
            ps = sector_populations(cfg.N, float(p.gamma[0]), t)
            for N in ps.labels:
                header.append(f"P_N{N}")
                cols.append(ps.column(N))
    if np.any(p.kappa > 0) and cfg.L > 1 and np.ptp(p.U) == 0:
        basis = SectorBasis(cfg.L, cfg.N)
        R = rate_matrix(basis, p)
        P0 = _initial_manifold_populations(cfg, basis, R.labels)
        pa = solve_rate_equations(R, P0, t)
        for a in pa.labels:
            header.append(f"P_a{a}")
            cols.append(pa.column(a))
    series = [[t[i]] + [c[i] for c in cols] for i in range(len(t))]
    write_csv(out / f"{cfg.output_path}_predict_series.csv", _manifest_lines(cfg, "predict"),
              ["t_us"] + header, series)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["quantity", "from", "to", "value_per_us", "note"])
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return EXIT_OK


def _initial_manifold_populations(cfg: ExperimentConfig, basis: SectorBasis, labels) -> np.ndarray:
    psi = np.zeros(len(basis), dtype=complex)
    for s, c in cfg.initial.items():
        psi[basis.find(s)] += c
    pr = np.abs(psi) ** 2
    pr /= pr.sum()
    return np.array([pr[basis.labels == a].sum() for a in labels])


def cmd_compare(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    checks = cfg.checks or [{"kind": "sector_law"}]
    t = cfg.t_grid
    p = cfg.params
    summary = []
    side_header, side_cols = ["t_us"], [t]
    for chk in checks:
        kind = chk["kind"]
        if kind == "sector_law":
            if np.ptp(p.gamma) != 0 or not np.any(p.gamma > 0):
                raise ConfigError("compare/sector_law needs a uniform, non-zero gamma")
            tol = chk.get("tol", 1e-6)
            req = _request([f"P_N{N}" for N in range(cfg.N + 1)], cfg)
            res = run_master(cfg, req)
            pred = sector_populations(cfg.N, float(p.gamma[0]), t)
            dev = 0.0
            for N in range(cfg.N + 1):
                num = res.values[f"P_N{N}"]
                side_header += [f"P_N{N}_numeric", f"P_N{N}_predicted"]
                side_cols += [num, pred.column(N)]
                dev = max(dev, float(np.abs(num - pred.column(N)).max()))
            summary.append({"check": kind, "value": dev, "tol": tol, "pass": dev < tol})
        elif kind == "manifold_rates":
            tol = chk.get("tol", 0.05)
            basis = SectorBasis(cfg.L, cfg.N)
            R = rate_matrix(basis, p)
            req = _request([f"P_a{a}" for a in R.labels], cfg)
            res = run_master(cfg, req)
            P0 = _initial_manifold_populations(cfg, basis, R.labels)
            pa = solve_rate_equations(R, P0, t)
            dev = 0.0
            for a in R.labels:
                num = res.values[f"P_a{a}"]
                side_header += [f"P_a{a}_numeric", f"P_a{a}_predicted"]
                side_cols += [num, pa.column(a)]
                dev = max(dev, float(np.abs(num - pa.column(a)).max()))
            summary.append({"check": kind, "value": dev, "tol": tol, "pass": dev < tol})
        elif kind == "trajectory_vs_master":
            z_tol = chk.get("tol", 3.0)
            frac = chk.get("fraction", 0.99)
            req = _request(cfg.observables, cfg)
            res = run_master(cfg, req)
            ens = run_trajectories(cfg, req, threads)
            ok = 0
            total = 0
            worst = 0.0
            for n in req.names:
                num = res.values[n]
                se = ens.error(n)
                z = np.abs(ens.column(n) - num) / np.maximum(se, 1e-12)
                z = np.where(np.abs(ens.column(n) - num) < 1e-9, 0.0, z)
                side_header += [f"{n}_master", f"{n}_trajectories", f"{n}_z"]
                side_cols += [num, ens.column(n), z]
                ok += int(np.sum(z <= z_tol))
                total += len(z)
                worst = max(worst, float(np.nanmax(z)))
            f = ok / total
            summary.append({"check": kind, "value": f, "tol": frac, "max_z": worst, "pass": f >= frac})
        else:
            raise ConfigError(f"compare: unknown check {kind!r}")
    rows = [[c[i] for c in side_cols] for i in range(len(t))]
    write_csv(out / f"{cfg.output_path}_compare.csv", _manifest_lines(cfg, "compare"), side_header, rows)
    all_ok = all(s["pass"] for s in summary)
    report = {"pass": all_ok, "checks": summary}
    (out / f"{cfg.output_path}_compare_summary.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=float) + "\n"
    )
    for s in summary:
        print(f"{s['check']}: value={s['value']:.6g} tol={s['tol']:.6g} {'PASS' if s['pass'] else 'FAIL'}")
    if not all_ok:
        failed = ", ".join(s["check"] for s in summary if not s["pass"])
        raise ToleranceFailure(f"tolerance failures: {failed}")
    return EXIT_OK


def cmd_basis(cfg: ExperimentConfig, out: Path) -> int:
    space = cfg.space()
    rows = []
    for b in space.sectors:
        for a in b.manifold_labels:
            rows.append([b.N, a, int((b.labels == a).sum()), len(b)])
    write_csv(out / f"{cfg.output_path}_basis.csv", _manifest_lines(cfg, "basis"),
              ["N", "a", "manifold_dim", "sector_dim"], rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["N", "a", "manifold_dim", "sector_dim"])
    for r in rows:
        w.writerow(r)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transmon-open", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("evolve", "master-equation or trajectory time series"),
        ("predict", "analytic rates and population series"),
        ("compare", "numerics against predictions with pass/fail summary"),
        ("basis", "sector and manifold inventory"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path, metavar="PATH")
        sp.add_argument("--out", type=Path, default=Path("."), metavar="DIR")
        sp.add_argument("--threads", type=int, default=1, metavar="INT", help="0 = one per CPU")
        sp.add_argument("--seed", type=int, default=None, metavar="INT", help="overrides the config seed")
        sp.add_argument("--trajectories", type=int, default=None, metavar="INT",
                        help="run the trajectory ensemble with this many trajectories")
        sp.add_argument("--postselect-N", dest="postselect_N", type=int, default=None, metavar="INT")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.trajectories is not None:
            if args.trajectories < 1:
                raise ConfigError("--trajectories must be >= 1")
            cfg.n_traj = args.trajectories
            cfg.method = "trajectories"
        if args.postselect_N is not None:
            cfg.postselect_N = args.postselect_N
        if args.threads < 0:
            raise ConfigError("--threads must be >= 0")
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "evolve":
            return cmd_evolve(cfg, args.out, args.threads)
        if args.command == "predict":
            return cmd_predict(cfg, args.out)
        if args.command == "compare":
            return cmd_compare(cfg, args.out, args.threads)
        return cmd_basis(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToleranceFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_TOLERANCE
    except (PositivityError, StepSizeError, PropagatorError, la.LinAlgError, FloatingPointError,
            RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
