"""Batch front end: config parsing, experiment orchestration, reports.

Configs are INI-style files (section headers, key = value lines) with
complex entries written as ``a+bi``; matrices list entries row by row with
``;`` between rows.  Every numeric in a report is produced by a module
operation; the CLI only collects.  Reports are JSON with a stable schema
version and deterministic content (the timestamp lives in a separate
``metadata`` field so byte comparisons can exclude it).

Exit codes: 0 success / converged, 2 mathematical non-convergence
(solution does not exist or was not reached), 1 bad input or numerical
failure.
"""

import argparse
import configparser
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bundle_metrics, flow_solvers, product_space, stability
from ._kernels import backend_name
from .errors import (
    ConfigError,
    NonConvergence,
    NonPositiveSigma,
    StepUnstable,
    VortexLabError,
)
from .flat_bundles import make_flat_bundle, make_flat_pair
from .torus_geometry import make_torus

SCHEMA_VERSION = "1.0.0"
SNAPSHOT_MAGIC = "VORTEXLAB-METRIC v1"

COMMANDS = ("degree", "stability", "solve-vortex", "solve-he",
            "verify-reduction", "selftest")

_ALLOWED_KEYS = {
    "manifold": {"n", "g", "N", "nu_coeff"},
    "bundle": {"phi"} | {f"rho{i}" for i in range(1, 5)},
    "run": {"command", "tau", "sigma", "dt", "max_iters", "tol",
            "stall_window", "checkpoint_every", "grid_degree", "h0"},
    "output": {"dir", "format"},
}


def report_schema_version():
    return SCHEMA_VERSION


# --- config parsing -----------------------------------------------------------


def _parse_complex(token):
    try:
        return complex(token.replace("i", "j"))
    except ValueError as exc:
        raise ConfigError(f"cannot parse complex number {token!r}") from exc


def _parse_complex_matrix(text, key):
    rows = [r.strip() for r in text.split(";") if r.strip()]
    mat = [[_parse_complex(tok) for tok in row.split()] for row in rows]
    widths = {len(r) for r in mat}
    if len(widths) != 1:
        raise ConfigError(f"ragged matrix in key {key!r}")
    return np.array(mat, dtype=complex)


def _parse_real_matrix(text, key):
    mat = _parse_complex_matrix(text, key)
    if np.abs(mat.imag).max() > 0:
        raise ConfigError(f"matrix {key!r} must be real")
    return mat.real


@dataclass
class ExperimentConfig:
    torus: object
    bundle: object
    pair: object  # None when no phi given
    command: str
    run: dict = field(default_factory=dict)
    out_dir: Path = Path("out")
    out_format: str = "json"


def parse_config(path):
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case: n and N are different fields
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if not read:
        raise ConfigError(f"config file {path!r} not found")
    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    try:
        man = parser["manifold"]
        n = man.getint("n")
        N = man.getint("N")
        g = _parse_real_matrix(man.get("g"), "g")
        nu = man.getfloat("nu_coeff", 1.0)
        torus = make_torus(n, g, N, nu)
    except (KeyError, ValueError, VortexLabError) as exc:
        raise ConfigError(f"[manifold]: {exc}") from exc

    try:
        bun = parser["bundle"]
        mats = []
        for i in range(1, 5):
            key = f"rho{i}"
            if key in bun:
                mats.append(_parse_complex_matrix(bun.get(key), key))
        if len(mats) != n:
            raise ConfigError(
                f"expected {n} monodromy matrices rho1..rho{n}, got {len(mats)}")
        phi_text = bun.get("phi", fallback=None)
        if phi_text is not None:
            phi = _parse_complex_matrix(phi_text, "phi").reshape(-1)
            pair = make_flat_pair(mats, phi)
            bundle = pair.bundle
        else:
            pair = None
            bundle = make_flat_bundle(mats)
    except (KeyError, ValueError, VortexLabError) as exc:
        raise ConfigError(f"[bundle]: {exc}") from exc

    run = {}
    if "run" in parser:
        sec = parser["run"]
        command = sec.get("command", fallback=None)
        for key in ("tau", "sigma", "dt", "tol"):
            if key in sec:
                run[key] = sec.getfloat(key)
        for key in ("max_iters", "stall_window", "checkpoint_every",
                    "grid_degree"):
            if key in sec:
                run[key] = sec.getint(key)
        if "h0" in sec:
            run["h0"] = sec.get("h0")
    else:
        command = None
    if command is not None and command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")

    out_dir = Path("out")
    out_format = "json"
    if "output" in parser:
        out_dir = Path(parser["output"].get("dir", "out"))
        out_format = parser["output"].get("format", "json")
        if out_format not in ("json", "csv"):
            raise ConfigError(f"unknown output format {out_format!r}")
    return ExperimentConfig(torus=torus, bundle=bundle, pair=pair,
                            command=command, run=run, out_dir=out_dir,
                            out_format=out_format)


# --- serialization helpers -------------------------------------------------------


def _matrix_to_json(mat):
    mat = np.asarray(mat, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in mat]


def _verdict_to_json(verdict):
    return {
        "verdict": verdict.verdict,
        "complete": bool(verdict.complete),
        "notes": list(verdict.notes),
        "witnesses": [
            {"basis": _matrix_to_json(sub.basis), "slope": float(mu)}
            for sub, mu in verdict.witnesses
        ],
    }


def save_metric_snapshot(path, metric):
    """Binary grid of matrices behind a small text header."""
    torus = metric.torus
    header = (f"{SNAPSHOT_MAGIC}\n"
              f"n={torus.n} N={torus.N} rank={metric.rank}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(metric.H, dtype=np.complex128).tobytes())


def load_metric_snapshot(path, bundle, torus):
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != SNAPSHOT_MAGIC:
            raise ConfigError(f"bad metric snapshot magic {magic!r}")
        fields = dict(tok.split("=") for tok in
                      fh.readline().decode("ascii").split())
        n, N, rank = int(fields["n"]), int(fields["N"]), int(fields["rank"])
        if (n, N, rank) != (torus.n, torus.N, bundle.rank):
            raise ConfigError(
                f"snapshot shape (n={n}, N={N}, rank={rank}) does not match "
                f"the configured problem")
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    H = data.reshape(torus.grid_shape + (rank, rank)).copy()
    return bundle_metrics.MetricField(bundle, torus, H)


def write_trace_csv(path, diag):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "sup_residual", "l2_residual"])
        for i, (s, l2) in enumerate(zip(diag.sup_trace, diag.l2_trace)):
            writer.writerow([i, repr(s), repr(l2)])


def _flatten(payload, prefix=""):
    for key in sorted(payload):
        val = payload[key]
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            yield from _flatten(val, f"{name}.")
        else:
            yield name, json.dumps(val, sort_keys=True)


def write_report(cfg, name, payload):
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    path = cfg.out_dir / f"{name}.json"
    with open(path, "w") as fh:
        json.dump({**payload,
                   "metadata": {"timestamp": time.time(),
                                "kernel_backend": backend_name()}},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    if cfg.out_format == "csv":
        with open(cfg.out_dir / f"{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "value"])
            for key, val in _flatten(payload):
                writer.writerow([key, val])
    return path


# --- command implementations -------------------------------------------------------


def _cmd_degree(cfg, rng):
    h1 = bundle_metrics.random_metric(cfg.bundle, cfg.torus,
                                      rng=rng.integers(2**31))
    h2 = bundle_metrics.random_metric(cfg.bundle, cfg.torus,
                                      rng=rng.integers(2**31))
    d1 = bundle_metrics.degree(cfg.bundle, cfg.torus, h1)
    d2 = bundle_metrics.degree(cfg.bundle, cfg.torus, h2)
    payload = {
        "command": "degree",
        "degree": d1,
        "slope": bundle_metrics.slope(cfg.bundle, cfg.torus, h1),
        "metric_independence_gap": abs(d1 - d2),
        "chern_trace_residual": bundle_metrics.chern_trace_check(h1, cfg.torus),
    }
    write_report(cfg, "degree", payload)
    return 0


def _cmd_stability(cfg, rng):
    payload = {
        "command": "stability",
        "stable": _verdict_to_json(stability.is_stable_flat(cfg.bundle,
                                                            cfg.torus)),
        "polystable": _verdict_to_json(
            stability.is_polystable_flat(cfg.bundle, cfg.torus)),
    }
    if cfg.pair is not None and "tau" in cfg.run:
        tau = cfg.run["tau"]
        tau_hat = 0.5 * tau * cfg.torus.volume
        payload["tau"] = tau
        payload["tau_hat"] = tau_hat
        payload["tau_stable"] = _verdict_to_json(
            stability.is_tau_stable(cfg.pair, tau_hat, cfg.torus))
        payload["tau_polystable"] = _verdict_to_json(
            stability.is_tau_polystable(cfg.pair, tau_hat, cfg.torus))
    write_report(cfg, "stability", payload)
    return 0


def _solver_config(cfg):
    kwargs = {}
    for key in ("dt", "max_iters", "tol", "stall_window", "checkpoint_every"):
        if key in cfg.run:
            kwargs[key] = cfg.run[key]
    return flow_solvers.SolverConfig(**kwargs)


def _checkpoint_writer(cfg, stem):
    def write(iteration, metric, diag):
        save_metric_snapshot(cfg.out_dir / f"{stem}_{iteration:06d}.metric",
                             metric)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return write


def _initial_metric(cfg):
    if "h0" in cfg.run:
        return load_metric_snapshot(cfg.run["h0"], cfg.bundle, cfg.torus)
    return None


def _cmd_solve_vortex(cfg, rng):
    if cfg.pair is None:
        raise ConfigError("solve-vortex requires phi in [bundle]")
    if "tau" not in cfg.run:
        raise ConfigError("solve-vortex requires tau in [run]")
    tau = cfg.run["tau"]
    tau_hat = 0.5 * tau * cfg.torus.volume
    solver_cfg = _solver_config(cfg)
    poly = stability.is_tau_polystable(cfg.pair, tau_hat, cfg.torus)
    payload = {
        "command": "solve-vortex",
        "tau": tau,
        "tau_hat": tau_hat,
        "tau_polystable": _verdict_to_json(poly),
        "solver": {"dt": solver_cfg.dt, "tol": solver_cfg.tol,
                   "max_iters": solver_cfg.max_iters,
                   "stall_window": solver_cfg.stall_window},
    }
    on_ckpt = (_checkpoint_writer(cfg, "vortex")
               if solver_cfg.checkpoint_every else None)
    try:
        metric, diag = flow_solvers.solve_vortex(
            cfg.pair, tau, cfg.torus, cfg=solver_cfg,
            h0=_initial_metric(cfg), on_checkpoint=on_ckpt)
        code = 0
    except NonConvergence as exc:
        diag = exc.diagnostics
        metric = diag.last_metric
        code = 2
    payload.update({
        "converged": diag.converged,
        "iterations": diag.iterations,
        "final_residual": diag.final_residual,
        "stop_reason": diag.stop_reason,
        "positivity_margin": diag.positivity_margin,
        "bradlow_gap": flow_solvers.bradlow_identity_gap(
            cfg.pair, metric, tau, cfg.torus),
    })
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(cfg.out_dir / "vortex_trace.csv", diag)
    save_metric_snapshot(cfg.out_dir / "vortex_final.metric", metric)
    write_report(cfg, "solve-vortex", payload)
    return code


def _cmd_solve_he(cfg, rng):
    solver_cfg = _solver_config(cfg)
    on_ckpt = (_checkpoint_writer(cfg, "he")
               if solver_cfg.checkpoint_every else None)
    gamma = flow_solvers.hermitian_einstein_gamma(cfg.bundle, cfg.torus)
    payload = {
        "command": "solve-he",
        "gamma": gamma,
        "polystable": _verdict_to_json(
            stability.is_polystable_flat(cfg.bundle, cfg.torus)),
    }
    try:
        metric, diag, _ = flow_solvers.solve_hermitian_einstein(
            cfg.bundle, cfg.torus, cfg=solver_cfg, h0=_initial_metric(cfg),
            on_checkpoint=on_ckpt)
        code = 0
    except NonConvergence as exc:
        diag = exc.diagnostics
        metric = diag.last_metric
        code = 2
    payload.update({
        "converged": diag.converged,
        "iterations": diag.iterations,
        "final_residual": diag.final_residual,
        "stop_reason": diag.stop_reason,
        "positivity_margin": diag.positivity_margin,
    })
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(cfg.out_dir / "he_trace.csv", diag)
    save_metric_snapshot(cfg.out_dir / "he_final.metric", metric)
    write_report(cfg, "solve-he", payload)
    return code


def _cmd_verify_reduction(cfg, rng):
    if cfg.pair is None or "tau" not in cfg.run:
        raise ConfigError("verify-reduction requires phi and tau")
    tau = cfg.run["tau"]
    if "sigma" in cfg.run:
        sigma = cfg.run["sigma"]
        tau_hat = 0.5 * tau * cfg.torus.volume
    else:
        try:
            sigma, tau_hat = product_space.sigma_from_tau(cfg.pair, tau,
                                                          cfg.torus)
        except NonPositiveSigma as exc:
            raise ConfigError(
                f"tau={tau} gives a non-positive sigma denominator "
                f"({exc.denominator})") from exc
    pg = product_space.make_projective_grid(cfg.run.get("grid_degree", 16))
    setup = product_space.ReductionSetup(
        torus=cfg.torus, pgrid=pg, pair=cfg.pair, sigma=sigma)
    solver_cfg = _solver_config(cfg)
    try:
        metric, diag = flow_solvers.solve_vortex(
            cfg.pair, tau, cfg.torus, cfg=solver_cfg,
            h0=_initial_metric(cfg))
        vortex_converged = True
    except NonConvergence as exc:
        diag = exc.diagnostics
        metric = diag.last_metric
        vortex_converged = False
    gamma, residual = product_space.he_residual_on_X(
        product_space.induced_metric_on_F(metric, setup), setup)
    deg_E = product_space.degree_sigma("pullback_E", setup, hE=metric)
    deg_V = product_space.degree_sigma("pullback_V", setup)
    deg_F = product_space.degree_sigma("F", setup, hE=metric)
    payload = {
        "command": "verify-reduction",
        "tau": tau,
        "tau_hat": tau_hat,
        "sigma": sigma,
        "gamma": gamma,
        "vortex_converged": vortex_converged,
        "vortex_residual": diag.final_residual,
        "he_residual": residual,
        "round_trip_error": float(np.abs(
            product_space.extract_phi(product_space.build_F(setup)).vector
            - cfg.pair.phi.vector).max()),
        "partial_curvature": product_space.partial_curvature(
            product_space.build_F(setup)),
        "degrees": {
            "pullback_E": deg_E,
            "pullback_V": deg_V,
            "F": deg_F,
            "additivity_gap": abs(deg_F - deg_E - deg_V),
        },
        "vol_X": product_space.volume_x(setup.geom, sigma),
        "calibration": {
            "alpha_scale": [float(np.real(setup.alpha_scale)),
                            float(np.imag(setup.alpha_scale))],
            "fs_block_scale": setup.fs_block_scale,
        },
    }
    write_report(cfg, "verify-reduction", payload)
    return 0 if vortex_converged else 2


def _cmd_selftest(cfg, rng):
    """Curated invariant battery over the built-in corpus; exit 0 when green."""
    from .torus_geometry import (
        del_,
        delbar,
        integrate,
        make_torus as _mk,
        random_form,
    )

    checks = []

    def check(name, value, tol):
        ok = value < tol
        checks.append((name, ok, value, tol))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (tol {tol:.1e})")

    for n in (1, 2):
        torus = _mk(n, np.eye(n), 32)
        f = random_form(torus, 0, 0, band=4, rng=rng.integers(2**31))
        anti = del_(delbar(f)) + delbar(del_(f))
        check(f"operator anticommutation T^{n}", anti.sup_norm(), 1e-10)
        chi = random_form(torus, n - 1, n, band=4, rng=rng.integers(2**31))
        check(f"stokes vanishing T^{n}", abs(integrate(del_(chi))), 1e-10)

    torus = _mk(1, [[1.0]], 32)
    for mats, label in [
        ([np.array([[2.0]])], "line"),
        ([np.array([[1.0, 1.0], [0.0, 1.0]])], "jordan"),
        ([np.diag([2.0, 3.0])], "diagonal"),
    ]:
        b = make_flat_bundle(mats)
        h = bundle_metrics.random_metric(b, torus, rng=rng.integers(2**31))
        check(f"degree vanishing ({label})",
              abs(bundle_metrics.degree(b, torus, h)), 1e-8)
        check(f"chern trace identity ({label})",
              bundle_metrics.chern_trace_check(h, torus), 1e-8)

    pair = make_flat_pair([np.eye(1)], [1.0])
    metric, diag = flow_solvers.solve_vortex(pair, 2.0, torus)
    check("trivial pair solve residual", diag.final_residual, 1e-8)
    check("trivial pair metric error", float(np.abs(metric.H - 2.0).max()),
          1e-6)
    check("bradlow identity gap",
          abs(flow_solvers.bradlow_identity_gap(pair, metric, 2.0, torus)),
          1e-8)

    pg = product_space.make_projective_grid(16)
    setup = product_space.ReductionSetup(torus=torus, pgrid=pg, pair=pair,
                                         sigma=2 * np.pi)
    data = product_space.build_F(setup)
    check("correspondence round trip",
          float(np.abs(product_space.extract_phi(data).vector
                       - pair.phi.vector).max()), 1e-12)
    check("partial connection flatness",
          product_space.partial_curvature(data), 1e-10)
    geom = setup.geom
    fx = product_space.random_product_form(geom, 1, 2,
                                           rng=rng.integers(2**31))
    integral, pointwise = product_space.int_parts_check(fx)
    check("integration by parts on X (integral)", integral, 1e-8)
    check("integration by parts on X (pointwise)", pointwise, 1e-8)

    failed = [c for c in checks if not c[1]]
    payload = {
        "command": "selftest",
        "checks": [{"name": name, "ok": ok, "value": val, "tol": tol}
                   for name, ok, val, tol in checks],
        "failed": len(failed),
    }
    write_report(cfg, "selftest", payload)
    return 0 if not failed else 1


_COMMANDS = {
    "degree": _cmd_degree,
    "stability": _cmd_stability,
    "solve-vortex": _cmd_solve_vortex,
    "solve-he": _cmd_solve_he,
    "verify-reduction": _cmd_verify_reduction,
    "selftest": _cmd_selftest,
}


def run(command, config, rng=None):
    """Execute one command against a parsed configuration; returns exit code."""
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    rng = rng or np.random.default_rng(0)
    return _COMMANDS[command](config, rng)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="vortexlab",
        description="pair and constant-curvature metric laboratory on flat "
                    "bundles over tori")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--format", choices=("json", "csv"), default=None)
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for randomized checks")
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--tol", type=float, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out_dir = Path(args.out)
        if args.format is not None:
            cfg.out_format = args.format
        if args.max_iters is not None:
            cfg.run["max_iters"] = args.max_iters
        if args.tol is not None:
            cfg.run["tol"] = args.tol
        command = args.command
        rng = np.random.default_rng(args.seed)
        return run(command, cfg, rng)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StepUnstable as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except VortexLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
