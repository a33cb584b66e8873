"""``impedlab`` command line: solve, farfield, reconstruct, verify, sweep, oracle-compare.

Every command reads one JSON config and writes under ``--out``; the
``manifest.json`` at the root lists each output file with its SHA-256.
Numerics are imported lazily so that thread limits are in place first.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigInvalid, ImpedlabError, StageFailed

VERIFY_CHOICES = ("lowerbound", "vdoubling", "sdoubling", "threespheres", "ap", "psi0")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------
def fmt(x):
    """17 significant digits, so values round-trip exactly."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool,)):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def _atomic_write(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    return obj


class Run:
    """Output directory, stage timings and the file registry behind ``manifest.json``."""

    def __init__(self, out, config, command):
        self.out = Path(out)
        self.config = config
        self.command = command
        self.files = {}
        self.timings = {}
        self.derived = {}

    def write_csv(self, name, header, rows):
        lines = [",".join(header)]
        lines += [",".join(fmt(v) for v in row) for row in rows]
        self._register(name, ("\n".join(lines) + "\n").encode())

    def write_json(self, name, payload):
        text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
        self._register(name, text.encode())

    def _register(self, name, data):
        _atomic_write(self.out / name, data)
        self.files[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except ImpedlabError as exc:
            raise StageFailed(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0

    def finish(self):
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.config.model_dump(mode="json"),
            "timings": self.timings,
            "outputs": dict(sorted(self.files.items())),
            "derived": self.derived,
        }
        data = (json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n").encode()
        _atomic_write(self.out / "manifest.json", data)


# ---------------------------------------------------------------------------
# Builders shared by the commands
# ---------------------------------------------------------------------------
def _problem(cfg):
    from .geometry import CoatingPartition, build_impedance, build_quadrature, build_surface
    from .scatter import WaveConfig

    surface = build_surface(cfg.surface.model_dump())
    partition = CoatingPartition(cfg.partition.kind, cfg.partition.cap_angle)
    impedance = build_impedance(cfg.impedance.model_dump(), surface, partition)
    mesh = build_quadrature(surface, partition, (cfg.mesh.n_theta, cfg.mesh.n_phi),
                            grading=cfg.mesh.grading)
    wave = WaveConfig(cfg.wave.k, cfg.wave.direction)
    return surface, partition, impedance, mesh, wave


def _oracle(cfg, surface, partition, impedance, wave, mesh=None, lam=None):
    """Series solution when the configuration is a fully coated sphere with constant impedance."""
    from .scatter import sphere_series

    if not (surface.is_sphere and not partition.has_dirichlet and impedance.model == "constant"):
        return None
    lam = impedance.parameters[0] if lam is None else lam
    return sphere_series(wave, surface.base, lam, mesh=mesh)


def _far_data(run, cfg, surface, partition, impedance, mesh, wave):
    from .scatter import eval_far_field, solve_direct_bie
    from .specfun import SphereGrid

    grid = SphereGrid.gauss(*cfg.inverse.far_grid)
    src = _oracle(cfg, surface, partition, impedance, wave) if cfg.inverse.data == "series" else None
    if src is None:
        with run.stage("forward"):
            src = solve_direct_bie(mesh, wave, impedance, method=cfg.mesh.method)
    with run.stage("farfield"):
        return eval_far_field(src, grid)


def _trace_rows(mesh, u, dnu):
    th, ph = mesh.theta, mesh.phi
    return [
        (a, b, x[0], x[1], x[2], p.real, p.imag, q.real, q.imag, tag)
        for a, b, x, p, q, tag in zip(th, ph, mesh.nodes, u, dnu, mesh.region_tags)
    ]


TRACE_HEADER = ("theta", "phi", "x", "y", "z", "u_re", "u_im", "dnu_re", "dnu_im", "region")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_solve(cfg, run):
    from .scatter import boundary_residuals, solve_direct_bie

    surface, partition, impedance, mesh, wave = _problem(cfg)
    with run.stage("solve"):
        sol = solve_direct_bie(mesh, wave, impedance, method=cfg.mesh.method)
    with run.stage("residuals"):
        res = boundary_residuals(sol, impedance)
    run.write_csv("trace.csv", TRACE_HEADER, _trace_rows(mesh, sol.u, sol.dnu))
    record = {
        "kind": sol.kind,
        "k": wave.k,
        "direction": list(wave.omega),
        "n_nodes": mesh.size,
        "condition": sol.condition,
        "diagnostics": sol.diagnostics,
        "residuals": res,
        "density_re": sol.density.real if sol.density is not None else None,
        "density_im": sol.density.imag if sol.density is not None else None,
    }
    run.write_json("solution.json", record)
    run.derived["condition"] = sol.condition
    return 0


def _pattern_rows(pattern):
    g = pattern.grid
    return [(t, p, v.real, v.imag) for t, p, v in zip(g.theta, g.phi, pattern.values)]


def cmd_farfield(cfg, run):
    from .scatter import eval_far_field, solve_direct_bie
    from .specfun import SphereGrid

    surface, partition, impedance, mesh, wave = _problem(cfg)
    with run.stage("solve"):
        sol = solve_direct_bie(mesh, wave, impedance, method=cfg.mesh.method)
    with run.stage("farfield"):
        pattern = eval_far_field(sol, SphereGrid.gauss(*cfg.inverse.far_grid))
    run.write_csv("farfield.csv", ("theta", "phi", "re", "im"), _pattern_rows(pattern))
    return 0


def _reconstruct_once(cfg, pattern, mesh, wave, eps, seed):
    from .inverse import add_noise, reconstruct

    data = add_noise(pattern, eps, seed) if eps > 0 else pattern
    inv = cfg.inverse
    return reconstruct(data, mesh, wave, inv.R1, rho=inv.rho, gamma_in=inv.gamma_in,
                       n_sources=inv.n_sources, tau=inv.tau, truncation=inv.truncation)


def cmd_reconstruct(cfg, run):
    from .inverse import impedance_error

    surface, partition, impedance, mesh, wave = _problem(cfg)
    pattern = _far_data(run, cfg, surface, partition, impedance, mesh, wave)
    with run.stage("reconstruct"):
        near, trace, res = _reconstruct_once(cfg, pattern, mesh, wave, cfg.inverse.noise, cfg.seed)
    true = impedance.values_at(res.directions)
    err = impedance_error(impedance, res, "sup")
    rows = [
        (a, b, lt, lh if m else "nan", int(m), au)
        for a, b, lt, lh, au, m in zip(mesh.theta, mesh.phi, true, res.lambda_hat, res.abs_u,
                                       res.mask)
    ]
    run.write_csv("reconstruction.csv",
                  ("theta", "phi", "lambda_true", "lambda_hat", "trusted", "abs_u"), rows)
    summary = {
        "sup_error": err,
        "L2_error": impedance_error(impedance, res, "L2"),
        "pass": err < cfg.inverse.tolerance,
        "truncation_order": near.n_used,
        "near_error_estimate": near.error_estimate,
        "tau": res.tau,
        "trusted_fraction": float(res.mask.mean()),
        "imag_max": res.imag_max,
        "fit": trace.diagnostics,
    }
    run.write_json("reconstruction.json", summary)
    run.derived.update(sup_error=err, truncation_order=near.n_used)
    return 0


def cmd_sweep(cfg, run):
    import numpy as np

    from .errors import AllMasked
    from .inverse import impedance_error
    from .quantlab import fit_stability

    surface, partition, impedance, mesh, wave = _problem(cfg)
    pattern = _far_data(run, cfg, surface, partition, impedance, mesh, wave)
    rows, medians = [], []
    with run.stage("sweep"):
        for eps in cfg.sweep.eps:
            errs = []
            for s in range(cfg.sweep.seeds):
                seed = (cfg.seed, s)
                try:
                    near, _, res = _reconstruct_once(cfg, pattern, mesh, wave, eps, seed)
                    err, n_used, frac = impedance_error(impedance, res), near.n_used, res.mask.mean()
                except AllMasked:
                    err, n_used, frac = math.inf, -1, 0.0
                errs.append(err)
                rows.append((eps, s, err, n_used, frac))
            medians.append(float(np.median(errs)))
    run.write_csv("sweep.csv", ("eps", "seed", "sup_error", "truncation_order", "trusted_fraction"),
                  rows)
    with run.stage("fit"):
        fit = fit_stability(zip(cfg.sweep.eps, medians))
    monotone = all(a >= b for a, b in zip(fit.err[::-1], fit.err[::-1][1:]))
    summary = dict(fit.summary(), eps=fit.eps, median_error=fit.err,
                   median_non_increasing=monotone, power_gain_below_2=fit.power_gain <= 2.0)
    run.write_json("fit.json", summary)
    run.derived.update(theta_hat=fit.theta, C_hat=fit.C)
    return 0


def cmd_oracle_compare(cfg, run):
    import numpy as np

    from .scatter import eval_far_field, l2_sphere_norm, solve_direct_bie
    from .specfun import SphereGrid

    surface, partition, impedance, mesh, wave = _problem(cfg)
    ref = _oracle(cfg, surface, partition, impedance, wave)
    if ref is None:
        raise ConfigInvalid("oracle-compare needs a fully coated sphere with constant impedance")
    grid = SphereGrid.gauss(*cfg.inverse.far_grid)
    with run.stage("solve"):
        sol = solve_direct_bie(mesh, wave, impedance, method=cfg.mesh.method)
    a, b = eval_far_field(sol, grid), eval_far_field(ref, grid)
    rel = l2_sphere_norm(a, b) / l2_sphere_norm(b)
    ref_nodes = _oracle(cfg, surface, partition, impedance, wave, mesh=mesh)
    summary = {
        "far_field_rel_L2": rel,
        "far_field_max_abs": float(np.max(np.abs(a.values - b.values))),
        "trace_u_max_abs": float(np.max(np.abs(sol.u - ref_nodes.u))),
        "trace_dnu_max_abs": float(np.max(np.abs(sol.dnu - ref_nodes.dnu))),
        "condition": sol.condition,
        "n_nodes": mesh.size,
    }
    rows = [(t, p, x.real, x.imag, y.real, y.imag)
            for t, p, x, y in zip(grid.theta, grid.phi, a.values, b.values)]
    run.write_csv("oracle_compare.csv", ("theta", "phi", "bie_re", "bie_im", "series_re",
                                         "series_im"), rows)
    run.write_json("oracle_compare.json", summary)
    run.derived["far_field_rel_L2"] = rel
    return 0


def _verify_field(cfg, run):
    surface, partition, impedance, mesh, wave = _problem(cfg)
    sol = _oracle(cfg, surface, partition, impedance, wave)
    if sol is None:
        from .scatter import solve_direct_bie

        with run.stage("solve"):
            sol = solve_direct_bie(mesh, wave, impedance, method=cfg.mesh.method)
    return surface, partition, impedance, mesh, wave, sol


def cmd_verify(cfg, run, which):
    from . import quantlab as ql

    ch = cfg.checks
    if which == "psi0":
        rows, ok = [], True
        with run.stage("psi0"):
            for k, lam in ch.psi0_cases:
                r = ql.psi0_residual(k, lam, n_points=ch.psi0_points, seed=cfg.seed)
                passed = (r.pde_residual < ch.psi0_tol and r.bc_residual < ch.psi0_tol
                          and r.pde_residual_fd < ch.psi0_fd_tol
                          and r.bc_residual_fd < ch.psi0_fd_tol and r.min_abs >= 2.0)
                ok &= passed
                rows.append((k, lam, r.case, r.radius, r.pde_residual, r.bc_residual,
                             r.pde_residual_fd, r.bc_residual_fd, r.min_abs, int(passed)))
        run.write_csv("psi0.csv", ("k", "lambda", "case", "radius", "pde", "bc", "pde_fd",
                                   "bc_fd", "min_abs", "pass"), rows)
        run.write_json("psi0.json", {"pass": ok})
        return 0 if ok else 1

    surface, partition, impedance, mesh, wave, sol = _verify_field(cfg, run)
    with run.stage(which):
        if which == "lowerbound":
            rep = ql.check_lower_bound(sol, ch.radii, n_samples=ch.sphere_samples)
            summary = {"R0_hat": rep.R0_hat, "pass": math.isfinite(rep.R0_hat)}
            run.derived["R0_hat"] = rep.R0_hat
        elif which == "vdoubling":
            rep = ql.check_volume_doubling(sol, ch.centers, ch.rho, ch.beta, n_volume=ch.n_volume,
                                           seed=cfg.seed)
            summary = {"K_hat": rep.K, "C_hat": rep.C, "min_ratio": min(rep.ratios),
                       "pass": bool(min(rep.ratios) >= 1.0 and math.isfinite(rep.K))}
            run.derived.update(K_hat=rep.K, C_hat=rep.C)
        elif which == "sdoubling":
            rep = ql.check_surface_doubling(sol, ch.centers, ch.surface_r)
            summary = {"C_hat": rep.C, "min_ratio": min(rep.ratios),
                       "pass": bool(min(rep.ratios) >= 1.0 and math.isfinite(rep.C))}
            run.derived["C_surface_hat"] = rep.C
        elif which == "threespheres":
            other = _oracle(cfg, surface, partition, impedance, wave, lam=ch.second_impedance)
            if other is None:
                raise ConfigInvalid("threespheres needs the sphere oracle configuration")
            from .scatter import eval_field

            def U(p):
                return eval_field(sol, p) - eval_field(other, p)

            rep = ql.check_three_spheres(U, ch.three_spheres_centers, ch.three_spheres_rho,
                                         ch.beta1, ch.beta2, surface=surface,
                                         n_samples=ch.n_volume, seed=cfg.seed)
            ok = bool(((rep.tau_hat > 0) & (rep.tau_hat < 1)).all())
            summary = {"tau_hat": rep.tau_hat, "defect": rep.defect, "pass": ok}
            run.derived["tau_hat"] = rep.tau_hat
        else:
            rep = ql.check_reverse_holder_ap(sol, ch.centers, ch.ap_r, p=ch.p)
            summary = {"smallest_p": rep.smallest_p, "pass": rep.smallest_p is not None}
            run.derived["p"] = rep.smallest_p
    rows = rep.rows()
    run.write_csv(f"{which}.csv", rows[0], rows[1:])
    run.write_json(f"{which}.json", summary)
    return 0 if summary["pass"] else 1


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------
def _parser():
    p = argparse.ArgumentParser(prog="impedlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"impedlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "farfield", "reconstruct", "verify", "sweep", "oracle-compare"):
        sp = sub.add_parser(name)
        if name == "verify":
            sp.add_argument("which", choices=VERIFY_CHOICES)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
    return p


def _set_threads(n):
    if n is None:
        env = os.environ.get("IMPEDLAB_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ConfigInvalid("--threads must be positive")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _error_record(exc):
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, StageFailed):
        rec["stage"] = exc.stage
        rec["cause"] = type(exc.cause).__name__
    return json.dumps(rec, sort_keys=True)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        run = Run(args.out, cfg, args.command)
        if args.command == "verify":
            status = cmd_verify(cfg, run, args.which)
        else:
            handler = {
                "solve": cmd_solve,
                "farfield": cmd_farfield,
                "reconstruct": cmd_reconstruct,
                "sweep": cmd_sweep,
                "oracle-compare": cmd_oracle_compare,
            }[args.command]
            status = handler(cfg, run)
        run.finish()
        return status
    except ImpedlabError as exc:
        print(_error_record(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
