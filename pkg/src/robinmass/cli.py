"""Command-line front end: ``robinmass <subcommand> [--config c.json] [--out prefix]``.

Every run writes CSV tables ``<prefix>_<name>.csv`` and a manifest ``<prefix>_manifest.json``.
Exit codes: 0 ok, 2 schema/config error, 3 numeric tolerance failure, 4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time

EXIT_OK, EXIT_SCHEMA, EXIT_TOLERANCE, EXIT_ORACLE = 0, 2, 3, 4
SUBCOMMANDS = ("spectrum", "robin", "scattering", "det-ratio", "zeta1", "ricci-flow", "verify")

DEFAULT_TORUS = {"surface": {"kind": "FlatTorus", "tau": [0.0, 1.0]}, "bundle": {"kind": "TorusSpin", "spin": [-1, -1]}}
DEFAULT_SPHERE = {"surface": {"kind": "ConformalSphere", "log_rho_perturbation": None}, "bundle": {"kind": "Trivial"}}

NUMERIC_DEFAULTS = {
    "spectrum": {"cutoff": 2000.0, "validate": True},
    "robin": {"method": "all", "point": [0.13, 0.21], "cutoff": 20000.0, "galerkin_modes": 16},
    "scattering": {"lambda_min": -1e5, "lambda_max": -1e2, "count": 40, "cutoff": 2e5, "alpha": None, "n_pseudo": 50},
    "det-ratio": {"alpha": -math.pi / 4, "epsilons": [0.5, 1.0, 2.0, 5.0], "cutoff": 2e5},
    "zeta1": {"cutoff": 20000.0, "nlat": 64},
    "ricci-flow": {"t_end": 0.8, "nlat": 64, "dt": None, "record_every": 20},
    "verify": {"groups": None},
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------------------- config


def build_config(sub: str, raw: dict | None, method: str | None = None) -> dict:
    """Fill defaults and validate the top-level layout; surface and bundle objects are checked later."""
    from .errors import SchemaError

    raw = dict(raw or {})
    extra = set(raw) - {"subcommand", "surface", "bundle", "numeric"}
    if extra:
        raise SchemaError(f"unknown config fields {sorted(extra)}")
    if raw.get("subcommand", sub) != sub:
        raise SchemaError(f"config is for {raw['subcommand']!r}, not {sub!r}")
    base = DEFAULT_SPHERE if sub == "ricci-flow" else DEFAULT_TORUS
    numeric = dict(NUMERIC_DEFAULTS[sub])
    given = raw.get("numeric", {})
    if not isinstance(given, dict):
        raise SchemaError("numeric must be an object")
    unknown = set(given) - set(numeric)
    if unknown:
        raise SchemaError(f"unknown numeric fields for {sub}: {sorted(unknown)}")
    numeric.update(given)
    if method is not None:
        numeric["method"] = method
    cfg = {"subcommand": sub, "surface": raw.get("surface", base["surface"]), "bundle": raw.get("bundle", base["bundle"]), "numeric": numeric}
    return json.loads(json.dumps(cfg))


def _specs(cfg):
    from .geometry import BundleSpec, SurfaceSpec, canonical_sphere_perturbation

    sd = dict(cfg["surface"])
    if sd.get("kind") == "ConformalSphere" and sd.get("log_rho_perturbation") is None:
        sd["log_rho_perturbation"] = [list(r) for r in canonical_sphere_perturbation()]
        cfg["surface"] = sd
    return SurfaceSpec.from_dict(sd), BundleSpec.from_dict(cfg["bundle"])


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ----------------------------------------------------------------------------- output


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.16e}"
    return v


def write_table(path: str, header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    _atomic_write(path, buf.getvalue())


# ----------------------------------------------------------------------------- subcommands


def _torus_es(surface, bundle, cutoff, validate=False):
    from .errors import DomainError
    from .spectral import torus_spin_spectrum

    if not surface.is_flat or bundle.log_h_perturbation:
        raise DomainError("this subcommand needs a flat torus bundle")
    return torus_spin_spectrum(surface.tau, bundle.signs, cutoff, validate=validate)


def cmd_spectrum(cfg, surface, bundle, out, scale):
    es = _torus_es(surface, bundle, cfg["numeric"]["cutoff"], bool(cfg["numeric"]["validate"]))
    rows = [(i, float(l), float(p), float(q), "FlatTorusModes", float(es.max_residual)) for i, (l, p, q) in enumerate(zip(es.lam, es.p, es.q))]
    path = out + "_spectrum.csv"
    write_table(path, ["index", "lambda", "p", "q", "method", "max_grid_residual"], rows)
    return [path], EXIT_OK, {"modes": len(rows)}


def _robin_rows(cfg, surface, bundle):
    import numpy as np

    from .errors import DomainError
    from .green import (
        closed_form_mean,
        conformal_robin_shift,
        robin_from_green,
        robin_regularized,
        robin_theta_table,
        scalar_robin_mass,
        sphere_spinor_green,
        torus_green,
    )
    from .spectral import galerkin_build, galerkin_robin, spectral_robin, torus_spin_spectrum

    num = cfg["numeric"]
    y = complex(*num["point"])
    want = num["method"]
    res = []  # (method, value, error)
    if surface.is_torus:
        tau = surface.tau
        s = bundle.signs
        scalar = s == (1, 1)
        if surface.log_rho_perturbation:
            raise DomainError("robin on a torus supports log h perturbations (flat metric) only")
        if bundle.log_h_perturbation:
            if want in ("all", "ConformalShift"):
                r = conformal_robin_shift(s, tau, y, log_h_table=bundle.log_h_perturbation)
                res.append(("ConformalShift", r.value, r.error_estimate))
            if want in ("all", "SpectralFit"):
                op = galerkin_build(surface, bundle, int(num["galerkin_modes"]))
                g = galerkin_robin(op, y)
                res.append(("SpectralFit", float(np.real(g.value)), g.error_estimate))
        else:
            c = closed_form_mean(tau) if scalar else 0.0
            if want in ("all", "ThetaTable"):
                val = scalar_robin_mass(tau) if scalar else robin_theta_table(s, tau).value
                res.append(("ThetaTable", val, 1e-15))
            if want in ("all", "NearDiagonalFit"):
                r = robin_from_green(lambda x: torus_green(s, x - y, tau) - c, 1.0, 1.0, y)
                res.append(("NearDiagonalFit", r.value, r.error_estimate))
            if want in ("all", "RegularizedIntegral") and not scalar:
                r = robin_regularized(s, y, tau)
                res.append(("RegularizedIntegral", r.value, r.error_estimate))
            if want in ("all", "SpectralFit"):
                es = torus_spin_spectrum(tau, s, num["cutoff"], validate=False)
                g = spectral_robin(es)
                res.append(("SpectralFit", g.value, g.error_estimate))
    else:
        if surface.kind != "RoundSphere" or bundle.kind != "SphereSpin":
            raise DomainError("robin on a sphere supports the round spinor bundle; use zeta1 for the scalar field")
        if want in ("all", "NearDiagonalFit") and y == 0:
            # closed form G(x, 0) is available at the origin of the chart (rho = h = 1 there)
            r = robin_from_green(sphere_spinor_green, 1.0, 1.0, 0.0)
            res.append(("NearDiagonalFit", r.value, r.error_estimate))
        if want in ("all", "RegularizedIntegral"):
            r = robin_regularized("sphere", y)
            res.append(("RegularizedIntegral", r.value, r.error_estimate))
    if not res:
        raise DomainError(f"method {want!r} is not available for this surface/bundle")
    return res


def cmd_robin(cfg, surface, bundle, out, scale):
    res = _robin_rows(cfg, surface, bundle)
    y = cfg["numeric"]["point"]
    path = out + "_robin.csv"
    write_table(path, ["method", "robin_mass", "error_estimate", "point_re", "point_im"], [(m, float(v), float(e), float(y[0]), float(y[1])) for m, v, e in res])
    slack = 1e-8 * scale
    worst = 0.0
    for i in range(len(res)):
        for j in range(i + 1, len(res)):
            worst = max(worst, abs(res[i][1] - res[j][1]) - res[i][2] - res[j][2])
    code = EXIT_ORACLE if worst > slack else EXIT_OK
    return [path], code, {"max_excess_disagreement": worst, "slack": slack}


def cmd_scattering(cfg, surface, bundle, out, scale):
    import numpy as np

    from .scattering import _T_alt, fay_fit, pseudo_spectrum, scattering_curve

    num = cfg["numeric"]
    es = _torus_es(surface, bundle, num["cutoff"])
    lo, hi = -float(num["lambda_min"]), -float(num["lambda_max"])
    lams = -np.logspace(np.log10(hi), np.log10(lo), int(num["count"])) if num["lambda_max"] < 0 else np.linspace(num["lambda_min"], num["lambda_max"], int(num["count"]))
    cv = scattering_curve(es, lams)
    paths = [out + "_scattering.csv"]
    # error estimate: gap to an independent Ewald split at half the split time
    errs = [abs(float(t) - _T_alt(es, float(l))) for l, t in zip(cv.lam, cv.T)]
    write_table(paths[0], ["lambda", "T", "dT", "error_estimate", "method"], [(float(l), float(t), float(d), e, "Ewald") for l, t, d, e in zip(cv.lam, cv.T, cv.dT, errs)])
    info = {}
    if np.all(cv.lam < 0):
        fit = fay_fit(cv, tol=1e-6 * scale)
        paths.append(out + "_fay.csv")
        r = fit.residual
        write_table(paths[1], ["quantity", "value", "error_estimate", "method"], [("m", fit.m_est, r, "FayFit"), ("a0", fit.a0_est, r, "FayFit"), ("a_minus_1", fit.a_m1_est, r, "FayFit"), ("fit_residual", fit.residual, 0.0, "FayFit")])
    if num["alpha"] is not None:
        ps = pseudo_spectrum(es, 0.0, float(num["alpha"]), int(num["n_pseudo"]))
        p = out + "_pseudo_spectrum.csv"
        write_table(p, ["index", "mu", "secular_residual", "method"], [(i, float(m), float(r), "SecularEquation") for i, (m, r) in enumerate(zip(ps.eigenvalues, ps.secular_residuals))])
        paths.append(p)
        info["interlaces"] = ps.interlaces(es.lam)
        info["n_below"] = ps.n_below
        if not info["interlaces"] or ps.n_below != 1:
            return paths, EXIT_ORACLE, info
        if ps.secular_residuals.max() > 1e-8 * scale:
            return paths, EXIT_TOLERANCE, info
    return paths, EXIT_OK, info


def cmd_det_ratio(cfg, surface, bundle, out, scale):
    from .scattering import det_ratio, det_ratio_contour

    import numpy as np

    num = cfg["numeric"]
    es = _torus_es(surface, bundle, num["cutoff"])
    a = float(num["alpha"])
    closed = float(np.log(abs(det_ratio(a))))
    rows = []
    for e in num["epsilons"]:
        cf = det_ratio_contour(es, 0.0, a, float(e))
        rows.append((float(e), cf.value, closed, abs(cf.value - closed), "EpsilonContour"))
    path = out + "_det_ratio.csv"
    write_table(path, ["epsilon", "log_det_ratio", "closed_form", "abs_gap", "method"], rows)
    worst = max(r[3] for r in rows)
    return [path], (EXIT_ORACLE if worst > 1e-3 * scale else EXIT_OK), {"max_gap": worst}


def cmd_zeta1(cfg, surface, bundle, out, scale):
    import numpy as np

    from .green import robin_theta_table, scalar_robin_mass
    from .special_fn import EULER_GAMMA
    from .spectral import zeta_reg1

    num = cfg["numeric"]
    path = out + "_zeta1.csv"
    if surface.is_torus:
        es = _torus_es(surface, bundle, num["cutoff"])
        z = zeta_reg1(es)
        m = scalar_robin_mass(surface.tau) if es.has_kernel else robin_theta_table(bundle.signs, surface.tau).value
        A = es.area
        ref = A * m + (EULER_GAMMA - np.log(2)) * A / (2 * np.pi)
        rows = [("SpectralZeta", z.value, z.truncation_error_estimate), ("RobinMassRelation", float(ref), 1e-15)]
        gap = abs(z.value - ref)
        tol = 1e-5 * scale
    else:
        from .ricci import initial_state, mean_robin, round_sphere_zeta1_lsum, zeta1_track

        st = initial_state(surface, int(num["nlat"]))
        mean = mean_robin(st)
        rows = [("RobinMassRelation", zeta1_track(st, mean), 0.0)]
        gap = 0.0
        tol = 1e-8 * scale
        if not surface.log_rho_perturbation:
            ref = round_sphere_zeta1_lsum()
            rows.append(("RoundSpectrumSum", ref, 1e-10))
            gap = abs(rows[0][1] - ref)
    write_table(path, ["method", "zeta1", "error_estimate"], rows)
    return [path], (EXIT_ORACLE if gap > tol else EXIT_OK), {"gap": gap}


def cmd_ricci(cfg, surface, bundle, out, scale):
    from .ricci import monotonicity_report, run_flow

    num = cfg["numeric"]
    tr = run_flow(surface, float(num["t_end"]), int(num["nlat"]), num["dt"], int(num["record_every"]))
    path = out + "_ricci_flow.csv"
    tr.write_csv(path)
    v = monotonicity_report(tr, drift_rtol=0.05 * scale)
    info = {"non_increasing": v.non_increasing, "drift_gap": v.drift_gap, "final_curvature_deviation": v.final_deviation, "final_mean_gap": v.final_mean_gap, "zeta_decreased": v.zeta_decreased}
    code = EXIT_OK if v.passed else EXIT_ORACLE
    return [path], code, info


def cmd_verify(cfg, surface, bundle, out, scale):
    from .verify import run_suite

    rows = run_suite(cfg["numeric"]["groups"], scale)
    path = out + "_verify.csv"
    write_table(path, ["identity", "measured", "tolerance", "passed", "kind", "detail"], [(r.label, r.value, r.tolerance, r.passed, r.kind, r.detail) for r in rows])
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.label:45s} {r.value:.3e}  (tol {r.tolerance:.1e})")
    failed = [r for r in rows if not r.passed]
    code = EXIT_OK
    if any(r.kind == "oracle" for r in failed):
        code = EXIT_ORACLE
    elif failed:
        code = EXIT_TOLERANCE
    return [path], code, {"checks": len(rows), "failed": [r.label for r in failed]}


COMMANDS = {
    "spectrum": cmd_spectrum,
    "robin": cmd_robin,
    "scattering": cmd_scattering,
    "det-ratio": cmd_det_ratio,
    "zeta1": cmd_zeta1,
    "ricci-flow": cmd_ricci,
    "verify": cmd_verify,
}


# ----------------------------------------------------------------------------- entry point


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robinmass", description="Robin masses, zeta values and determinant ratios on tori and spheres.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON config with optional surface, bundle and numeric objects")
    p.add_argument("--out", help="output path prefix (default ./robinmass_out/<subcommand>)")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    p.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply all acceptance tolerances")
    p.add_argument("--method", default=None, help="robin: ThetaTable, NearDiagonalFit, RegularizedIntegral, ConformalShift, SpectralFit or all")
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise CliError(EXIT_SCHEMA, "--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    sub = args.subcommand
    out = args.out or os.path.join("robinmass_out", sub)
    manifest = {"subcommand": sub, "argv": list(argv) if argv is not None else sys.argv[1:], "outputs": []}
    start = time.perf_counter()
    code = EXIT_OK
    try:
        _set_threads(args.threads)
        if args.tolerance_scale <= 0:
            raise CliError(EXIT_SCHEMA, "--tolerance-scale must be positive")
        from .errors import BranchError, ConvergenceError, DomainError, SchemaError, TruncationError

        try:
            raw = None
            if args.config:
                with open(args.config) as fh:
                    raw = json.load(fh)
            cfg = build_config(sub, raw, args.method)
            surface, bundle = _specs(cfg)
        except (SchemaError, DomainError, json.JSONDecodeError, OSError, TypeError, ValueError) as exc:
            raise CliError(EXIT_SCHEMA, f"config error: {exc}") from exc
        manifest["config"] = cfg
        manifest["config_hash"] = config_hash(cfg)
        try:
            paths, code, info = COMMANDS[sub](cfg, surface, bundle, out, args.tolerance_scale)
        except (SchemaError, DomainError, BranchError) as exc:
            raise CliError(EXIT_SCHEMA, f"invalid input: {exc}") from exc
        except (ConvergenceError, TruncationError) as exc:
            raise CliError(EXIT_TOLERANCE, f"tolerance not met: {exc}") from exc
        manifest["outputs"] = paths
        manifest["result"] = info
    except CliError as exc:
        print(f"robinmass {sub}: {exc}", file=sys.stderr)
        code = exc.code
        manifest["error"] = str(exc)
    manifest["exit_code"] = code
    manifest["seconds"] = time.perf_counter() - start
    manifest["versions"] = _versions()
    manifest["threads"] = args.threads
    manifest["tolerance_scale"] = args.tolerance_scale
    _atomic_write(out + "_manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return code


def _versions():
    v = {"python": platform.python_version()}
    for mod in ("numpy", "scipy"):
        try:
            v[mod] = __import__(mod).__version__
        except ImportError:  # pragma: no cover
            v[mod] = None
    from . import __version__

    v["robinmass"] = __version__
    return v


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
