"""Configuration parsing, batch commands, and machine-readable outputs.

Configs are JSON (the one format that round-trips unambiguously and diffs
well in review): nested sections with the exact keys documented in
CONFIG_SCHEMA below. Unknown keys are rejected with their dotted path;
missing keys take defaults. Every command writes a run manifest (config
echo, versions, timings, residuals) plus CSV files with fixed headers,
and returns exit status 0 only when all requested residual thresholds
pass. Partial outputs of failed runs stay behind with a .partial suffix.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import __version__
from .scatterer import Shape, ScattererSpec, build_cell, q_transform
from .finite_solver import (
    WaveParams,
    solve_finite,
    field_eval,
    far_field,
    scattered_power,
    extinction,
    assemble_dense,
    ToeplitzScatterOperator,
)
from .bloch import channels, solve_bloch, channel_efficiencies
from .decomposition import (
    build_split,
    first_decomposition_residual,
    reconstruct_residual,
    t_eval,
)
from .numerics import contour_nodes, hankel0, dirichlet
from .poles import (
    bic_scan,
    find_pole,
    finite_indicator,
    infinite_indicator,
    sweep_N,
)

logger = logging.getLogger(__name__)

COMMANDS = ("solve", "decompose", "poles", "sweep", "bic", "validate")

# key -> (default, validator); nested dicts follow the same shape
CONFIG_SCHEMA = {
    "scatterer": {
        "shapes": None,  # list of shape dicts, validated separately
        "additive": False,
    },
    "wave": {"k": 3.0, "kx": 0.0},
    "N": 1,
    "N_list": [2, 4, 8, 16, 32],
    "resolution": [16, 16],
    "tolerances": {"krylov": 1e-10, "contour": 1e-9, "omega": 1e-4, "pole": 1e-8},
    "channels": 8,
    "kz_grid": {"K_max": None, "dt": 0.15, "n_channels": 5},
    "output": "runs/out",
    "solve": {"probe": [9, 9, 2.0, 2.0], "n_theta": 256},
    "decompose": {"K_x": 0.9, "n_samples": 10},
    "poles": {"seed_k2": [8.0, -0.5], "infinite": False, "sheet_flips": []},
    "sweep": {"seed_k2": [8.0, -0.5], "sheet_flips": []},
    "bic": {"h_range": [0.6, 2.0], "n_h": 12, "seed_k2": [8.0, -0.5],
            "radius": 0.25, "contrast": 5.0},
    "validate": {"fast": True},
}

_SHAPE_KEYS = {"kind", "center", "size", "contrast"}


class ConfigError(ValueError):
    """Configuration rejected; message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (plain data, defaults filled)."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def scatterer_spec(self) -> ScattererSpec:
        shapes = []
        for sh in self.data["scatterer"]["shapes"] or []:
            contrast = sh["contrast"]
            if isinstance(contrast, (list, tuple)):
                contrast = complex(contrast[0], contrast[1])
            size = sh["size"]
            shapes.append(
                Shape(sh["kind"], tuple(sh["center"]),
                      tuple(size) if isinstance(size, (list, tuple)) else float(size),
                      contrast)
            )
        return ScattererSpec(shapes, additive=self.data["scatterer"]["additive"])

    def wave(self) -> WaveParams:
        return WaveParams(self.data["wave"]["k"], self.data["wave"]["kx"])

    def grid(self):
        return build_cell(self.scatterer_spec(), tuple(self.data["resolution"]))

    def serialize(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def _validate_node(value, schema, path):
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        out = {}
        for key, sub in schema.items():
            child = f"{path}.{key}" if path else key
            if key in value:
                out[key] = _validate_node(value[key], sub, child)
            else:
                out[key] = json.loads(json.dumps(sub)) if isinstance(sub, (dict, list)) else sub
        for key in value:
            if key not in schema:
                raise ConfigError(f"unknown key {path + '.' if path else ''}{key}")
        return out
    return value


def _check_fields(data: dict):
    tol = data["tolerances"]
    for name, val in tol.items():
        if not (isinstance(val, (int, float)) and val > 0):
            raise ConfigError(f"tolerances.{name} must be positive")
    res = data["resolution"]
    if len(res) != 2 or any((not isinstance(r, int)) or r < 4 or r > 512 for r in res):
        raise ConfigError("resolution must be two integers in [4, 512]")
    if data["wave"]["k"] <= 0:
        raise ConfigError("wave.k must be positive")
    if data["channels"] < 1:
        raise ConfigError("channels must be at least 1")
    shapes = data["scatterer"]["shapes"]
    if shapes is not None:
        for i, sh in enumerate(shapes):
            if not isinstance(sh, dict) or not set(sh) <= _SHAPE_KEYS:
                extra = set(sh) - _SHAPE_KEYS if isinstance(sh, dict) else "?"
                raise ConfigError(f"scatterer.shapes[{i}]: unknown keys {extra}")
            for req in _SHAPE_KEYS:
                if req not in sh:
                    raise ConfigError(f"scatterer.shapes[{i}].{req} missing")


def parse_config(source: str) -> RunConfig:
    """Parse and validate a config from a path or a JSON string.

    Syntax errors surface with their line number; validation errors name
    the offending field. Defaults are filled so a minimal config (shapes,
    wave, N) is complete.
    """
    text = source
    if os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno}: {exc.msg}") from exc
    data = _validate_node(raw, CONFIG_SCHEMA, "")
    _check_fields(data)
    cfg = RunConfig(data)
    cfg.scatterer_spec()  # geometry validation
    return cfg


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


class _CsvWriter:
    """CSV writer that lands on .partial and renames on success."""

    def __init__(self, path: str, header: str, comment: str):
        self.path = path
        self.tmp = path + ".partial"
        self.fh = open(self.tmp, "w")
        self.fh.write(f"# {comment}\n")
        self.fh.write(header + "\n")

    def row(self, *vals):
        self.fh.write(",".join(_fmt(v) for v in vals) + "\n")

    def close(self, success: bool):
        self.fh.close()
        if success:
            os.replace(self.tmp, self.path)


def _write_manifest(outdir: str, cfg: RunConfig, command: str, t0: float,
                    extra: dict, success: bool):
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.data,
        "wall_time_s": time.perf_counter() - t0,
        "determinism": "fixed seeds, sequential reductions",
        "success": bool(success),
    }
    manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path + ".partial", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    os.replace(path + ".partial", path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_solve(cfg: RunConfig, outdir: str) -> dict:
    grid = cfg.grid()
    wave = cfg.wave()
    N = int(cfg["N"])
    sol = solve_finite(grid, wave, N, tol=cfg["tolerances"]["krylov"])
    nx, nz, xs, zs = cfg["solve"]["probe"]
    X, Z = np.meshgrid(np.linspace(-xs, xs, int(nx)), np.linspace(-zs, zs, int(nz)),
                       indexing="ij")
    pts = np.column_stack([X.ravel(), Z.ravel()])
    E = field_eval(sol, pts)
    w = _CsvWriter(os.path.join(outdir, "field.csv"), "x,z,re_E,im_E",
                   "total field E(x, z), dimensionless cell coordinates")
    for (x, z), e in zip(pts, E):
        w.row(x, z, e.real, e.imag)
    w.close(True)

    th = np.linspace(0.0, 2 * np.pi, int(cfg["solve"]["n_theta"]), endpoint=False)
    f = far_field(sol, th)
    w = _CsvWriter(os.path.join(outdir, "far_field.csv"), "theta,re_f,im_f",
                   "scattered amplitude f(theta): E_s ~ f e^{ikr}/sqrt(r)")
    for t, fv in zip(th, f):
        w.row(t, fv.real, fv.imag)
    w.close(True)
    info = {"residual": sol.residual, "solver_info": sol.solver_info}
    if wave.is_physical and not cfg.scatterer_spec().empty:
        ps, ex = scattered_power(sol), extinction(sol)
        info["optical_theorem_mismatch"] = abs(ps - ex) / max(abs(ex), 1e-300)
    return info


def _cmd_decompose(cfg: RunConfig, outdir: str) -> dict:
    grid = cfg.grid()
    wave = cfg.wave()
    N = int(cfg["N"])
    sol = solve_finite(grid, wave, N, tol=cfg["tolerances"]["krylov"])
    K_x = float(cfg["decompose"]["K_x"])
    kzg = cfg["kz_grid"]
    split = build_split(sol, K_x, n_channels=int(kzg["n_channels"]),
                        T_grid=kzg["K_max"], dt=float(kzg["dt"]))
    rng = np.random.default_rng(1234)
    k = float(np.real(wave.k))
    ns = int(cfg["decompose"]["n_samples"])
    Ks = np.column_stack([rng.uniform(-0.8 * k, 0.8 * k, ns),
                          rng.uniform(-k, k, ns)])
    r515, _ = first_decomposition_residual(sol, Ks, n_channels=int(cfg["channels"]),
                                           tol=cfg["tolerances"]["omega"])
    r520, _ = reconstruct_residual(sol, split)
    w = _CsvWriter(
        os.path.join(outdir, "decompose.csv"),
        "Kx,Kz,re_T,im_T,re_Ts,im_Ts,re_Tc,im_Tc,resid_515,resid_520",
        "T and split components on the tabulation grid at fixed Kx; "
        "resid columns repeat the residuals of the two identities",
    )
    for j, kz in enumerate(split.kz_grid):
        Tv = t_eval(sol, (K_x, kz))
        w.row(K_x, kz, Tv.real, Tv.imag, split.t_s[j].real, split.t_s[j].imag,
              split.t_c[j].real, split.t_c[j].imag, r515, r520)
    w.close(True)
    return {"residual_identity": r515, "residual_reconstruction": r520,
            "thresholds_pass": bool(r515 < 0.01 and r520 < 0.01)}


def _pole_rows_writer(outdir: str, name: str):
    return _CsvWriter(
        os.path.join(outdir, name),
        "N,re_k2,im_k2,gamma,sigma_min,iters",
        "resonance poles k2 = k_r^2 - i Gamma; N = -1 marks the infinite array",
    )


def _cmd_poles(cfg: RunConfig, outdir: str) -> dict:
    grid = cfg.grid()
    seed = complex(*cfg["poles"]["seed_k2"])
    ptol = cfg["tolerances"]["pole"]
    if cfg["poles"]["infinite"]:
        ind = infinite_indicator(grid, cfg["wave"]["kx"],
                                 sheet_flips=tuple(cfg["poles"]["sheet_flips"]),
                                 M=int(cfg["channels"]))
        rec = find_pole(ind, seed, pole_tol=ptol,
                        sheet=tuple(cfg["poles"]["sheet_flips"]))
        rows = [(-1, rec)]
    else:
        N = int(cfg["N"])
        rec = find_pole(finite_indicator(grid, N), seed, pole_tol=ptol, label=N)
        rows = [(N, rec)]
    w = _pole_rows_writer(outdir, "poles.csv")
    for n, r in rows:
        w.row(n, r.k2.real, r.k2.imag, r.gamma, r.sigma_min, r.iterations)
    w.close(True)
    return {"k2": [rec.k2.real, rec.k2.imag], "sigma_min": rec.sigma_min,
            "thresholds_pass": bool(rec.sigma_min < 1e-4)}


def _cmd_sweep(cfg: RunConfig, outdir: str) -> dict:
    grid = cfg.grid()
    seed = complex(*cfg["sweep"]["seed_k2"])
    flips = tuple(cfg["sweep"]["sheet_flips"])
    ind = infinite_indicator(grid, cfg["wave"]["kx"], sheet_flips=flips,
                             M=int(cfg["channels"]))
    ref = find_pole(ind, seed, pole_tol=cfg["tolerances"]["pole"], sheet=flips)
    result = sweep_N(grid, ref, N_list=cfg["N_list"],
                     pole_tol=cfg["tolerances"]["pole"])
    w = _pole_rows_writer(outdir, "sweep.csv")
    w.row(-1, ref.k2.real, ref.k2.imag, ref.gamma, ref.sigma_min, ref.iterations)
    for r in result.records:
        w.row(r.N, r.k2.real, r.k2.imag, r.gamma, r.sigma_min, r.iterations)
    w.close(True)
    ok = (result.fit_exponent_gamma >= 0.4 and result.fit_exponent_k2 >= 0.4
          and all(r.gamma > 0 for r in result.records))
    return {
        "gamma_inf": result.gamma_inf,
        "fit_exponent_gamma": result.fit_exponent_gamma,
        "fit_exponent_k2": result.fit_exponent_k2,
        "thresholds_pass": bool(ok),
    }


def _cmd_bic(cfg: RunConfig, outdir: str) -> dict:
    b = cfg["bic"]
    h_grid = np.linspace(b["h_range"][0], b["h_range"][1], int(b["n_h"]))
    h_best, rec, rows = bic_scan(
        h_grid, complex(*b["seed_k2"]), kx=cfg["wave"]["kx"],
        radius=float(b["radius"]), contrast=float(b["contrast"]),
        resolution=tuple(cfg["resolution"]), M=int(cfg["channels"]),
        tol=cfg["tolerances"]["pole"],
    )
    w = _CsvWriter(os.path.join(outdir, "bic.csv"), "h,gamma,re_k2",
                   "lattice resonance width vs double-array separation")
    for h, gma, rk2 in rows:
        w.row(h, gma, rk2)
    w.close(True)
    found = rec.gamma < 1e-6 * abs(rec.k2)
    return {"h_best": h_best, "gamma_min": rec.gamma,
            "k2": [rec.k2.real, rec.k2.imag], "thresholds_pass": bool(found)}


def _cmd_validate(cfg: RunConfig, outdir: str) -> dict:
    """Quick executable invariant suite (checks documented per row)."""
    rows = []

    def check(name, fn):
        t0 = time.perf_counter()
        try:
            val, thr = fn()
            ok = val <= thr
            rows.append((name, val, thr, "pass" if ok else "FAIL",
                         time.perf_counter() - t0))
        except Exception as exc:  # noqa: BLE001 - report, do not crash the table
            rows.append((name, float("nan"), float("nan"), f"error: {exc}",
                         time.perf_counter() - t0))

    spec = cfg.scatterer_spec()
    if spec.empty:
        spec = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])
    wave = cfg.wave()
    grid = build_cell(spec, tuple(cfg["resolution"]))

    def dense_vs_fast():
        rng = np.random.default_rng(0)
        g8 = build_cell(spec, (8, 8))
        A = assemble_dense(g8, wave, 2)
        op = ToeplitzScatterOperator(g8, wave, 2)
        x = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
        y = x - A @ x
        return float(np.linalg.norm(op.apply(x) - y) / np.linalg.norm(y)), 1e-12

    check("operator_dense_vs_fast", dense_vs_fast)

    def sommerfeld():
        worst = 0.0
        for z in (1.0, 5.0, 10.0):
            c = contour_nodes(z, 1e-10)
            val = c.integrate(np.exp(1j * z * c.cos_theta)) / np.pi
            worst = max(worst, abs(val - hankel0(z)))
        return worst, 1e-8

    check("sommerfeld_contour_identity", sommerfeld)

    def dirichlet_mass():
        t = np.linspace(-np.pi, np.pi, 20001)
        val = np.trapezoid(dirichlet(6, t), t)
        return float(abs(val - 2 * np.pi)), 1e-6

    check("dirichlet_unit_mass", dirichlet_mass)

    def optical():
        sol = solve_finite(grid, wave, 1, tol=cfg["tolerances"]["krylov"])
        ps, ex = scattered_power(sol), extinction(sol)
        return float(abs(ps - ex) / max(abs(ex), 1e-300)), 1e-4

    check("optical_theorem", optical)

    def efficiencies():
        bs = solve_bloch(grid, wave, M=int(cfg["channels"]))
        tr, rf = channel_efficiencies(bs)
        return float(abs(tr.sum() + rf.sum() - 1.0)), 1e-6

    check("channel_efficiency_sum", efficiencies)

    if not cfg["validate"]["fast"]:
        def identity_residual():
            sol = solve_finite(grid, wave, 1, tol=cfg["tolerances"]["krylov"])
            rng = np.random.default_rng(7)
            k = float(np.real(wave.k))
            Ks = np.column_stack([rng.uniform(-0.8 * k, 0.8 * k, 4),
                                  rng.uniform(-k, k, 4)])
            r, _ = first_decomposition_residual(
                sol, Ks, n_channels=int(cfg["channels"]),
                tol=cfg["tolerances"]["omega"])
            return float(r), 0.01

        check("operator_split_identity", identity_residual)

    w = _CsvWriter(os.path.join(outdir, "validate.csv"),
                   "check,value,threshold,status,seconds",
                   "invariant suite; status pass means value <= threshold")
    for name, val, thr, status, secs in rows:
        w.fh.write(f"{name},{_fmt(val)},{_fmt(thr)},{status},{_fmt(secs)}\n")
    w.close(True)
    ok = all(r[3] == "pass" for r in rows)
    return {"checks": {r[0]: r[3] for r in rows}, "thresholds_pass": ok}


_COMMAND_FNS = {
    "solve": _cmd_solve,
    "decompose": _cmd_decompose,
    "poles": _cmd_poles,
    "sweep": _cmd_sweep,
    "bic": _cmd_bic,
    "validate": _cmd_validate,
}


def run_command(command: str, cfg: RunConfig, outdir: str | None = None) -> int:
    """Execute one command; returns the process exit status."""
    if command not in _COMMAND_FNS:
        raise ConfigError(f"unknown command {command!r}")
    outdir = outdir or cfg["output"]
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        extra = _COMMAND_FNS[command](cfg, outdir)
        success = bool(extra.get("thresholds_pass", True))
    except Exception as exc:  # noqa: BLE001 - map to exit status per contract
        logger.error("%s failed: %s", command, exc)
        _write_manifest(outdir, cfg, command, t0, {"error": str(exc)}, False)
        return 2
    _write_manifest(outdir, cfg, command, t0, extra, success)
    return 0 if success else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="latscat",
        description="finite and infinite scatterer-array solvers, T-matrix "
                    "splitting, and resonance pole tracking",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to a JSON config")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker threads for independent points (BLAS threads "
                         "are controlled by the environment)")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.threads != 1:
        logger.info("threads=%d requested; point-level work runs sequentially "
                    "for bit-identical outputs", args.threads)
    return run_command(args.command, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
