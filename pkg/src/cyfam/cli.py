"""Command-line scenario runner and standalone calculators.

Subcommands
-----------
run           full pipeline on a preset or TOML config; writes report.json
              and grids/*.csv to the output directory
list-presets  named family templates
schema        scenario TOML schema (itself valid TOML encoding the defaults)
green-bound   certified Green-kernel lower bound for one fiber
wp            Weil-Petersson value against the log-det closed form
solve-ma      standalone fiberwise Ricci-flat solve with recovery check

Exit codes: 0 when every check passes, 1 on numerical failure or a failed
verifier (the failing stage or check names go to stderr), 2 on
configuration errors.  Reports are deterministic for a fixed config and
seed, up to the timestamp field.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .assemble import (
    assemble_global_form,
    det_identity_residual,
    dump_eigenvalues,
    negative_control,
    positivity_check,
)
from .config import (
    ScenarioConfig,
    config_from_toml,
    dump_schema,
    make_psi,
    parse_complex,
)
from .curvature import curvature_report, wp_metric
from .errors import ConfigError
from .family import (
    SParameterStencil,
    admissibility_report,
    build_admissible,
    normalize_admissible,
    pollute,
)
from .fields import (
    FiberGrid,
    MetricField,
    dump_csv,
    harmonic_projection,
    laplacian,
    scalar_field,
)
from .green import (
    GreenOperator,
    bound_report,
    dump_kernel_profile,
    green_apply,
    verify_green_reconstruction,
)
from .mongeampere import MongeAmpereProblem, complex_hessian, solve_ricci_flat
from .torus import PRESETS, flat_metric, wp_closed_form

__all__ = ["main"]

# report residual keys backed by curvature-report identities
_CURVATURE_KEYS = (
    ("eq1", "first-chern"),
    ("eq6", "ks-symmetry"),
    ("eq7", "ks-closedness"),
    ("eq8", "ks-coclosedness"),
    ("eq9", "mixed-parallel-holo"),
    ("eq10", "mixed-parallel-anti"),
    ("eq11", "divergence-identity"),
    ("eq13", "chi-laplace"),
    ("eq14", "mixed-vanishing-holo"),
    ("eq15", "mixed-vanishing-anti"),
    ("eq16", "base-constancy"),
    ("eq18", "phi-laplace"),
)


def _check(residual: float, tol: float) -> dict:
    return {"residual": float(residual), "tolerance": float(tol),
            "pass": bool(residual <= tol)}


def _margin_check(margin: float, floor: float) -> dict:
    return {"margin": float(margin), "tolerance": float(floor),
            "pass": bool(margin >= -floor)}


def _random_band_limited(grid: FiberGrid, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(grid.shape)
    mesh = np.stack([grid.coordinate(a) for a in grid.axes], axis=-1)
    for _ in range(6):
        k = rng.integers(-3, 4, size=2 * grid.n)
        phase = 2.0 * np.pi * (mesh @ k)
        out = out + rng.normal() * np.cos(phase) + rng.normal() * np.sin(phase)
    return out.astype(complex)


def _roundtrip_residual(op: GreenOperator, rng: np.random.Generator,
                        count: int = 3) -> float:
    """Sup residual of box(G chi) = chi - H chi on random band-limited chi."""
    worst = 0.0
    for _ in range(count):
        chi = scalar_field(op.grid, _random_band_limited(op.grid, rng))
        solved = green_apply(op, chi)
        box = laplacian(solved, op.metric).values
        target = chi.values - harmonic_projection(chi, op.metric)
        worst = max(worst, float(np.max(np.abs(box - target))))
    return worst


def _wp_sample(family, s, step, size):
    local = build_admissible(family, SParameterStencil(s, step), size=size)
    return {"s": [s.real, s.imag], "value": wp_metric(local)}


_STAGE_ORDER = ("build", "normalize", "admissibility", "curvature", "wp",
                "green", "assemble", "verify", "write")


def _run_pipeline(cfg: ScenarioConfig, stages: list) -> tuple[dict, list, object]:
    """Execute build through verify.

    Appends each completed stage to ``stages``; returns the report payload,
    the failing check keys, and the assembled global form (for the grid
    exports).
    """
    family = cfg.family()
    center = cfg.base_point()
    size = cfg.grid_size()
    stencil = SParameterStencil(center, cfg.step)
    payload = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "family": cfg.preset if cfg.preset is not None else "custom",
        "at": [center.real, center.imag],
        "mode": cfg.mode,
        "grid": size,
        "step": cfg.step,
        "seed": cfg.seed,
        "break-normalization": cfg.break_normalization,
        "stages": stages,
    }

    psi = make_psi(cfg.psi) if cfg.mode == "perturbed" else None
    w = build_admissible(family, stencil, size=size, mode=cfg.mode, psi=psi)
    stages.append("build")

    w = normalize_admissible(w)
    if cfg.break_normalization:
        w = pollute(w, cfg.break_normalization)
    stages.append("normalize")

    admissibility = admissibility_report(w)
    payload["admissibility"] = {k: float(v) for k, v in admissibility.items()}
    stages.append("admissibility")

    curvature = curvature_report(w)
    curvature_payload = json.loads(curvature.to_json())
    # timing is the one nondeterministic field; the timestamp covers "when"
    curvature_payload.pop("runtime-seconds", None)
    payload["curvature"] = curvature_payload
    stages.append("curvature")

    wp_by_point = {p.s: wp_metric(w, p.s) for p in w.points}
    wp_entry = {
        "value": wp_by_point[w.center.s],
        "flat-model": curvature.flat_model,
        "closed-form": wp_closed_form(family, w.center.s),
    }
    if cfg.samples:
        with ThreadPoolExecutor(max_workers=min(4, len(cfg.samples))) as pool:
            wp_entry["samples"] = list(
                pool.map(lambda s: _wp_sample(family, s, cfg.step, size), cfg.samples)
            )
    payload["wp"] = wp_entry
    stages.append("wp")

    point = w.center
    op = GreenOperator(point.grid, metric=point.metric)
    bound = bound_report(op, cfg.tolerance("green-bound"))
    rng = np.random.default_rng(cfg.seed)
    roundtrip = _roundtrip_residual(op, rng)
    reconstruction = verify_green_reconstruction(w, point.s, op)
    payload["green"] = {
        "bound": bound.to_json(),
        "roundtrip": roundtrip,
        "reconstruction": reconstruction,
    }
    stages.append("green")

    assembled = assemble_global_form(w, wp_by_point, bound.c)
    report = positivity_check(assembled)
    det_residual = report.det_residual
    control = positivity_check(negative_control(assembled))
    payload["global-form"] = report.to_json()
    expected_failure = not report.non_effective
    control_entry = {
        "min-eigenvalue": control.min_eigenvalue,
        "scalar-margin": control.scalar_margin,
        "failed": not control.passed,
        "expected-failure": expected_failure,
        "pass": bool((not control.passed) == expected_failure),
    }
    payload["negative-control"] = control_entry
    stages.append("assemble")

    d_closed = max(
        admissibility["d-closed-fiber-fiber"],
        admissibility["d-closed-fiber-base"],
        admissibility["d-closed-base-base"],
    )
    residuals = {
        "eq2": _check(admissibility["restriction"], cfg.tolerance("eq2")),
        "eq3": _check(admissibility["normalization"], cfg.tolerance("eq3")),
        "eq5": _check(d_closed, cfg.tolerance("eq5")),
    }
    for key, name in _CURVATURE_KEYS:
        residuals[key] = _check(curvature.residual(name), cfg.tolerance(key))
    residuals["eq20"] = _margin_check(report.scalar_margin, cfg.tolerance("eq20"))
    residuals["remark1"] = _margin_check(report.density_margin,
                                         cfg.tolerance("remark1"))
    residuals["det-identity"] = _check(det_residual, cfg.tolerance("det-identity"))
    residuals["green-reconstruction"] = _check(
        reconstruction, cfg.tolerance("green-reconstruction")
    )
    residuals["green-roundtrip"] = _check(roundtrip, cfg.tolerance("green-roundtrip"))
    # canonical addressing order: eq1 first
    ordered = ["eq1", "eq2", "eq3", "eq5"]
    ordered += [key for key, _ in _CURVATURE_KEYS if key != "eq1"]
    ordered += ["eq20", "remark1", "det-identity",
                "green-reconstruction", "green-roundtrip"]
    payload["residuals"] = {key: residuals[key] for key in ordered}

    failing = [key for key in ordered if not residuals[key]["pass"]]
    if not curvature.passed:
        failing.append("curvature-report")
    if not report.passed:
        failing.append("global-form")
    if not control_entry["pass"]:
        failing.append("negative-control")
    payload["failing"] = failing
    payload["pass"] = not failing
    stages.append("verify")
    return payload, failing, assembled


def _write_report(cfg: ScenarioConfig, payload: dict, w_assembled) -> Path:
    out = Path(cfg.out)
    grids = out / "grids"
    grids.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(payload, indent=2) + "\n")
    dump_eigenvalues(w_assembled, grids / "eigenvalues.csv")
    point = w_assembled.w.center
    dump_csv(point.phi_ss, grids / "phi.csv")
    dump_csv(point.metric.field, grids / "metric.csv")
    op = GreenOperator(point.grid)
    dump_kernel_profile(op, grids / "kernel-profile.csv")
    return report_path


def _load_run_config(args) -> ScenarioConfig:
    target = str(args.target)
    if target.endswith(".toml"):
        cfg = config_from_toml(target)
    else:
        if target not in PRESETS:
            known = ", ".join(sorted(PRESETS))
            raise ConfigError(f"unknown preset {target!r}; available: {known}")
        cfg = ScenarioConfig(preset=target)
    updates = {}
    if args.at is not None:
        updates["at"] = parse_complex(args.at)
    if args.grid is not None:
        updates["grid"] = args.grid
    if args.step is not None:
        updates["step"] = args.step
    if getattr(args, "mode", None) is not None:
        updates["mode"] = args.mode
    if args.out is not None:
        updates["out"] = Path(args.out)
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "break_normalization", None) is not None:
        updates["break_normalization"] = args.break_normalization
    overrides = _tolerance_entries(args.tol)
    if overrides:
        updates["tolerances"] = {**cfg.tolerances, **overrides}
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg.validate()


def _tolerance_entries(entries, bare_key: str | None = None) -> dict:
    out = {}
    for entry in entries or []:
        name, sep, value = str(entry).partition("=")
        if not sep:
            if bare_key is None:
                raise ConfigError(f"--tol needs name=value, got {entry!r}")
            name, value = bare_key, name
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"bad tolerance value in {entry!r}") from None
    return out


def _cmd_run(args) -> int:
    cfg = _load_run_config(args)
    stages = []
    try:
        payload, failing, assembled = _run_pipeline(cfg, stages)
        report_path = _write_report(cfg, payload, assembled)
    except ConfigError:
        raise
    except Exception as exc:
        index = min(len(stages), len(_STAGE_ORDER) - 1)
        print(f"error: stage {_STAGE_ORDER[index]!r} failed: {exc}",
              file=sys.stderr)
        return 1
    print(f"wrote {report_path}")
    print(f"wp={payload['wp']['value']:.12g} "
          f"theta-base={payload['curvature']['theta-base']:.12g} "
          f"c={payload['green']['bound']['c']:.12g} "
          f"min-eigenvalue={payload['global-form']['min-eigenvalue']:.12g}")
    if payload["global-form"]["non-effective"]:
        print("non-effective base direction (vanishing Weil-Petersson value)")
    if failing:
        print(f"failed checks: {', '.join(failing)}", file=sys.stderr)
        print("FAIL")
        return 1
    print("PASS")
    return 0


def _cmd_list_presets(_args) -> int:
    for name, preset in PRESETS.items():
        print(f"{name:12s} n={preset.n}  grid={preset.default_grid:3d}  "
              f"{preset.description}")
    return 0


def _cmd_schema(_args) -> int:
    print(dump_schema(), end="")
    return 0


def _resolve_fiber(args):
    """Preset name from args -> (config, family, base point, grid size)."""
    target = str(args.target)
    if target not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {target!r}; available: {known}")
    cfg = ScenarioConfig(
        preset=target,
        at=None if args.at is None else parse_complex(args.at),
        grid=args.grid,
        step=args.step if getattr(args, "step", None) is not None else 1e-2,
    ).validate()
    return cfg, cfg.family(), cfg.base_point(), cfg.grid_size()


def _cmd_green_bound(args) -> int:
    cfg, family, center, size = _resolve_fiber(args)
    tol = _tolerance_entries(args.tol, bare_key="green-bound").get(
        "green-bound", cfg.tolerance("green-bound")
    )
    op = GreenOperator(FiberGrid(family.omega(center), size))
    try:
        bound = bound_report(op, tol)
    except Exception as exc:
        print(f"error: stage 'green-bound' failed: {exc}", file=sys.stderr)
        return 1
    print(f"c={bound.c:.12g} kernel-minimum={bound.minimum:.12g} "
          f"margin={bound.margin:.3e}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "green-bound.json").write_text(
            json.dumps(bound.to_json(), indent=2) + "\n"
        )
        dump_kernel_profile(op, out / "kernel-profile.csv")
        print(f"wrote {out / 'green-bound.json'}")
    return 0


def _cmd_wp(args) -> int:
    cfg, family, center, size = _resolve_fiber(args)
    try:
        w = build_admissible(family, SParameterStencil(center, cfg.step), size=size)
        value = wp_metric(w)
        oracle = wp_closed_form(family, center)
    except Exception as exc:
        print(f"error: stage 'wp' failed: {exc}", file=sys.stderr)
        return 1
    gap = abs(value - oracle)
    print(f"wp={value:.12g} log-det-oracle={oracle:.12g} gap={gap:.3e}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "wp.json").write_text(json.dumps({
            "at": [center.real, center.imag],
            "grid": size,
            "wp": value,
            "log-det-oracle": oracle,
            "gap": gap,
        }, indent=2) + "\n")
    return 0


def _cmd_solve_ma(args) -> int:
    cfg, family, center, size = _resolve_fiber(args)
    omega = family.omega(center)
    grid = FiberGrid(omega, size)
    amplitude = args.amplitude
    if amplitude is None:
        amplitude = 0.05 if family.n == 1 else 0.03
    tols = _tolerance_entries(args.tol, bare_key="ma-recovery")
    solver_tol = tols.get("solver", cfg.tolerance("solver"))
    recovery_tol = tols.get("ma-recovery", cfg.tolerance("ma-recovery"))
    x = grid.coordinate(0)
    psi = scalar_field(grid, (amplitude * np.cos(2.0 * np.pi * x)).astype(complex))
    trace_csv = None
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        trace_csv = out / "ma-trace.csv"
    try:
        g0 = MetricField.from_values(
            grid, flat_metric(omega) + complex_hessian(psi)
        )
        result = solve_ricci_flat(
            MongeAmpereProblem(g0), tol=solver_tol, trace_csv=trace_csv
        )
    except Exception as exc:
        print(f"error: stage 'solve-ma' failed: {exc}", file=sys.stderr)
        return 1
    total = psi.values.real + result.phi.values.real
    recovery = float(np.max(np.abs(total - np.mean(total))))
    residual = result.residuals[-1]
    ok = recovery <= recovery_tol and result.iterations <= 10
    print(f"iterations={result.iterations} residual={residual:.3e} "
          f"recovery={recovery:.3e}")
    if args.out is not None:
        (Path(args.out) / "solve-ma.json").write_text(json.dumps({
            "grid": size,
            "amplitude": amplitude,
            "iterations": result.iterations,
            "residual": residual,
            "recovery": recovery,
            "pass": ok,
        }, indent=2) + "\n")
    if not ok:
        print("failed checks: ma-recovery", file=sys.stderr)
        return 1
    return 0


def _add_common(parser, step=False, mode=False):
    parser.add_argument("target", help="preset name (see list-presets) or config.toml")
    parser.add_argument("--at", help="center fiber (complex, i or j notation)")
    parser.add_argument("--grid", type=int, help="lattice points per axis")
    if step:
        parser.add_argument("--step", type=float, help="stencil step h")
    if mode:
        parser.add_argument("--mode", choices=("closed-form", "perturbed"))
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--tol", action="append", metavar="NAME=VALUE",
                        help="tolerance override, repeatable")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyfam",
        description="Global form construction and verification on torus families.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline, report.json + grids/*.csv")
    _add_common(run, step=True, mode=True)
    run.add_argument("--seed", type=int, help="RNG seed for verifier probes")
    run.add_argument("--break-normalization", type=float, metavar="EPS",
                     help="inject a normalization violation after normalize")
    run.set_defaults(handler=_cmd_run)

    lp = sub.add_parser("list-presets", help="named family templates")
    lp.set_defaults(handler=_cmd_list_presets)

    schema = sub.add_parser("schema", help="scenario TOML schema")
    schema.set_defaults(handler=_cmd_schema)

    gb = sub.add_parser("green-bound", help="certified kernel lower bound")
    _add_common(gb)
    gb.set_defaults(handler=_cmd_green_bound)

    wp = sub.add_parser("wp", help="Weil-Petersson value vs closed form")
    _add_common(wp, step=True)
    wp.set_defaults(handler=_cmd_wp)

    ma = sub.add_parser("solve-ma", help="standalone Ricci-flat solve")
    _add_common(ma)
    ma.add_argument("--amplitude", type=float,
                    help="perturbation amplitude (default 0.05 n=1, 0.03 n=2)")
    ma.set_defaults(handler=_cmd_solve_ma)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return int(args.handler(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
