"""End-to-end acceptance gate.

One test per headline guarantee, in order: Weil-Petersson closed forms,
the Siegel cross-check, Monge-Ampere recovery, the harmonic-identity
suite, the Green operator, assembled-form positivity, potential
normalization, and violation sensitivity.  Each test prints a single
PASS/FAIL line with the measured figures next to their budgets.
"""

import time

import numpy as np
import pytest

from cyfam.assemble import assemble_global_form, negative_control, positivity_check
from cyfam.curvature import (
    curvature_report,
    first_chern_residuals,
    relative_canonical_curvature,
    wp_metric,
)
from cyfam.family import (
    SParameterStencil,
    admissibility_report,
    build_admissible,
    inject_violation,
    normalize_admissible,
    pollute,
)
from cyfam.fields import FiberGrid, MetricField, laplacian, scalar_field
from cyfam.green import (
    GreenOperator,
    bound_report,
    green_apply,
    green_kernel,
    verify_green_reconstruction,
)
from cyfam.mongeampere import MongeAmpereProblem, complex_hessian, solve_ricci_flat
from cyfam.torus import flat_metric, get_preset, theta_green_oracle, wp_closed_form

STEP = 1e-2
ALL_PRESETS = ("elliptic", "elliptic2i", "constant", "siegel-e", "product")

# harmonic-identity residual budgets, applied to every preset
IDENTITY_BUDGETS = (
    ("ks-symmetry", 1e-8),
    ("ks-closedness", 1e-8),
    ("ks-coclosedness", 1e-8),
    ("mixed-vanishing-holo", 1e-8),
    ("mixed-vanishing-anti", 1e-8),
    ("base-constancy", 1e-6),
    ("divergence-identity", 1e-6),
    ("chi-laplace", 1e-6),
    ("phi-laplace", 1e-6),
)


def _gate(label, checks):
    """Print the one-line verdict for a criterion, then assert its checks.

    checks: sequence of (name, ok, measured-figure) triples.
    """
    ok = all(passed for _, passed, _ in checks)
    detail = ", ".join(f"{name}={figure}" for name, _, figure in checks)
    print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
    failed = [name for name, passed, _ in checks if not passed]
    assert not failed, f"{label} failed: {failed}"


def _closed_form(name, at=None, size=None):
    preset = get_preset(name)
    family = preset.family(at)
    center = preset.base_point(at)
    return build_admissible(
        family, SParameterStencil(center, STEP), size=size or preset.default_grid
    )


@pytest.fixture(scope="module")
def elliptic_form():
    return _closed_form("elliptic")


@pytest.fixture(scope="module")
def siegel_form():
    return _closed_form("siegel-e")


@pytest.fixture(scope="module")
def perturbed_form():
    def psi(grid, s):
        x = grid.coordinate(0)
        return 0.03 * (1.0 + s.real) * np.cos(2.0 * np.pi * x) + 0.1 * abs(s) ** 2

    preset = get_preset("elliptic")
    w = build_admissible(
        preset.family(), SParameterStencil(0j, STEP), size=16,
        mode="perturbed", psi=psi,
    )
    return normalize_admissible(w)


def test_wp_matches_curvature_closed_forms():
    anchors = {1j: 0.25, 2j: 0.0625, 1 + 1j: 0.25}
    checks = []
    worst_gap = 0.0
    worst_time = 0.0
    for tau, anchor in anchors.items():
        family = get_preset("elliptic").family(tau)
        start = time.perf_counter()
        w = build_admissible(family, SParameterStencil(0j, STEP), size=32)
        theta = relative_canonical_curvature(w)
        gap = first_chern_residuals(w, theta=theta)["base"]
        elapsed = time.perf_counter() - start
        worst_gap = max(worst_gap, gap)
        worst_time = max(worst_time, elapsed)
        checks.append(
            (f"theta({tau})", abs(theta.base_mean() - anchor) <= 1e-6,
             f"{theta.base_mean():.9f}")
        )
    checks.append(("sup|theta-wp|", worst_gap <= 1e-6, f"{worst_gap:.3e}"))
    checks.append(("seconds-per-point", worst_time < 1.0, f"{worst_time:.2f}"))
    _gate("wp-closed-form", checks)


def test_wp_siegel_cross_check():
    family = get_preset("siegel-e").family()
    start = time.perf_counter()
    w = build_admissible(family, SParameterStencil(0j, STEP), size=16)
    value = wp_metric(w)
    elapsed = time.perf_counter() - start
    oracle = wp_closed_form(family, 0j)
    checks = [
        ("wp(0)", abs(value - 0.5) <= 1e-6, f"{value:.9f}"),
        ("log-det-gap", abs(value - oracle) <= 1e-6, f"{abs(value - oracle):.3e}"),
        ("seconds", elapsed < 5.0, f"{elapsed:.2f}"),
    ]
    _gate("siegel-cross-check", checks)


def test_ma_solver_recovery():
    cases = (("elliptic", 32, 0.05, 2), ("siegel-e", 16, 0.03, 10))
    checks = []
    for name, size, amplitude, iteration_budget in cases:
        preset = get_preset(name)
        omega = preset.family().omega(preset.base_point())
        grid = FiberGrid(omega, size)
        x = grid.coordinate(0)
        psi = scalar_field(grid, (amplitude * np.cos(2.0 * np.pi * x)).astype(complex))
        g0 = MetricField.from_values(grid, flat_metric(omega) + complex_hessian(psi))
        result = solve_ricci_flat(MongeAmpereProblem(g0))
        total = psi.values.real + result.phi.values.real
        recovery = float(np.max(np.abs(total - np.mean(total))))
        checks.append(
            (f"{name}-recovery", recovery <= 1e-8, f"{recovery:.3e}")
        )
        checks.append(
            (f"{name}-iterations", result.iterations <= iteration_budget,
             str(result.iterations))
        )
    _gate("ma-recovery", checks)


def test_harmonic_identity_suite(elliptic_form, siegel_form, perturbed_form):
    forms = {"elliptic": elliptic_form, "siegel-e": siegel_form}
    worst = {name: 0.0 for name, _ in IDENTITY_BUDGETS}
    checks = []
    for preset in ALL_PRESETS:
        w = forms.get(preset) or _closed_form(preset)
        report = curvature_report(w)
        for name, budget in IDENTITY_BUDGETS:
            value = report.residual(name)
            worst[name] = max(worst[name], value)
            if value > budget:
                checks.append((f"{preset}:{name}", False, f"{value:.3e}"))
    report = curvature_report(perturbed_form)
    for name, budget in IDENTITY_BUDGETS:
        value = report.residual(name)
        worst[name] = max(worst[name], value)
        if value > budget:
            checks.append((f"perturbed:{name}", False, f"{value:.3e}"))
    for name, budget in IDENTITY_BUDGETS:
        checks.append((name, worst[name] <= budget, f"{worst[name]:.3e}"))
    _gate("harmonicity", checks)


def test_green_operator_guarantees():
    omega = get_preset("elliptic").family().omega(0j)
    op = GreenOperator(FiberGrid(omega, 32))
    rng = np.random.default_rng(2026)
    density = op.metric.density()
    volume = float(np.mean(density))

    worst_defining = 0.0
    mesh = np.stack([op.grid.coordinate(a) for a in op.grid.axes], axis=-1)
    for _ in range(20):
        values = np.zeros(op.grid.shape)
        for _ in range(6):
            k = rng.integers(-3, 4, size=2)
            phase = 2.0 * np.pi * (mesh @ k)
            values = values + rng.normal() * np.cos(phase) + rng.normal() * np.sin(phase)
        chi = scalar_field(op.grid, values.astype(complex))
        harmonic_part = float(np.mean(values * density)) / volume
        box = laplacian(green_apply(op, chi), op.metric)
        residual = float(np.max(np.abs(box.values - (values - harmonic_part))))
        worst_defining = max(worst_defining, residual)

    offsets = (np.arange(8) + 0.5) / 8.0
    x, y = np.meshgrid(offsets, offsets, indexing="ij")
    pts = np.column_stack([x.ravel(), y.ravel()])
    oracle = theta_green_oracle(1j, (pts[:, 0], pts[:, 1]))
    kernel_gap = float(np.max(np.abs(green_kernel(op, pts) - oracle)))

    bound = bound_report(op, 1e-6)
    doubled = bound_report(GreenOperator(FiberGrid(omega, 64)), 1e-6)
    stability = abs(bound.c - doubled.c)

    probes = rng.random((1000, 2))
    probe_min = float(np.min(green_kernel(op, probes)))

    checks = [
        ("defining-property", worst_defining <= 1e-10, f"{worst_defining:.3e}"),
        ("kernel-vs-oracle", kernel_gap <= 1e-6, f"{kernel_gap:.3e}"),
        ("c", abs(bound.c - 0.1103178000763258) <= 1e-9, f"{bound.c:.12f}"),
        ("grid-doubling", stability <= 1e-6, f"{stability:.3e}"),
        ("probe-floor", probe_min >= -bound.c - 1e-9,
         f"{probe_min:.6f} vs -c={-bound.c:.6f}"),
    ]
    _gate("green-operator", checks)


def test_global_form_positivity(elliptic_form, siegel_form):
    checks = []
    for name, w in (("elliptic", elliptic_form), ("siegel-e", siegel_form)):
        wp = {p.s: wp_metric(w, p.s) for p in w.points}
        center = w.center
        op = GreenOperator(center.grid, metric=center.metric)
        c = bound_report(op, 1e-6).c
        form = assemble_global_form(w, wp, c)
        report = positivity_check(form)
        checks.append(
            (f"{name}-min-eig", report.passed and report.min_eigenvalue > 0,
             f"{report.min_eigenvalue:.6f}")
        )
        margin_oracle = c * min(wp.values())
        checks.append(
            (f"{name}-margin=c*wp",
             report.scalar_margin >= 0
             and abs(report.scalar_margin - margin_oracle) <= 1e-9 * margin_oracle,
             f"{report.scalar_margin:.6f}")
        )
        node_floor = min(
            float(np.min((p.phi_ss.values.real + c * wp[p.s]) * p.metric.det))
            for p in w.points
        )
        checks.append(
            (f"{name}-density-floor", node_floor > 0, f"{node_floor:.6f}")
        )
        control = positivity_check(negative_control(form))
        checks.append(
            (f"{name}-control",
             (not control.passed)
             and abs(control.min_eigenvalue) <= 1e-12
             and control.scalar_margin < 0,
             f"eig={control.min_eigenvalue:.1e} margin={control.scalar_margin:.3f}")
        )
    _gate("positivity-pipeline", checks)


def test_potential_normalization(perturbed_form, elliptic_form):
    report = admissibility_report(perturbed_form)
    center = perturbed_form.center
    integral = float(np.abs(np.mean(center.phi_ss.values * center.metric.density())))

    cleaned = normalize_admissible(pollute(perturbed_form, 0.1))
    removal = max(
        float(np.max(np.abs(a.phi_ss.values - b.phi_ss.values)))
        for a, b in zip(cleaned.points, perturbed_form.points)
    )

    flat_sup = 0.0
    for w in (elliptic_form, _closed_form("constant")):
        flat_sup = max(
            flat_sup, max(float(np.max(np.abs(p.phi_ss.values))) for p in w.points)
        )

    op = GreenOperator(center.grid, metric=center.metric)
    reconstruction = verify_green_reconstruction(perturbed_form, center.s, op)

    checks = [
        ("normalization", report["normalization"] <= 1e-9,
         f"{report['normalization']:.3e}"),
        ("center-integral", integral <= 1e-9, f"{integral:.3e}"),
        ("pollution-removal", removal <= 1e-10, f"{removal:.3e}"),
        ("flat-phi-sup", flat_sup <= 1e-7, f"{flat_sup:.3e}"),
        ("reconstruction", reconstruction <= 1e-7, f"{reconstruction:.3e}"),
    ]
    _gate("normalization", checks)


def test_violation_sensitivity(elliptic_form):
    cases = (
        ("restriction", "restriction"),
        ("mixed", "d-closed-fiber-base"),
        ("potential", "d-closed-base-base"),
        ("normalization", "normalization"),
    )
    checks = []
    for kind, key in cases:
        for eps in (1e-3, 1e-2):
            report = admissibility_report(inject_violation(elliptic_form, kind, eps))
            checks.append(
                (f"{kind}@{eps:g}", report[key] >= eps / 10.0,
                 f"{report[key]:.3e}")
            )
    _gate("violation-sensitivity", checks)
