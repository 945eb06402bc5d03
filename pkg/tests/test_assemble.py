"""Global form assembly: WP-shifted bordered matrices and positivity grades."""

import json

import numpy as np
import pytest

from cyfam.assemble import (
    assemble_global_form,
    det_identity_residual,
    dump_eigenvalues,
    negative_control,
    positivity_check,
    top_density_margin,
)
from cyfam.curvature import wp_metric
from cyfam.family import (
    SParameterStencil,
    bordered_matrix,
    build_admissible,
    normalize_admissible,
)
from cyfam.torus import get_preset

STEP = 1e-2

# Green lower bounds frozen against the theta-function oracle
C_SQUARE = 0.1103178000763258
C_SIEGEL = 0.14046098554536562

# minimum eigenvalue of the closed-form coefficient matrix
# [[(c+1) wp + |q|^2_g, -(g q)^T], [-(g q), g]] with q = Omega' y, minimized
# over the fiber lattice and the 17 stencil fibers
ELLIPTIC_MIN_EIG = 0.12131023529003138
ELLIPTIC_CENTER_MIN_EIG = 0.12355999973385257
ELLIPTIC_MIN_EIG_C0 = 0.11091992881978036
SIEGEL_MIN_EIG = 0.15893128107390173


def build(name, size=None, mode="closed-form", psi=None):
    preset = get_preset(name)
    stencil = SParameterStencil(preset.base_point(), STEP)
    return build_admissible(preset.family(), stencil, size=size, mode=mode, psi=psi)


def wp_table(w):
    return {p.s: wp_metric(w, p.s) for p in w.points}


def fiber_psi(grid, s):
    x = grid.coordinate(0)
    return 0.03 * (1.0 + s.real) * np.cos(2.0 * np.pi * x) + 0.1 * abs(s) ** 2


@pytest.fixture(scope="module")
def elliptic():
    w = build("elliptic")
    return assemble_global_form(w, wp_table(w), C_SQUARE)


@pytest.fixture(scope="module")
def elliptic_report(elliptic):
    return positivity_check(elliptic)


@pytest.fixture(scope="module")
def siegel():
    w = build("siegel-e")
    return assemble_global_form(w, wp_table(w), C_SIEGEL)


@pytest.fixture(scope="module")
def perturbed():
    w = normalize_admissible(build("elliptic", size=16, mode="perturbed", psi=fiber_psi))
    return assemble_global_form(w, wp_table(w), C_SQUARE)


class TestAssemble:
    def test_rejects_negative_constant(self, elliptic):
        with pytest.raises(ValueError, match="nonnegative"):
            assemble_global_form(elliptic.w, 0.25, -0.5)

    def test_weight_is_constant_plus_one(self, elliptic):
        assert elliptic.c == C_SQUARE
        assert elliptic.weight == C_SQUARE + 1.0

    def test_table_and_callable_agree(self, elliptic):
        table = dict(elliptic.wp)
        from_callable = assemble_global_form(elliptic.w, lambda s: table[s], C_SQUARE)
        for s in table:
            assert np.array_equal(from_callable.matrix(s), elliptic.matrix(s))

    def test_scalar_broadcasts(self, elliptic):
        center = elliptic.w.stencil.center
        value = elliptic.wp[center]
        scalar = assemble_global_form(elliptic.w, value, C_SQUARE)
        assert set(scalar.wp) == set(elliptic.wp)
        assert all(v == value for v in scalar.wp.values())
        assert np.array_equal(scalar.matrix(center), elliptic.matrix(center))

    def test_missing_base_point_rejected(self, elliptic):
        with pytest.raises(ValueError, match="Weil-Petersson value"):
            assemble_global_form(elliptic.w, {0j: 0.25}, C_SQUARE)

    def test_base_entry_shift(self, elliptic):
        for s in elliptic.base_points:
            plain = bordered_matrix(elliptic.w, s)
            shifted = plain.copy()
            shifted[..., 0, 0] += elliptic.weight * elliptic.wp[s]
            assert np.array_equal(elliptic.matrix(s), shifted)

    def test_fiber_and_mixed_blocks_unchanged(self, elliptic):
        for s in elliptic.base_points:
            mat = elliptic.matrix(s)
            plain = bordered_matrix(elliptic.w, s)
            p = elliptic.w.at(s)
            assert np.array_equal(mat[..., 1:, 1:], p.metric.field.values)
            assert np.array_equal(mat[..., 0, 1:], plain[..., 0, 1:])
            assert np.array_equal(mat[..., 1:, 0], plain[..., 1:, 0])

    def test_negative_control_drops_weight_only(self, elliptic):
        control = negative_control(elliptic)
        assert control.weight == 0.0
        assert control.c == elliptic.c
        assert control.wp == elliptic.wp


class TestPositivity:
    def test_elliptic_min_eigenvalue(self, elliptic_report):
        assert elliptic_report.min_eigenvalue == pytest.approx(ELLIPTIC_MIN_EIG, abs=1e-12)
        center = elliptic_report.eigen_by_point[0j]
        assert center == pytest.approx(ELLIPTIC_CENTER_MIN_EIG, abs=1e-12)
        assert elliptic_report.passed
        assert not elliptic_report.non_effective

    def test_elliptic_margins(self, elliptic_report):
        scalar = C_SQUARE / (4.0 * (1.0 + STEP) ** 2)
        density = C_SQUARE / (8.0 * (1.0 + STEP) ** 3)
        assert elliptic_report.scalar_margin == pytest.approx(scalar, rel=1e-9)
        assert elliptic_report.density_margin == pytest.approx(density, rel=1e-9)

    def test_elliptic_consistency_grades(self, elliptic_report):
        assert elliptic_report.hermitian_defect <= 1e-12
        assert elliptic_report.det_residual <= 1e-10

    def test_zero_constant_still_positive(self, elliptic):
        report = positivity_check(assemble_global_form(elliptic.w, elliptic.wp, 0.0))
        assert report.passed
        assert report.min_eigenvalue == pytest.approx(ELLIPTIC_MIN_EIG_C0, abs=1e-12)

    def test_min_eigenvalue_monotone_in_constant(self, elliptic):
        minima = [
            positivity_check(assemble_global_form(elliptic.w, elliptic.wp, c)).min_eigenvalue
            for c in (0.0, 0.05, C_SQUARE, 0.5, 2.0)
        ]
        assert all(b >= a for a, b in zip(minima, minima[1:]))

    def test_constant_family_flagged_not_failed(self):
        w = build("constant")
        report = positivity_check(assemble_global_form(w, wp_table(w), C_SQUARE))
        assert report.non_effective
        assert report.passed
        assert report.min_eigenvalue == pytest.approx(0.0, abs=1e-14)
        assert report.scalar_margin == pytest.approx(0.0, abs=1e-14)
        assert report.density_margin == pytest.approx(0.0, abs=1e-14)

    def test_negative_control_fails(self, elliptic):
        report = positivity_check(negative_control(elliptic))
        assert not report.passed
        assert not report.non_effective
        assert report.min_eigenvalue == pytest.approx(0.0, abs=1e-12)
        expected = -1.0 / (4.0 * (1.0 - STEP) ** 2)
        assert report.scalar_margin == pytest.approx(expected, rel=1e-9)

    def test_siegel_positivity(self, siegel):
        report = positivity_check(siegel)
        assert report.passed
        assert report.min_eigenvalue == pytest.approx(SIEGEL_MIN_EIG, abs=1e-12)
        assert report.hermitian_defect <= 1e-12

    def test_product_positivity(self):
        w = build("product")
        report = positivity_check(assemble_global_form(w, wp_table(w), 0.2))
        assert report.passed
        assert report.min_eigenvalue > 0.0

    def test_bordering_interlaces_fiber_eigenvalues(self, elliptic, elliptic_report):
        fiber_min = min(
            float(np.linalg.eigvalsh(p.metric.field.values).min())
            for p in elliptic.w.points
        )
        assert elliptic_report.min_eigenvalue <= fiber_min + 1e-12

    def test_perturbed_positivity(self, perturbed):
        report = positivity_check(perturbed)
        assert report.passed
        assert not report.non_effective
        assert report.scalar_margin > 0.02
        assert report.hermitian_defect <= 1e-12
        assert report.det_residual <= 1e-10


class TestIdentities:
    @pytest.mark.parametrize("name", ["elliptic", "siegel", "perturbed"])
    def test_det_identity(self, request, name):
        form = request.getfixturevalue(name)
        assert det_identity_residual(form) <= 1e-10

    def test_density_margin_matches_report(self, elliptic, elliptic_report):
        assert top_density_margin(elliptic) == elliptic_report.density_margin

    def test_density_margin_negative_control(self, elliptic):
        margin = top_density_margin(negative_control(elliptic))
        expected = -1.0 / (8.0 * (1.0 - STEP) ** 3)
        assert margin == pytest.approx(expected, rel=1e-9)


class TestOutputs:
    def test_json_payload(self, elliptic_report):
        payload = elliptic_report.to_json()
        text = json.dumps(payload)
        assert "center_matrix" not in text
        assert payload["passed"] is True
        assert payload["non-effective"] is False
        assert payload["c"] == C_SQUARE
        assert payload["min-eigenvalue"] == elliptic_report.min_eigenvalue
        count = len(elliptic_report.base_points)
        assert len(payload["base-points"]) == count
        assert len(payload["wp"]) == count
        assert len(payload["eigen-by-point"]) == count
        assert payload["eigen-by-point"][0] == elliptic_report.eigen_by_point[0j]

    def test_center_matrix_field(self, elliptic, elliptic_report):
        size = elliptic.w.size
        assert elliptic_report.center_matrix.shape == (size, size, 2, 2)
        assert np.array_equal(elliptic_report.center_matrix, elliptic.matrix())

    def test_eigenvalue_csv(self, elliptic, tmp_path):
        path = tmp_path / "eigs.csv"
        dump_eigenvalues(elliptic, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x1,y1,re,im"
        assert lines[1].startswith("# variance: scalar")
        data = np.loadtxt(lines[2:], delimiter=",")
        size = elliptic.w.size
        assert data.shape == (size * size, 4)
        assert data[:, 2].min() == pytest.approx(ELLIPTIC_CENTER_MIN_EIG, abs=1e-12)
        assert np.all(data[:, 3] == 0.0)
