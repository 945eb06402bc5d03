"""Assembly and positivity of the global form on the total space.

The fiber metric, the mixed blocks, and the base component combine into an
(n+1) x (n+1) Hermitian coefficient matrix at every fiber node, with the
base direction in row and column 0.  Adding ``weight = c + 1`` times the
Weil-Petersson value of the fiber to the base-base entry shifts the Schur
complement of the fiber block from phi_ss to phi_ss + weight * G^WP, so the
matrix is positive definite as soon as c bounds the Green operator from
below: phi_ss = G(A A-bar) >= -c * G^WP pointwise.

``positivity_check`` grades the assembled form three ways on every node of
every sampled base fiber: the minimum eigenvalue of the coefficient matrix,
the scalar domination margin phi_ss + weight * G^WP - vol * G^WP, and the
top-degree density margin (phi_ss + weight * G^WP) * det g - det g * G^WP.
A vanishing minimum eigenvalue passes only together with a vanishing
Weil-Petersson value (a non-effective base direction); it is reported, not
raised, so degenerate presets still produce a full report.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .family import AdmissibleForm, FiberPoint, bordered_matrix
from .fields import dump_csv, scalar_field

__all__ = [
    "AssembledGlobalForm",
    "GlobalFormReport",
    "assemble_global_form",
    "negative_control",
    "positivity_check",
    "top_density_margin",
    "det_identity_residual",
    "dump_eigenvalues",
]

# strictly-positive threshold for the minimum eigenvalue and floor for the
# scalar margins; semidefinite directions must also have vanishing WP value
_EIG_FLOOR = 1e-12
_MARGIN_FLOOR = -1e-12


def _wp_table(w: AdmissibleForm, wp) -> dict:
    """Resolve the Weil-Petersson input to one real value per base point.

    Accepts a scalar (constant over the stencil), a mapping from base
    points to values, or a callable s -> value.
    """
    points = [p.s for p in w.points]
    if isinstance(wp, dict):
        table = {}
        for s in points:
            if s in wp:
                table[s] = float(wp[s])
                continue
            near = [k for k in wp if abs(complex(k) - s) <= 1e-9 * (1.0 + abs(s))]
            if not near:
                raise ValueError(f"no Weil-Petersson value for base point {s}")
            table[s] = float(wp[near[0]])
        return table
    if callable(wp):
        return {s: float(wp(s)) for s in points}
    value = float(wp)
    return {s: value for s in points}


@dataclass(frozen=True, eq=False)
class AssembledGlobalForm:
    """Coefficient field of the fiberwise form plus weight * f* omega^WP.

    ``weight`` is c + 1 for the assembled global form; ``negative_control``
    sets it to zero to exhibit the degenerate horizontal direction.
    """

    w: AdmissibleForm
    c: float
    weight: float
    wp: dict

    @property
    def base_points(self) -> list:
        return list(self.wp)

    def matrix(self, s: complex | None = None) -> np.ndarray:
        """(n+1) x (n+1) coefficient matrix per node on the fiber of s.

        The fiber and mixed blocks are exactly those of the input form; only
        the base-base entry is shifted by weight * G^WP(s).
        """
        if s is None:
            s = self.w.stencil.center
        p = self.w.at(s)
        mat = bordered_matrix(self.w, p.s)
        mat[..., 0, 0] += self.weight * self.wp[p.s]
        return mat


def assemble_global_form(w: AdmissibleForm, wp, c: float) -> AssembledGlobalForm:
    """Attach (c + 1) times the pulled-back Weil-Petersson term to the form.

    Parameters
    ----------
    w : AdmissibleForm
        Normalized total-space form (fiber means of phi_ss removed).
    wp : scalar, mapping, or callable
        Weil-Petersson value per base point; a scalar is used for every
        stencil fiber.
    c : float
        Nonnegative Green-operator lower-bound constant.
    """
    if c < 0:
        raise ValueError(f"lower-bound constant must be nonnegative, got {c}")
    return AssembledGlobalForm(w=w, c=float(c), weight=float(c) + 1.0,
                               wp=_wp_table(w, wp))


def negative_control(form: AssembledGlobalForm) -> AssembledGlobalForm:
    """Copy of the form with the Weil-Petersson term dropped (weight zero).

    On a flat family the horizontal direction then degenerates: the minimum
    eigenvalue falls to zero and the scalar margin turns negative wherever
    the base direction is effective.
    """
    return dataclasses.replace(form, weight=0.0)


def _scalar_gap(p: FiberPoint, weight: float, wp: float) -> np.ndarray:
    """Pointwise margin of phi_ss + weight * G^WP >= vol * G^WP."""
    vol = float(np.mean(p.metric.density()))
    return p.phi_ss.values.real + (weight - vol) * wp


def _density_gap(p: FiberPoint, weight: float, wp: float) -> np.ndarray:
    """Pointwise margin of (phi_ss + weight * G^WP) det g >= det g * G^WP."""
    return (p.phi_ss.values.real + (weight - 1.0) * wp) * p.metric.det


def _min_eigenvalues(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Nodewise minimum eigenvalue and the Hermitian defect of ``mat``."""
    adjoint = np.conj(np.swapaxes(mat, -1, -2))
    defect = float(np.max(np.abs(mat - adjoint)))
    eigs = np.linalg.eigvalsh(0.5 * (mat + adjoint))
    return eigs[..., 0], defect


@dataclass(eq=False)
class GlobalFormReport:
    """Positivity grades of the assembled form over all sampled fibers.

    ``min_eigenvalue`` is the minimum over every node of every base point;
    ``eigen_by_point`` keeps the per-fiber minima.  ``center_matrix`` stores
    the full coefficient field on the center fiber for inspection and CSV
    export; it is omitted from the JSON payload.
    """

    c: float
    weight: float
    base_points: list
    wp: dict
    min_eigenvalue: float
    eigen_by_point: dict
    scalar_margin: float
    density_margin: float
    det_residual: float
    hermitian_defect: float
    non_effective: bool
    passed: bool
    center_matrix: np.ndarray

    def to_json(self) -> dict:
        pts = [[s.real, s.imag] for s in self.base_points]
        return {
            "c": self.c,
            "weight": self.weight,
            "base-points": pts,
            "wp": [self.wp[s] for s in self.base_points],
            "min-eigenvalue": self.min_eigenvalue,
            "eigen-by-point": [self.eigen_by_point[s] for s in self.base_points],
            "scalar-margin": self.scalar_margin,
            "density-margin": self.density_margin,
            "det-residual": self.det_residual,
            "hermitian-defect": self.hermitian_defect,
            "non-effective": self.non_effective,
            "passed": self.passed,
        }


def positivity_check(form: AssembledGlobalForm) -> GlobalFormReport:
    """Grade the assembled form on every node of every stencil fiber.

    Passing requires a strictly positive minimum eigenvalue, or a vanishing
    one together with a vanishing Weil-Petersson value (non-effective base
    direction), and nonnegative scalar and density margins.
    """
    w = form.w
    eigen_by_point = {}
    defect = 0.0
    det_res = 0.0
    scalar_margin = np.inf
    density_margin = np.inf
    center_matrix = None
    for p in w.points:
        mat = form.matrix(p.s)
        if p.offset == 0j:
            center_matrix = mat
        low, d = _min_eigenvalues(mat)
        eigen_by_point[p.s] = float(low.min())
        defect = max(defect, d)
        det_res = max(det_res, _det_gap(form, p, mat))
        scalar_margin = min(scalar_margin, float(_scalar_gap(p, form.weight, form.wp[p.s]).min()))
        density_margin = min(density_margin, float(_density_gap(p, form.weight, form.wp[p.s]).min()))
    min_eig = min(eigen_by_point.values())
    non_effective = max(abs(v) for v in form.wp.values()) <= _EIG_FLOOR
    eigen_ok = min_eig > _EIG_FLOOR or (abs(min_eig) <= _EIG_FLOOR and non_effective)
    passed = bool(
        eigen_ok and scalar_margin >= _MARGIN_FLOOR and density_margin >= _MARGIN_FLOOR
    )
    return GlobalFormReport(
        c=form.c,
        weight=form.weight,
        base_points=[p.s for p in w.points],
        wp=dict(form.wp),
        min_eigenvalue=min_eig,
        eigen_by_point=eigen_by_point,
        scalar_margin=scalar_margin,
        density_margin=density_margin,
        det_residual=det_res,
        hermitian_defect=defect,
        non_effective=non_effective,
        passed=passed,
        center_matrix=center_matrix,
    )


def top_density_margin(form: AssembledGlobalForm) -> float:
    """Minimum pointwise gap between the two top-degree densities.

    Compares (phi_ss + weight * G^WP) * det g against det g * G^WP over
    every node and base point; nonnegative exactly when the assembled
    top-degree density dominates the pulled-back one.
    """
    return min(
        float(_density_gap(p, form.weight, form.wp[p.s]).min())
        for p in form.w.points
    )


def _det_gap(form: AssembledGlobalForm, p: FiberPoint, mat: np.ndarray) -> float:
    target = (p.phi_ss.values + form.weight * form.wp[p.s]) * p.metric.det
    return float(np.max(np.abs(np.linalg.det(mat) - target)))


def det_identity_residual(form: AssembledGlobalForm) -> float:
    """Sup residual of det(matrix) = (phi_ss + weight * G^WP) * det(fiber g).

    The base row and column are eliminated by the Schur complement; the
    horizontal norm cancels against the mixed blocks, leaving exactly the
    shifted base potential times the fiber determinant.
    """
    return max(_det_gap(form, p, form.matrix(p.s)) for p in form.w.points)


def dump_eigenvalues(form: AssembledGlobalForm, path, s: complex | None = None):
    """Write the nodewise minimum eigenvalue on the fiber of s to CSV."""
    if s is None:
        s = form.w.stencil.center
    p = form.w.at(s)
    low, _ = _min_eigenvalues(form.matrix(p.s))
    dump_csv(scalar_field(p.grid, low.astype(complex), periodic=False), path)
