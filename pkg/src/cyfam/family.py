"""Total-space Kaehler data for a polarized torus family over a base stencil.

The family carries the constant reference form sum_j dx^j wedge dy^j on the
total space.  In the holomorphic chart z = x + Omega(s) y its coefficients
acquire base components because the chart itself moves with s:

    g_{alpha beta-bar} = (1/2) (Im Omega)^{-1}                 (fiber block)
    g_{s beta-bar}     = -(Omega' y)^gamma g_{gamma beta-bar}  (mixed block)
    g_{s s-bar}        = |Omega' y|^2 in the fiber metric      (base block)

The chart is multivalued across the lattice (y shifts by integers), so the
mixed and base blocks are affine respectively quadratic in y and are not
periodic fields.  Every stored primitive is periodic:

    metric      fiber block, Ricci-flat on its fiber
    mixed_per   g_{s beta-bar} + (Omega' y)^gamma g_{gamma beta-bar}
    phi_ss      <v, v> for the horizontal lift v (an invariant scalar)

Full components are reconstructed pointwise from these plus explicit y
meshes whenever an algebraic identity needs them.

Base derivatives are centered differences over a 9-point complex stencil
with half-step copies for one Richardson level; derivatives at off-center
stencil points come from a least-squares bivariate polynomial model of the
samples (total degree 4; the 17 samples overdetermine its 15 coefficients).
"""

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidPeriodError
from .fields import (
    DOWN_ANTI,
    DOWN_HOLO,
    UP_HOLO,
    FiberGrid,
    MetricField,
    TensorField,
    dump_csv,
    harmonic_projection,
    integrate,
    scalar_field,
    spectral_derivative,
)
from .mongeampere import MongeAmpereProblem, complex_hessian, solve_ricci_flat
from .torus import PeriodFamily, PeriodMatrix, flat_metric

_OFFSET_PATTERN = (1 + 0j, -1 + 0j, 1j, -1j, 1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j)


@dataclass(frozen=True)
class SParameterStencil:
    """9-point complex stencil {0, +-h, +-ih, +-h+-ih} plus half-step copies."""

    center: complex = 0j
    step: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "step", float(self.step))
        if not self.step > 0:
            raise ValueError("stencil step must be positive")

    def offsets(self) -> tuple:
        full = tuple(self.step * p for p in _OFFSET_PATTERN)
        return (0j,) + full + tuple(o / 2 for o in full)

    def points(self) -> tuple:
        return tuple(self.center + o for o in self.offsets())


def _axis_samples(samples, step):
    return (
        samples[complex(step, 0.0)],
        samples[complex(-step, 0.0)],
        samples[complex(0.0, step)],
        samples[complex(0.0, -step)],
    )


def s_first_derivative(samples, h, conjugate=False):
    """Centered d/ds (d/ds-bar with conjugate=True) at the stencil center.

    ``samples`` maps stencil offsets to arrays.  One Richardson level over
    steps h and h/2; returns (value, gap) with gap the sup difference of the
    two levels (truncation estimate for the unextrapolated value).
    """

    def level(step):
        up, down, iup, idown = _axis_samples(samples, step)
        d_sigma = (up - down) / (2 * step)
        d_tau = (iup - idown) / (2 * step)
        rot = 1j if conjugate else -1j
        return 0.5 * (d_sigma + rot * d_tau)

    coarse, fine = level(h), level(h / 2)
    gap = float(np.max(np.abs(fine - coarse)))
    return (4 * fine - coarse) / 3, gap


def s_mixed_derivative(samples, h):
    """Centered d^2/(ds ds-bar) at the center: quarter of the base Laplacian.

    Five-point formula (u(s+-h) + u(s+-ih) - 4u)/(4h^2) with one Richardson
    level; returns (value, gap) as in s_first_derivative.
    """
    center = samples[0j]

    def level(step):
        up, down, iup, idown = _axis_samples(samples, step)
        return (up + down + iup + idown - 4 * center) / (4 * step * step)

    coarse, fine = level(h), level(h / 2)
    gap = float(np.max(np.abs(fine - coarse)))
    return (4 * fine - coarse) / 3, gap


_FIT_EXPONENTS = tuple((p, q) for p in range(5) for q in range(5) if p + q <= 4)


class _StencilFit:
    """Least-squares bivariate polynomial model of the stencil samples.

    Needed only at off-center stencil points, where no centered difference
    exists; the model is exact on polynomials of total degree <= 4 in s.
    """

    def __init__(self, stencil: SParameterStencil, samples):
        offsets = stencil.offsets()
        h = stencil.step
        design = np.array(
            [
                [(o.real / h) ** p * (o.imag / h) ** q for p, q in _FIT_EXPONENTS]
                for o in offsets
            ]
        )
        stack = np.stack([np.asarray(samples[o], dtype=complex) for o in offsets])
        coeff, *_ = np.linalg.lstsq(design, stack.reshape(len(offsets), -1), rcond=None)
        self._h = h
        self._shape = stack.shape[1:]
        self._coeff = coeff

    def _partial(self, offset, d_sigma, d_tau):
        u, v = offset.real / self._h, offset.imag / self._h
        row = np.zeros(len(_FIT_EXPONENTS))
        for j, (p, q) in enumerate(_FIT_EXPONENTS):
            if p < d_sigma or q < d_tau:
                continue
            row[j] = (
                math.perm(p, d_sigma)
                * math.perm(q, d_tau)
                * u ** (p - d_sigma)
                * v ** (q - d_tau)
            )
        vals = (row @ self._coeff).reshape(self._shape)
        return vals / self._h ** (d_sigma + d_tau)

    def first(self, offset, conjugate=False):
        rot = 1j if conjugate else -1j
        return 0.5 * (self._partial(offset, 1, 0) + rot * self._partial(offset, 0, 1))

    def mixed(self, offset):
        return 0.25 * (self._partial(offset, 2, 0) + self._partial(offset, 0, 2))


@dataclass(frozen=True, eq=False)
class FiberPoint:
    """Stored data of the total-space form at one stencil point."""

    offset: complex
    s: complex
    omega: PeriodMatrix
    grid: FiberGrid
    metric: MetricField
    mixed_per: TensorField
    phi_ss: TensorField
    omega_prime: np.ndarray
    potential: TensorField | None = None

    def lattice_velocity(self) -> np.ndarray:
        """Chart velocity (Omega' y)^gamma at fixed (x, y), shape grid + (n,)."""
        return np.einsum("gd,...d->...g", self.omega_prime, self.grid.y_mesh())


@dataclass(frozen=True, eq=False)
class AdmissibleForm:
    """A d-closed real (1,1)-form on the family, sampled over the stencil.

    ``points`` follows the canonical stencil offset order, center first.
    """

    family: PeriodFamily
    stencil: SParameterStencil
    size: int
    points: tuple
    provenance: str

    @property
    def center(self) -> FiberPoint:
        return self.points[0]

    def at(self, s) -> FiberPoint:
        s = complex(s)
        tol = 1e-9 * max(1.0, self.stencil.step)
        for p in self.points:
            if abs(p.s - s) <= tol:
                return p
        raise ValueError(f"{s} is not a stencil point of this form")

    def samples(self, extract) -> dict:
        """Map stencil offsets to extract(point); feeds the s-derivative helpers."""
        return {p.offset: extract(p) for p in self.points}


def _closed_form_point(family, center, offset, size):
    s = center + offset
    omega = family.omega(s)
    grid = FiberGrid(omega, size)
    n = omega.n
    zero_mixed = TensorField(grid, (DOWN_ANTI,), np.zeros(grid.shape + (n,), dtype=complex))
    zero_phi = TensorField(grid, (), np.zeros(grid.shape, dtype=complex))
    return FiberPoint(
        offset, s, omega, grid, MetricField.flat(grid), zero_mixed, zero_phi,
        family.omega_prime(s),
    )


def _real_values(values):
    vals = np.asarray(values)
    if np.iscomplexobj(vals):
        if np.max(np.abs(vals.imag)) > 0:
            raise ValueError("perturbation values must be real")
        vals = vals.real
    return vals.astype(float)


def build_admissible(family: PeriodFamily, stencil: SParameterStencil,
                     size: int | None = None, mode: str = "closed-form",
                     psi=None, solver_options=None) -> AdmissibleForm:
    """Construct the total-space form on every stencil fiber.

    Closed-form mode expresses the constant reference form in the moving
    chart; every stored primitive is exactly zero except the flat fiber
    metrics, so downstream residuals isolate method error.

    Perturbed mode adds i d d-bar of a supplied real function to the
    reference form.  ``psi(grid, s)`` is evaluated on each stencil fiber and
    must return real periodic values; the fiberwise Ricci-flat solver then
    restores the restriction condition, and the mixed and base blocks are
    rebuilt from s-derivatives of the corrected total potential: with
    u(x, y, s) the potential in lattice coordinates,

        mixed_per = D_s (d_beta-bar u)
        phi_ss    = D_s D_s-bar u - |D_s (d u)|^2 in the inverse metric

    where D_s is the lattice-fixed stencil derivative (the chart correction
    cancels against the affine part of the components).
    """
    if size is None:
        size = 32 if family.n == 1 else 16
    for s in stencil.points():
        if not family.contains(s):
            raise InvalidPeriodError(
                f"stencil point {s} outside the family domain "
                f"(radius {family.domain_radius})"
            )
    if mode == "closed-form":
        points = tuple(
            _closed_form_point(family, stencil.center, off, size)
            for off in stencil.offsets()
        )
        return AdmissibleForm(family, stencil, int(size), points, "closed-form")
    if mode != "perturbed":
        raise ValueError(f"unknown mode {mode!r}; use 'closed-form' or 'perturbed'")
    if psi is None:
        raise ValueError("perturbed mode needs the perturbation psi(grid, s)")
    options = dict(solver_options or {})

    restored, potentials, gradients = [], {}, {}
    for offset in stencil.offsets():
        s = stencil.center + offset
        omega = family.omega(s)
        grid = FiberGrid(omega, size)
        flat = MetricField.flat(grid)
        psi_vals = _real_values(psi(grid, s))
        g0 = MetricField.from_values(
            grid, flat.field.values + complex_hessian(scalar_field(grid, psi_vals))
        )
        result = solve_ricci_flat(MongeAmpereProblem(g0), **options)
        total = scalar_field(grid, psi_vals + result.phi.values.real)
        potentials[offset] = total.values
        gradients[offset] = spectral_derivative(total, "anti").values
        restored.append((offset, s, omega, grid, result.metric, total))

    h = stencil.step
    fit_potential = _StencilFit(stencil, potentials)
    fit_gradient = _StencilFit(stencil, gradients)
    points = []
    for offset, s, omega, grid, metric, total in restored:
        if offset == 0j:
            mixed_vals, _ = s_first_derivative(gradients, h)
            dss_vals, _ = s_mixed_derivative(potentials, h)
        else:
            mixed_vals = fit_gradient.first(offset)
            dss_vals = fit_potential.mixed(offset)
        cross = np.einsum(
            "...ba,...b,...a->...", metric.inv, mixed_vals, np.conj(mixed_vals)
        )
        points.append(
            FiberPoint(
                offset, s, omega, grid, metric,
                TensorField(grid, (DOWN_ANTI,), mixed_vals),
                TensorField(grid, (), dss_vals - cross),
                family.omega_prime(s), total,
            )
        )
    return AdmissibleForm(family, stencil, int(size), tuple(points), "solver-corrected")


def mixed_component(w: AdmissibleForm, s) -> TensorField:
    """Full mixed block g_{s beta-bar} (affine in y, hence non-periodic)."""
    p = w.at(s)
    vals = p.mixed_per.values - np.einsum(
        "...g,...gb->...b", p.lattice_velocity(), p.metric.field.values
    )
    return TensorField(p.grid, (DOWN_ANTI,), vals, periodic=False)


def mixed_component_conjugate(w: AdmissibleForm, s) -> TensorField:
    """Full mixed block g_{alpha s-bar} = conj(g_{s alpha-bar})."""
    p = w.at(s)
    return TensorField(
        p.grid, (DOWN_HOLO,), np.conj(mixed_component(w, s).values), periodic=False
    )


def base_component(w: AdmissibleForm, s) -> TensorField:
    """Full base block g_{s s-bar} = phi_ss + |a|^2 in the fiber metric."""
    p = w.at(s)
    a = horizontal_lift(w, s).values
    norm = np.einsum("...a,...b,...ab->...", a, np.conj(a), p.metric.field.values)
    return TensorField(p.grid, (), p.phi_ss.values + norm, periodic=False)


def bordered_matrix(w: AdmissibleForm, s) -> np.ndarray:
    """(n+1) x (n+1) coefficient matrix of the form at each node.

    Row/column 0 is the base direction: [[g_ss, g_{s beta-bar}],
    [g_{alpha s-bar}, g_{alpha beta-bar}]].  Its determinant equals
    phi_ss * det(fiber metric) by the Schur complement.
    """
    p = w.at(s)
    n = p.grid.n
    out = np.zeros(p.grid.shape + (n + 1, n + 1), dtype=complex)
    out[..., 0, 0] = base_component(w, s).values
    out[..., 0, 1:] = mixed_component(w, s).values
    out[..., 1:, 0] = mixed_component_conjugate(w, s).values
    out[..., 1:, 1:] = p.metric.field.values
    return out


def horizontal_lift(w: AdmissibleForm, s) -> TensorField:
    """Fiber vector a^alpha = -g^{beta-bar alpha} g_{s beta-bar}.

    The lifted field v = d_s + a^alpha d_alpha is perpendicular to the fiber:
    <v, d_gamma> = g_{s gamma-bar} + a^alpha g_{alpha gamma-bar} = 0.
    """
    p = w.at(s)
    periodic_part = -np.einsum("...ba,...b->...a", p.metric.inv, p.mixed_per.values)
    return TensorField(
        p.grid, (UP_HOLO,), periodic_part + p.lattice_velocity(), periodic=False
    )


def kodaira_spencer(w: AdmissibleForm, s) -> TensorField:
    """Kodaira-Spencer representative A^alpha_{beta-bar} = d_beta-bar a^alpha.

    The affine part of the lift differentiates to the constant
    Omega' dy/dz-bar; the periodic part is differentiated spectrally, so the
    result is a genuine periodic tensor field.
    """
    p = w.at(s)
    periodic_part = TensorField(
        p.grid, (UP_HOLO,),
        -np.einsum("...ba,...b->...a", p.metric.inv, p.mixed_per.values),
    )
    dbar = spectral_derivative(periodic_part, "anti")
    constant = p.omega_prime @ p.grid.dydzbar
    return TensorField(p.grid, (UP_HOLO, DOWN_ANTI), dbar.values + constant)


def phi(w: AdmissibleForm, s) -> TensorField:
    """Horizontal norm phi_ss = <v, v> in the total-space form (a scalar)."""
    return w.at(s).phi_ss


def chi(w: AdmissibleForm, s, curvature) -> TensorField:
    """Horizontal norm <v, v> in the curvature form.

    ``curvature`` supplies the blocks theta_ss, theta_s_anti
    (Theta_{s beta-bar}) and theta_holo_s (Theta_{alpha s-bar}) on the fiber
    of s.  chi is an invariant scalar: the affine pieces of the lift and of
    the mixed curvature blocks cancel, so the values are periodic.
    """
    p = w.at(s)
    a = horizontal_lift(w, s).values
    vals = (
        curvature.theta_ss.values
        - np.einsum("...a,...a->...", a, curvature.theta_holo_s.values)
        - np.einsum("...b,...b->...", curvature.theta_s_anti.values, np.conj(a))
    )
    return TensorField(p.grid, (), vals)


def normalize_admissible(w: AdmissibleForm) -> AdmissibleForm:
    """Remove the fiberwise mean of phi_ss at every stencil point.

    Subtracting the pull-back correction i d d-bar (u composed with the
    projection), with d_s d_s-bar u the fiber mean of phi_ss, changes
    phi_ss (and hence g_ss) by exactly minus that mean; the fiber and mixed
    blocks are untouched.  Idempotent up to round-off.
    """
    points = []
    for p in w.points:
        mean = harmonic_projection(p.phi_ss, p.metric)
        shifted = TensorField(p.grid, (), p.phi_ss.values - mean)
        points.append(replace(p, phi_ss=shifted))
    return AdmissibleForm(w.family, w.stencil, w.size, tuple(points), w.provenance)


def pollute(w: AdmissibleForm, coefficient: float) -> AdmissibleForm:
    """Add the pull-back i d d-bar of c |s - s0|^2 composed with the projection.

    The pull-back has no fiber or mixed components; it shifts phi_ss by the
    constant c at every stencil point.  normalize_admissible removes it.
    """
    points = tuple(
        replace(p, phi_ss=TensorField(p.grid, (), p.phi_ss.values + coefficient))
        for p in w.points
    )
    return AdmissibleForm(w.family, w.stencil, w.size, points, w.provenance)


def inject_violation(w: AdmissibleForm, kind: str, eps: float) -> AdmissibleForm:
    """Deliberately break one admissibility invariant at the center point.

    Test probe for the verifiers: residuals downstream must grow at least
    proportionally to eps.  Kinds: 'restriction' bumps a metric diagonal,
    'mixed' bumps one mixed component, 'potential' adds an oscillation to
    phi_ss, 'normalization' adds a constant to phi_ss.
    """
    c = w.center
    bump = eps * np.cos(2 * np.pi * c.grid.coordinate(0))
    if kind == "restriction":
        vals = c.metric.field.values.copy()
        vals[..., 0, 0] = vals[..., 0, 0] + bump
        new_center = replace(c, metric=MetricField.from_values(c.grid, vals))
    elif kind == "mixed":
        vals = c.mixed_per.values.copy()
        vals[..., 0] = vals[..., 0] + bump
        new_center = replace(c, mixed_per=TensorField(c.grid, (DOWN_ANTI,), vals))
    elif kind == "potential":
        new_center = replace(
            c, phi_ss=TensorField(c.grid, (), c.phi_ss.values + bump)
        )
    elif kind == "normalization":
        new_center = replace(
            c, phi_ss=TensorField(c.grid, (), c.phi_ss.values + eps)
        )
    else:
        raise ValueError(f"unknown violation kind {kind!r}")
    points = tuple(new_center if p is c else p for p in w.points)
    return AdmissibleForm(w.family, w.stencil, w.size, points, w.provenance)


def d_closedness(w: AdmissibleForm) -> dict:
    """Discrete exterior-derivative residuals of the form at the center.

    Checks the mixed second-derivative symmetries d_C g_{A B-bar} =
    d_A g_{C B-bar} over fiber/fiber, fiber/base and base/base index pairs.
    Base derivatives at fixed chart coordinate z are the lattice stencil
    derivative minus the chart correction (Omega' y)^gamma d_gamma; the
    conjugate identities mirror these by realness and are not re-checked.
    """
    c = w.center
    grid, h = c.grid, w.stencil.step
    gvals = c.metric.field.values
    q = c.lattice_velocity()
    gfield = TensorField(grid, (DOWN_HOLO, DOWN_ANTI), gvals)
    dg = spectral_derivative(gfield, "holo").values  # [..., a, b, c] = d_c g_{a b-bar}

    fiber_fiber = float(np.max(np.abs(dg - np.swapaxes(dg, -3, -1))))

    # d_s|_z g_{alpha beta-bar} = d_alpha g_{s beta-bar}
    ds_g, _ = s_first_derivative(w.samples(lambda p: p.metric.field.values), h)
    lhs = ds_g - np.einsum("...g,...abg->...ab", q, dg)
    dm = spectral_derivative(c.mixed_per, "holo").values  # [..., b, a] = d_a m_b
    dq = c.omega_prime @ grid.dydz  # [gamma, alpha] = d_alpha (Omega' y)^gamma
    rhs = (
        np.swapaxes(dm, -1, -2)
        - np.einsum("ga,...gb->...ab", dq, gvals)
        - np.einsum("...g,...gba->...ab", q, dg)
    )
    fiber_base = float(np.max(np.abs(lhs - rhs)))

    # d_s|_z g_{alpha s-bar} = d_alpha g_{s s-bar}
    # g_{alpha s-bar} = mbar_alpha - qbar^gamma g_{alpha gamma-bar} with
    # mbar = conj(mixed_per); conj(Omega'(s)) is anti-holomorphic in s, so
    # the lattice D_s sees only mbar and the metric.
    qbar = np.conj(q)
    dqbar = np.conj(c.omega_prime) @ grid.dydz
    mbar = np.conj(c.mixed_per.values)
    ds_mbar, _ = s_first_derivative(
        w.samples(lambda p: np.conj(p.mixed_per.values)), h
    )
    ds_mixed_conj = ds_mbar - np.einsum("...g,...ag->...a", qbar, ds_g)
    dmbar = spectral_derivative(
        TensorField(grid, (DOWN_HOLO,), mbar), "holo"
    ).values  # [..., a, c] = d_c mbar_a
    d_mixed_conj = (
        dmbar
        - np.einsum("dg,...ad->...ag", dqbar, gvals)
        - np.einsum("...d,...adg->...ag", qbar, dg)
    )
    lhs_bb = ds_mixed_conj - np.einsum("...g,...ag->...a", q, d_mixed_conj)

    lift = TensorField(
        grid, (UP_HOLO,),
        -np.einsum("...ba,...b->...a", c.metric.inv, c.mixed_per.values),
    )
    a_full = lift.values + q
    # lift holds the periodic part of a, so a = lift + q and derivatives add
    d_lift_holo = spectral_derivative(lift, "holo").values  # [..., m, a]
    d_lift_anti = spectral_derivative(lift, "anti").values
    d_a = dq + d_lift_holo
    d_abar = dqbar + np.conj(d_lift_anti)
    dphi = spectral_derivative(c.phi_ss, "holo").values
    rhs_bb = (
        dphi
        + np.einsum("...ma,...n,...mn->...a", d_a, np.conj(a_full), gvals)
        + np.einsum("...m,...na,...mn->...a", a_full, d_abar, gvals)
        + np.einsum("...m,...n,...mna->...a", a_full, np.conj(a_full), dg)
    )
    base_base = float(np.max(np.abs(lhs_bb - rhs_bb)))

    return {
        "fiber-fiber": fiber_fiber,
        "fiber-base": fiber_base,
        "base-base": base_base,
    }


def admissibility_report(w: AdmissibleForm) -> dict:
    """Sup-norm residuals of the admissibility invariants.

    restriction: distance of each fiber block from the flat metric of its
    period matrix; realness: imaginary part of the invariant scalar phi_ss;
    normalization: largest fiberwise mean of phi_ss; d-closed-*: exterior
    derivative residuals at the center.
    """
    restriction = max(
        float(np.max(np.abs(p.metric.field.values - flat_metric(p.omega))))
        for p in w.points
    )
    realness = max(float(np.max(np.abs(p.phi_ss.values.imag))) for p in w.points)
    normalization = max(
        abs(integrate(p.phi_ss, p.metric)) for p in w.points
    )
    report = {
        "restriction": restriction,
        "realness": realness,
        "normalization": normalization,
    }
    report.update({f"d-closed-{k}": v for k, v in d_closedness(w).items()})
    return report


def save_admissible(w: AdmissibleForm, directory) -> Path:
    """Serialize to a directory of CSV grids plus a JSON manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, p in enumerate(w.points):
        tag = f"point{k:02d}"
        files = {
            "metric": f"{tag}_metric.csv",
            "mixed": f"{tag}_mixed.csv",
            "phi": f"{tag}_phi.csv",
        }
        dump_csv(
            TensorField(p.grid, (DOWN_HOLO, DOWN_ANTI), p.metric.field.values),
            out / files["metric"],
        )
        dump_csv(p.mixed_per, out / files["mixed"])
        dump_csv(p.phi_ss, out / files["phi"])
        entries.append(
            {
                "offset": [p.offset.real, p.offset.imag],
                "s": [p.s.real, p.s.imag],
                "files": files,
            }
        )
    manifest = {
        "provenance": w.provenance,
        "grid_size": w.size,
        "family": {
            "domain_radius": w.family.domain_radius,
            "coefficients": [
                [[[z.real, z.imag] for z in row] for row in np.asarray(c)]
                for c in w.family.coeffs
            ],
        },
        "stencil": {
            "center": [w.stencil.center.real, w.stencil.center.imag],
            "step": w.stencil.step,
        },
        "points": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out
