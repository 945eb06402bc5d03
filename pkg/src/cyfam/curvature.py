"""Curvature of the relative canonical bundle and its identities.

The fiberwise Ricci-flat metrics induce the hermitian metric (det g)^{-1} on
the relative canonical bundle; its curvature form has fiber, mixed, and base
blocks, all assembled here from two periodic primitives of L = log det g on
the stencil fibers:

* the fiber Hessian H_{alpha beta-bar} = d_alpha d_beta-bar L (spectral), and
* the mixed primitive M_beta-bar, the s-derivative of the sampled fiber
  gradients d_beta-bar L (centered stencil differences, one Richardson level).

In the moving chart z = x + Omega(s) y the full blocks pick up affine terms
in the lattice velocity q = Omega'(s) y:

    Theta_{s beta-bar}  = M_beta-bar - q^gamma H_{gamma beta-bar}
    Theta_{alpha s-bar} = conj(M)_alpha - qbar^delta H_{alpha delta-bar}
    Theta_{s s-bar}     = D_s D_s-bar L - qbar.M - q.conj(M) + q.qbar.H

where D_s D_s-bar L is the five-point second derivative of the sampled
values of L at fixed lattice coordinates.  (The cross terms between the
chart motion and the s-dependence of the fiber charts cancel exactly, by the
same commutator identity that makes the metric potential's base block
periodic, so the formulas above are exact, not truncations.)

Every identity tying the curvature to the Kodaira-Spencer form and the
Weil-Petersson metric is evaluated as a sup-norm residual; curvature_report
collects them with tolerances into a JSON-serializable record.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError
from .fields import (
    DOWN_ANTI,
    DOWN_HOLO,
    UP_HOLO,
    FiberGrid,
    MetricField,
    TensorField,
    christoffel,
    constant_tensor,
    contract,
    covariant_derivative,
    integrate,
    laplacian,
    scalar_field,
    spectral_derivative,
)
from .family import (
    AdmissibleForm,
    chi,
    kodaira_spencer,
    s_first_derivative,
    s_mixed_derivative,
)
from .torus import PeriodFamily


def flat_model_curvature(family: PeriodFamily, s: complex) -> float:
    """Base curvature -d_s d_s-bar log det Im Omega(s) of the flat model.

    Closed-form reference for the stencil value of Theta_{s s-bar}: on a
    family of flat fibers det g = det(Im Omega)^{-1} / 2^n, so the base block
    reduces to this second derivative of the period matrix alone.
    """
    b_inv = np.linalg.inv(family.omega(s).imag)
    op = family.omega_prime(s)
    return float(np.real(0.25 * np.trace(b_inv @ op @ b_inv @ op.conj())))


@dataclass(frozen=True, eq=False)
class CurvatureTensor:
    """Curvature blocks of the relative canonical bundle at one base point.

    ``theta_fiber`` and ``mixed_per`` are the periodic primitives described
    in the module docstring; the full mixed blocks (affine in the lattice
    velocity) are exposed as properties.  ``theta_ss`` stores the full base
    block; ``gaps`` records the Richardson disagreement of each stencil
    derivative (the sup difference between the extrapolated and fine-step
    values, a truncation-error estimate).
    """

    s: complex
    grid: FiberGrid
    omega_prime: np.ndarray
    log_density: TensorField
    theta_fiber: TensorField
    mixed_per: TensorField
    theta_ss: TensorField
    flat_model: float
    step: float
    gaps: dict

    def lattice_velocity(self) -> np.ndarray:
        """Chart velocity q = Omega'(s) y on the grid, shape grid + (n,)."""
        return np.einsum("gd,...d->...g", self.omega_prime, self.grid.y_mesh())

    @property
    def theta_s_anti(self) -> TensorField:
        """Full mixed block Theta_{s beta-bar}; affine in y, not periodic."""
        vals = self.mixed_per.values - np.einsum(
            "...g,...gb->...b", self.lattice_velocity(), self.theta_fiber.values
        )
        return TensorField(self.grid, (DOWN_ANTI,), vals, periodic=False)

    @property
    def theta_holo_s(self) -> TensorField:
        """Full mixed block Theta_{alpha s-bar}; conjugate-symmetric partner."""
        vals = np.conj(self.mixed_per.values) - np.einsum(
            "...d,...ad->...a",
            np.conj(self.lattice_velocity()),
            self.theta_fiber.values,
        )
        return TensorField(self.grid, (DOWN_HOLO,), vals, periodic=False)

    def hermitian_defect(self) -> float:
        """sup |Theta_{alpha s-bar} - conj(Theta_{s alpha-bar})|.

        Analytically zero; numerically bounded by the anti-Hermitian part of
        the fiber Hessian of L (aliasing noise for near-constant L).
        """
        return float(
            np.max(np.abs(self.theta_holo_s.values - np.conj(self.theta_s_anti.values)))
        )

    def base_mean(self) -> float:
        """Fiber average of the base block (fiber-constant up to residuals)."""
        return float(np.mean(self.theta_ss.values.real))


def relative_canonical_curvature(
    w: AdmissibleForm, s: complex | None = None, tolerance: float | None = 1e-6
) -> CurvatureTensor:
    """Assemble the curvature blocks at the stencil center.

    L = log det g is sampled on every stencil fiber; the base block uses the
    five-point second derivative with one Richardson level, the mixed blocks
    the centered first derivative of the sampled fiber gradients.  Raises
    AccuracyError when the Richardson disagreement of either stencil
    derivative exceeds 10 x tolerance (step too coarse for the requested
    accuracy); ``tolerance=None`` skips the gate and only records the
    disagreements, for report paths that grade them as an entry instead.
    """
    if s is None:
        s = w.stencil.center
    p = w.at(s)
    if p.offset != 0j:
        raise ValueError(
            "curvature stencil derivatives are centered: rebuild the family "
            f"with center {s} to evaluate there"
        )
    h = w.stencil.step

    logs = {}
    grads = {}
    for point in w.points:
        ell = np.log(point.metric.det)
        logs[point.offset] = ell
        field = scalar_field(point.grid, ell)
        grads[point.offset] = spectral_derivative(field, "anti").values

    mixed_vals, gap_mixed = s_first_derivative(grads, h)
    dss_vals, gap_base = s_mixed_derivative(logs, h)
    # Richardson correction size |extrapolated - fine| = (fine - coarse)/3.
    gaps = {"mixed": gap_mixed / 3.0, "base": gap_base / 3.0}
    worst = max(gaps.values())
    if tolerance is not None and worst > 10.0 * tolerance:
        raise AccuracyError(
            f"stencil step {h:g} too coarse: Richardson disagreement "
            f"{worst:.3e} exceeds 10 x tolerance {tolerance:g}"
        )

    log_density = scalar_field(p.grid, logs[0j])
    grad_field = TensorField(p.grid, (DOWN_ANTI,), grads[0j])
    hess = spectral_derivative(grad_field, "holo").values  # [..., b, a]
    hess = np.swapaxes(hess, -1, -2)  # H_{alpha beta-bar}
    theta_fiber = TensorField(p.grid, (DOWN_HOLO, DOWN_ANTI), hess)
    mixed_per = TensorField(p.grid, (DOWN_ANTI,), mixed_vals)

    q = p.lattice_velocity()
    theta_ss_vals = (
        dss_vals
        - np.einsum("...d,...d->...", np.conj(q), mixed_vals)
        - np.einsum("...g,...g->...", q, np.conj(mixed_vals))
        + np.einsum("...g,...d,...gd->...", q, np.conj(q), hess)
    )
    theta_ss = TensorField(p.grid, (), theta_ss_vals, periodic=False)

    return CurvatureTensor(
        s=complex(s),
        grid=p.grid,
        omega_prime=p.omega_prime,
        log_density=log_density,
        theta_fiber=theta_fiber,
        mixed_per=mixed_per,
        theta_ss=theta_ss,
        flat_model=flat_model_curvature(w.family, s),
        step=h,
        gaps=gaps,
    )


def wp_metric(w: AdmissibleForm, s: complex | None = None) -> float:
    """Weil-Petersson pairing of the family direction with itself at s.

    L2 inner product of the Kodaira-Spencer representative against itself,
    contracted with the fiber metric and integrated over the unit-volume
    fiber.  Nonnegative; zero exactly when the direction is non-effective.
    """
    if s is None:
        s = w.stencil.center
    p = w.at(s)
    a_form = kodaira_spencer(w, s)
    inner = contract(a_form, a_form.conj(), [(0, 0), (1, 1)], p.metric)
    return float(integrate(inner, p.metric).real)


def first_chern_residuals(
    w: AdmissibleForm, s: complex | None = None, theta: CurvatureTensor | None = None
) -> dict:
    """Fiber-integrated curvature against the Weil-Petersson form.

    ``base``: sup |Theta_{s s-bar} - G^WP| over the fiber (unit fiber
    volume); ``mixed``: sup of both mixed-block magnitudes, which vanish for
    the curvature of a family of Ricci-flat fibers.
    """
    theta = theta if theta is not None else relative_canonical_curvature(w, s)
    wp = wp_metric(w, s)
    base = float(np.max(np.abs(theta.theta_ss.values - wp)))
    mixed = max(theta.theta_s_anti.sup_norm(), theta.theta_holo_s.sup_norm())
    return {"base": base, "mixed": mixed}


def ks_identity_residuals(w: AdmissibleForm, s: complex | None = None) -> dict:
    """Harmonicity of the Kodaira-Spencer representative A = dbar(lift).

    ``symmetry``: the interior product of A with the fiber form vanishes,
    i.e. A lowered with g is symmetric; ``closedness``: the covariant
    antiholomorphic derivative is symmetric in its two anti indices (dbar A
    = 0); ``coclosedness``: the metric divergence vanishes (dbar* A = 0).
    """
    s = s if s is not None else w.stencil.center
    p = w.at(s)
    a_form = kodaira_spencer(w, s)
    g = p.metric
    lowered = np.einsum("...ab,...ad->...bd", a_form.values, g.field.values)
    symmetry = float(np.max(np.abs(lowered - np.swapaxes(lowered, -1, -2))))
    cov_anti = covariant_derivative(a_form, g, "anti").values
    closedness = float(np.max(np.abs(cov_anti - np.swapaxes(cov_anti, -1, -2))))
    cov_holo = covariant_derivative(a_form, g, "holo").values
    divergence = np.einsum("...bg,...abg->...a", g.inv, cov_holo)
    coclosedness = float(np.max(np.abs(divergence)))
    return {
        "symmetry": symmetry,
        "closedness": closedness,
        "coclosedness": coclosedness,
    }


def mixed_parallel_residuals(
    w: AdmissibleForm, s: complex | None = None, theta: CurvatureTensor | None = None
) -> dict:
    """Rigidity of the mixed curvature blocks along the fibers.

    ``holomorphy``: sup |d_beta-bar Theta_{alpha s-bar}| (the coefficients of
    the mixed (1,0)-block are fiberwise holomorphic); ``parallel-holo`` and
    ``parallel-anti``: sup of the covariant fiber derivatives of the two
    mixed blocks, which vanish identically for Ricci-flat fibers.

    The blocks are affine in the lattice velocity, so the spectral
    derivatives act on the periodic primitives and the constant chart
    Jacobians supply the affine contributions.
    """
    s = s if s is not None else w.stencil.center
    theta = theta if theta is not None else relative_canonical_curvature(w, s)
    p = w.at(s)
    g = p.metric
    grid = p.grid
    q = theta.lattice_velocity()
    qbar = np.conj(q)
    hess = theta.theta_fiber.values
    # Constant derivatives of the chart velocity: d q^g / d z-bar^d etc.
    dq_anti = theta.omega_prime @ grid.dydzbar
    dqbar_anti = np.conj(theta.omega_prime) @ grid.dydzbar
    dqbar_holo = np.conj(theta.omega_prime) @ grid.dydz

    dm_holo = spectral_derivative(theta.mixed_per, "holo").values  # [..., b, g]
    dm_anti = spectral_derivative(theta.mixed_per, "anti").values  # [..., b, d]
    dh_holo = spectral_derivative(theta.theta_fiber, "holo").values  # [..., a, d, g]
    dh_anti = spectral_derivative(theta.theta_fiber, "anti").values  # [..., a, d, b]

    # d_beta-bar Theta_{alpha s-bar}
    dbar_of_holo = (
        np.conj(dm_holo)
        - np.einsum("db,...ad->...ab", dqbar_anti, hess)
        - np.einsum("...d,...adb->...ab", qbar, dh_anti)
    )
    holomorphy = float(np.max(np.abs(dbar_of_holo)))

    gam = christoffel(g)
    holo_s = theta.theta_holo_s.values
    d_of_holo = (
        np.conj(dm_anti)
        - np.einsum("dg,...ad->...ag", dqbar_holo, hess)
        - np.einsum("...d,...adg->...ag", qbar, dh_holo)
    )
    cov_holo = d_of_holo - np.einsum("...dga,...d->...ag", gam, holo_s)
    parallel_holo = float(np.max(np.abs(cov_holo)))

    s_anti = theta.theta_s_anti.values
    dbar_of_anti = (
        dm_anti
        - np.einsum("gd,...gb->...bd", dq_anti, hess)
        - np.einsum("...g,...gbd->...bd", q, dh_anti)
    )
    cov_anti = dbar_of_anti - np.einsum("...gdb,...g->...bd", np.conj(gam), s_anti)
    parallel_anti = float(np.max(np.abs(cov_anti)))

    return {
        "holomorphy": holomorphy,
        "parallel-holo": parallel_holo,
        "parallel-anti": parallel_anti,
    }


def divergence_identity_residual(
    w: AdmissibleForm, s: complex | None = None, theta: CurvatureTensor | None = None
) -> float:
    """sup |dbar*A - g^{beta-bar alpha} Theta_{s beta-bar}|.

    The divergence of the Kodaira-Spencer representative reproduces the
    raised mixed curvature block; both sides vanish for Ricci-flat fibers.
    """
    s = s if s is not None else w.stencil.center
    theta = theta if theta is not None else relative_canonical_curvature(w, s)
    p = w.at(s)
    g = p.metric
    a_form = kodaira_spencer(w, s)
    cov_holo = covariant_derivative(a_form, g, "holo").values
    dbar_star = -np.einsum("...bg,...abg->...a", g.inv, cov_holo)
    raised = np.einsum("...ba,...b->...a", g.inv, theta.theta_s_anti.values)
    return float(np.max(np.abs(dbar_star - raised)))


def chi_laplace_residual(
    w: AdmissibleForm, s: complex | None = None, theta: CurvatureTensor | None = None
) -> float:
    """sup |box chi + 2 g^{beta-bar alpha} Theta_{s beta-bar} Theta_{alpha s-bar}|.

    The horizontal norm chi of the curvature form satisfies an exact Laplace
    equation with the squared mixed block as source; on Ricci-flat fibers
    both sides vanish and the residual measures stencil and solver noise.
    """
    s = s if s is not None else w.stencil.center
    theta = theta if theta is not None else relative_canonical_curvature(w, s)
    p = w.at(s)
    chi_field = chi(w, theta.s, theta)
    box = laplacian(chi_field, p.metric).values
    square = np.einsum(
        "...ba,...b,...a->...",
        p.metric.inv,
        theta.theta_s_anti.values,
        theta.theta_holo_s.values,
    )
    return float(np.max(np.abs(box + 2.0 * square)))


def fiber_constancy_residuals(
    w: AdmissibleForm, s: complex | None = None, theta: CurvatureTensor | None = None
) -> dict:
    """Vanishing mixed blocks and fiber-constant base block.

    ``mixed-holo`` / ``mixed-anti``: sup of the two mixed blocks; ``base``:
    sup |Theta_{s s-bar} - fiber mean| (the base block of the curvature of a
    Ricci-flat family is constant on each fiber).
    """
    theta = theta if theta is not None else relative_canonical_curvature(w, s)
    vals = theta.theta_ss.values
    mean = np.mean(vals)
    return {
        "mixed-holo": theta.theta_holo_s.sup_norm(),
        "mixed-anti": theta.theta_s_anti.sup_norm(),
        "base": float(np.max(np.abs(vals - mean))),
    }


def phi_laplace_residual(
    w: AdmissibleForm, s: complex | None = None, theta: CurvatureTensor | None = None
) -> float:
    """sup |box phi + Theta_{s s-bar} - A.conj(A)|.

    The base block of the admissible form satisfies the Laplace equation
    whose source is the pointwise Kodaira-Spencer density minus the base
    curvature; integrating it against the fiber volume recovers the
    Weil-Petersson pairing.
    """
    s = s if s is not None else w.stencil.center
    theta = theta if theta is not None else relative_canonical_curvature(w, s)
    p = w.at(s)
    a_form = kodaira_spencer(w, theta.s)
    density = contract(a_form, a_form.conj(), [(0, 0), (1, 1)], p.metric).values
    box = laplacian(p.phi_ss, p.metric).values
    return float(np.max(np.abs(box + theta.theta_ss.values - density)))


def parallel_frame_residual(grid: FiberGrid, g: MetricField | None = None) -> float:
    """Covariant constancy of the constant frames under the flat metric.

    Constant vector fields, one-forms, and endomorphism fields must have
    vanishing covariant derivatives in both directions; bounds the spectral
    noise floor of the connection machinery.
    """
    g = g if g is not None else MetricField.flat(grid)
    n = grid.n
    frames = [
        constant_tensor(grid, (UP_HOLO,), np.ones(n)),
        constant_tensor(grid, (DOWN_ANTI,), np.ones(n)),
        constant_tensor(grid, (UP_HOLO, DOWN_ANTI), np.eye(n)),
    ]
    worst = 0.0
    for frame in frames:
        for kind in ("holo", "anti"):
            worst = max(worst, covariant_derivative(frame, g, kind).sup_norm())
    return worst


_REPORT_TOLERANCES = (
    ("stencil-accuracy", 1e-5),
    ("first-chern", 1e-6),
    ("ks-symmetry", 1e-8),
    ("ks-closedness", 1e-8),
    ("ks-coclosedness", 1e-8),
    ("mixed-holomorphy", 1e-6),
    ("mixed-parallel-holo", 1e-6),
    ("mixed-parallel-anti", 1e-6),
    ("divergence-identity", 1e-6),
    ("chi-laplace", 1e-6),
    ("mixed-vanishing-holo", 1e-8),
    ("mixed-vanishing-anti", 1e-8),
    ("base-constancy", 1e-6),
    ("phi-laplace", 1e-6),
    ("fiber-block", 1e-9),
    ("mixed-hermitian", 1e-10),
)


@dataclass(eq=False)
class CurvatureReport:
    """Named identity residuals with tolerances at one base point.

    ``entries`` keeps (name, residual, tolerance) in a fixed evaluation
    order so serialized reports are stable and diffable.
    """

    base_point: complex
    step: float
    weil_petersson: float
    theta_base: float
    flat_model: float
    runtime: float
    entries: list

    @property
    def passed(self) -> bool:
        return all(residual <= tol for _, residual, tol in self.entries)

    def residual(self, name: str) -> float:
        for entry, value, _ in self.entries:
            if entry == name:
                return value
        raise KeyError(f"no identity named {name!r} in the report")

    def to_json(self) -> str:
        payload = {
            "base-point": [self.base_point.real, self.base_point.imag],
            "step": self.step,
            "weil-petersson": self.weil_petersson,
            "theta-base": self.theta_base,
            "flat-model": self.flat_model,
            "runtime-seconds": self.runtime,
            "identities": [
                {
                    "name": name,
                    "residual": residual,
                    "tolerance": tol,
                    "pass": bool(residual <= tol),
                }
                for name, residual, tol in self.entries
            ],
            "pass": self.passed,
        }
        return json.dumps(payload, indent=2)


def curvature_report(
    w: AdmissibleForm,
    s: complex | None = None,
    tolerances: dict | None = None,
    accuracy_tolerance: float = 1e-6,
) -> CurvatureReport:
    """Evaluate every curvature identity at s and collect the residuals.

    ``tolerances`` overrides individual defaults by name.  The report's pass
    flag is the conjunction of all per-identity checks; stencil accuracy is
    graded as the first entry (against 10 x accuracy_tolerance) rather than
    raised, so that reports on deliberately broken forms still materialize.
    """
    started = time.perf_counter()
    if s is None:
        s = w.stencil.center
    theta = relative_canonical_curvature(w, s, tolerance=None)
    overrides = tolerances or {}
    fc = first_chern_residuals(w, s, theta)
    ks = ks_identity_residuals(w, s)
    parallel = mixed_parallel_residuals(w, s, theta)
    constancy = fiber_constancy_residuals(w, s, theta)
    residuals = {
        "stencil-accuracy": max(theta.gaps.values()),
        "first-chern": fc["base"],
        "ks-symmetry": ks["symmetry"],
        "ks-closedness": ks["closedness"],
        "ks-coclosedness": ks["coclosedness"],
        "mixed-holomorphy": parallel["holomorphy"],
        "mixed-parallel-holo": parallel["parallel-holo"],
        "mixed-parallel-anti": parallel["parallel-anti"],
        "divergence-identity": divergence_identity_residual(w, s, theta),
        "chi-laplace": chi_laplace_residual(w, s, theta),
        "mixed-vanishing-holo": constancy["mixed-holo"],
        "mixed-vanishing-anti": constancy["mixed-anti"],
        "base-constancy": constancy["base"],
        "phi-laplace": phi_laplace_residual(w, s, theta),
        "fiber-block": theta.theta_fiber.sup_norm(),
        "mixed-hermitian": theta.hermitian_defect(),
    }
    entries = []
    for name, default in _REPORT_TOLERANCES:
        if name == "stencil-accuracy":
            default = 10.0 * accuracy_tolerance
        entries.append((name, residuals[name], float(overrides.get(name, default))))
    return CurvatureReport(
        base_point=complex(s),
        step=w.stencil.step,
        weil_petersson=wp_metric(w, s),
        theta_base=theta.base_mean(),
        flat_model=theta.flat_model,
        runtime=time.perf_counter() - started,
        entries=entries,
    )
