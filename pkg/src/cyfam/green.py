"""Green operator of a flat polarized torus fiber, with certified lower bounds.

The operator inverts the fiber Laplacian on mean-zero functions.  On a flat
fiber the Laplacian acts diagonally on characters with symbol
lambda(k) = 4 pi^2 k^T Q k, a positive quadratic form on the character
lattice, so the heat kernel has two geometrically convergent forms: the
spectral sum (large time) and, by Poisson summation, a Gaussian image sum
over lattice translates (small time).  The kernel

    G(u) = integral over t in (0, inf) of (p_t(u) - 1)

is integrated in closed form on both sides of the switchover t0: the
spectral tail termwise to exp(-lambda t0) / lambda, the image head to
incomplete-gamma values (exponential integral E1 in complex dimension one),
so no numerical time quadrature is involved.  The switchover t0 = 1 /
lambda_min balances the two term counts.

The lower bound -c <= G is produced by a dense offset-grid scan seeding a
local polish of the continuum kernel; the returned c adds a safety margin
(ten times the series truncation estimate plus a modulus-of-continuity
term), so sampled kernel values never fall below -c.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import math

import numpy as np
import scipy.optimize
import scipy.special

from .errors import AccuracyError, PairingError, SingularPointError
from .family import AdmissibleForm, kodaira_spencer
from .fields import (
    FiberGrid,
    MetricField,
    TensorField,
    contract,
    flat_laplacian_symbol,
    harmonic_projection,
    poisson_solve,
)
from .torus import PeriodFamily, flat_metric, jacobians

# exp(-46) ~ 1e-20: series cut below the rounding floor of order-one sums
_EXPONENT_CUT = 46.0
_CHUNK = 1024


def symbol_form(omega) -> np.ndarray:
    """Real symmetric Q with Laplacian symbol 4 pi^2 k^T Q k on characters.

    Parameters
    ----------
    omega : PeriodMatrix
        Fiber period matrix.

    Returns
    -------
    ndarray
        Positive-definite (2n, 2n) matrix over the (x, y) mode indices.
    """
    dxdz, _, dydz, _ = jacobians(omega)
    jac = np.vstack([dxdz, dydz])
    ginv = np.linalg.inv(flat_metric(omega))
    form = jac @ ginv @ jac.conj().T
    return 0.5 * (form + form.T).real


def _integer_box(radius: float, dim: int) -> np.ndarray:
    span = np.arange(-int(np.ceil(radius)), int(np.ceil(radius)) + 1)
    mesh = np.meshgrid(*([span] * dim), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim)


def _integer_ellipsoid(form: np.ndarray, bound: float):
    """Integer points with p^T form p <= bound, and their form values."""
    eig_min = float(np.linalg.eigvalsh(form)[0])
    points = _integer_box(np.sqrt(bound / eig_min) + 1.0, form.shape[0])
    quad = np.einsum("pi,ij,pj->p", points, form, points)
    keep = quad <= bound
    return points[keep], quad[keep]


def _integer_minimum(form: np.ndarray) -> float:
    """Minimum of k^T form k over nonzero integer vectors (exact boxed search)."""
    points, vals = _integer_ellipsoid(form, float(form.diagonal().min()))
    vals[np.all(points == 0, axis=1)] = np.inf
    return float(vals.min())


@dataclasses.dataclass(eq=False)
class GreenOperator:
    """Spectral realization of the Green operator of one flat fiber.

    Attributes
    ----------
    grid : FiberGrid
        Sampling lattice of the fiber.
    metric : MetricField
        Metric whose Laplacian is inverted; defaults to the flat polarized
        metric.  ``green_apply`` solves against this metric, while the
        kernel and heat-kernel closed forms always use the flat symbol.
    t0 : float
        Switchover time between the spectral and image representations;
        defaults to 1 / lambda_min.
    inv_symbol : ndarray
        Grid Fourier multipliers 1 / lambda_k (zero at k = 0).
    form : ndarray
        Quadratic form Q of the symbol, lambda(k) = 4 pi^2 k^T Q k.
    image_box : int
        Truncation radius (per axis) of the Gaussian image sums.

    Invariants: G annihilates constants, is self-adjoint and positive on
    mean-zero functions, and the kernel is even, G(u) = G(-u).
    """

    grid: FiberGrid
    metric: MetricField = None
    t0: float = None

    def __post_init__(self):
        if self.metric is None:
            self.metric = MetricField.flat(self.grid)
        if self.metric.grid is not self.grid and self.metric.grid.size != self.grid.size:
            raise PairingError("metric sampled on a different grid than the operator")
        self.form = symbol_form(self.grid.omega)
        self.lambda_min = 4.0 * np.pi**2 * _integer_minimum(self.form)
        if self.t0 is None:
            self.t0 = 1.0 / self.lambda_min
        if self.t0 <= 0:
            raise ValueError(f"switchover time must be positive, got {self.t0}")
        symbol = flat_laplacian_symbol(self.grid)
        self.inv_symbol = np.where(symbol > 0, 1.0 / np.where(symbol > 0, symbol, 1.0), 0.0)

        # spectral terms: all k != 0 with lambda(k) t0 <= cut
        points, quad = _integer_ellipsoid(
            self.form, _EXPONENT_CUT / (4.0 * np.pi**2 * self.t0)
        )
        nonzero = ~np.all(points == 0, axis=1)
        self._modes = points[nonzero].astype(float)
        self._lam = 4.0 * np.pi**2 * quad[nonzero]

        # image translates: every m whose Gaussian exponent can reach the cut
        # for some u in the centered cell, |Q^{-1}-radius of the cell| = rho
        self._form_inv = np.linalg.inv(self.form)
        self._sqrt_det = float(np.sqrt(np.linalg.det(self.form)))
        dim = self.form.shape[0]
        corners = 0.5 * np.array(list(itertools.product((-1.0, 1.0), repeat=dim)))
        rho = float(
            np.sqrt(np.einsum("pi,ij,pj->p", corners, self._form_inv, corners).max())
        )
        reach = (np.sqrt(4.0 * self.t0 * _EXPONENT_CUT) + rho) ** 2
        images, _ = _integer_ellipsoid(self._form_inv, reach)
        self._images = images.astype(float)
        self.image_box = int(np.abs(images).max())

        # truncation estimate: dropped terms each carry exp(-cut); generous count
        scale = max(1.0 / self.lambda_min, self.t0)
        count = self._modes.shape[0] + self._images.shape[0] + 16
        self.truncation = count * np.exp(-_EXPONENT_CUT) * scale

    @property
    def n(self) -> int:
        return self.grid.n

    def reduce(self, points) -> np.ndarray:
        """Map lattice coordinates to the centered fundamental cell [-1/2, 1/2]^2n."""
        arr = np.asarray(points, dtype=float)
        if arr.shape[-1] != 2 * self.n:
            raise PairingError(
                f"points need {2 * self.n} lattice coordinates, got shape {arr.shape}"
            )
        return arr - np.round(arr)


def _image_exponents(op: GreenOperator, pts: np.ndarray) -> np.ndarray:
    """Squared Q^{-1}-distances r^2(u + m) to every image, shape (P, M)."""
    shifted = pts[:, None, :] + op._images[None, :, :]
    return np.einsum("pmi,ij,pmj->pm", shifted, op._form_inv, shifted)


def _head_integral(op: GreenOperator, r2: np.ndarray) -> np.ndarray:
    """Closed form of the (0, t0] time integral of one Gaussian image.

    The integral is r^{2-2n} Gamma(n-1, r^2 / 4 t0) / (4 pi^n); the upper
    incomplete gamma at integer order n - 1 >= 1 is the finite exponential
    sum (n-2)! e^{-v} sum_{j<n-1} v^j / j!, and at order 0 (n = 1) the
    exponential integral E1.
    """
    v0 = r2 / (4.0 * op.t0)
    if op.n == 1:
        return scipy.special.exp1(v0) / (4.0 * np.pi)
    partial = sum(v0**j / math.factorial(j) for j in range(op.n - 1))
    tail = math.factorial(op.n - 2) * np.exp(-v0) * partial
    return r2 ** (1 - op.n) / (4.0 * np.pi**op.n) * tail


def _kernel_at_points(op: GreenOperator, pts: np.ndarray) -> np.ndarray:
    coeff = np.exp(-op._lam * op.t0) / op._lam
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], _CHUNK):
        block = pts[start : start + _CHUNK]
        r2 = _image_exponents(op, block)
        if float(r2.min()) < 1e-28:
            raise SingularPointError("Green kernel evaluated on the diagonal")
        head = _head_integral(op, r2).sum(axis=1) / op._sqrt_det - op.t0
        phase = 2.0 * np.pi * (block @ op._modes.T)
        out[start : start + block.shape[0]] = head + np.cos(phase) @ coeff
    return out


def green_kernel(op: GreenOperator, u):
    """Green kernel G(u) at lattice offset(s) u.

    Parameters
    ----------
    op : GreenOperator
    u : array_like
        Lattice coordinates (x_1..x_n, y_1..y_n), shape (2n,) or (P, 2n).

    Returns
    -------
    float or ndarray
        Mean-zero, even, diverges to +infinity on the diagonal.
    """
    pts = op.reduce(u)
    scalar = pts.ndim == 1
    vals = _kernel_at_points(op, np.atleast_2d(pts))
    return float(vals[0]) if scalar else vals


def heat_kernel(op: GreenOperator, t: float, u):
    """Heat kernel p_t(u): spectral sum for t >= t0, Gaussian images below.

    Parameters
    ----------
    op : GreenOperator
    t : float
        Positive time.
    u : array_like
        Lattice coordinates, shape (2n,) or (P, 2n).

    Returns
    -------
    float or ndarray
    """
    if t <= 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    pts = op.reduce(u)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if t >= op.t0:
        vals = _heat_spectral(op, t, pts)
    else:
        vals = _heat_images(op, t, pts)
    return float(vals[0]) if scalar else vals


def _heat_spectral(op: GreenOperator, t: float, pts: np.ndarray) -> np.ndarray:
    phase = 2.0 * np.pi * (pts @ op._modes.T)
    return 1.0 + np.cos(phase) @ np.exp(-op._lam * t)


def _heat_images(op: GreenOperator, t: float, pts: np.ndarray) -> np.ndarray:
    r2 = _image_exponents(op, pts)
    gaussians = np.exp(-r2 / (4.0 * t)).sum(axis=1)
    return gaussians / ((4.0 * np.pi * t) ** op.n * op._sqrt_det)


def _scan_lattice(op: GreenOperator, size: int) -> np.ndarray:
    """Offset scan lattice ((j + 1/2) / size per axis), shape (size^2n, 2n)."""
    axis = (np.arange(size) + 0.5) / size
    mesh = np.meshgrid(*([axis] * (2 * op.n)), indexing="ij")
    return op.reduce(np.stack(mesh, axis=-1).reshape(-1, 2 * op.n))


def green_apply(op: GreenOperator, chi: TensorField) -> TensorField:
    """Apply G: solve box u = chi - H(chi) with H(u) = 0.

    Parameters
    ----------
    op : GreenOperator
    chi : TensorField
        Scalar field on the operator grid.

    Returns
    -------
    TensorField
        G(chi); constants map to zero and the result is mean-free.
    """
    if chi.rank != 0:
        raise PairingError("green_apply expects a scalar field")
    if chi.grid.size != op.grid.size or chi.grid.omega != op.grid.omega:
        raise PairingError("field sampled on a different grid than the operator")
    mean = harmonic_projection(chi, op.metric)
    centered = TensorField(chi.grid, (), chi.values - mean)
    if float(np.max(np.abs(centered.values))) < 1e-15:
        return TensorField(chi.grid, (), np.zeros(chi.grid.shape, dtype=complex))
    return poisson_solve(centered, op.metric)


@dataclasses.dataclass
class GreenBound:
    """Certified kernel lower bound G >= -c for one fiber.

    ``minimum`` is the polished kernel minimum, ``c = -minimum + margin``
    with ``margin = 10 * truncation + continuity`` (series truncation
    estimate and modulus-of-continuity term at the polish radius).
    """

    c: float
    minimum: float
    minimizer: np.ndarray
    margin: float
    truncation: float
    continuity: float
    scan_size: int

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "kernel-minimum": self.minimum,
            "minimizer": [float(v) for v in self.minimizer],
            "margin": self.margin,
            "scan-size": self.scan_size,
        }


def bound_report(op: GreenOperator, tol: float, scan_size: int = None) -> GreenBound:
    """Locate the kernel minimum and certify a lower bound G >= -c.

    A dense offset-lattice scan picks the basin, a local polish of the
    continuum kernel refines the minimum, so the returned c does not depend
    on the scan resolution beyond basin selection.

    Parameters
    ----------
    op : GreenOperator
    tol : float
        Required bound precision; the margin must stay below it.
    scan_size : int, optional
        Scan points per axis; defaults to 32 (n = 1) or 10 (n >= 2).

    Returns
    -------
    GreenBound

    Raises
    ------
    AccuracyError
        If the achievable margin does not meet ``tol`` (in particular for
        tol <= 0).
    """
    if scan_size is None:
        scan_size = 32 if op.n == 1 else 10
    lattice = _scan_lattice(op, scan_size)
    values = _kernel_at_points(op, lattice)
    start = lattice[int(np.argmin(values))]

    result = scipy.optimize.minimize(
        lambda v: _kernel_at_points(op, op.reduce(v)[None, :])[0],
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-14, "maxfev": 4000},
    )
    minimizer = result.x
    minimum = float(min(result.fun, float(values.min())))

    step = 1e-6
    eye = np.eye(2 * op.n)
    grad = np.array(
        [
            (
                _kernel_at_points(op, op.reduce(minimizer + step * eye[a])[None, :])[0]
                - _kernel_at_points(op, op.reduce(minimizer - step * eye[a])[None, :])[0]
            )
            / (2 * step)
            for a in range(2 * op.n)
        ]
    )
    continuity = float(np.linalg.norm(grad)) * 1e-8
    margin = 10.0 * op.truncation + continuity + 64 * np.finfo(float).eps * (1 + abs(minimum))
    if not tol > margin:
        raise AccuracyError(
            f"green lower bound margin {margin:.3e} cannot meet tolerance {tol:.3e} "
            f"at grid size {op.grid.size}"
        )
    return GreenBound(
        c=-minimum + margin,
        minimum=minimum,
        minimizer=np.mod(minimizer, 1.0),
        margin=margin,
        truncation=op.truncation,
        continuity=continuity,
        scan_size=scan_size,
    )


def green_lower_bound(op: GreenOperator, tol: float) -> float:
    """Certified c >= 0 with G >= -c on the fiber; see ``bound_report``."""
    return bound_report(op, tol).c


@dataclasses.dataclass
class FamilyGreenBound:
    """Kernel lower bound over sampled base points, c = max of per-fiber c.

    ``coverage`` records that the family bound is sampled, not proved
    uniformly over the continuum of base points.
    """

    c: float
    samples: list
    bounds: list
    coverage: str = "sampled-uniform"

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "coverage": self.coverage,
            "samples": [[s.real, s.imag] for s in self.samples],
            "per-fiber": [b.to_json() for b in self.bounds],
        }


def family_lower_bound(
    family: PeriodFamily,
    tol: float,
    samples=None,
    grid_size: int = None,
    per_direction: int = 9,
) -> FamilyGreenBound:
    """Kernel lower bound over a family: max of per-fiber bounds.

    Parameters
    ----------
    family : PeriodFamily
    tol : float
        Per-fiber bound precision.
    samples : sequence of complex, optional
        Base points; defaults to a per_direction^2 grid covering the domain.
    grid_size : int, optional
        Scan grid per fiber; defaults to 32 (n = 1) or 16 (n >= 2).
    per_direction : int
        Default sample count per base direction.

    Returns
    -------
    FamilyGreenBound
    """
    if samples is None:
        span = 0.6 * family.domain_radius
        line = np.linspace(-span, span, per_direction)
        samples = [
            complex(a, b) for a in line for b in line if family.contains(complex(a, b))
        ]
    samples = [complex(s) for s in samples]
    if grid_size is None:
        grid_size = 32 if family.n == 1 else 16
    bounds = [
        bound_report(GreenOperator(FiberGrid(family.omega(s), grid_size)), tol)
        for s in samples
    ]
    return FamilyGreenBound(c=max(b.c for b in bounds), samples=samples, bounds=bounds)


def verify_green_reconstruction(w: AdmissibleForm, s, op: GreenOperator) -> float:
    """Residual of the base-potential reconstruction from the deformation field.

    The normalized base potential satisfies phi_ss = G(A . A-bar) where A is
    the harmonic deformation tensor; on translation-invariant fibers both
    sides vanish identically.

    Parameters
    ----------
    w : AdmissibleForm
        Normalized form.
    s : complex
        Base point covered by the stencil.
    op : GreenOperator
        Operator on the fiber grid at s.

    Returns
    -------
    float
        sup |phi_ss - G(A . A-bar)|.
    """
    point = w.at(s)
    a = kodaira_spencer(w, s)
    density = contract(a, a.conj(), [(0, 0), (1, 1)], point.metric)
    reconstructed = green_apply(op, density)
    return float(np.max(np.abs(point.phi_ss.values - reconstructed.values)))


def dump_kernel_profile(op: GreenOperator, path, count: int = 128) -> None:
    """Write kernel profiles along the cell diagonal and the (1/2, .) line.

    CSV columns: line label, parameter t, the 2n lattice coordinates, G.
    Diagonal samples are offset by half a step to dodge the singularity.
    """
    dim = 2 * op.n
    rows = []
    for j in range(count):
        t = (j + 0.5) / count
        u = np.full(dim, t)
        rows.append(("diagonal", t, u, green_kernel(op, u)))
    for j in range(count):
        t = j / count
        u = np.full(dim, 0.5)
        u[-1] = t
        rows.append(("half-line", t, u, green_kernel(op, u)))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["line", "t"] + [f"u{a + 1}" for a in range(dim)] + ["green"])
        for label, t, u, value in rows:
            writer.writerow([label, f"{t:.17g}"] + [f"{v:.17g}" for v in u] + [f"{value:.17g}"])
