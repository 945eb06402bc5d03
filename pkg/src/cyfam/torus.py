"""Polarized torus fibers and their one-parameter families.

A fiber is the complex torus C^n / (Z^n + Omega Z^n) with Omega in the Siegel
upper half-space (symmetric, positive-definite imaginary part), carrying the
principal polarization sum_j dx^j ^ dy^j, where z = x + Omega y are the
lattice coordinates.  This module holds the closed-form ground truth the rest
of the package is tested against: the flat Ricci-flat metric, the constant
Kodaira-Spencer representative of a family, the Weil-Petersson pairing, and
the theta-function Green kernel for n = 1.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import AccuracyError, InvalidPeriodError, SingularPointError

_SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PeriodMatrix:
    """Symmetric n x n complex matrix with positive-definite imaginary part."""

    matrix: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, PeriodMatrix):
            return NotImplemented
        return self.matrix.shape == other.matrix.shape and np.array_equal(
            self.matrix, other.matrix
        )

    def __hash__(self):
        return hash((self.matrix.shape, self.matrix.tobytes()))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidPeriodError(f"period matrix must be square, got shape {m.shape}")
        sym_defect = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if sym_defect > _SYMMETRY_TOL:
            raise InvalidPeriodError(f"period matrix not symmetric (defect {sym_defect:.3e})")
        im_eigs = np.linalg.eigvalsh(m.imag)
        if im_eigs.min() <= 0.0:
            raise InvalidPeriodError(
                f"imaginary part not positive definite (min eigenvalue {im_eigs.min():.3e})"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def imag(self) -> np.ndarray:
        return self.matrix.imag


def jacobians(omega: PeriodMatrix):
    """Constant chart Jacobians of the lattice coordinates (x, y) in z = x + Omega y.

    Returns
    -------
    dxdz, dxdzbar, dydz, dydzbar : ndarray
        d x^j / d z^alpha is ``dxdz[j, alpha]`` and so on.  From
        y = (Omega - conj Omega)^{-1} (z - conj z) and x = z - Omega y.
    """
    om = omega.matrix
    n = omega.n
    p = np.linalg.inv(om - om.conj())
    return np.eye(n) - om @ p, om @ p, p, -p


def flat_metric(omega: PeriodMatrix) -> np.ndarray:
    """Coefficient matrix g_{alpha beta-bar} of the flat polarized metric.

    The polarization sum_j dx^j ^ dy^j equals (i/2) (Im Omega)^{-1}_{ab}
    dz^a ^ dz-bar^b in lattice coordinates, so g = (1/2) (Im Omega)^{-1},
    constant on the fiber, and the induced volume is exactly 1.
    """
    return 0.5 * np.linalg.inv(omega.imag).astype(complex)


def polarized_volume(omega: PeriodMatrix) -> float:
    """Volume of the fiber in the polarized normalization (identically 1)."""
    g = flat_metric(omega)
    n = omega.n
    return float(np.linalg.det(g).real * 2**n * np.linalg.det(omega.imag))


@dataclass(frozen=True, eq=False)
class PeriodFamily:
    """Polynomial family Omega(s) = sum_k coeffs[k] s^k over a disc |s| <= domain_radius."""

    coeffs: tuple
    domain_radius: float

    def __post_init__(self):
        cs = tuple(np.asarray(c, dtype=complex) for c in self.coeffs)
        if not cs:
            raise InvalidPeriodError("family needs at least the constant coefficient")
        object.__setattr__(self, "coeffs", cs)
        if self.domain_radius <= 0:
            raise InvalidPeriodError("domain_radius must be positive")
        # Sampled domain validation: center plus a ring on the boundary circle.
        for s in [0.0] + [
            self.domain_radius * np.exp(2j * np.pi * k / 16) for k in range(16)
        ]:
            self.omega(s)

    @property
    def n(self) -> int:
        return self.coeffs[0].shape[0]

    def contains(self, s: complex) -> bool:
        return abs(s) <= self.domain_radius + 1e-15

    def omega(self, s: complex) -> PeriodMatrix:
        """Evaluate Omega(s), validating the result."""
        m = np.zeros_like(self.coeffs[0])
        for k, c in enumerate(self.coeffs):
            m = m + c * s**k
        return PeriodMatrix(m)

    def omega_prime(self, s: complex) -> np.ndarray:
        """Exact polynomial derivative Omega'(s)."""
        m = np.zeros_like(self.coeffs[0])
        for k, c in enumerate(self.coeffs):
            if k >= 1:
                m = m + k * c * s ** (k - 1)
        return m


def ks_closed_form(family: PeriodFamily, s: complex) -> np.ndarray:
    """Constant harmonic Kodaira-Spencer representative of d/ds at s.

    Returns A with A[alpha, beta] = A^alpha_{beta-bar}
    = -(Omega'(s) (Omega(s) - conj Omega(s))^{-1})[alpha, beta].
    The coefficient is constant on the fiber; it is the d-bar derivative of
    the horizontal lift Omega'(s) y.
    """
    om = family.omega(s).matrix
    return -family.omega_prime(s) @ np.linalg.inv(om - om.conj())


def wp_closed_form(family: PeriodFamily, s: complex) -> float:
    """Weil-Petersson pairing G^WP_{s s-bar} of the family direction at s.

    Computed as the metric contraction of the constant Kodaira-Spencer
    representative (fiber volume is 1), cross-checked against the analytic
    second derivative -d_s d_s-bar log det Im Omega(s); the two must agree
    to 1e-10.
    """
    a = ks_closed_form(family, s)
    g = flat_metric(family.omega(s))
    ginv = np.linalg.inv(g)
    # G^WP = A^a_{b} conj(A^c_{d}) g_{a c-bar} g^{b-bar d}
    wp = np.einsum("ab,cd,ac,bd->", a, a.conj(), g, ginv)
    b_inv = np.linalg.inv(family.omega(s).imag)
    op = family.omega_prime(s)
    wp_logdet = 0.25 * np.trace(b_inv @ op @ b_inv @ op.conj())
    if abs(wp - wp_logdet) > 1e-10:
        raise AccuracyError(
            f"Weil-Petersson cross-check failed: {wp} vs {wp_logdet} (log-det route)"
        )
    return float(wp.real)


# ---------------------------------------------------------------------------
# Theta-function Green kernel oracle (n = 1)
# ---------------------------------------------------------------------------


def _product_terms(im_tau: float) -> int:
    # Truncation of the triple product; the worst factor decays like
    # exp(-pi Im(tau) (2m - 1)) once |y| <= 1/2.
    return max(8, int(np.ceil(14.0 * np.log(10.0) / (np.pi * im_tau))) + 2)


def _log_abs_theta1(z, tau: complex):
    """log |theta_1(z; tau)| for Im(z)/Im(tau) in [-1/2, 1/2], vectorized.

    Triple product: theta_1 = 2 q^{1/8} sin(pi z) prod_m (1-q^m)(1-q^m w)(1-q^m / w)
    with q = exp(2 pi i tau) and w = exp(2 pi i z).
    """
    z = np.asarray(z, dtype=complex)
    q = np.exp(2j * np.pi * tau)
    w = np.exp(2j * np.pi * z)
    with np.errstate(divide="ignore"):
        # log(0) = -inf at lattice points is intended; callers map it to a
        # singular-point error.
        out = -np.pi * tau.imag / 4.0 + np.log(np.abs(2.0 * np.sin(np.pi * z)))
        for m in range(1, _product_terms(tau.imag) + 1):
            qm = q**m
            out = out + np.log(np.abs(1.0 - qm))
            out = out + np.log(np.abs(1.0 - qm * w)) + np.log(np.abs(1.0 - qm / w))
    return out


def _log_abs_eta(tau: complex) -> float:
    """log |eta(tau)| from the product eta = q^{1/24} prod (1 - q^m)."""
    q = np.exp(2j * np.pi * tau)
    out = -np.pi * tau.imag / 12.0
    for m in range(1, _product_terms(tau.imag) + 1):
        out += float(np.log(np.abs(1.0 - q**m)))
    return out


def _phi_values(tau: complex, x, y):
    """Uncalibrated kernel candidate -log|theta_1(x + tau y)| + pi Im(tau) y^2.

    Inputs are lattice coordinates; they are reduced to [-1/2, 1/2) first
    (the combination is doubly periodic).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xr = x - np.round(x)
    yr = y - np.round(y)
    return -_log_abs_theta1(xr + tau * yr, tau) + np.pi * tau.imag * yr**2


def _phi_mp(tau: complex, x, y):
    """High-precision mpmath evaluation of the kernel candidate at a point."""
    taum = mpmath.mpc(tau)
    zm = mpmath.mpc(x) + taum * mpmath.mpc(y)
    q_nome = mpmath.exp(1j * mpmath.pi * taum)
    th = mpmath.jtheta(1, mpmath.pi * zm, q_nome)
    return -mpmath.log(abs(th)) + mpmath.pi * taum.imag * mpmath.mpf(y) ** 2


def _laplacian_coefficients(tau: complex):
    # box = -g^{1-bar 1} d_z d_zbar with d_z d_zbar expanded in (x, y) partials.
    p = 1.0 / (tau - np.conj(tau))
    ax, ay = 1.0 - tau * p, p          # d/dz coefficients of (x, y)
    bx, by = tau * p, -p               # d/dzbar coefficients
    ginv = 2.0 * tau.imag
    return -ginv * (ax * bx), -ginv * (ax * by + ay * bx), -ginv * (ay * by)


def _pin_alpha(tau: complex):
    """Least-squares fit of the multiplicative constant from box G = -1 off-diagonal.

    The Laplacian samples use 4th-order central differences in high-precision
    arithmetic, so the fit residual reflects the constant, not the stencil.
    """
    cxx, cxy, cyy = _laplacian_coefficients(tau)
    points = [(0.5, 0.5), (0.25, 0.5), (0.5, 0.25), (0.31, 0.62), (0.72, 0.33)]
    h = mpmath.mpf("1e-4")
    samples = []
    with mpmath.workdps(40):
        for x0, y0 in points:
            f = lambda u, v: _phi_mp(tau, u, v)
            d4 = lambda g, t: (
                -g(t + 2 * h) + 16 * g(t + h) - 30 * g(t) + 16 * g(t - h) - g(t - 2 * h)
            ) / (12 * h**2)
            dxx = d4(lambda u: f(u, mpmath.mpf(y0)), mpmath.mpf(x0))
            dyy = d4(lambda v: f(mpmath.mpf(x0), v), mpmath.mpf(y0))
            d1 = lambda g, t: (
                -g(t + 2 * h) + 8 * g(t + h) - 8 * g(t - h) + g(t - 2 * h)
            ) / (12 * h)
            dxy = d1(
                lambda u: d1(lambda v: f(u, v), mpmath.mpf(y0)), mpmath.mpf(x0)
            )
            val = complex(cxx) * complex(dxx) + complex(cxy) * complex(dxy) + complex(
                cyy
            ) * complex(dyy)
            samples.append(float(val.real))
    ell = np.array(samples)
    alpha = -float(ell.sum() / (ell**2).sum())
    residual = float(np.max(np.abs(alpha * ell + 1.0)))
    return alpha, residual


def _mean_phi(tau: complex) -> tuple[float, float]:
    """Fiber mean of the kernel candidate by Richardson-extrapolated quadrature.

    Offset-lattice sums avoid the log singularity; their error is second
    order in the spacing with a clean expansion, so two Richardson levels on
    64/128/256 grids pin the mean far below the kernel tolerances.  Returns
    (mean, discrepancy of the last Richardson level).
    """
    means = []
    for n in (64, 128, 256):
        t = (np.arange(n) + 0.5) / n
        xg, yg = np.meshgrid(t, t, indexing="ij")
        means.append(float(np.mean(_phi_values(tau, xg, yg))))
    r1 = [(4 * means[i + 1] - means[i]) / 3 for i in range(2)]
    r2 = (16 * r1[1] - r1[0]) / 15
    return r2, abs(r2 - r1[1])


@functools.lru_cache(maxsize=32)
def green_oracle_constants(tau: complex):
    """Pinned constants (alpha, beta) of the Green kernel closed form, with fit residual.

    The kernel is G(u) = alpha * (-log|theta_1(x + tau y; tau)| + pi Im(tau) y^2) + beta.
    alpha comes from fitting the defining property box G = -1 off the diagonal
    (fit residual asserted < 1e-9); beta makes the fiber mean vanish and is
    cross-checked against the eta-function closed form (1/pi) log|eta(tau)|.
    """
    tau = complex(tau)
    if tau.imag <= 0:
        raise InvalidPeriodError(f"tau must lie in the upper half plane, got {tau}")
    alpha, fit_residual = _pin_alpha(tau)
    if fit_residual >= 1e-9:
        raise AccuracyError(f"Green constant fit residual {fit_residual:.3e} >= 1e-9")
    mean, mean_err = _mean_phi(tau)
    beta = -alpha * mean
    beta_eta = alpha * _log_abs_eta(tau)
    if abs(beta - beta_eta) > 1e-8 + 10 * mean_err:
        raise AccuracyError(
            f"Green mean constant {beta} disagrees with eta closed form {beta_eta}"
        )
    return alpha, beta, fit_residual


def theta_green_oracle(tau: complex, u):
    """Green kernel of the flat polarized metric on C/(Z + tau Z) at lattice offset u.

    Satisfies box G = delta_0 - 1 (unit-mass measure) and integral G g dV = 0;
    diverges to +infinity on the diagonal.

    Parameters
    ----------
    tau : complex
        Fiber modulus, Im(tau) > 0.
    u : pair of floats or arrays
        Lattice coordinates (x, y) of the offset.

    Returns
    -------
    float or ndarray
    """
    tau = complex(tau)
    alpha, beta, _ = green_oracle_constants(tau)
    x, y = u
    vals = alpha * _phi_values(tau, x, y) + beta
    scalar = np.ndim(vals) == 0
    arr = np.atleast_1d(vals)
    if not np.all(np.isfinite(arr)):
        raise SingularPointError("Green kernel evaluated on the diagonal")
    return float(vals) if scalar else vals


# ---------------------------------------------------------------------------
# Preset registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    """A named family template.

    ``at`` selects the fiber: for n = 1 templates it is the modulus tau of the
    center fiber (the family is re-centered there); for n >= 2 it is the base
    point s itself.
    """

    name: str
    n: int
    description: str
    default_at: complex
    default_grid: int
    _factory: callable = field(repr=False)

    def family(self, at: complex | None = None) -> PeriodFamily:
        return self._factory(self.default_at if at is None else complex(at))

    def base_point(self, at: complex | None = None) -> complex:
        if self.n == 1:
            return 0.0 + 0.0j  # family re-centered at the requested tau
        return complex(self.default_at if at is None else at)


def _elliptic_factory(tau: complex) -> PeriodFamily:
    t = complex(tau)
    if t.imag <= 0:
        raise InvalidPeriodError(f"elliptic modulus needs Im(tau) > 0, got {t}")
    return PeriodFamily(
        coeffs=(np.array([[t]]), np.array([[1.0 + 0j]])),
        domain_radius=t.imag / 2.0,
    )


def _constant_factory(_at: complex) -> PeriodFamily:
    return PeriodFamily(coeffs=(np.array([[1j]]), np.array([[0.0 + 0j]])), domain_radius=1.0)


def _siegel_e_factory(_at: complex) -> PeriodFamily:
    e = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    return PeriodFamily(coeffs=(1j * np.eye(2), e), domain_radius=0.45)


def _product_factory(_at: complex) -> PeriodFamily:
    return PeriodFamily(
        coeffs=(np.diag([1j, 2j]), np.eye(2, dtype=complex)),
        domain_radius=0.45,
    )


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in [
        Preset("elliptic", 1, "elliptic curves, Omega(s) = tau + s (default tau = i)",
               1j, 32, _elliptic_factory),
        Preset("elliptic2i", 1, "elliptic curves, Omega(s) = tau + s (default tau = 2i)",
               2j, 32, _elliptic_factory),
        Preset("constant", 1, "constant family Omega(s) = i (non-effective direction)",
               0j, 32, _constant_factory),
        Preset("siegel-e", 2, "Omega(s) = i I_2 + s E with E the off-diagonal swap",
               0j, 16, _siegel_e_factory),
        Preset("product", 2, "product of two elliptic families, Omega(s) = diag(i+s, 2i+s)",
               0j, 16, _product_factory),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
