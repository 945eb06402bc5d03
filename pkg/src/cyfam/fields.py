"""Spectral tensor calculus on a single torus fiber.

Fields live on a uniform lattice grid in the real coordinates
(x_1..x_n, y_1..y_n) of the fiber C^n / (Z^n + Omega Z^n); complex derivatives
are exact FFT multipliers built from the constant chart Jacobians of
z = x + Omega y.  Everything here is periodic data; the family module is
responsible for splitting off the affine-in-y pieces of mixed components
before calling in.

Sign convention (used everywhere downstream): the Laplacian is
box f = -g^{beta-bar alpha} d_alpha d_beta-bar f, which has NONNEGATIVE
spectrum; e.g. at tau = i the mode exp(2 pi i x) has box eigenvalue
2 pi^2 > 0.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NotSolvableError, PairingError, SolverError
from .torus import PeriodMatrix, flat_metric, jacobians

UP_HOLO = "up-holo"
DOWN_HOLO = "down-holo"
UP_ANTI = "up-anti"
DOWN_ANTI = "down-anti"
_VARIANCES = (UP_HOLO, DOWN_HOLO, UP_ANTI, DOWN_ANTI)
_CONJ_FLIP = {UP_HOLO: UP_ANTI, UP_ANTI: UP_HOLO, DOWN_HOLO: DOWN_ANTI, DOWN_ANTI: DOWN_HOLO}


def _debug_verify() -> bool:
    return os.environ.get("CYFAM_VERIFY", "") not in ("", "0")


@dataclass(frozen=True)
class FiberGrid:
    """Uniform N^{2n} lattice on a fixed fiber, with its chart Jacobians."""

    omega: PeriodMatrix
    size: int

    def __post_init__(self):
        if self.size < 8 or self.size % 2 != 0:
            raise ValueError(f"grid size must be even and >= 8, got {self.size}")
        dxdz, dxdzbar, dydz, dydzbar = jacobians(self.omega)
        object.__setattr__(self, "dxdz", dxdz)
        object.__setattr__(self, "dxdzbar", dxdzbar)
        object.__setattr__(self, "dydz", dydz)
        object.__setattr__(self, "dydzbar", dydzbar)

    @property
    def n(self) -> int:
        return self.omega.n

    @property
    def shape(self) -> tuple:
        return (self.size,) * (2 * self.n)

    @property
    def axes(self) -> tuple:
        return tuple(range(2 * self.n))

    def coordinate(self, axis: int) -> np.ndarray:
        """Full-shape mesh of lattice coordinate ``axis`` (x_1..x_n, y_1..y_n)."""
        t = np.arange(self.size) / self.size
        shape = [1] * (2 * self.n)
        shape[axis] = self.size
        return np.broadcast_to(t.reshape(shape), self.shape).copy()

    def y_mesh(self) -> np.ndarray:
        """Meshes of the y lattice coordinates, shape grid + (n,)."""
        return np.stack([self.coordinate(self.n + j) for j in range(self.n)], axis=-1)

    def modes(self) -> np.ndarray:
        """Integer Fourier modes per axis, shape grid + (2n,)."""
        k = np.fft.fftfreq(self.size, d=1.0 / self.size)
        cols = []
        for axis in range(2 * self.n):
            shape = [1] * (2 * self.n)
            shape[axis] = self.size
            cols.append(np.broadcast_to(k.reshape(shape), self.shape))
        return np.stack(cols, axis=-1)

    def dz_multipliers(self) -> np.ndarray:
        """w[..., alpha] with d_alpha e_k = 2 pi i w_alpha(k) e_k."""
        cached = getattr(self, "_dz_mult", None)
        if cached is None:
            km = self.modes()
            k1, k2 = km[..., : self.n], km[..., self.n :]
            # w_alpha = sum_j k1_j dx^j/dz^a + k2_j dy^j/dz^a
            cached = np.einsum("...j,ja->...a", k1, self.dxdz) + np.einsum(
                "...j,ja->...a", k2, self.dydz
            )
            object.__setattr__(self, "_dz_mult", cached)
        return cached

    def dzbar_multipliers(self) -> np.ndarray:
        cached = getattr(self, "_dzbar_mult", None)
        if cached is None:
            km = self.modes()
            k1, k2 = km[..., : self.n], km[..., self.n :]
            cached = np.einsum("...j,ja->...a", k1, self.dxdzbar) + np.einsum(
                "...j,ja->...a", k2, self.dydzbar
            )
            object.__setattr__(self, "_dzbar_mult", cached)
        return cached


@dataclass(eq=False)
class TensorField:
    """Grid samples of a tensor with explicit index variances.

    ``values`` has the grid shape followed by one length-n axis per index.
    ``periodic=False`` marks fields whose lattice representative jumps across
    the unit cell (e.g. horizontal-lift values); spectral operations refuse
    them.
    """

    grid: FiberGrid
    variance: tuple
    values: np.ndarray
    periodic: bool = True

    def __post_init__(self):
        self.variance = tuple(self.variance)
        for v in self.variance:
            if v not in _VARIANCES:
                raise PairingError(f"unknown variance tag {v!r}")
        want = self.grid.shape + (self.grid.n,) * len(self.variance)
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != want:
            raise ValueError(f"values shape {vals.shape} != expected {want}")
        self.values = vals

    @property
    def rank(self) -> int:
        return len(self.variance)

    def conj(self) -> "TensorField":
        return TensorField(
            self.grid,
            tuple(_CONJ_FLIP[v] for v in self.variance),
            self.values.conj(),
            periodic=self.periodic,
        )

    def _binary(self, other, op):
        if not isinstance(other, TensorField):
            raise TypeError("can only combine TensorFields")
        if other.grid is not self.grid and other.grid != self.grid:
            raise ValueError("fields live on different grids")
        if other.variance != self.variance:
            raise PairingError(
                f"variance mismatch {self.variance} vs {other.variance}"
            )
        return TensorField(
            self.grid, self.variance, op(self.values, other.values),
            periodic=self.periodic and other.periodic,
        )

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def scaled(self, factor) -> "TensorField":
        """Multiply by a constant or a scalar field (grid-shaped array)."""
        f = np.asarray(factor)
        if f.ndim > 0:
            f = f.reshape(f.shape + (1,) * self.rank)
        return TensorField(self.grid, self.variance, self.values * f, periodic=self.periodic)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def scalar_field(grid: FiberGrid, values, periodic: bool = True) -> TensorField:
    return TensorField(grid, (), np.broadcast_to(np.asarray(values, dtype=complex),
                                                 grid.shape).copy(), periodic=periodic)


def constant_tensor(grid: FiberGrid, variance, matrix) -> TensorField:
    """Tensor field with the same coefficients at every node."""
    variance = tuple(variance)
    m = np.asarray(matrix, dtype=complex)
    vals = np.broadcast_to(m, grid.shape + m.shape).copy()
    return TensorField(grid, variance, vals)


@dataclass(eq=False)
class MetricField:
    """Hermitian positive-definite metric g_{alpha beta-bar} on the fiber.

    ``inv`` stores the pointwise matrix inverse, so g^{beta-bar alpha} is
    ``inv[..., beta, alpha]``; ``det`` is the pointwise determinant (real).
    """

    field: TensorField
    inv: np.ndarray = None
    det: np.ndarray = None

    def __post_init__(self):
        if self.field.variance != (DOWN_HOLO, DOWN_ANTI):
            raise PairingError("metric must have variance (down-holo, down-anti)")
        g = self.field.values
        herm = float(np.max(np.abs(g - np.swapaxes(g, -1, -2).conj())))
        if herm > 1e-12:
            raise ValueError(f"metric not Hermitian (defect {herm:.3e})")
        eigs = np.linalg.eigvalsh(g)
        if eigs.min() <= 0:
            raise ValueError(
                f"metric not positive definite (min eigenvalue {eigs.min():.3e})"
            )
        if self.inv is None:
            self.inv = np.linalg.inv(g)
        if self.det is None:
            self.det = np.linalg.det(g).real

    @property
    def grid(self) -> FiberGrid:
        return self.field.grid

    @classmethod
    def flat(cls, grid: FiberGrid) -> "MetricField":
        return cls(constant_tensor(grid, (DOWN_HOLO, DOWN_ANTI), flat_metric(grid.omega)))

    @classmethod
    def from_values(cls, grid: FiberGrid, values) -> "MetricField":
        return cls(TensorField(grid, (DOWN_HOLO, DOWN_ANTI), values))

    def density(self) -> np.ndarray:
        """Pointwise density of g dV against the unit lattice measure dx dy."""
        n = self.grid.n
        return self.det * (2.0**n * np.linalg.det(self.grid.omega.imag).real)


def _fft(f: TensorField) -> np.ndarray:
    return np.fft.fftn(f.values, axes=f.grid.axes)


def spectral_derivative(f: TensorField, kind: str) -> TensorField:
    """Exact derivative of a band-limited field; appends the new index last.

    ``kind='holo'`` applies d_alpha (new index down-holo), ``kind='anti'``
    applies d_beta-bar (new index down-anti).  Mode k picks up the multiplier
    2 pi i (k1^T dx/dz + k2^T dy/dz) (conjugate chart Jacobians for 'anti').
    """
    if not f.periodic:
        raise PairingError("spectral derivative of a non-periodic lattice representative")
    if kind == "holo":
        w = f.grid.dz_multipliers()
        tag = DOWN_HOLO
    elif kind == "anti":
        w = f.grid.dzbar_multipliers()
        tag = DOWN_ANTI
    else:
        raise ValueError(f"kind must be 'holo' or 'anti', got {kind!r}")
    spec = _fft(f)
    mult = 2j * np.pi * w.reshape(f.grid.shape + (1,) * f.rank + (f.grid.n,))
    out = np.fft.ifftn(spec[..., None] * mult, axes=f.grid.axes)
    res = TensorField(f.grid, f.variance + (tag,), out)
    if _debug_verify():
        verify_spectral_tail(res)
    return res


def verify_spectral_tail(f: TensorField, budget: float = 1e-10):
    """Assert the top-third Fourier modes carry < budget of the field energy."""
    spec = np.abs(_fft(f)) ** 2
    total = float(spec.sum())
    if total == 0.0:
        return
    k = np.abs(np.fft.fftfreq(f.grid.size, d=1.0 / f.grid.size))
    cutoff = f.grid.size / 3.0
    mask = np.zeros(f.grid.shape, dtype=bool)
    for axis in range(2 * f.grid.n):
        shape = [1] * (2 * f.grid.n)
        shape[axis] = f.grid.size
        mask |= np.broadcast_to((k > cutoff).reshape(shape), f.grid.shape)
    tail = float(spec[mask].sum()) if f.rank == 0 else float(spec[mask, ...].sum())
    if tail > budget * total:
        raise SolverError(
            f"spectral tail carries {tail / total:.3e} of field energy (budget {budget})"
        )


def christoffel(g: MetricField) -> np.ndarray:
    """Chern connection Gamma^gamma_{alpha beta} = g^{delta-bar gamma} d_alpha g_{beta delta-bar}.

    Identically zero for constant metrics.  Returned as
    ``gamma[..., c, a, b]`` = Gamma^c_{a b}.
    """
    dg = spectral_derivative(g.field, "holo").values  # [..., b, d, a]
    return np.einsum("...dc,...bda->...cab", g.inv, dg)


def covariant_derivative(f: TensorField, g: MetricField, kind: str) -> TensorField:
    """Chern-connection covariant derivative; appends the new index last.

    Holomorphic derivatives correct holomorphic indices only, antiholomorphic
    derivatives the conjugate ones; for constant metrics this reduces to
    spectral_derivative.
    """
    base = spectral_derivative(f, kind)
    gam = christoffel(g)
    if kind == "anti":
        gam = gam.conj()
        up, down = UP_ANTI, DOWN_ANTI
    else:
        up, down = UP_HOLO, DOWN_HOLO
    vals = base.values.copy()
    slots = "cdefghijklm"[: f.rank]
    for slot, tag in enumerate(f.variance):
        if tag not in (up, down):
            continue
        fsub = list(slots)
        fsub[slot] = "r"
        out = list(slots)
        out[slot] = "s"
        if tag == up:
            # + Gamma^{s}_{a r} f^{... r ...}, a the new derivative index
            gsub, sign = "sar", 1.0
        else:
            # - Gamma^{r}_{a s} f_{... r ...}
            gsub, sign = "ras", -1.0
        corr = np.einsum(
            f"...{gsub},...{''.join(fsub)}->...{''.join(out)}a", gam, f.values
        )
        vals += sign * corr
    return TensorField(f.grid, base.variance, vals)


_METRIC_PAIRS = {
    (UP_HOLO, DOWN_HOLO): None,
    (DOWN_HOLO, UP_HOLO): None,
    (UP_ANTI, DOWN_ANTI): None,
    (DOWN_ANTI, UP_ANTI): None,
    (UP_HOLO, UP_ANTI): "lower",
    (UP_ANTI, UP_HOLO): "lower-swapped",
    (DOWN_HOLO, DOWN_ANTI): "raise",
    (DOWN_ANTI, DOWN_HOLO): "raise-swapped",
}


def contract(a: TensorField, b: TensorField, pairing, g: MetricField) -> TensorField:
    """Pointwise metric contraction of index pairs between two fields.

    ``pairing`` lists (i, j) index positions of ``a`` and ``b``.  Dual
    holo/holo (or anti/anti) pairs trace directly; up-holo against up-anti
    contracts through g_{alpha gamma-bar}, down-holo against down-anti through
    g^{beta-bar delta}.  Anything else raises PairingError.
    """
    letters = "abcdefghijklmnopqrstuv"
    ia = [letters[i] for i in range(a.rank)]
    ib = [letters[a.rank + i] for i in range(b.rank)]
    operands, subs = [a.values, b.values], None
    extra_ops, extra_subs = [], []
    used_a, used_b = set(), set()
    for i, j in pairing:
        if i in used_a or j in used_b:
            raise PairingError("index used in more than one pair")
        used_a.add(i)
        used_b.add(j)
        ta, tb = a.variance[i], b.variance[j]
        if (ta, tb) not in _METRIC_PAIRS:
            raise PairingError(f"cannot pair variance {ta} with {tb}")
        rule = _METRIC_PAIRS[(ta, tb)]
        if rule is None:
            ib[j] = ia[i]
        elif rule in ("lower", "lower-swapped"):
            # sum a^{alpha} b^{gamma-bar} g_{alpha gamma-bar}
            ga, gb = (ia[i], ib[j]) if rule == "lower" else (ib[j], ia[i])
            extra_ops.append(g.field.values)
            extra_subs.append("..." + ga + gb)
        else:
            # sum a_{beta-bar} b_{delta} g^{beta-bar delta}: inv[beta, delta]
            ga, gb = (ia[i], ib[j]) if rule == "raise" else (ib[j], ia[i])
            extra_ops.append(g.inv)
            extra_subs.append("..." + ga + gb)
    out_a = [ia[i] for i in range(a.rank) if i not in used_a]
    out_b = [ib[j] for j in range(b.rank) if j not in used_b]
    subs = (
        "..." + "".join(ia) + ",..." + "".join(ib)
        + ("," if extra_subs else "") + ",".join(extra_subs)
        + "->..." + "".join(out_a + out_b)
    )
    vals = np.einsum(subs, *(operands + extra_ops))
    variance = tuple(
        [a.variance[i] for i in range(a.rank) if i not in used_a]
        + [b.variance[j] for j in range(b.rank) if j not in used_b]
    )
    return TensorField(a.grid, variance, vals,
                       periodic=a.periodic and b.periodic)


def integrate(f: TensorField, g: MetricField) -> complex:
    """integral of a scalar field against the metric volume g dV (total mass ~ 1)."""
    if f.rank != 0:
        raise PairingError("integrate expects a scalar field")
    return complex(np.mean(f.values * g.density()))


def harmonic_projection(f: TensorField, g: MetricField) -> complex:
    """Fiber mean H(f) = integral f g dV / integral g dV."""
    vol = float(np.mean(g.density()).real)
    return integrate(f, g) / vol


def laplacian(f: TensorField, g: MetricField) -> TensorField:
    """box f = -g^{beta-bar alpha} d_alpha d_beta-bar f (nonnegative spectrum)."""
    if f.rank != 0:
        raise PairingError("laplacian expects a scalar field")
    d2 = spectral_derivative(spectral_derivative(f, "holo"), "anti").values
    vals = -np.einsum("...ba,...ab->...", g.inv, d2)
    return TensorField(f.grid, (), vals)


def flat_laplacian_symbol(grid: FiberGrid) -> np.ndarray:
    """Fourier multiplier of box for the flat metric: lambda_k >= 0, 0 at k = 0."""
    w = grid.dz_multipliers()
    ginv = np.linalg.inv(flat_metric(grid.omega))
    lam = 4.0 * np.pi**2 * np.einsum("ba,...a,...b->...", ginv, w, w.conj())
    return np.maximum(lam.real, 0.0)


def poisson_solve(f: TensorField, g: MetricField, tol: float = 1e-11,
                  max_iter: int = 500) -> TensorField:
    """Solve box u = f with H(u) = 0; requires H(f) ~ 0.

    Constant metrics invert the Fourier symbol directly.  Variable metrics
    run restarted Krylov correction sweeps (scipy lgmres) preconditioned by
    the flat symbol P, with the true sup residual checked between sweeps.
    The plain update u <- u + P^{-1}(f - box u) diverges as soon as the
    pointwise symbol ratio of g against the flat metric leaves (0, 2), which
    already happens for mildly curved fibers, hence the Krylov acceleration
    around the same preconditioner.  Stops at sup residual <= tol up to an
    evaluation-noise floor of 50 eps sup|f| (residuals are differences of
    quantities of size sup|f|, so they cannot be certified below that).
    """
    if f.rank != 0:
        raise PairingError("poisson_solve expects a scalar field")
    mean = harmonic_projection(f, g)
    if abs(mean) > 1e-10:
        raise NotSolvableError(f"right-hand side has nonzero mean {mean:.3e}")
    lam = flat_laplacian_symbol(f.grid)
    lam_safe = np.where(lam > 0, lam, 1.0)

    def flat_solve(rhs_values):
        spec = np.fft.fftn(rhs_values, axes=f.grid.axes) / lam_safe
        spec[(0,) * (2 * f.grid.n)] = 0.0
        return np.fft.ifftn(spec, axes=f.grid.axes)

    gvals = g.field.values
    is_const = float(np.max(np.abs(gvals - gvals.reshape(-1, f.grid.n, f.grid.n)[0]))) < 1e-14
    if is_const:
        u = TensorField(f.grid, (), flat_solve(f.values))
        u.values -= np.mean(u.values)
        return u
    # mu = eigenvalues of g_flat g^{-1}: quotient of the variable and flat
    # Laplacian symbols at each node (real and positive by similarity to a
    # Hermitian pencil).
    import scipy.sparse.linalg as spla

    size = int(np.prod(f.grid.shape))

    def matvec(v):
        tf = TensorField(f.grid, (), v.reshape(f.grid.shape))
        return laplacian(tf, g).values.ravel()

    a_op = spla.LinearOperator((size, size), matvec=matvec, dtype=complex)
    m_op = spla.LinearOperator(
        (size, size), matvec=lambda v: flat_solve(v.reshape(f.grid.shape)).ravel(),
        dtype=complex,
    )
    eff_tol = max(tol, 50.0 * np.finfo(float).eps * f.sup_norm())
    u = np.zeros(size, dtype=complex)
    b = f.values.ravel()
    trace = []
    inner = 50
    for _ in range(max(1, max_iter // inner)):
        r = b - matvec(u)
        res = float(np.max(np.abs(r)))
        trace.append(res)
        if res <= eff_tol:
            out = u.reshape(f.grid.shape)
            return TensorField(f.grid, (), out - out.mean())
        du, _ = spla.lgmres(a_op, r, M=m_op, rtol=1e-14, atol=res * 1e-5,
                            maxiter=inner)
        u = u + du
    raise SolverError(
        f"poisson_solve stalled at residual {trace[-1]:.3e} (tolerance {eff_tol:.3e})",
        trace=trace,
    )


def dump_csv(f: TensorField, path):
    """Write the field to CSV: lattice coordinates, then re/im per component."""
    grid = f.grid
    n = grid.n
    coords = [grid.coordinate(a).ravel() for a in range(2 * n)]
    comp = f.values.reshape((-1,) + (n,) * f.rank)
    names = [f"x{j + 1}" for j in range(n)] + [f"y{j + 1}" for j in range(n)]
    cols = list(coords)
    if f.rank == 0:
        names += ["re", "im"]
        cols += [comp.real, comp.imag]
    else:
        for idx in np.ndindex(*(n,) * f.rank):
            tag = "".join(str(i + 1) for i in idx)
            names += [f"re_{tag}", f"im_{tag}"]
            sel = comp[(slice(None),) + idx]
            cols += [sel.real, sel.imag]
    data = np.column_stack(cols)
    header = ",".join(names) + f"\n# variance: {','.join(f.variance) or 'scalar'}"
    np.savetxt(path, data, delimiter=",", header=header, comments="")
