"""Spectral calculus on a fiber: derivatives, contraction, Laplacian, Poisson."""

import numpy as np
import pytest

from cyfam.errors import NotSolvableError, PairingError, SolverError
from cyfam.fields import (
    FiberGrid,
    MetricField,
    TensorField,
    constant_tensor,
    contract,
    covariant_derivative,
    dump_csv,
    flat_laplacian_symbol,
    harmonic_projection,
    integrate,
    laplacian,
    poisson_solve,
    scalar_field,
    spectral_derivative,
    verify_spectral_tail,
)
from cyfam.torus import PeriodMatrix


def square_grid(size=32):
    return FiberGrid(PeriodMatrix(np.array([[1j]])), size)


def surface_grid(size=12):
    return FiberGrid(PeriodMatrix(1j * np.eye(2)), size)


def random_band_limited(grid, rng, modes=4, kmax=3, real=False):
    vals = np.zeros(grid.shape, dtype=complex)
    xs = [grid.coordinate(a) for a in range(2 * grid.n)]
    for _ in range(modes):
        k = rng.integers(-kmax, kmax + 1, size=2 * grid.n)
        c = rng.normal() + 1j * rng.normal()
        phase = sum(int(kj) * xj for kj, xj in zip(k, xs))
        mode = c * np.exp(2j * np.pi * phase)
        vals += mode + np.conj(mode) if real else mode
    return scalar_field(grid, vals)


def perturbed_metric(grid, eps=0.02):
    x = grid.coordinate(0)
    hess = spectral_derivative(
        spectral_derivative(scalar_field(grid, eps * np.cos(2 * np.pi * x)), "holo"),
        "anti",
    )
    flat = MetricField.flat(grid)
    return MetricField.from_values(
        grid, flat.field.values + np.swapaxes(hess.values, -1, -2)
    )


class TestFiberGrid:
    def test_rejects_bad_sizes(self):
        for size in (7, 6, 0, 9):
            with pytest.raises(ValueError):
                square_grid(size)

    def test_node_coordinates(self):
        grid = square_grid(8)
        x = grid.coordinate(0)
        assert x[0, 0] == 0.0 and abs(x[3, 5] - 3 / 8) < 1e-15

    def test_mode_multiplier_example(self):
        # d/dz exp(2 pi i x) = pi i exp(2 pi i x) on the square torus
        grid = square_grid()
        f = scalar_field(grid, np.exp(2j * np.pi * grid.coordinate(0)))
        df = spectral_derivative(f, "holo")
        assert np.max(np.abs(df.values[..., 0] - 1j * np.pi * f.values)) < 1e-12


class TestTensorField:
    def test_shape_validation(self):
        grid = square_grid(8)
        with pytest.raises(ValueError):
            TensorField(grid, ("up-holo",), np.zeros(grid.shape))

    def test_unknown_variance(self):
        grid = square_grid(8)
        with pytest.raises(PairingError):
            TensorField(grid, ("sideways",), np.zeros(grid.shape + (1,)))

    def test_conj_flips_variance(self):
        grid = square_grid(8)
        a = constant_tensor(grid, ("up-holo", "down-anti"), np.array([[1j]]))
        assert a.conj().variance == ("up-anti", "down-holo")
        assert np.allclose(a.conj().values, -1j)

    def test_mismatched_addition(self):
        grid = square_grid(8)
        a = constant_tensor(grid, ("up-holo",), np.array([1.0]))
        b = constant_tensor(grid, ("down-holo",), np.array([1.0]))
        with pytest.raises(PairingError):
            a + b

    def test_scaling_by_scalar_field(self):
        grid = square_grid(8)
        a = constant_tensor(grid, ("up-holo",), np.array([2.0]))
        s = np.cos(2 * np.pi * grid.coordinate(1))
        assert np.allclose(a.scaled(s).values[..., 0], 2.0 * s)


class TestMetricField:
    def test_flat_values(self):
        grid = square_grid(8)
        g = MetricField.flat(grid)
        assert np.allclose(g.field.values, 0.5)
        assert np.allclose(g.inv, 2.0)
        assert np.allclose(g.det, 0.5)

    def test_rejects_non_hermitian(self):
        grid = surface_grid(8)
        vals = np.broadcast_to(np.array([[0.5, 0.1j], [0.3j, 0.5]]), grid.shape + (2, 2))
        with pytest.raises(ValueError, match="Hermitian"):
            MetricField.from_values(grid, vals.copy())

    def test_rejects_indefinite(self):
        grid = square_grid(8)
        vals = np.full(grid.shape + (1, 1), -0.5 + 0j)
        with pytest.raises(ValueError, match="positive definite"):
            MetricField.from_values(grid, vals)

    def test_density_integrates_to_one(self):
        for grid in (square_grid(8), surface_grid(8)):
            g = MetricField.flat(grid)
            assert abs(np.mean(g.density()) - 1.0) < 1e-13


class TestSpectralDerivative:
    def test_rejects_non_periodic_representatives(self):
        grid = square_grid(8)
        f = scalar_field(grid, grid.coordinate(1), periodic=False)
        with pytest.raises(PairingError):
            spectral_derivative(f, "holo")

    def test_finite_difference_convergence_order(self):
        # 4th-order centered differences approach the spectral value at O(N^-4)
        def fd_gap(size):
            grid = square_grid(size)
            x, y = grid.coordinate(0), grid.coordinate(1)
            vals = np.sin(2 * np.pi * (x + y)) * np.exp(np.cos(2 * np.pi * x))
            d = spectral_derivative(scalar_field(grid, vals), "holo").values[..., 0]
            h = 1.0 / size

            def diff(axis):
                r = lambda s: np.roll(vals, -s, axis=axis)
                return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)

            fd = 0.5 * diff(0) - 0.5j * diff(1)  # dx/dz, dy/dz on the square torus
            return np.max(np.abs(d - fd))

        order = np.log2(fd_gap(16) / fd_gap(32))
        assert order > 3.5

    def test_spectral_tail_monitor(self):
        grid = square_grid(8)
        x = grid.coordinate(0)
        smooth = scalar_field(grid, np.exp(2j * np.pi * x))
        verify_spectral_tail(smooth)
        ragged = scalar_field(grid, np.cos(2 * np.pi * 4 * x))  # Nyquist-adjacent
        with pytest.raises(SolverError):
            verify_spectral_tail(ragged)


class TestContraction:
    def test_dual_pair_traces(self):
        grid = square_grid(8)
        g = MetricField.flat(grid)
        a = constant_tensor(grid, ("up-holo", "down-anti"), np.array([[0.5j]]))
        dens = contract(a, a.conj(), [(0, 0), (1, 1)], g)
        assert dens.variance == ()
        assert np.allclose(dens.values, 0.25)

    def test_metric_pairings(self):
        grid = surface_grid(8)
        g = MetricField.flat(grid)  # diag(1/2, 1/2)
        v = constant_tensor(grid, ("up-holo",), np.array([1.0, 2.0]))
        w = constant_tensor(grid, ("up-anti",), np.array([3.0, 0.0]))
        # v^a w^b g_{a b-bar} = 1*3*0.5
        assert np.allclose(contract(v, w, [(0, 0)], g).values, 1.5)
        p = constant_tensor(grid, ("down-holo",), np.array([1.0, 2.0]))
        q = constant_tensor(grid, ("down-anti",), np.array([0.0, 5.0]))
        # p_b q_a g^{a-bar b} with inverse diag(2, 2)
        assert np.allclose(contract(q, p, [(0, 0)], g).values, 20.0)

    def test_invalid_pairings_raise(self):
        grid = square_grid(8)
        g = MetricField.flat(grid)
        a = constant_tensor(grid, ("up-holo",), np.array([1.0]))
        b = constant_tensor(grid, ("up-holo",), np.array([1.0]))
        with pytest.raises(PairingError):
            contract(a, b, [(0, 0)], g)
        c = constant_tensor(grid, ("down-holo",), np.array([1.0]))
        with pytest.raises(PairingError):
            contract(a, c, [(0, 0), (0, 0)], g)  # reused index

    def test_jacobian_identity_under_contraction(self):
        # dz^b(dz^a-dual) pairing: contraction of delta tensors reproduces n
        grid = surface_grid(8)
        g = MetricField.flat(grid)
        delta = constant_tensor(grid, ("up-holo", "down-holo"), np.eye(2))
        tr = contract(delta, constant_tensor(grid, (), np.array(1.0)).scaled(1.0),
                      [], g)
        assert tr.variance == ("up-holo", "down-holo")
        full = contract(delta, delta, [(0, 1), (1, 0)], g)
        assert np.allclose(full.values, 2.0)


class TestIntegration:
    def test_unit_volume(self):
        for grid in (square_grid(8), surface_grid(8)):
            g = MetricField.flat(grid)
            assert abs(integrate(scalar_field(grid, 1.0), g) - 1.0) < 1e-13

    def test_oscillating_modes_integrate_to_zero(self):
        grid = square_grid(16)
        g = MetricField.flat(grid)
        f = scalar_field(grid, np.exp(2j * np.pi * grid.coordinate(0)))
        assert abs(integrate(f, g)) < 1e-14

    def test_parseval_for_flat_metric(self):
        grid = square_grid()
        g = MetricField.flat(grid)
        rng = np.random.default_rng(17)
        f = random_band_limited(grid, rng, real=True)
        energy = integrate(TensorField(grid, (), np.abs(f.values) ** 2), g)
        spec = np.fft.fftn(f.values) / f.values.size
        assert abs(energy.real - np.sum(np.abs(spec) ** 2)) < 1e-12

    def test_rejects_tensors(self):
        grid = square_grid(8)
        g = MetricField.flat(grid)
        with pytest.raises(PairingError):
            integrate(constant_tensor(grid, ("up-holo",), np.array([1.0])), g)


class TestLaplacian:
    def test_lowest_eigenvalue_on_square_torus(self):
        grid = square_grid()
        g = MetricField.flat(grid)
        f = scalar_field(grid, np.exp(2j * np.pi * grid.coordinate(0)))
        box = laplacian(f, g)
        assert np.max(np.abs(box.values - 2 * np.pi**2 * f.values)) < 1e-11

    def test_symbol_is_nonnegative_with_simple_kernel(self):
        for grid in (square_grid(16), surface_grid(8)):
            lam = flat_laplacian_symbol(grid)
            assert lam.min() >= 0.0
            assert lam[(0,) * (2 * grid.n)] == 0.0
            assert np.sort(lam.ravel())[1] > 1.0  # spectral gap

    def test_self_adjointness_flat(self):
        grid = square_grid()
        g = MetricField.flat(grid)
        rng = np.random.default_rng(29)
        f = random_band_limited(grid, rng, real=True)
        h = random_band_limited(grid, rng, real=True)
        lhs = integrate(TensorField(grid, (), laplacian(f, g).values * np.conj(h.values)), g)
        rhs = integrate(TensorField(grid, (), f.values * np.conj(laplacian(h, g).values)), g)
        assert abs(lhs - rhs) < 1e-10

    def test_harmonic_projection_of_mean_zero_mode(self):
        grid = square_grid(16)
        g = MetricField.flat(grid)
        f = scalar_field(grid, 3.0 + np.cos(2 * np.pi * grid.coordinate(0)))
        assert abs(harmonic_projection(f, g) - 3.0) < 1e-13


class TestCovariantDerivative:
    def test_constant_tensors_are_parallel_on_flat_fibers(self):
        grid = surface_grid(8)
        g = MetricField.flat(grid)
        a = constant_tensor(grid, ("up-holo", "down-anti"),
                            np.array([[1.0, 2j], [0.5, -1j]]))
        for kind in ("holo", "anti"):
            assert covariant_derivative(a, g, kind).sup_norm() == 0.0

    def test_metric_compatibility_for_curved_metrics(self):
        grid = square_grid()
        g = perturbed_metric(grid, eps=0.03)
        assert covariant_derivative(g.field, g, "holo").sup_norm() < 1e-13


class TestPoisson:
    def test_zero_maps_to_zero(self):
        grid = square_grid(16)
        g = MetricField.flat(grid)
        u = poisson_solve(scalar_field(grid, 0.0), g)
        assert u.sup_norm() == 0.0

    def test_round_trip_flat(self):
        grid = square_grid()
        g = MetricField.flat(grid)
        rng = np.random.default_rng(41)
        f = random_band_limited(grid, rng, real=True)
        f.values -= np.mean(f.values)
        u = poisson_solve(f, g)
        r = laplacian(u, g) - f
        assert r.sup_norm() < 1e-10
        assert abs(harmonic_projection(u, g)) < 1e-12

    def test_round_trip_variable_metric(self):
        grid = square_grid()
        g = perturbed_metric(grid, eps=0.02)
        rng = np.random.default_rng(43)
        target = random_band_limited(grid, rng, real=True)
        f = laplacian(target, g)
        u = poisson_solve(f, g)
        gap = u.values - (target.values - np.mean(target.values))
        assert np.max(np.abs(gap)) < 1e-10

    def test_rejects_nonzero_mean(self):
        grid = square_grid(16)
        g = MetricField.flat(grid)
        with pytest.raises(NotSolvableError):
            poisson_solve(scalar_field(grid, 1.0), g)


class TestCsvDump:
    def test_scalar_and_tensor_round_trip(self, tmp_path):
        grid = square_grid(8)
        path = tmp_path / "field.csv"
        f = scalar_field(grid, np.cos(2 * np.pi * grid.coordinate(0)))
        dump_csv(f, path)
        body = path.read_text().splitlines()
        assert body[0].startswith("x1,y1,re,im")
        assert "scalar" in body[1]
        data = np.loadtxt(path, delimiter=",", skiprows=2)
        assert data.shape == (64, 4)
        assert abs(data[0, 2] - 1.0) < 1e-14
        a = constant_tensor(grid, ("up-holo",), np.array([1j]))
        tpath = tmp_path / "tensor.csv"
        dump_csv(a, tpath)
        header = tpath.read_text().splitlines()
        assert "re_1,im_1" in header[0]
        assert "up-holo" in header[1]
