"""Fiberwise complex Monge-Ampere solver.

Finds the potential phi making det(g0 + Hess phi) a constant multiple of the
flat volume density, i.e. the unique Ricci-flat representative of the
polarization class on a torus fiber.  The constant e^b is recomputed from
volume matching at every Newton step, which keeps the linearized problem
solvable with an exactly mean-free right-hand side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import SolverError, StepFailureError
from .fields import (
    MetricField,
    TensorField,
    integrate,
    poisson_solve,
    scalar_field,
    spectral_derivative,
)
from .torus import flat_metric


@dataclass(eq=False)
class MongeAmpereProblem:
    """Reference metric and target density (a constant multiple of the flat one)."""

    g0: MetricField
    target_scale: float = 1.0

    def __post_init__(self):
        if self.target_scale <= 0:
            raise ValueError("target_scale must be positive")

    @property
    def grid(self):
        return self.g0.grid

    def flat_density(self) -> float:
        return float(np.linalg.det(flat_metric(self.grid.omega)).real)


def complex_hessian(phi: TensorField) -> np.ndarray:
    """Mixed Hessian phi_{,alpha beta-bar}, indexed [..., alpha, beta]."""
    return spectral_derivative(spectral_derivative(phi, "holo"), "anti").values


def _target_constant(det_phi: np.ndarray) -> float:
    # Volume matching makes the target density the mean of the current one.
    return float(np.mean(det_phi))


def ma_residual(phi: TensorField, p: MongeAmpereProblem) -> float:
    """sup |det(g0 + Hess phi) - e^b det g_flat| with b from volume matching."""
    if phi.grid != p.grid:
        raise ValueError("potential and problem live on different grids")
    gv = p.g0.field.values + complex_hessian(phi)
    det = np.linalg.det(gv).real
    return float(np.max(np.abs(det - _target_constant(det))))


@dataclass(eq=False)
class RicciFlatResult:
    phi: TensorField
    b: float
    metric: MetricField
    iterations: int
    residuals: list
    decrements: list
    dampings: list


def solve_ricci_flat(p: MongeAmpereProblem, tol: float = 1e-11, max_iter: int = 30,
                     initial_steps=None, trace_csv=None) -> RicciFlatResult:
    """Damped Newton iteration for det(g0 + Hess phi) = e^b det g_flat.

    Each step solves the linearization box_{g_phi} delta = residual / det
    with the current-metric Poisson solver, then backtracks (factor 1/2)
    until the updated metric is positive definite and the sup residual drops
    by at least 10 percent.  For n = 1 the determinant is affine in phi, so
    the first full step is exact and at most two iterations run.

    Parameters
    ----------
    initial_steps : sequence of float, optional
        Starting step length per Newton iteration (default all 1.0); entries
        are still backtracked if they violate positivity or descent.
    trace_csv : path, optional
        Write (iteration, residual, damping, decrement) rows.

    Returns
    -------
    RicciFlatResult
        phi has vanishing harmonic projection; metric is g0 + Hess phi.
    """
    if tol < 1e-12:
        raise ValueError("tol below solver certification floor 1e-12")
    grid = p.grid
    g0v = p.g0.field.values
    phi_vals = np.zeros(grid.shape, dtype=complex)
    hess_phi = np.zeros_like(g0v)
    residuals, decrements, dampings = [], [], []
    iterations = 0
    for it in range(max_iter):
        gv = g0v + hess_phi
        det = np.linalg.det(gv).real
        res = float(np.max(np.abs(det - _target_constant(det))))
        residuals.append(res)
        if res <= tol:
            break
        g_phi = MetricField.from_values(grid, gv)
        rhs = scalar_field(grid, (det - _target_constant(det)) / det)
        # Inexact Newton: early steps only need a direction, final steps a
        # tight solve; quadratic outer convergence is preserved.
        inner_tol = float(np.clip(0.05 * res * res, tol / 10.0, 1e-3))
        delta = poisson_solve(rhs, g_phi, tol=inner_tol)
        delta_vals = delta.values.real
        hess_delta = complex_hessian(TensorField(grid, (), delta_vals.astype(complex)))
        # Lattice modes carrying a Nyquist component in some axes have no
        # partner under k -> -k, so the mixed Hessian of a real field picks
        # up an anti-Hermitian aliasing residue there.  Project it out: it
        # only moves the real determinant at second order, and vanishes at
        # band-limited solutions.
        hess_delta = 0.5 * (hess_delta + np.swapaxes(hess_delta, -1, -2).conj())
        decrements.append(float(np.max(np.abs(delta_vals))))
        t = 1.0 if initial_steps is None or it >= len(initial_steps) else float(
            initial_steps[it]
        )
        accepted = False
        saw_positive = False
        while t >= 2.0**-30:
            cand_hess = hess_phi + t * hess_delta
            cand_gv = g0v + cand_hess
            if np.linalg.eigvalsh(cand_gv).min() <= 0:
                t *= 0.5
                continue
            saw_positive = True
            cand_det = np.linalg.det(cand_gv).real
            cand_res = float(np.max(np.abs(cand_det - _target_constant(cand_det))))
            if cand_res <= max(0.9 * res, tol):
                phi_vals = phi_vals + t * delta_vals
                hess_phi = cand_hess
                dampings.append(t)
                accepted = True
                break
            t *= 0.5
        iterations = it + 1
        if not accepted:
            if not saw_positive:
                raise StepFailureError(
                    "Newton step loses metric positivity at every damping"
                )
            raise SolverError(
                f"Newton stalled at residual {res:.3e}", trace=residuals
            )
    else:
        raise SolverError(
            f"no convergence after {max_iter} iterations "
            f"(residual {residuals[-1]:.3e})",
            trace=residuals,
        )
    metric = MetricField.from_values(grid, g0v + hess_phi)
    phi = TensorField(grid, (), phi_vals.astype(complex))
    vol = float(np.mean(metric.density()).real)
    phi = TensorField(grid, (), phi.values - integrate(phi, metric) / vol)
    b = float(np.log(_target_constant(metric.det) / (p.target_scale * p.flat_density())))
    if trace_csv is not None:
        with open(trace_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual", "damping", "decrement"])
            for i, r in enumerate(residuals):
                writer.writerow([
                    i, r,
                    dampings[i] if i < len(dampings) else "",
                    decrements[i] if i < len(decrements) else "",
                ])
    return RicciFlatResult(phi, b, metric, iterations, residuals, decrements, dampings)
