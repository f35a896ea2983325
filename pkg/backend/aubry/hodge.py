"""
Discrete Hodge machinery for closed 1-forms on the grid.

A form is harmonic when div ω♯ = 0. The harmonic representative of a grid
form ω is ω − dψ where ψ minimises Σ |dψ − ω|²_g √det g, i.e. solves
Dᵀ(√det g · g⁻¹ D)ψ = Dᵀ(√det g · g⁻¹ ω) with D the periodic
central-difference differential.
"""

import inspect
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .geometry import (
    divergence,
    form_sharp_field,
    grid_divergence,
    grid_gradient,
    inverse_metric,
    norm_squared,
    ricci_tensor,
    sharp,
    volume_density,
)
from .weakkam import Grid

logger = logging.getLogger(__name__)

HARMONIC_TOL = 1e-8
SOLVER_TOL = 1e-10

_CG_TOL_KEYWORD = "rtol" if "rtol" in inspect.signature(cg).parameters else "tol"


def grid_points(grid):
    """Node coordinates with shape (N, …, N, n)."""
    return grid.points().reshape(grid.shape + (grid.dim,))


def sample_form(form, grid):
    """Grid 1-form: the harmonic constants plus the central-difference differential of φ."""
    points = grid_points(grid)
    omega = np.broadcast_to(form.constants, points.shape).copy()
    if form.exact_part is not None:
        omega += grid_gradient(form.exact_part.value(points), grid.spacing)
    return omega


@dataclass
class HarmonicityReport:
    harmonic: bool
    sup_divergence: float
    tolerance: float

    def __bool__(self):
        return self.harmonic


def is_harmonic(metric, form, N=32, tol_h=HARMONIC_TOL):
    """div ω♯ evaluated analytically at the nodes of an N^n grid."""
    grid = Grid(metric.dim, N)
    div = divergence(metric, form_sharp_field(metric, form), grid.points())
    sup = float(np.max(np.abs(div)))
    return HarmonicityReport(sup <= tol_h, sup, tol_h)


@dataclass
class HodgeDecomposition:
    grid: Grid
    omega: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    harmonic_part: np.ndarray = field(repr=False)
    residual: float = 0.0
    divergence_sup: float = 0.0
    converged: bool = True
    iterations: int = 0
    tolerance: float = SOLVER_TOL

    @property
    def cohomology_class(self):
        """Periods over the coordinate loops: the grid mean of the harmonic part."""
        axes = tuple(range(self.grid.dim))
        return self.harmonic_part.mean(axis=axes)

    def summary(self):
        return {
            "class": self.cohomology_class.tolist(),
            "residual": self.residual,
            "divergence_sup": self.divergence_sup,
            "converged": self.converged,
            "iterations": self.iterations,
            "tolerance": self.tolerance,
        }

    def csv_header(self):
        n = self.grid.dim
        return (
            [f"i{i + 1}" for i in range(n)]
            + [f"omega_{i + 1}" for i in range(n)]
            + [f"harm_{i + 1}" for i in range(n)]
            + ["psi"]
        )

    def csv_rows(self):
        n = self.grid.dim
        return np.column_stack(
            [
                self.grid.multi_index(),
                self.omega.reshape(-1, n),
                self.harmonic_part.reshape(-1, n),
                self.psi.reshape(-1),
            ]
        )


def _weighted_codifferential(weights, ginv, covector, spacing):
    """Dᵀ(W g⁻¹ p) for a grid covector p; Dᵀ = −D for periodic central differences."""
    flux = weights[..., None] * np.einsum("...ij,...j->...i", ginv, covector)
    n = covector.shape[-1]
    total = np.zeros(covector.shape[:-1])
    for i in range(n):
        total -= (np.roll(flux[..., i], -1, axis=i) - np.roll(flux[..., i], 1, axis=i)) / (2.0 * spacing)
    return total


def decompose_grid_form(metric, grid, omega, tol=SOLVER_TOL, max_iter=None):
    omega = np.asarray(omega, dtype=float).reshape(grid.shape + (grid.dim,))
    points = grid_points(grid)
    weights = volume_density(metric, points)
    ginv = inverse_metric(metric, points)
    h = grid.spacing

    def apply(flat_psi):
        psi = flat_psi.reshape(grid.shape)
        return _weighted_codifferential(weights, ginv, grid_gradient(psi, h), h).reshape(-1)

    operator = LinearOperator((grid.size, grid.size), matvec=apply, dtype=float)
    rhs = _weighted_codifferential(weights, ginv, omega, h).reshape(-1)
    iterations = [0]

    def count(_):
        iterations[0] += 1

    options = {_CG_TOL_KEYWORD: tol, "atol": 0.0, "callback": count}
    if max_iter is not None:
        options["maxiter"] = max_iter
    if np.max(np.abs(rhs)) == 0.0:
        solution, info = np.zeros(grid.size), 0
    else:
        solution, info = cg(operator, rhs, x0=np.zeros(grid.size), **options)
    psi = solution.reshape(grid.shape)
    psi -= psi.mean()
    harmonic_part = omega - grid_gradient(psi, h)
    residual = float(np.max(np.abs(apply(psi.reshape(-1)) - rhs)))
    div = grid_divergence(metric, points, sharp(metric, points, harmonic_part), h)
    converged = info == 0
    if not converged:
        logger.warning("Hodge CG stopped after %d iterations (info=%d, residual %.3g)", iterations[0], info, residual)
    else:
        logger.debug("Hodge CG converged in %d iterations", iterations[0])
    return HodgeDecomposition(
        grid, omega, psi, harmonic_part, residual, float(np.max(np.abs(div))), converged, iterations[0], tol
    )


def harmonic_representative(metric, form, N=64, tol=SOLVER_TOL, max_iter=None):
    """ω = harmonic part + dψ on an N^n grid, ψ with zero mean."""
    grid = Grid(metric.dim, N)
    return decompose_grid_form(metric, grid, sample_form(form, grid), tol, max_iter)


def stokes_sum(metric, grid, vectors):
    """Σ div X · √det g · Δx^n over the grid; zero up to round-off."""
    points = grid_points(grid)
    vectors = np.asarray(vectors, dtype=float).reshape(points.shape)
    div = grid_divergence(metric, points, vectors, grid.spacing)
    return float(np.sum(div * volume_density(metric, points)) * grid.spacing**grid.dim)


@dataclass
class BochnerReport:
    status: str
    spread: float
    min_ricci: float
    sup_divergence: float
    tolerance: float
    diagnostics: list = field(default_factory=list)

    @property
    def passed(self):
        return self.status == "pass"

    def summary(self):
        return {
            "status": self.status,
            "spread": self.spread,
            "min_ricci": self.min_ricci,
            "sup_divergence": self.sup_divergence,
            "tolerance": self.tolerance,
            "diagnostics": self.diagnostics,
        }


def bochner_check(metric, form, N=32, tol_h=HARMONIC_TOL, ricci_tol=1e-8):
    """Spread of g(ω♯, ω♯) over the grid, gated on harmonicity and Ric ≥ 0."""
    grid = Grid(metric.dim, N)
    points = grid.points()
    harmonic = is_harmonic(metric, form, N, tol_h)
    min_ricci = float(np.min(np.linalg.eigvalsh(ricci_tensor(metric, points))))
    diagnostics = []
    if not harmonic:
        diagnostics.append(f"form is not harmonic: sup |div ω♯| = {harmonic.sup_divergence:.3g}")
    if min_ricci < -ricci_tol:
        diagnostics.append(f"Ricci curvature reaches {min_ricci:.3g} < 0")
    vector = sharp(metric, points, form.components(points))
    values = norm_squared(metric, points, vector)
    spread = float(values.max() - values.min())
    if diagnostics:
        status = "not-applicable"
    else:
        status = "pass" if spread <= 10.0 * tol_h else "fail"
    return BochnerReport(status, spread, min_ricci, harmonic.sup_divergence, 10.0 * tol_h, diagnostics)
