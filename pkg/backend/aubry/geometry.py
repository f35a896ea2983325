"""
Periodic-chart Riemannian geometry.

All computation happens on the flat chart [0, 1)^n of the n-torus. A point is
an array of shape ``(..., n)``; every operation below is vectorised over the
leading axes so the same code evaluates a single point or a whole grid.

Index conventions
-----------------
``dg[..., m, i, j]``         = ∂_m g_ij
``d2g[..., l, m, i, j]``     = ∂_l ∂_m g_ij
``christoffel[..., k, i, j]`` = Γ^k_ij
``riemann[..., a, b, c, d]`` = R^a_bcd with R(∂_c, ∂_d)∂_b = R^a_bcd ∂_a,
                               R(X, Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DegenerateMetricError

logger = logging.getLogger(__name__)

MIN_DERIVATIVE_STEP = 1e-10


def canonical(x):
    """Canonical representative of chart coordinates, each component in [0, 1)."""
    wrapped = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(wrapped >= 1.0, 0.0, wrapped)


def displacement(x, y):
    """Minimal periodic displacement from x to y, each component in [-1/2, 1/2)."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return d - np.floor(d + 0.5)


def as_coords(x):
    if isinstance(x, ChartPoint):
        return x.coords
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ChartPoint:
    """A point of the n-torus in its periodic chart."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", canonical(self.coords))

    @property
    def dim(self):
        return self.coords.shape[-1]

    def displacement_to(self, other):
        return displacement(self.coords, as_coords(other))


def _check_step(step):
    if not step > MIN_DERIVATIVE_STEP:
        raise ConfigurationError("derivative step underflow", step=step)


def _central_difference(func, x, step):
    """Stack of central differences of ``func`` along every chart axis.

    Returns an array with the derivative axis inserted right after the leading
    (point) axes of ``x``: result[..., m, <func output axes>].
    """
    _check_step(step)
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    slices = []
    for m in range(n):
        offset = np.zeros(n)
        offset[m] = step
        slices.append((np.asarray(func(x + offset)) - np.asarray(func(x - offset))) / (2.0 * step))
    lead = x.ndim - 1
    return np.moveaxis(np.stack(slices, axis=0), 0, lead)


class ScalarField:
    """Smooth periodic function on the chart torus.

    Subclasses implement ``value``; derivative methods fall back to central
    differences with step ``fd_step`` unless overridden analytically.
    """

    dim = None
    fd_step = 1e-4

    def value(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(as_coords(x))

    def gradient(self, x):
        return _central_difference(self.value, as_coords(x), self.fd_step)

    def hessian(self, x):
        return _central_difference(self.gradient, as_coords(x), self.fd_step)

    def third(self, x):
        return _central_difference(self.hessian, as_coords(x), self.fd_step)

    def scaled(self, factor):
        return ScaledField(self, factor)


class ScaledField(ScalarField):
    def __init__(self, base, factor):
        self.base = base
        self.factor = float(factor)
        self.dim = base.dim

    def value(self, x):
        return self.factor * self.base.value(x)

    def gradient(self, x):
        return self.factor * self.base.gradient(x)

    def hessian(self, x):
        return self.factor * self.base.hessian(x)

    def third(self, x):
        return self.factor * self.base.third(x)


class VectorField:
    """Vector field X^i(x) with an optional analytic Jacobian ∂_m X^i."""

    fd_step = 1e-5

    def __init__(self, value, jacobian=None):
        self._value = value
        self._jacobian = jacobian

    def __call__(self, x):
        return np.asarray(self._value(as_coords(x)), dtype=float)

    def jacobian(self, x):
        """jac[..., i, m] = ∂_m X^i."""
        x = as_coords(x)
        if self._jacobian is not None:
            return np.asarray(self._jacobian(x), dtype=float)
        stacked = _central_difference(self.__call__, x, self.fd_step)
        return np.swapaxes(stacked, -1, -2)


class MetricField:
    """Periodic metric tensor g_ij(x) on the chart torus.

    ``derivative_scheme`` is ``"analytic"`` when the subclass supplies closed
    form derivatives, otherwise ``"finite_difference"`` with step ``step``.
    """

    is_flat = False

    def __init__(self, dim, derivative_scheme="finite_difference", step=1e-5):
        if dim < 2:
            raise ConfigurationError("metric dimension must be at least 2", dim=dim)
        _check_step(step)
        self.dim = int(dim)
        self.derivative_scheme = derivative_scheme
        self.step = float(step)

    def tensor(self, x):
        raise NotImplementedError

    def analytic_derivative(self, x):
        raise NotImplementedError

    def analytic_second_derivative(self, x):
        raise NotImplementedError

    @property
    def analytic(self):
        return self.derivative_scheme == "analytic"

    def derivative(self, x):
        x = as_coords(x)
        if self.analytic:
            return self.analytic_derivative(x)
        return _central_difference(self.tensor, x, self.step)

    def second_derivative(self, x):
        x = as_coords(x)
        if self.analytic:
            return self.analytic_second_derivative(x)
        # Differencing the differenced tensor at h_g loses too many digits.
        return _central_difference(self.derivative, x, max(self.step, 1e-3))

    def with_finite_differences(self, step=1e-5):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        _check_step(step)
        clone.derivative_scheme = "finite_difference"
        clone.step = float(step)
        return clone


@dataclass
class ClosedOneForm:
    """ω = Σ c_i dx_i + dφ; closed by construction, class(ω) = (c_1, …, c_n)."""

    constants: np.ndarray
    exact_part: ScalarField = None

    def __post_init__(self):
        self.constants = np.asarray(self.constants, dtype=float)

    @property
    def dim(self):
        return self.constants.shape[0]

    @property
    def cohomology_class(self):
        return self.constants.copy()

    def components(self, x):
        x = as_coords(x)
        comps = np.broadcast_to(self.constants, x.shape).astype(float)
        if self.exact_part is not None:
            comps = comps + self.exact_part.gradient(x)
        return comps

    def jacobian(self, x):
        """jac[..., m, k] = ∂_m ω_k (symmetric)."""
        x = as_coords(x)
        n = self.dim
        if self.exact_part is None:
            return np.zeros(x.shape[:-1] + (n, n))
        return self.exact_part.hessian(x)

    def second_jacobian(self, x):
        """∂_l ∂_m ω_k."""
        x = as_coords(x)
        n = self.dim
        if self.exact_part is None:
            return np.zeros(x.shape[:-1] + (n, n, n))
        return self.exact_part.third(x)

    def potential(self, x):
        if self.exact_part is None:
            return np.zeros(as_coords(x).shape[:-1])
        return self.exact_part.value(as_coords(x))

    def line_integral(self, start, end):
        """∫ω along any curve from lifted ``start`` to lifted ``end``."""
        start = as_coords(start)
        end = as_coords(end)
        return (end - start) @ self.constants + self.potential(end) - self.potential(start)

    def negated(self):
        exact = None if self.exact_part is None else self.exact_part.scaled(-1.0)
        return ClosedOneForm(-self.constants, exact)


@dataclass
class CurvatureReport:
    point: np.ndarray
    direction: np.ndarray
    ricci: float
    riemann_sample: np.ndarray = field(repr=False)


def metric_tensor(metric, x):
    g = np.asarray(metric.tensor(as_coords(x)), dtype=float)
    check_positive_definite(g)
    return g


def check_positive_definite(g):
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(g)
        raise DegenerateMetricError("metric is not positive definite", min_eigenvalue=float(np.min(eig))) from None
    if not np.all(np.isfinite(g)):
        raise DegenerateMetricError("metric has non-finite entries")


def inverse_metric(metric, x):
    return np.linalg.inv(metric_tensor(metric, x))


def volume_density(metric, x):
    return np.sqrt(np.linalg.det(metric_tensor(metric, x)))


def _first_kind(dg):
    """Γ_mij = ½(∂_i g_mj + ∂_j g_mi − ∂_m g_ij)."""
    return 0.5 * (
        np.einsum("...imj->...mij", dg) + np.einsum("...jmi->...mij", dg) - dg
    )


def christoffel_at(metric, x):
    """Christoffel symbols Γ^k_ij at x (symmetric in i, j)."""
    x = as_coords(x)
    n = metric.dim
    if metric.is_flat:
        metric_tensor(metric, x)
        return np.zeros(x.shape[:-1] + (n, n, n))
    ginv = inverse_metric(metric, x)
    return np.einsum("...km,...mij->...kij", ginv, _first_kind(metric.derivative(x)))


def christoffel_derivative(metric, x):
    """dgamma[..., c, k, i, j] = ∂_c Γ^k_ij."""
    x = as_coords(x)
    n = metric.dim
    if metric.is_flat:
        return np.zeros(x.shape[:-1] + (n, n, n, n))
    ginv = inverse_metric(metric, x)
    dg = metric.derivative(x)
    d2g = metric.second_derivative(x)
    dginv = -np.einsum("...ka,...cab,...bm->...ckm", ginv, dg, ginv)
    gamma1 = _first_kind(dg)
    dgamma1 = 0.5 * (
        np.einsum("...cimj->...cmij", d2g) + np.einsum("...cjmi->...cmij", d2g) - d2g
    )
    return np.einsum("...ckm,...mij->...ckij", dginv, gamma1) + np.einsum(
        "...km,...cmij->...ckij", ginv, dgamma1
    )


def riemann_at(metric, x):
    """Riemann tensor R^a_bcd at x."""
    x = as_coords(x)
    n = metric.dim
    if metric.is_flat:
        return np.zeros(x.shape[:-1] + (n, n, n, n))
    gamma = christoffel_at(metric, x)
    dgamma = christoffel_derivative(metric, x)
    return (
        np.einsum("...cadb->...abcd", dgamma)
        - np.einsum("...dacb->...abcd", dgamma)
        + np.einsum("...ace,...edb->...abcd", gamma, gamma)
        - np.einsum("...ade,...ecb->...abcd", gamma, gamma)
    )


def ricci_tensor(metric, x):
    """Ric_bd = R^c_bcd."""
    return np.einsum("...cbcd->...bd", riemann_at(metric, x))


def ricci_at(metric, x, v):
    """Ric(v) = tr(w ↦ R(w, v)v); quadratic in v, zero for v = 0."""
    v = np.asarray(v, dtype=float)
    return np.einsum("...b,...bd,...d->...", v, ricci_tensor(metric, x), v)


def curvature_report(metric, x, v):
    x = as_coords(x)
    v = np.asarray(v, dtype=float)
    return CurvatureReport(
        point=canonical(x),
        direction=v,
        ricci=float(ricci_at(metric, x, v)),
        riemann_sample=riemann_at(metric, x),
    )


def sharp(metric, x, covector):
    """(p)♯ = g^{ij} p_j."""
    return np.einsum("...ij,...j->...i", inverse_metric(metric, x), np.asarray(covector, dtype=float))


def flat(metric, x, vector):
    """(v)♭ = g_ij v^j."""
    return np.einsum("...ij,...j->...i", metric_tensor(metric, x), np.asarray(vector, dtype=float))


def norm_squared(metric, x, vector):
    vector = np.asarray(vector, dtype=float)
    return np.einsum("...i,...ij,...j->...", vector, metric_tensor(metric, x), vector)


def gradient(metric, f, x):
    """∇f = (df)♯."""
    x = as_coords(x)
    return sharp(metric, x, f.gradient(x))


def hessian_at(metric, f, x):
    """Covariant Hessian ∇²f_ij = ∂_i∂_j f − Γ^k_ij ∂_k f."""
    x = as_coords(x)
    return f.hessian(x) - np.einsum("...kij,...k->...ij", christoffel_at(metric, x), f.gradient(x))


def laplacian(metric, f, x):
    """Δf = div ∇f = g^{ij} ∇²f_ij."""
    x = as_coords(x)
    return np.einsum("...ij,...ij->...", inverse_metric(metric, x), hessian_at(metric, f, x))


def divergence(metric, vector_field, x):
    """div X = (1/√det g) ∂_i(√det g X^i) = ∂_i X^i + Γ^k_ki X^i."""
    x = as_coords(x)
    jac = vector_field.jacobian(x)
    trace = np.einsum("...ii->...", jac)
    contracted = np.einsum("...kki->...i", christoffel_at(metric, x))
    return trace + np.einsum("...i,...i->...", contracted, vector_field(x))


def form_sharp_field(metric, form):
    """The vector field ω♯ with analytic Jacobian from the form's Hessian part."""

    def value(x):
        return sharp(metric, x, form.components(x))

    def jacobian(x):
        # ∂_m(g^{kl} ω_l) = ∂_m g^{kl} ω_l + g^{kl} ∂_m ω_l
        ginv = inverse_metric(metric, x)
        dginv = -np.einsum("...ka,...mab,...bl->...mkl", ginv, metric.derivative(x), ginv)
        return np.einsum("...mkl,...l->...km", dginv, form.components(x)) + np.einsum(
            "...kl,...ml->...km", ginv, form.jacobian(x)
        )

    return VectorField(value, jacobian)


def gradient_field(metric, f):
    """The vector field ∇f as a VectorField (used for div ∇f checks)."""

    def value(x):
        return gradient(metric, f, x)

    return VectorField(value)


def grid_divergence(metric, points, vectors, spacing):
    """Periodic central-difference divergence on a uniform grid.

    ``points`` and ``vectors`` have shape (N, …, N, n). The discrete operator
    telescopes: Σ div X · √det g · Δx^n vanishes to round-off.
    """
    n = points.shape[-1]
    density = volume_density(metric, points)
    total = np.zeros(points.shape[:-1])
    for i in range(n):
        flux = density * vectors[..., i]
        total += (np.roll(flux, -1, axis=i) - np.roll(flux, 1, axis=i)) / (2.0 * spacing)
    return total / density


def grid_gradient(values, spacing):
    """Periodic central-difference differential of a grid function, shape (..., n)."""
    n = values.ndim
    return np.stack(
        [(np.roll(values, -1, axis=i) - np.roll(values, 1, axis=i)) / (2.0 * spacing) for i in range(n)],
        axis=-1,
    )


def grid_laplacian(metric, points, values, spacing):
    """Δ_g on a grid: divergence of the sharpened central-difference gradient."""
    covector = grid_gradient(values, spacing)
    return grid_divergence(metric, points, sharp(metric, points, covector), spacing)
