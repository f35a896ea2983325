"""
Built-in scalar fields, metrics and closed 1-forms, resolvable by name.

Experiment configs refer to fields as ``{"name": ..., "params": {...}}``;
``build_field`` / ``build_metric`` / ``build_form`` turn those documents into
objects of the geometry module.
"""

import logging

import numpy as np

from .exceptions import ConfigurationError
from .geometry import ClosedOneForm, MetricField, ScalarField, as_coords, inverse_metric

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class FourierField(ScalarField):
    """Σ_m a_m cos(2π k_m·x + p_m) with integer wavevectors k_m."""

    def __init__(self, dim, amplitudes=(), wavevectors=(), phases=()):
        self.dim = int(dim)
        self.amplitudes = np.asarray(amplitudes, dtype=float).reshape(-1)
        self.wavevectors = np.asarray(wavevectors, dtype=float).reshape(-1, self.dim)
        self.phases = np.asarray(phases, dtype=float).reshape(-1)
        if not (len(self.amplitudes) == len(self.wavevectors) == len(self.phases)):
            raise ConfigurationError("fourier terms must have matching lengths")
        if not np.allclose(self.wavevectors, np.round(self.wavevectors)):
            raise ConfigurationError("fourier wavevectors must be integer to stay periodic")

    def _angles(self, x):
        return TWO_PI * np.einsum("...i,mi->...m", x, self.wavevectors) + self.phases

    def value(self, x):
        x = as_coords(x)
        return np.einsum("...m,m->...", np.cos(self._angles(x)), self.amplitudes)

    def gradient(self, x):
        x = as_coords(x)
        weights = -np.sin(self._angles(x)) * self.amplitudes
        return TWO_PI * np.einsum("...m,mi->...i", weights, self.wavevectors)

    def hessian(self, x):
        x = as_coords(x)
        weights = -np.cos(self._angles(x)) * self.amplitudes
        k = self.wavevectors
        return TWO_PI**2 * np.einsum("...m,mi,mj->...ij", weights, k, k)

    def third(self, x):
        x = as_coords(x)
        weights = np.sin(self._angles(x)) * self.amplitudes
        k = self.wavevectors
        return TWO_PI**3 * np.einsum("...m,mi,mj,ml->...ijl", weights, k, k, k)

    def max_value(self):
        """Upper bound Σ|a_m|; exact for single-term fields."""
        return float(np.abs(self.amplitudes).sum())

    def __add__(self, other):
        return FourierField(
            self.dim,
            np.concatenate([self.amplitudes, other.amplitudes]),
            np.concatenate([self.wavevectors, other.wavevectors]),
            np.concatenate([self.phases, other.phases]),
        )


class HalfNormSquaredField(ScalarField):
    """x ↦ ½ g_x(ω♯, ω♯); derivatives by central differences."""

    fd_step = 1e-4

    def __init__(self, metric, form, sign=1.0):
        self.metric = metric
        self.form = form
        self.sign = float(sign)
        self.dim = metric.dim

    def value(self, x):
        x = as_coords(x)
        omega = self.form.components(x)
        return self.sign * 0.5 * np.einsum("...i,...ij,...j->...", omega, inverse_metric(self.metric, x), omega)


class FlatMetric(MetricField):
    """Constant metric diag(scale_1, …, scale_n); identity by default."""

    is_flat = True

    def __init__(self, dim, scale=None):
        super().__init__(dim, derivative_scheme="analytic")
        scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float)
        if scale.shape != (dim,) or np.any(scale <= 0):
            raise ConfigurationError("flat metric scale must be positive per axis", scale=scale.tolist())
        self.scale = scale

    def tensor(self, x):
        x = as_coords(x)
        return np.broadcast_to(np.diag(self.scale), x.shape[:-1] + (self.dim, self.dim)).copy()

    def analytic_derivative(self, x):
        return np.zeros(as_coords(x).shape[:-1] + (self.dim,) * 3)

    def analytic_second_derivative(self, x):
        return np.zeros(as_coords(x).shape[:-1] + (self.dim,) * 4)


class DiagonalMetric(MetricField):
    """g = diag(e^{2λ_1}, …, e^{2λ_n}) with analytic derivatives."""

    def __init__(self, lambdas):
        super().__init__(len(lambdas), derivative_scheme="analytic")
        self.lambdas = list(lambdas)

    def _factors(self, x):
        return np.stack([np.exp(2.0 * lam.value(x)) for lam in self.lambdas], axis=-1)

    def tensor(self, x):
        x = as_coords(x)
        factors = self._factors(x)
        return factors[..., :, None] * np.eye(self.dim)

    def analytic_derivative(self, x):
        # ∂_m g_ii = 2 ∂_mλ_i e^{2λ_i}
        x = as_coords(x)
        factors = self._factors(x)
        grads = np.stack([lam.gradient(x) for lam in self.lambdas], axis=-1)  # [..., m, i]
        diag = 2.0 * grads * factors[..., None, :]
        return diag[..., :, :, None] * np.eye(self.dim)

    def analytic_second_derivative(self, x):
        # ∂_l∂_m g_ii = (4 ∂_lλ_i ∂_mλ_i + 2 ∂_l∂_mλ_i) e^{2λ_i}
        x = as_coords(x)
        factors = self._factors(x)
        grads = np.stack([lam.gradient(x) for lam in self.lambdas], axis=-1)
        hessians = np.stack([lam.hessian(x) for lam in self.lambdas], axis=-1)  # [..., l, m, i]
        diag = (4.0 * grads[..., :, None, :] * grads[..., None, :, :] + 2.0 * hessians) * factors[..., None, None, :]
        return diag[..., :, :, :, None] * np.eye(self.dim)


class ConformalMetric(DiagonalMetric):
    """g = e^{2λ}δ."""

    def __init__(self, dim, conformal_factor):
        super().__init__([conformal_factor] * dim)
        self.conformal_factor = conformal_factor


class CallableMetric(MetricField):
    """Metric from an arbitrary tensor callable; derivatives by finite differences."""

    def __init__(self, dim, tensor, step=1e-5):
        super().__init__(dim, derivative_scheme="finite_difference", step=step)
        self._tensor = tensor

    def tensor(self, x):
        return np.asarray(self._tensor(as_coords(x)), dtype=float)


def gauss_curvature_conformal(conformal_factor, x):
    """K = −e^{−2λ} Δ₀λ for g = e^{2λ}δ in two dimensions."""
    x = as_coords(x)
    flat_laplacian = np.einsum("...ii->...", conformal_factor.hessian(x))
    return -np.exp(-2.0 * conformal_factor.value(x)) * flat_laplacian


# Registry ---------------------------------------------------------------


def _single_term(dim, params, default_phase):
    axis = int(params.get("axis", 0))
    if not 0 <= axis < dim:
        raise ConfigurationError("field axis out of range", axis=axis, dim=dim)
    wavevector = np.zeros(dim)
    wavevector[axis] = float(params.get("frequency", 1))
    return FourierField(
        dim,
        [float(params.get("amplitude", 1.0))],
        [wavevector],
        [float(params.get("phase", 0.0)) + default_phase],
    )


def _zero(dim, params):
    return FourierField(dim)


def _constant(dim, params):
    return FourierField(dim, [float(params.get("value", 0.0))], [np.zeros(dim)], [0.0])


def _cosine(dim, params):
    return _single_term(dim, params, 0.0)


def _sine(dim, params):
    # sin θ = cos(θ − π/2)
    return _single_term(dim, params, -0.5 * np.pi)


def _two_well(dim, params):
    return _single_term(dim, {**params, "frequency": 2}, 0.0)


def _fourier(dim, params):
    terms = params.get("terms", [])
    return FourierField(
        dim,
        [float(term.get("amplitude", 1.0)) for term in terms],
        [term["wavevector"] for term in terms] or np.zeros((0, dim)),
        [float(term.get("phase", 0.0)) for term in terms],
    )


FIELD_BUILDERS = {
    "zero": _zero,
    "constant": _constant,
    "cosine": _cosine,
    "sine": _sine,
    "two_well": _two_well,
    "fourier": _fourier,
}

METRIC_NAMES = ("flat", "conformal", "diagonal")


def build_field(document, dim):
    """Resolve ``{"name": ..., "params": {...}}`` (or ``None``) into a FourierField."""
    if document is None:
        return FourierField(dim)
    name = document.get("name")
    builder = FIELD_BUILDERS.get(name)
    if builder is None:
        raise ConfigurationError("unknown field", name=name, known=sorted(FIELD_BUILDERS))
    return builder(dim, document.get("params", {}) or {})


def build_metric(document, dim):
    name = document.get("name", "flat")
    params = document.get("params", {}) or {}
    if name == "flat":
        metric = FlatMetric(dim, params.get("scale"))
    elif name == "conformal":
        metric = ConformalMetric(dim, build_field(params.get("lambda"), dim))
    elif name == "diagonal":
        lambdas = params.get("lambdas") or []
        if len(lambdas) != dim:
            raise ConfigurationError("diagonal metric needs one field per axis", given=len(lambdas), dim=dim)
        metric = DiagonalMetric([build_field(item, dim) for item in lambdas])
    else:
        raise ConfigurationError("unknown metric", name=name, known=list(METRIC_NAMES))

    scheme = document.get("derivative_scheme", "analytic")
    if scheme == "finite_difference":
        metric = metric.with_finite_differences(float(document.get("step", 1e-5)))
    elif scheme != "analytic":
        raise ConfigurationError("unknown derivative scheme", scheme=scheme)
    return metric


def build_form(document, dim):
    document = document or {}
    constants = np.asarray(document.get("constants", np.zeros(dim)), dtype=float)
    if constants.shape != (dim,):
        raise ConfigurationError("form constants must have one entry per axis", dim=dim)
    phi = document.get("phi")
    return ClosedOneForm(constants, build_field(phi, dim) if phi else None)
