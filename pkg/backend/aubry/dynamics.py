"""
Lagrangian and Hamiltonian mechanics for L(x, v) = ½g_x(v, v) − f(x) − ω_x(v) + c.

Positions inside a Trajectory are kept lifted (unwrapped) so that line
integrals of ω along it see the true displacement.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import root

from .exceptions import ConfigurationError, FlowError
from .fields import FourierField, HalfNormSquaredField
from .geometry import (
    ClosedOneForm,
    as_coords,
    canonical,
    christoffel_at,
    displacement,
    inverse_metric,
    metric_tensor,
)
from .parallel import make_rng

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_V_MAX = 10.0


@dataclass
class LagrangianSpec:
    metric: object
    potential: object
    form: ClosedOneForm
    constant: float = 0.0
    v_max: float = DEFAULT_V_MAX

    @property
    def dim(self):
        return self.metric.dim

    @classmethod
    def build(cls, metric, potential=None, form=None, constant=0.0, v_max=DEFAULT_V_MAX):
        dim = metric.dim
        potential = potential if potential is not None else FourierField(dim)
        form = form if form is not None else ClosedOneForm(np.zeros(dim))
        for part in (potential, form):
            if part.dim != dim:
                raise ConfigurationError("lagrangian parts disagree on dimension", metric=dim, part=part.dim)
        return cls(metric, potential, form, float(constant), float(v_max))

    @classmethod
    def mane(cls, metric, form, constant=0.0, v_max=DEFAULT_V_MAX):
        """L_X = ½g(v − X, v − X) with X = ω♯, i.e. potential −½g(ω♯, ω♯)."""
        potential = HalfNormSquaredField(metric, form, sign=-1.0)
        return cls(metric, potential, form, float(constant), float(v_max))

    def reversed(self):
        """L̆(x, v) = L(x, −v): same metric and potential, form negated."""
        return replace(self, form=self.form.negated())

    def lagrangian(self, x, v):
        x = as_coords(x)
        v = np.asarray(v, dtype=float)
        kinetic = 0.5 * np.einsum("...i,...ij,...j->...", v, metric_tensor(self.metric, x), v)
        pairing = np.einsum("...i,...i->...", self.form.components(x), v)
        return kinetic - self.potential.value(x) - pairing + self.constant


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = as_coords(self.x).astype(float)
        self.v = np.asarray(self.v, dtype=float)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise FlowError("phase state has non-finite components")


@dataclass
class CotangentState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = as_coords(self.x).astype(float)
        self.p = np.asarray(self.p, dtype=float)


@dataclass
class Trajectory:
    """Samples (t_k, x_k, v_k) with strictly increasing t_k; x_k lifted."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    dt: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    @property
    def samples(self):
        return [(t, PhaseState(x, v)) for t, x, v in zip(self.times, self.positions, self.velocities)]

    @property
    def start(self):
        return PhaseState(self.positions[0], self.velocities[0])

    @property
    def end(self):
        return PhaseState(self.positions[-1], self.velocities[-1])

    def wrapped_positions(self):
        return canonical(self.positions)

    def segment(self, start, stop):
        """Samples start..stop inclusive."""
        return Trajectory(
            self.times[start : stop + 1], self.positions[start : stop + 1], self.velocities[start : stop + 1], self.dt
        )

    def reversed(self):
        """s ↦ ρ(t_end − s) with velocity −ρ̇, an extremal of the reversed Lagrangian."""
        times = self.times[0] + (self.times[-1] - self.times[::-1])
        return Trajectory(times, self.positions[::-1].copy(), -self.velocities[::-1], self.dt)

    def csv_header(self):
        n = self.dim
        return ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]

    def csv_rows(self):
        return np.column_stack([self.times, self.wrapped_positions(), self.velocities])


@dataclass
class CotangentTrajectory:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    dt: float = field(default=DEFAULT_DT)


def legendre(spec, state):
    """p_k = g_ki v^i − ω_k."""
    g = metric_tensor(spec.metric, state.x)
    p = np.einsum("...ij,...j->...i", g, state.v) - spec.form.components(state.x)
    return CotangentState(state.x, p)


def inverse_legendre(spec, cot):
    ginv = inverse_metric(spec.metric, cot.x)
    v = np.einsum("...ij,...j->...i", ginv, cot.p + spec.form.components(cot.x))
    return PhaseState(cot.x, v)


def hamiltonian(spec, cot):
    """H(x, p) = ½ g^{ij}(p_i + ω_i)(p_j + ω_j) + f(x) − c."""
    shifted = cot.p + spec.form.components(cot.x)
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", shifted, inverse_metric(spec.metric, cot.x), shifted)
    return kinetic + spec.potential.value(cot.x) - spec.constant


def energy(spec, state):
    """H(x, L_v(x, v)) = ½g(v, v) + f(x) − c."""
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", state.v, metric_tensor(spec.metric, state.x), state.v)
    return kinetic + spec.potential.value(state.x) - spec.constant


def acceleration(spec, x, v):
    """ẍ^k = −Γ^k_ij v^i v^j − g^{km} ∂_m f; ω drops out because it is closed."""
    gamma = christoffel_at(spec.metric, x)
    force = np.einsum("...km,...m->...k", inverse_metric(spec.metric, x), spec.potential.gradient(x))
    return -np.einsum("...kij,...i,...j->...k", gamma, v, v) - force


def rk4_step(rhs, y, h):
    """One classical Runge-Kutta step for a tuple of arrays."""
    k1 = rhs(*y)
    k2 = rhs(*(a + 0.5 * h * b for a, b in zip(y, k1)))
    k3 = rhs(*(a + 0.5 * h * b for a, b in zip(y, k2)))
    k4 = rhs(*(a + h * b for a, b in zip(y, k3)))
    return tuple(a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


def step_count(T, dt):
    if not dt > 0:
        raise ConfigurationError("time step must be positive", dt=dt)
    return max(1, int(round(abs(T) / dt)))


def _euler_lagrange_rhs(spec):
    def rhs(x, v):
        return v, acceleration(spec, x, v)

    return rhs


def el_step(spec, state, dt):
    x, v = rk4_step(_euler_lagrange_rhs(spec), (state.x, state.v), dt)
    return PhaseState(x, v)


def _check_speed(spec, v, t):
    speed = np.max(np.linalg.norm(v, axis=-1))
    if not np.isfinite(speed) or speed > spec.v_max:
        raise FlowError("velocity cap exceeded", v_max=spec.v_max, speed=float(speed), last_valid_time=t)


def flow_map(spec, x, v, T, dt=DEFAULT_DT):
    """Endpoint (x, v) of Φ^L_T for a batch of initial states of shape (..., n)."""
    steps = step_count(T, dt)
    h = T / steps
    y = (as_coords(x).astype(float), np.asarray(v, dtype=float))
    rhs = _euler_lagrange_rhs(spec)
    for k in range(steps):
        y = rk4_step(rhs, y, h)
        _check_speed(spec, y[1], k * h)
    return y


def integrate_flow(spec, state, T, dt=DEFAULT_DT):
    """Sample Φ^L_t(state) at multiples of dt on [0, T] (or [T, 0] for T < 0)."""
    steps = step_count(T, dt)
    h = T / steps
    xs = np.empty((steps + 1, spec.dim))
    vs = np.empty((steps + 1, spec.dim))
    xs[0], vs[0] = state.x, state.v
    _check_speed(spec, vs[0], 0.0)
    rhs = _euler_lagrange_rhs(spec)
    y = (xs[0], vs[0])
    for k in range(steps):
        y = rk4_step(rhs, y, h)
        _check_speed(spec, y[1], k * h)
        xs[k + 1], vs[k + 1] = y
    times = h * np.arange(steps + 1)
    if T < 0:
        return Trajectory(times[::-1], xs[::-1].copy(), vs[::-1].copy(), abs(h))
    return Trajectory(times, xs, vs, h)


def integrate_hamiltonian_flow(spec, cot, T, dt=DEFAULT_DT):
    """ẋ = H_p, ṗ = −H_x by RK4."""
    steps = step_count(T, dt)
    h = T / steps

    def rhs(x, p):
        w = np.einsum("...ij,...j->...i", inverse_metric(spec.metric, x), p + spec.form.components(x))
        dg = spec.metric.derivative(x)
        pdot = (
            0.5 * np.einsum("...a,...mab,...b->...m", w, dg, w)
            - np.einsum("...mj,...j->...m", spec.form.jacobian(x), w)
            - spec.potential.gradient(x)
        )
        return w, pdot

    xs = [cot.x]
    ps = [cot.p]
    y = (cot.x, cot.p)
    for _ in range(steps):
        y = rk4_step(rhs, y, h)
        xs.append(y[0])
        ps.append(y[1])
    return CotangentTrajectory(h * np.arange(steps + 1), np.array(xs), np.array(ps), abs(h))


def action(spec, traj):
    """∫L along the samples; the ω part is the exact lifted line integral."""
    if len(traj) < 2:
        return 0.0
    kinetic = 0.5 * np.einsum("ki,kij,kj->k", traj.velocities, metric_tensor(spec.metric, traj.positions), traj.velocities)
    integrand = kinetic - spec.potential.value(traj.positions) + spec.constant
    smooth_part = simpson(integrand, x=traj.times)
    return float(smooth_part - spec.form.line_integral(traj.positions[0], traj.positions[-1]))


@dataclass
class Extremal:
    velocity: np.ndarray
    action: float
    trajectory: Trajectory = field(repr=False)


def _lattice_shifts(dim, reach=1):
    axes = [np.arange(-reach, reach + 1)] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim).astype(float)


def shoot_extremal(spec, x, target, t, guess, dt=1e-2, fd_step=1e-6, tol=1e-9):
    """Solve π∘Φ_t(x, v) = target (lifted) for v starting from ``guess``; None if no root."""
    n = spec.dim
    x = as_coords(x)
    basis = np.vstack([np.zeros(n), fd_step * np.eye(n), -fd_step * np.eye(n)])

    def residual(v):
        try:
            ends, _ = flow_map(spec, np.broadcast_to(x, (2 * n + 1, n)), v + basis, t, dt)
        except FlowError:
            return np.full(n, 1e3), np.eye(n)
        jac = (ends[1 : n + 1] - ends[n + 1 :]).T / (2.0 * fd_step)
        return ends[0] - target, jac

    solution = root(residual, np.asarray(guess, dtype=float), jac=True, method="hybr", options={"xtol": 1e-12})
    value, _ = residual(solution.x)
    if not np.all(np.isfinite(value)) or np.max(np.abs(value)) > tol:
        return None
    return solution.x


def shoot_minimizers(spec, x, y, t, starts=32, dt=1e-2, rng=None, distinct=1e-6):
    """Multi-start shooting for extremals from x to y in time t, sorted by action.

    Starts are the straight-line velocities towards the lifts y + k,
    k ∈ {−1, 0, 1}^n, followed by seeded random perturbations of them.
    """
    x = as_coords(x)
    y = as_coords(y)
    rng = rng if rng is not None else make_rng(offset=7)
    lifts = x + displacement(x, y) + _lattice_shifts(spec.dim)
    guesses = [(lift - x) / t for lift in lifts]
    while len(guesses) < starts:
        base = guesses[len(guesses) % len(lifts)]
        guesses.append(base + rng.normal(scale=0.25, size=spec.dim))
    found = []
    for guess in guesses[:starts]:
        target = x + guess * t
        target = target + displacement(target, y)
        velocity = shoot_extremal(spec, x, target, t, guess, dt=dt)
        if velocity is None or any(np.max(np.abs(velocity - other.velocity)) < distinct for other in found):
            continue
        traj = integrate_flow(spec, PhaseState(x, velocity), t, dt)
        found.append(Extremal(velocity, action(spec, traj), traj))
    found.sort(key=lambda extremal: extremal.action)
    logger.debug("shooting %s -> %s in %.3g: %d distinct extremals", x, y, t, len(found))
    return found
