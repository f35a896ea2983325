"""
Second-variation machinery along extremals.

Jacobi fields are propagated in a parallel orthonormal frame e_1(s)…e_n(s):
row i of A(s) holds the frame components of the Jacobi field J_i with
J_i(0) = 0 and ∇J_i(0) = (row i of Ȧ(0)), so that

    Ä(s) + A(s)·(R(s) + ∇²f(s)) = 0,
    R(s)_kj = g(R(e_k, ρ̇)ρ̇, e_j),   ∇²f(s)_kj = ∇²f(e_k, e_j).

A synthetic mode takes R(s) and ∇²f(s) directly as matrix paths.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq, minimize_scalar

from .dynamics import (
    PhaseState,
    Trajectory,
    acceleration,
    action,
    integrate_flow,
    rk4_step,
    shoot_extremal,
    shoot_minimizers,
    step_count,
)
from .exceptions import ArgumentError, ConfigurationError, FrameBlowUpError
from .geometry import (
    as_coords,
    christoffel_at,
    hessian_at,
    laplacian,
    metric_tensor,
    riemann_at,
    ricci_at,
)

logger = logging.getLogger(__name__)

NOT_CUT = "not-cut"
CUT_CONJUGATE = "cut-conjugate"
CUT_MULTIPLE_MINIMIZER = "cut-multiple-minimizer"
UNDETERMINED = "undetermined"

# Normalised smallest singular value below which a tangential zero is accepted,
# and above which a local minimum is not a candidate at all.
TANGENTIAL_ZERO = 1e-5
TANGENTIAL_CANDIDATE = 1e-2


@dataclass
class SyntheticJacobiModel:
    """R(s) and ∇²f(s) supplied directly as callables returning n×n matrices."""

    dim: int
    curvature: object
    hessian: object = None

    def operator(self, s):
        total = np.asarray(self.curvature(s), dtype=float)
        if self.hessian is not None:
            total = total + np.asarray(self.hessian(s), dtype=float)
        return total

    def shifted(self, origin, direction=1.0):
        """Paths re-parametrised as σ ↦ origin + direction·σ."""
        hess = None if self.hessian is None else (lambda s: self.hessian(origin + direction * s))
        return SyntheticJacobiModel(self.dim, lambda s: self.curvature(origin + direction * s), hess)

    @classmethod
    def constant_curvature(cls, dim, k):
        return cls(dim, lambda s: k * np.eye(dim))


@dataclass
class ParallelFrame:
    base: Trajectory
    vectors: np.ndarray  # vectors[k, i] = chart components of e_i(s_k)
    metric: object = field(default=None, repr=False)

    def gram(self):
        g = metric_tensor(self.metric, self.base.positions)
        return np.einsum("kia,kab,kjb->kij", self.vectors, g, self.vectors)


@dataclass
class JacobiFrame:
    s: np.ndarray
    A: np.ndarray
    Adot: np.ndarray
    curvature: np.ndarray
    hessian: np.ndarray
    ricci: np.ndarray
    laplacian_f: np.ndarray
    base: Trajectory = None
    frames: np.ndarray = None
    states: list = field(default=None, repr=False)
    rhs: object = field(default=None, repr=False)
    operator_at: object = field(default=None, repr=False)

    @property
    def dim(self):
        return self.A.shape[-1]

    @property
    def det(self):
        return np.linalg.det(self.A)

    def state_at(self, s):
        """Full augmented state at any s in range, by one partial RK4 step from the previous sample."""
        if not self.s[0] - 1e-12 <= s <= self.s[-1] + 1e-12:
            raise ArgumentError("frame evaluated outside its range", s=s, range=(self.s[0], self.s[-1]))
        k = min(max(int(np.searchsorted(self.s, s, side="right")) - 1, 0), len(self.s) - 1)
        h = s - self.s[k]
        state = self.states[k]
        if h != 0:
            state = rk4_step(self.rhs, state, h)
        return state

    def evaluate(self, s):
        """(A(s), Ȧ(s))."""
        state = self.state_at(s)
        return state[-2], state[-1]

    def det_at(self, s):
        return float(np.linalg.det(self.evaluate(s)[0]))

    def jacobi_fields(self):
        """Chart components of J_i(s_k) = Σ_j A_ij(s_k) e_j(s_k), shape (K+1, n, n)."""
        if self.frames is None:
            return self.A.copy()
        return np.einsum("kij,kja->kia", self.A, self.frames)

    def csv_header(self):
        n = self.dim
        entries = [f"{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        return ["s", "detA"] + [f"A{e}" for e in entries] + [f"Adot{e}" for e in entries]

    def csv_rows(self):
        m = len(self.s)
        return np.column_stack([self.s, self.det, self.A.reshape(m, -1), self.Adot.reshape(m, -1)])


@dataclass
class ConjugateScan:
    crossings: list
    tangential: list
    degenerate: list

    @property
    def points(self):
        return sorted(self.crossings + self.tangential)


@dataclass
class IndexFormValue:
    value: float
    partition: np.ndarray


@dataclass
class PiecewiseField:
    """Vector field along a curve: breakpoints t_0 < … < t_m and one closure per interval.

    Each closure maps an array of times to (values, derivatives), both (len(t), n).
    """

    breakpoints: np.ndarray
    pieces: list

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        if len(self.pieces) != len(self.breakpoints) - 1 or np.any(np.diff(self.breakpoints) <= 0):
            raise ArgumentError("piecewise field needs increasing breakpoints and one piece per interval")

    @classmethod
    def smooth(cls, t0, t1, func):
        return cls([t0, t1], [func])

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        index = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, len(self.pieces) - 1)
        values = None
        derivatives = None
        for i, piece in enumerate(self.pieces):
            mask = index == i
            if not np.any(mask):
                continue
            val, der = piece(t[mask])
            if values is None:
                values = np.zeros((len(t), np.shape(val)[-1]))
                derivatives = np.zeros_like(values)
            values[mask] = val
            derivatives[mask] = der
        return values, derivatives


@dataclass
class VariationFamily:
    """α(t, s) = ρ(t) + s·V(t) + ½s²·W(t) with closures returning (value, derivative)."""

    V: PiecewiseField
    W: PiecewiseField = None


@dataclass
class CutPointVerdict:
    classification: str
    t: float
    extremal_action: float = None
    oracle_action: float = None
    gap: float = None
    diagnostics: list = field(default_factory=list)


# Frames -----------------------------------------------------------------


def orthonormal_basis(metric, x):
    """Rows e_i with g(e_i, e_j) = δ_ij, from the Cholesky factor g = L Lᵀ."""
    return np.linalg.inv(np.linalg.cholesky(metric_tensor(metric, x)))


def _transport_velocity(gamma, v, E):
    # ė^k = −Γ^k_ab v^a e^b, row-wise
    return -np.einsum("kab,a,ib->ik", gamma, v, E)


def parallel_transport(metric, traj, initial=None):
    """Parallel-transport an orthonormal frame along the (Hermite-interpolated) samples."""
    spline = CubicHermiteSpline(traj.times, traj.positions, traj.velocities)
    velocity = spline.derivative()
    E = orthonormal_basis(metric, traj.positions[0]) if initial is None else np.asarray(initial, dtype=float)

    def rhs(s, E):
        x = spline(s)
        return 1.0, _transport_velocity(christoffel_at(metric, x), velocity(s), E)

    vectors = [E]
    state = (traj.times[0], E)
    for k in range(len(traj) - 1):
        state = rk4_step(rhs, state, traj.times[k + 1] - traj.times[k])
        vectors.append(state[1])
    return ParallelFrame(traj, np.array(vectors), metric)


def holonomy_angle(metric, corners, steps_per_side=200):
    """Rotation angle of a frame transported once around the closed polygon ``corners``.

    Measured in the oriented orthonormal frame at the first corner; the loop
    is traversed in the given order. Two-dimensional metrics only.
    """
    corners = np.asarray(corners, dtype=float)
    if metric.dim != 2:
        raise ConfigurationError("holonomy angle is defined for surfaces only", dim=metric.dim)
    E0 = orthonormal_basis(metric, corners[0])
    E = E0
    for a, b in zip(corners, np.roll(corners, -1, axis=0)):
        direction = b - a

        def rhs(s, E, a=a, direction=direction):
            return 1.0, _transport_velocity(christoffel_at(metric, a + s * direction), direction, E)

        state = (0.0, E)
        h = 1.0 / steps_per_side
        for _ in range(steps_per_side):
            state = rk4_step(rhs, state, h)
        E = state[1]
    rotation = E @ metric_tensor(metric, corners[0]) @ E0.T
    return float(np.arctan2(rotation[0, 1], rotation[0, 0]))


def jacobi_operator(spec, x, v, E):
    """(R(s), ∇²f(s)) in the frame rows E at phase point (x, v)."""
    g = metric_tensor(spec.metric, x)
    if spec.metric.is_flat:
        curvature = np.zeros((spec.dim, spec.dim))
    else:
        riemann = riemann_at(spec.metric, x)
        image = np.einsum("abcd,kc,d,b->ka", riemann, E, v, v)
        curvature = image @ g @ E.T
    hess = E @ hessian_at(spec.metric, spec.potential, x) @ E.T
    return curvature, hess


def _genuine_rhs(spec):
    def rhs(x, v, E, A, Adot):
        curvature, hess = jacobi_operator(spec, x, v, E)
        return (
            v,
            acceleration(spec, x, v),
            _transport_velocity(christoffel_at(spec.metric, x), v, E),
            Adot,
            -A @ (curvature + hess),
        )

    return rhs


def _synthetic_rhs(model):
    def rhs(s, A, Adot):
        return 1.0, Adot, -A @ model.operator(s)

    return rhs


def _check_frame(state, s):
    if not all(np.all(np.isfinite(part)) for part in state):
        raise FrameBlowUpError("Jacobi frame ODE blew up", last_valid_s=s)


def propagate_jacobi_frame(spec, traj, initial_velocity=None, dt=None):
    """Identity-initialised (or Ȧ(0) = B) Jacobi frame along ``traj``'s extremal."""
    n = spec.dim
    B = np.eye(n) if initial_velocity is None else np.asarray(initial_velocity, dtype=float)
    dt = traj.dt if dt is None else dt
    T = traj.duration
    steps = step_count(T, dt)
    h = T / steps
    rhs = _genuine_rhs(spec)
    start = traj.start
    state = (start.x, start.v, orthonormal_basis(spec.metric, start.x), np.zeros((n, n)), B)
    states = [state]
    for k in range(steps):
        state = rk4_step(rhs, state, h)
        _check_frame(state, k * h)
        states.append(state)

    s = traj.times[0] + h * np.arange(steps + 1)
    xs = np.array([st[0] for st in states])
    vs = np.array([st[1] for st in states])
    frames = np.array([st[2] for st in states])
    operators = [jacobi_operator(spec, x, v, E) for x, v, E in zip(xs, vs, frames)]
    frame = JacobiFrame(
        s=s - s[0],
        A=np.array([st[3] for st in states]),
        Adot=np.array([st[4] for st in states]),
        curvature=np.array([op[0] for op in operators]),
        hessian=np.array([op[1] for op in operators]),
        ricci=np.array([ricci_at(spec.metric, x, v) for x, v in zip(xs, vs)]),
        laplacian_f=np.array([laplacian(spec.metric, spec.potential, x) for x in xs]),
        base=Trajectory(s, xs, vs, h),
        frames=frames,
        states=states,
        rhs=rhs,
    )

    def operator_at(s):
        x, v, E = frame.state_at(s)[:3]
        curvature, hess = jacobi_operator(spec, x, v, E)
        return curvature + hess

    frame.operator_at = operator_at
    return frame


def propagate_synthetic_frame(model, T, dt=1e-3, initial_velocity=None):
    n = model.dim
    B = np.eye(n) if initial_velocity is None else np.asarray(initial_velocity, dtype=float)
    steps = step_count(T, dt)
    h = T / steps
    rhs = _synthetic_rhs(model)
    state = (0.0, np.zeros((n, n)), B)
    states = [state]
    for k in range(steps):
        state = rk4_step(rhs, state, h)
        _check_frame(state[1:], k * h)
        states.append(state)
    s = h * np.arange(steps + 1)
    curvature = np.array([np.asarray(model.curvature(si), dtype=float) for si in s])
    hessian = (
        np.zeros_like(curvature)
        if model.hessian is None
        else np.array([np.asarray(model.hessian(si), dtype=float) for si in s])
    )
    return JacobiFrame(
        s=s,
        A=np.array([st[1] for st in states]),
        Adot=np.array([st[2] for st in states]),
        curvature=curvature,
        hessian=hessian,
        ricci=np.trace(curvature, axis1=1, axis2=2),
        laplacian_f=np.trace(hessian, axis1=1, axis2=2),
        states=states,
        rhs=rhs,
        operator_at=model.operator,
    )


def flow_derivative_check(spec, traj, frame, sample_indices, eps=1e-5):
    """Max deviation between J_j(s) and the central difference of π∘Φ_s along e_j(0)."""
    start = traj.start
    directions = frame.frames[0] if frame.frames is not None else np.eye(spec.dim)
    fields = frame.jacobi_fields()
    worst = 0.0
    for j, direction in enumerate(directions):
        plus = integrate_flow(spec, PhaseState(start.x, start.v + eps * direction), frame.s[-1], frame.base.dt)
        minus = integrate_flow(spec, PhaseState(start.x, start.v - eps * direction), frame.s[-1], frame.base.dt)
        for k in sample_indices:
            estimate = (plus.positions[k] - minus.positions[k]) / (2.0 * eps)
            worst = max(worst, float(np.max(np.abs(estimate - fields[k, j]))))
    return worst


# Conjugate points -------------------------------------------------------


def _normalised_smallest_singular(frame, s):
    A, Adot = frame.evaluate(s)
    sa = np.linalg.svd(A, compute_uv=False)
    sd = np.linalg.svd(Adot, compute_uv=False)
    return sa[-1] / (sa[0] + s * sd[0])


def scan_conjugate_points(frame, xtol=1e-10):
    """Sign changes of det A refined by brentq, plus tangential zeros of det A.

    det A need not change sign at a conjugate point of even multiplicity, so
    local minima of σ_min(A)/(σ_max(A) + s·σ_max(Ȧ)) are refined as well;
    a refined minimum that is small but not negligible is reported as
    degenerate.
    """
    det = frame.det
    crossings = []
    for k in range(1, len(frame.s) - 1):
        a, b = frame.s[k], frame.s[k + 1]
        if det[k] == 0.0:
            crossings.append(float(a))
        elif det[k] * det[k + 1] < 0.0:
            crossings.append(float(brentq(frame.det_at, a, b, xtol=xtol)))

    sa = np.linalg.svd(frame.A, compute_uv=False)
    sd = np.linalg.svd(frame.Adot, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = sa[:, -1] / (sa[:, 0] + frame.s * sd[:, 0])
    tangential, degenerate = [], []
    for k in range(1, len(frame.s) - 1):
        if not (nu[k] <= nu[k - 1] and nu[k] <= nu[k + 1] and nu[k] < TANGENTIAL_CANDIDATE):
            continue
        lo, hi = frame.s[k - 1], frame.s[k + 1]
        if any(lo <= c <= hi for c in crossings):
            continue
        best = minimize_scalar(
            lambda s: _normalised_smallest_singular(frame, s), bounds=(lo, hi), method="bounded", options={"xatol": 1e-8}
        )
        target = tangential if best.fun <= TANGENTIAL_ZERO else degenerate
        if not any(abs(best.x - other) < 1e-6 for other in target):
            target.append(float(best.x))
    if degenerate:
        logger.info("undetermined tangential minima of det A at %s", degenerate)
    return ConjugateScan(crossings, tangential, degenerate)


def conjugate_points(frame):
    """Conjugate times s > 0 along the frame's extremal, ascending."""
    return scan_conjugate_points(frame).points


def _has_point_near(points, target, tol):
    return any(abs(p - target) <= tol for p in points)


def reverse_conjugacy_check(spec, traj, tol=1e-4, margin=None):
    """Check conjugacy pairs against the reversed Lagrangian L̆(x, v) = L(x, −v).

    For every conjugate time s* of ρ(0), the L̆-frame started at
    (ρ(s*), −ρ̇(s*)) must be conjugate at the same parameter, and the same
    holds with the roles of L and L̆ exchanged from the far end.
    """
    synthetic = isinstance(spec, SyntheticJacobiModel)
    if synthetic:
        T = float(traj)
        forward = propagate_synthetic_frame(spec, T)
    else:
        T = traj.duration
        forward = propagate_jacobi_frame(spec, traj)
    step = forward.s[1] - forward.s[0]
    margin = 20 * step if margin is None else margin

    def frame_from(origin, direction, length, lagrangian_spec):
        if synthetic:
            return propagate_synthetic_frame(spec.shifted(origin, direction), length, dt=step)
        x, v = forward.state_at(origin)[:2]
        state = PhaseState(x, direction * v)
        return propagate_jacobi_frame(lagrangian_spec, integrate_flow(lagrangian_spec, state, length, step))

    reversed_spec = None if synthetic else spec.reversed()
    mismatches = []
    forward_points = conjugate_points(forward)
    for point in forward_points:
        back = frame_from(point, -1.0, point + margin, reversed_spec)
        if not _has_point_near(conjugate_points(back), point, tol):
            mismatches.append(("forward", point))

    backward = frame_from(T, -1.0, T, reversed_spec)
    backward_points = conjugate_points(backward)
    for point in backward_points:
        origin = T - point
        again = frame_from(origin, 1.0, point + margin, spec)
        if not _has_point_near(conjugate_points(again), point, tol):
            mismatches.append(("reversed", point))

    return {
        "forward": forward_points,
        "reversed": backward_points,
        "mismatches": mismatches,
        "tolerance": tol,
        "passed": not mismatches,
    }


# Index form -------------------------------------------------------------


def _gauss_nodes(breaks, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a = np.asarray(breaks[:-1])[:, None]
    b = np.asarray(breaks[1:])[:, None]
    t = 0.5 * (b - a) * nodes + 0.5 * (a + b)
    w = 0.5 * (b - a) * weights
    return t.ravel(), w.ravel()


def _partition(traj, *fields):
    t0, t1 = traj.times[0], traj.times[-1]
    breaks = [traj.times]
    for item in fields:
        if item is None:
            continue
        bp = item.breakpoints
        if abs(bp[0] - t0) > 1e-9 or abs(bp[-1] - t1) > 1e-9:
            raise ArgumentError("field interval does not match the trajectory", field=(bp[0], bp[-1]), curve=(t0, t1))
        breaks.append(bp)
    merged = np.unique(np.concatenate(breaks))
    keep = np.concatenate([[True], np.diff(merged) > 1e-12])
    return merged[keep]


def _curve(traj):
    spline = CubicHermiteSpline(traj.times, traj.positions, traj.velocities)
    return spline, spline.derivative()


def lagrangian_second_derivatives(spec, x, v):
    """Chart blocks L_vv[i, j], L_vx[i, m] = ∂²L/∂v^i∂x^m and L_xx[m, l] at a batch of points."""
    metric = spec.metric
    g = metric_tensor(metric, x)
    dg = metric.derivative(x)
    d2g = metric.second_derivative(x)
    domega = spec.form.jacobian(x)  # [..., m, i] = ∂_m ω_i
    d2omega = spec.form.second_jacobian(x)
    l_vv = g
    l_vx = np.einsum("...mij,...j->...im", dg, v) - np.einsum("...mi->...im", domega)
    l_xx = (
        0.5 * np.einsum("...mlij,...i,...j->...ml", d2g, v, v)
        - spec.potential.hessian(x)
        - np.einsum("...mli,...i->...ml", d2omega, v)
    )
    return l_vv, l_vx, l_xx


def _index_integrand(blocks, eta, eta_dot, theta, theta_dot):
    l_vv, l_vx, l_xx = blocks
    return (
        np.einsum("...i,...ij,...j->...", eta_dot, l_vv, theta_dot)
        + np.einsum("...i,...im,...m->...", eta_dot, l_vx, theta)
        + np.einsum("...m,...im,...i->...", eta, l_vx, theta_dot)
        + np.einsum("...m,...ml,...l->...", eta, l_xx, theta)
    )


def index_form(spec, traj, eta, theta, order=6):
    """I(η, θ) = Σ_pieces ∫ η̇ᵀL_vvθ̇ + η̇ᵀL_vxθ + ηᵀL_xvθ̇ + ηᵀL_xxθ dt."""
    breaks = _partition(traj, eta, theta)
    t, w = _gauss_nodes(breaks, order)
    spline, velocity = _curve(traj)
    blocks = lagrangian_second_derivatives(spec, spline(t), velocity(t))
    eta_v, eta_d = eta(t)
    theta_v, theta_d = theta(t)
    value = float(w @ _index_integrand(blocks, eta_v, eta_d, theta_v, theta_d))
    return IndexFormValue(value, breaks)


def index_form_frame(frame, eta, theta, order=6):
    """Frame-component index form ∫⟨η̇, θ̇⟩ − ⟨(R + ∇²f)η, θ⟩ ds along a (synthetic) frame."""
    for item in (eta, theta):
        if abs(item.breakpoints[0] - frame.s[0]) > 1e-9 or abs(item.breakpoints[-1] - frame.s[-1]) > 1e-9:
            raise ArgumentError("field interval does not match the frame")
    breaks = np.unique(np.concatenate([eta.breakpoints, theta.breakpoints]))
    t, w = _gauss_nodes(breaks, order)
    eta_v, eta_d = eta(t)
    theta_v, theta_d = theta(t)
    operators = np.array([frame.operator_at(ti) for ti in t])
    integrand = np.einsum("ki,ki->k", eta_d, theta_d) - np.einsum("ki,kij,kj->k", eta_v, operators, theta_v)
    return IndexFormValue(float(w @ integrand), breaks)


def variation_action(spec, traj, family, s, order=6):
    """Action of the varied curve α(·, s), with exact velocities ∂_t α."""
    breaks = _partition(traj, family.V, family.W)
    t, w = _gauss_nodes(breaks, order)
    spline, velocity = _curve(traj)
    V, Vdot = family.V(t)
    x = spline(t) + s * V
    v = velocity(t) + s * Vdot
    if family.W is not None:
        W, Wdot = family.W(t)
        x = x + 0.5 * s * s * W
        v = v + 0.5 * s * s * Wdot
    return float(w @ spec.lagrangian(x, v))


def second_variation_check(spec, traj, family, steps=(1e-3, 1e-4), rtol=1e-3):
    """Central second difference of the action in s against I(V, V) + [L_v·W] at the ends."""
    predicted = index_form(spec, traj, family.V, family.V).value
    if family.W is not None:
        ends = np.array([traj.times[0], traj.times[-1]])
        W, _ = family.W(ends)
        g = metric_tensor(spec.metric, traj.positions[[0, -1]])
        momentum = np.einsum("kij,kj->ki", g, traj.velocities[[0, -1]]) - spec.form.components(traj.positions[[0, -1]])
        predicted += float(momentum[1] @ W[1] - momentum[0] @ W[0])
    base = variation_action(spec, traj, family, 0.0)
    estimates = []
    for h in steps:
        plus = variation_action(spec, traj, family, h)
        minus = variation_action(spec, traj, family, -h)
        estimates.append((plus - 2.0 * base + minus) / (h * h))
    # a vanishing prediction is compared in absolute terms
    scale = abs(predicted) if abs(predicted) > 1e-12 else 1.0
    errors = [abs(est - predicted) / scale for est in estimates]
    return {
        "predicted": predicted,
        "estimates": dict(zip([float(h) for h in steps], estimates)),
        "relative_errors": errors,
        "tolerance": rtol,
        "passed": all(err <= rtol for err in errors),
    }


# Cut points -------------------------------------------------------------


def is_cut_point(spec, x, v, t, oracle=None, delta=0.05, tol=1e-3, starts=32, dt=1e-2, conjugate_tol=1e-3):
    """Classify ρ(t) = π∘Φ_t(x, v) as not-cut, cut-conjugate, cut-multiple-minimizer or undetermined.

    ``oracle.action(x, y, tau)`` returns (A_tau(x, y), resolution). A
    synthetic Jacobi model has no action and is classified by conjugacy only.
    """
    if isinstance(spec, SyntheticJacobiModel):
        points = conjugate_points(propagate_synthetic_frame(spec, t + delta))
        if _has_point_near(points, t, conjugate_tol):
            return CutPointVerdict(CUT_CONJUGATE, t, diagnostics=[f"conjugate at {points}"])
        return CutPointVerdict(UNDETERMINED, t, diagnostics=["synthetic model has no action oracle"])

    x = as_coords(x)
    until_t = integrate_flow(spec, PhaseState(x, v), t, dt)
    extended = integrate_flow(spec, PhaseState(x, v), t + delta, dt)
    y = until_t.positions[-1]
    own = action(spec, until_t)
    reference, resolution = oracle.action(x, y, t)
    verdict = CutPointVerdict(UNDETERMINED, t, extremal_action=own, oracle_action=reference)
    if resolution > tol:
        verdict.diagnostics.append(f"oracle resolution {resolution:.3g} exceeds tolerance {tol:.3g}")
        return verdict
    if own > reference + tol + resolution:
        verdict.gap = own - reference
        verdict.diagnostics.append("extremal is not minimal at t: past the cut locus")
        return verdict

    own_ext = action(spec, extended)
    reference_ext, resolution_ext = oracle.action(x, extended.positions[-1], t + delta)
    if resolution_ext > tol:
        verdict.diagnostics.append(f"oracle resolution {resolution_ext:.3g} exceeds tolerance {tol:.3g}")
        return verdict
    verdict.gap = own_ext - reference_ext
    if verdict.gap <= tol + resolution_ext:
        verdict.classification = NOT_CUT
        return verdict

    frame = propagate_jacobi_frame(spec, extended)
    if _has_point_near(conjugate_points(frame), t, conjugate_tol):
        verdict.classification = CUT_CONJUGATE
        return verdict
    minimizers = shoot_minimizers(spec, x, y, t, starts=starts, dt=dt)
    close = [m for m in minimizers if m.action <= own + tol]
    if len(close) >= 2:
        verdict.classification = CUT_MULTIPLE_MINIMIZER
        verdict.diagnostics.append(f"{len(close)} minimizers within {tol:.3g}")
    else:
        verdict.diagnostics.append("action gap beyond t but no second minimizer or conjugate point found")
        logger.info("cut point at t=%.4g left undetermined", t)
    return verdict


def local_smoothness_check(spec, x, v, t, eps=1e-3, dt=1e-2, det_floor=1e-8, sym_tol=1e-3):
    """At a non-conjugate extremal endpoint, A_t(x, ·) is locally C²: finite-difference Hessian is symmetric."""
    x = as_coords(x)
    traj = integrate_flow(spec, PhaseState(x, v), t, dt)
    frame = propagate_jacobi_frame(spec, traj)
    det_end = float(frame.det[-1])
    y = traj.positions[-1]
    n = spec.dim

    def endpoint_action(offset):
        velocity = shoot_extremal(spec, x, y + offset, t, v, dt=dt)
        if velocity is None:
            return np.nan
        return action(spec, integrate_flow(spec, PhaseState(x, velocity), t, dt))

    hess = np.zeros((n, n))
    basis = eps * np.eye(n)
    for i in range(n):
        for j in range(n):
            hess[i, j] = (
                endpoint_action(basis[i] + basis[j])
                - endpoint_action(basis[i] - basis[j])
                - endpoint_action(-basis[i] + basis[j])
                + endpoint_action(-basis[i] - basis[j])
            ) / (4.0 * eps * eps)
    asymmetry = float(np.max(np.abs(hess - hess.T)))
    return {
        "det_A": det_end,
        "hessian": hess,
        "asymmetry": asymmetry,
        "passed": bool(abs(det_end) > det_floor and np.all(np.isfinite(hess)) and asymmetry <= sym_tol),
    }
