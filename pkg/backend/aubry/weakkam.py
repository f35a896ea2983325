"""
Grid Lax-Oleinik value iteration.

The one-step kernel stores, for every stencil offset d and node x, the
source node y = x − d·Δx and the straight-segment action A_dt(y → x). Offsets
are in lexicographic order and every min/argmin scans them in that order with
a strict comparison, so ties resolve to the lexicographically smallest
displacement.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArgumentError, ConfigurationError, NonConvergenceError
from .dynamics import shoot_minimizers
from .geometry import as_coords, canonical, displacement, metric_tensor
from .parallel import make_rng

logger = logging.getLogger(__name__)

BIG = 1e9


@dataclass(frozen=True)
class Grid:
    dim: int
    N: int

    def __post_init__(self):
        if self.dim < 1 or self.N < 2:
            raise ConfigurationError("grid needs dim ≥ 1 and N ≥ 2", dim=self.dim, N=self.N)

    @property
    def spacing(self):
        return 1.0 / self.N

    @property
    def shape(self):
        return (self.N,) * self.dim

    @property
    def size(self):
        return self.N**self.dim

    def multi_index(self, index=None):
        """Multi-indices (size, dim) of all nodes, or of ``index``."""
        flat = np.arange(self.size) if index is None else np.asarray(index)
        return np.stack(np.unravel_index(flat, self.shape), axis=-1)

    def flat_index(self, multi):
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape, mode="wrap")

    def points(self, index=None):
        return self.multi_index(index) * self.spacing

    def nearest_node(self, x):
        return int(self.flat_index(np.rint(canonical(as_coords(x)) * self.N).astype(int)))

    def is_node(self, x, tol=1e-9):
        scaled = canonical(as_coords(x)) * self.N
        return bool(np.all(np.abs(scaled - np.rint(scaled)) <= tol * self.N))


@dataclass
class ValueFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape != (self.grid.size,):
            raise ArgumentError("value function does not match its grid", size=self.values.size)

    def normalized(self):
        """Anchored at node 0."""
        return ValueFunction(self.grid, self.values - self.values[0])

    def __add__(self, constant):
        return ValueFunction(self.grid, self.values + constant)

    @property
    def spread(self):
        return float(self.values.max() - self.values.min())

    def as_array(self):
        return self.values.reshape(self.grid.shape)

    def lipschitz_constant(self):
        """max |u(x) − u(y)|/dist over axis neighbours."""
        array = self.as_array()
        diffs = [np.max(np.abs(np.roll(array, -1, axis=i) - array)) for i in range(self.grid.dim)]
        return float(max(diffs) / self.grid.spacing)

    def csv_header(self):
        n = self.grid.dim
        return [f"i{i + 1}" for i in range(n)] + [f"x{i + 1}" for i in range(n)] + ["u"]

    def csv_rows(self):
        return np.column_stack([self.grid.multi_index(), self.grid.points(), self.values])


@dataclass
class ActionKernel:
    grid: Grid
    dt: float
    radius: int
    offsets: np.ndarray  # (m, n) integer displacements y → x
    sources: np.ndarray  # (m, size): sources[k, x] = node x − d_k
    targets: np.ndarray  # (m, size): targets[k, x] = node x + d_k
    costs: np.ndarray  # (m, size): A_dt(sources[k, x] → x)
    spec: object = field(default=None, repr=False)

    def cost(self, y, x):
        """A_dt(y → x) for stencil neighbours; +inf otherwise."""
        d = np.rint(displacement(self.grid.points(y), self.grid.points(x)) * self.grid.N).astype(int)
        matches = np.nonzero(np.all(self.offsets == d, axis=1))[0]
        return float(self.costs[matches[0], x]) if len(matches) else np.inf

    def reversed(self):
        """Kernel of L̆(x, v) = L(x, −v) on the same grid."""
        return build_kernel(self.spec.reversed(), self.grid, self.dt, self.radius)


def stencil_offsets(dim, radius):
    """All d in [−r, r]^n in lexicographic order."""
    return np.array(list(itertools.product(range(-radius, radius + 1), repeat=dim)), dtype=int)


def _expected_speed(spec, points, g):
    """Per-axis speed the stencil has to resolve, roughly max|ω♯_i| + √(2 osc f)."""
    omega = spec.form.components(points)
    sharp = np.linalg.solve(g, omega[..., None])[..., 0]
    f = spec.potential.value(points)
    return float(np.max(np.abs(sharp)) + np.sqrt(2.0 * max(f.max() - f.min(), 0.0)))


def build_kernel(spec, grid, dt, radius=3):
    """One-step actions A_dt(y → x) = dt·[½g_m(w, w) − f_m + c] − ∫_{[y,x]} ω, w = (x − y)/dt.

    ``g_m`` and ``f_m`` are trapezoidal endpoint averages; the ω integral is
    exact for the straight lifted segment.
    """
    if not dt > 0:
        raise ConfigurationError("kernel time step must be positive", dt=dt)
    if radius < 1:
        raise ConfigurationError("stencil radius must be at least 1", r=radius)
    if spec.dim != grid.dim:
        raise ConfigurationError("grid and lagrangian dimensions differ", grid=grid.dim, lagrangian=spec.dim)
    top_speed = radius * grid.spacing / dt
    if top_speed > spec.v_max:
        raise ConfigurationError("stencil speed exceeds v_max", speed=top_speed, v_max=spec.v_max)

    points = grid.points()
    multi = grid.multi_index()
    g = metric_tensor(spec.metric, points)
    f = spec.potential.value(points)
    phi = spec.form.potential(points)
    if top_speed < _expected_speed(spec, points, g):
        logger.warning(
            "stencil too small: r·Δx/dt = %.4g below the expected optimal speed %.4g",
            top_speed,
            _expected_speed(spec, points, g),
        )

    offsets = stencil_offsets(grid.dim, radius)
    sources = np.empty((len(offsets), grid.size), dtype=np.int64)
    targets = np.empty_like(sources)
    costs = np.empty((len(offsets), grid.size))
    for k, d in enumerate(offsets):
        src = grid.flat_index(multi - d)
        sources[k] = src
        targets[k] = grid.flat_index(multi + d)
        step = d * grid.spacing
        w = step / dt
        g_mid = 0.5 * (g + g[src])
        kinetic = 0.5 * np.einsum("i,kij,j->k", w, g_mid, w)
        f_mid = 0.5 * (f + f[src])
        line = step @ spec.form.constants + phi - phi[src]
        costs[k] = dt * (kinetic - f_mid + spec.constant) - line
    logger.debug("kernel built: N=%d dt=%g r=%d offsets=%d", grid.N, dt, radius, len(offsets))
    return ActionKernel(grid, float(dt), int(radius), offsets, sources, targets, costs, spec)


def value_array(u):
    return u.values if isinstance(u, ValueFunction) else np.asarray(u, dtype=float)


def lax_oleinik_minus_argmin(kernel, u):
    """T⁻u(x) = min_y {u(y) + A_dt(y → x)} and the winning offset index per node.

    Leading axes of ``u`` are treated as a batch of value functions.
    """
    values = value_array(u)
    best = values[..., kernel.sources[0]] + kernel.costs[0]
    choice = np.zeros(best.shape, dtype=np.int64)
    for k in range(1, len(kernel.offsets)):
        candidate = values[..., kernel.sources[k]] + kernel.costs[k]
        better = candidate < best
        best = np.where(better, candidate, best)
        choice = np.where(better, k, choice)
    return best, choice


def lax_oleinik_minus(kernel, u):
    best, _ = lax_oleinik_minus_argmin(kernel, u)
    return ValueFunction(kernel.grid, best)


def lax_oleinik_plus(kernel, u):
    """T⁺u(x) = max_y {u(y) − A_dt(x → y)}."""
    values = value_array(u)
    best = np.full(values.shape, -np.inf)
    for k in range(len(kernel.offsets)):
        target = kernel.targets[k]
        best = np.maximum(best, values[..., target] - kernel.costs[k][target])
    return ValueFunction(kernel.grid, best)


@dataclass
class CriticalValueEstimate:
    c: float
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    shifts: list = field(default_factory=list, repr=False)

    def summary(self, kernel):
        return {
            "c_estimate": self.c,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "grid": {"n": kernel.grid.dim, "N": kernel.grid.N},
            "dt": kernel.dt,
            "r": kernel.radius,
        }


def fixed_point_residual(kernel, u, c):
    """‖T⁻u + c·dt − u‖∞."""
    return float(np.max(np.abs(lax_oleinik_minus(kernel, u).values + c * kernel.dt - value_array(u))))


def estimate_critical_value(kernel, tol=1e-9, max_iters=5000, relaxation=1.0, initial=None, strict=False):
    """Normalised value iteration u ← T⁻u − min T⁻u.

    c is minus the mean normalisation shift over the last quarter of the
    iterations, divided by dt. ``relaxation`` < 1 averages with the previous
    iterate; it does not change the fixed points. With ``strict`` an
    exhausted iteration budget raises NonConvergenceError instead of
    returning a result flagged as not converged.
    """
    u = np.zeros(kernel.grid.size) if initial is None else value_array(initial) - value_array(initial).min()
    history, shifts = [], []
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        image = lax_oleinik_minus(kernel, u).values
        shift = image.min() - u.min()
        shifts.append(shift)
        candidate = image - image.min()
        updated = (1.0 - relaxation) * u + relaxation * candidate
        change = float(np.max(np.abs(updated - u)))
        history.append(change)
        u = updated
        if change <= tol:
            converged = True
            break
    tail = shifts[-max(1, len(shifts) // 4) :]
    c = -float(np.mean(tail)) / kernel.dt
    value = ValueFunction(kernel.grid, u).normalized()
    residual = fixed_point_residual(kernel, value, c)
    if not converged:
        if strict:
            raise NonConvergenceError(
                "value iteration did not converge", iterations=iterations, change=history[-1], tol=tol
            )
        logger.warning("value iteration stopped after %d iterations (last change %.3g)", iterations, history[-1])
    else:
        logger.debug("value iteration converged in %d iterations, c=%.10g", iterations, c)
    return CriticalValueEstimate(c, residual, iterations, converged, history, shifts), value


def dp_action(kernel, x, t_steps):
    """A_{t_steps·dt}(x, ·) by Bellman recursion from an indicator at node x."""
    if t_steps < 1:
        raise ConfigurationError("dp_action needs at least one step", t_steps=t_steps)
    values = np.full(kernel.grid.size, BIG)
    values[x] = 0.0
    for _ in range(int(t_steps)):
        values = np.minimum(lax_oleinik_minus(kernel, values).values, BIG)
    return ValueFunction(kernel.grid, values)


def dp_action_history(kernel, bases, t_steps):
    """Yields (k, A_{k·dt}(x, ·)) for k = 1 … t_steps, one row per base node x."""
    bases = np.atleast_1d(np.asarray(bases, dtype=np.int64))
    values = np.full((len(bases), kernel.grid.size), BIG)
    values[np.arange(len(bases)), bases] = 0.0
    for k in range(1, int(t_steps) + 1):
        values = np.minimum(lax_oleinik_minus_argmin(kernel, values)[0], BIG)
        yield k, values


def ergodic_critical_value(kernel, x=0, t_steps=200):
    """−min_y A_{K dt}(x, y)/(K dt): the ergodic cross-check of c[L]."""
    values = dp_action(kernel, x, t_steps).values
    return -float(values.min()) / (t_steps * kernel.dt)


@dataclass
class CalibratedCurve:
    """ρ(0) = nodes[0], ρ(−k·dt) = nodes[k]; lifted positions follow the true displacements."""

    nodes: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    defects: np.ndarray
    dt: float

    @property
    def max_defect(self):
        return float(self.defects.max()) if len(self.defects) else 0.0


def backward_calibrated_curve(kernel, u, c, x, steps):
    values = value_array(u)
    nodes = [int(x)]
    positions = [kernel.grid.points(x).astype(float)]
    velocities, defects = [], []
    current = int(x)
    for _ in range(int(steps)):
        candidates = values[kernel.sources[:, current]] + kernel.costs[:, current]
        k = int(np.argmin(candidates))  # first minimum: the stencil order breaks ties
        previous = int(kernel.sources[k, current])
        step = kernel.offsets[k] * kernel.grid.spacing
        defects.append(abs(values[current] - values[previous] - kernel.costs[k, current] - c * kernel.dt))
        velocities.append(step / kernel.dt)
        positions.append(positions[-1] - step)
        nodes.append(previous)
        current = previous
    return CalibratedCurve(
        np.array(nodes), np.array(positions), np.array(velocities).reshape(-1, kernel.grid.dim), np.array(defects), kernel.dt
    )


@dataclass
class DominationReport:
    slacks: np.ndarray
    tolerance: float
    counterexample: list = None

    @property
    def min_slack(self):
        return float(self.slacks.min())

    @property
    def passed(self):
        return self.counterexample is None


def path_action(kernel, start, offset_indices):
    """Nodes and summed one-step action of the grid path start → … following the given offsets."""
    nodes = [int(start)]
    total = 0.0
    for k in offset_indices:
        nxt = int(kernel.targets[k, nodes[-1]])
        total += kernel.costs[k, nxt]
        nodes.append(nxt)
    return nodes, total


def verify_domination(kernel, u, c, curves=None, count=50, length=20, tol=1e-9, rng=None):
    """u(ρ(b)) − u(ρ(a)) ≤ ∫L + c(b − a) along grid paths, with slack ≥ −2·tol.

    ``curves`` is a list of (start node, offset indices); random walks are
    drawn when omitted.
    """
    values = value_array(u)
    rng = rng if rng is not None else make_rng(offset=11)
    if curves is None:
        curves = [
            (int(rng.integers(kernel.grid.size)), rng.integers(len(kernel.offsets), size=length).tolist())
            for _ in range(count)
        ]
    slacks = []
    counterexample = None
    for start, offsets in curves:
        nodes, total = path_action(kernel, start, offsets)
        slack = total + c * kernel.dt * len(offsets) - (values[nodes[-1]] - values[nodes[0]])
        slacks.append(slack)
        if slack < -2.0 * tol and counterexample is None:
            counterexample = nodes
            logger.warning("domination violated by %.3g along a %d-step path", slack, len(offsets))
    return DominationReport(np.array(slacks), tol, counterexample)


def calibrated_path(kernel, curve):
    """The backward calibrated curve as a forward (start, offset indices) path."""
    indices = []
    lookup = {tuple(d): k for k, d in enumerate(kernel.offsets)}
    for velocity in curve.velocities[::-1]:
        indices.append(lookup[tuple(np.rint(velocity * kernel.dt * kernel.grid.N).astype(int))])
    return int(curve.nodes[-1]), indices


def _interpolate(grid, values, y):
    """Periodic multilinear interpolation at y, with half the spread of the contributing corners."""
    scaled = canonical(as_coords(y)) * grid.N
    base = np.floor(scaled).astype(int)
    frac = scaled - base
    value = 0.0
    used = []
    for corner in itertools.product((0, 1), repeat=grid.dim):
        corner = np.array(corner)
        weight = float(np.prod(np.where(corner == 1, frac, 1.0 - frac)))
        if weight <= 1e-12:
            continue
        node_value = values[grid.flat_index(base + corner)]
        value += weight * node_value
        used.append(node_value)
    return value, 0.5 * (max(used) - min(used))


class GridActionOracle:
    """A_τ(x, y) from the DP on a kernel, by multilinear interpolation in y.

    Resolution is infinite when x is not a node or τ is not a multiple of dt.
    """

    def __init__(self, kernel):
        self.kernel = kernel
        self._cache = {}

    def values(self, x_node, steps):
        key = (int(x_node), int(steps))
        if key not in self._cache:
            self._cache[key] = dp_action(self.kernel, x_node, steps).values
        return self._cache[key]

    def action(self, x, y, tau):
        grid = self.kernel.grid
        steps = int(round(tau / self.kernel.dt))
        if steps < 1 or abs(steps * self.kernel.dt - tau) > 1e-9 or not grid.is_node(x):
            return np.nan, np.inf
        return _interpolate(grid, self.values(grid.nearest_node(x), steps), y)


def action_gradient_check(kernel, x, y, t_steps, starts=16, dt=1e-2, tol=None):
    """Compare the finite-difference gradients of the DP action with L_v at both ends of a minimizer.

    d_y A_t(x, y) = L_v(ρ(t), ρ̇(t)) and d_x A_t(x, y) = −L_v(ρ(0), ρ̇(0)).
    """
    spec = kernel.spec
    grid = kernel.grid
    t = t_steps * kernel.dt
    tol = max(5e-2, 4 * grid.spacing) if tol is None else tol
    report = {"tolerance": tol, "skipped": False, "diagnostics": []}
    dp = dp_action(kernel, x, t_steps).values
    x_point = grid.points(x)
    y_point = grid.points(y)
    minimizers = shoot_minimizers(spec, x_point, y_point, t, starts=starts, dt=dt)
    if not minimizers:
        report.update(skipped=True, diagnostics=["no extremal found by shooting"])
        return report
    best = minimizers[0]
    if len(minimizers) > 1 and minimizers[1].action - best.action <= tol * grid.spacing:
        report.update(skipped=True, diagnostics=["two minimizers: A_t(x, ·) not differentiable at y"])
        logger.info("gradient check skipped at node %d: two minimizers", y)
        return report
    if abs(best.action - dp[y]) > tol:
        report.update(skipped=True, diagnostics=[f"shooting action {best.action:.6g} does not match DP {dp[y]:.6g}"])
        return report

    multi = grid.multi_index(y)
    n = grid.dim
    grad_y = np.empty(n)
    grad_x = np.empty(n)
    x_multi = grid.multi_index(x)
    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        grad_y[i] = (dp[grid.flat_index(multi + e)] - dp[grid.flat_index(multi - e)]) / (2 * grid.spacing)
        plus = dp_action(kernel, int(grid.flat_index(x_multi + e)), t_steps).values[y]
        minus = dp_action(kernel, int(grid.flat_index(x_multi - e)), t_steps).values[y]
        grad_x[i] = (plus - minus) / (2 * grid.spacing)

    traj = best.trajectory

    def momentum(index):
        x_k = traj.positions[index]
        g = metric_tensor(spec.metric, x_k)
        return g @ traj.velocities[index] - spec.form.components(x_k)

    end_error = float(np.max(np.abs(grad_y - momentum(-1))))
    start_error = float(np.max(np.abs(grad_x + momentum(0))))
    report.update(
        gradient_y=grad_y.tolist(),
        gradient_x=grad_x.tolist(),
        momentum_end=momentum(-1).tolist(),
        momentum_start=momentum(0).tolist(),
        end_error=end_error,
        start_error=start_error,
        passed=end_error <= tol and start_error <= tol,
    )
    return report
