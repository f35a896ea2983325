"""
Peierls barrier, projected Aubry set and Mather quotient on the grid, plus
support-function probes for barrier-sense Laplacian estimates.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .dynamics import PhaseState, action, energy, flow_map, integrate_flow, shoot_extremal
from .exceptions import CheckFailure, ConfigurationError, FlowError
from .fields import FourierField, HalfNormSquaredField
from .geometry import (
    as_coords,
    christoffel_at,
    divergence,
    form_sharp_field,
    inverse_metric,
    laplacian,
    metric_tensor,
    ricci_at,
)
from .parallel import fork_join, make_rng
from .riccati import theta_along
from .variation import propagate_jacobi_frame
from .weakkam import (
    ValueFunction,
    backward_calibrated_curve,
    dp_action,
    dp_action_history,
    lax_oleinik_minus,
    value_array,
)

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS = (5.0, 10.0, 20.0, 40.0)
# which Laplacian of φ_t gates the barrier-sense estimate
LAPLACIAN_SOURCE = "shot extremals"
BATCH = 64


def horizon_steps(kernel, horizon):
    steps = int(round(horizon / kernel.dt))
    if steps < 1 or abs(steps * kernel.dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigurationError("horizon is not a positive multiple of dt", horizon=horizon, dt=kernel.dt)
    return steps


@dataclass
class BarrierSlice:
    base: int
    values: ValueFunction
    horizons: tuple
    window_minima: np.ndarray = field(repr=False)
    stability: float = 0.0
    stable: bool = True
    suggested_horizon: float = None

    def __getitem__(self, node):
        return self.values.values[node]

    def domination_gap(self, u):
        """max_y u(y) − u(x) − h(x, y); at most 3·tol for a weak KAM u."""
        values = value_array(u)
        return float(np.max(values - values[self.base] - self.values.values))

    def fixed_point_defect(self, kernel, c):
        """‖T⁻h_x + c·dt − h_x‖∞."""
        image = lax_oleinik_minus(kernel, self.values).values
        return float(np.max(np.abs(image + c * kernel.dt - self.values.values)))

    def csv_header(self):
        n = self.values.grid.dim
        labels = ["ix", "iy"] if n == 2 else [f"i{i + 1}" for i in range(n)]
        return labels + ["h"]

    def csv_rows(self):
        return np.column_stack([self.values.grid.multi_index(), self.values.values])


def _slice_batch(kernel, c, bases, horizons, tol):
    """h(x, ·) = min over k·dt ∈ [t_first, t_last] of A_{k dt}(x, ·) + c·k·dt, for a batch of bases."""
    ladder = [horizon_steps(kernel, t) for t in horizons]
    first, last = ladder[0], ladder[-1]
    running = None
    window = []
    for k, values in dp_action_history(kernel, bases, last):
        if k < first:
            continue
        shifted = values + c * k * kernel.dt
        running = shifted if running is None else np.minimum(running, shifted)
        if k in ladder:
            window.append(running.copy())
    window = np.array(window)
    slices = []
    for b, base in enumerate(bases):
        stability = float(np.max(np.abs(window[-1, b] - window[-2, b]))) if len(window) > 1 else 0.0
        stable = stability <= 5.0 * tol
        suggested = None if stable else 2.0 * horizons[-1]
        if not stable:
            logger.info("barrier from node %d moved %.3g between the last two horizons", base, stability)
        slices.append(
            BarrierSlice(
                int(base),
                ValueFunction(kernel.grid, window[-1, b]),
                tuple(horizons),
                window[:, b],
                stability,
                stable,
                suggested,
            )
        )
    return slices


def peierls_barrier(kernel, c, x, horizons=DEFAULT_HORIZONS, tol=1e-3):
    """h(x, ·) ≈ liminf_t A_t(x, ·) + c·t, realised on the horizon ladder."""
    return _slice_batch(kernel, c, [int(x)], sorted(horizons), tol)[0]


def barrier_slices(kernel, c, bases, horizons=DEFAULT_HORIZONS, tol=1e-3):
    """Barrier slices for many base nodes, batched and forked over the worker pool."""
    bases = [int(b) for b in bases]
    batches = [bases[i : i + BATCH] for i in range(0, len(bases), BATCH)]
    horizons = sorted(horizons)
    results = fork_join(lambda batch: _slice_batch(kernel, c, batch, horizons, tol), batches)
    return [item for batch in results for item in batch]


def subsample_nodes(grid, stride=1):
    multi = grid.multi_index()
    return np.nonzero(np.all(multi % int(stride) == 0, axis=1))[0]


@dataclass
class AubrySet:
    nodes: np.ndarray
    candidates: np.ndarray
    diagonal: np.ndarray
    tol_A: float
    unstable: int = 0

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return int(node) in set(self.nodes.tolist())

    def points(self, grid):
        return grid.points(self.nodes)


def aubry_set(kernel, c, tol_A=5e-3, horizons=DEFAULT_HORIZONS, stride=1, tol=1e-3):
    """Nodes x with h(x, x) ≤ tol_A, scanned over a stride-subsampled grid."""
    candidates = subsample_nodes(kernel.grid, stride)
    slices = barrier_slices(kernel, c, candidates, horizons, tol)
    diagonal = np.array([s[s.base] for s in slices])
    nodes = candidates[diagonal <= tol_A]
    unstable = sum(not s.stable for s in slices)
    if not len(nodes):
        raise CheckFailure("projected Aubry set came out empty", tol_A=tol_A, min_diagonal=float(diagonal.min()))
    logger.info("Aubry set: %d of %d sampled nodes at tol_A=%g", len(nodes), len(candidates), tol_A)
    return AubrySet(nodes, candidates, diagonal, tol_A, unstable)


@dataclass
class MatherQuotientReport:
    aubry_nodes: np.ndarray
    sample: np.ndarray
    barrier: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    component_count: int = 0
    component_count_double: int = 0
    representatives: list = field(default_factory=list)
    tol_A: float = 0.0
    tol_Q: float = 0.0
    min_delta: float = 0.0
    max_self_delta: float = 0.0
    triangle_violation: float = 0.0

    def closest_cross_pair(self):
        """(x, y, δ(x, y)) minimising δ over sampled nodes in different components; None for one component."""
        if self.component_count < 2:
            return None
        masked = np.where(self.labels[:, None] != self.labels[None, :], self.delta, np.inf)
        i, j = np.unravel_index(np.argmin(masked), masked.shape)
        return int(self.sample[i]), int(self.sample[j]), float(masked[i, j])

    def summary(self, grid):
        return {
            "aubry_count": int(len(self.aubry_nodes)),
            "sample_count": int(len(self.sample)),
            "component_count": int(self.component_count),
            "component_count_2tol": int(self.component_count_double),
            "tol_A": self.tol_A,
            "tol_Q": self.tol_Q,
            "representatives": [
                {"node": int(node), "x": grid.points(node).tolist()} for node in self.representatives
            ],
            "min_delta": self.min_delta,
            "max_self_delta": self.max_self_delta,
            "triangle_violation": self.triangle_violation,
        }


def _components(delta, threshold):
    adjacency = csr_matrix(delta <= threshold)
    return connected_components(adjacency, directed=False)


def mather_quotient(kernel, c, aubry, tol_Q=1e-2, horizons=DEFAULT_HORIZONS, max_nodes=256, tol=1e-3):
    """Components of the Aubry set under δ(x, y) = h(x, y) + h(y, x) ≤ tol_Q."""
    nodes = np.asarray(aubry.nodes)
    if len(nodes) > max_nodes:
        sample = nodes[np.unique(np.linspace(0, len(nodes) - 1, max_nodes).round().astype(int))]
    else:
        sample = nodes
    slices = barrier_slices(kernel, c, sample, horizons, tol)
    barrier = np.array([s.values.values[sample] for s in slices])
    delta = barrier + barrier.T

    count, labels = _components(delta, tol_Q)
    count_double, _ = _components(delta, 2.0 * tol_Q)
    representatives = [int(sample[np.argmax(labels == label)]) for label in range(count)]
    through = np.min(barrier[:, :, None] + barrier[None, :, :], axis=1)
    violation = float(np.max(barrier - through))
    report = MatherQuotientReport(
        aubry_nodes=nodes,
        sample=sample,
        barrier=barrier,
        delta=delta,
        labels=labels,
        component_count=int(count),
        component_count_double=int(count_double),
        representatives=representatives,
        tol_A=aubry.tol_A,
        tol_Q=tol_Q,
        min_delta=float(delta.min()),
        max_self_delta=float(np.max(np.diag(delta))),
        triangle_violation=max(violation, 0.0),
    )
    if count != count_double:
        logger.info("quotient is tolerance sensitive: %d components at tol_Q, %d at 2·tol_Q", count, count_double)
    return report


def potential_axis(spec):
    """The single axis a mechanical L on a flat torus depends on, or None."""
    potential = spec.potential
    if not spec.metric.is_flat or np.any(spec.form.constants) or spec.form.exact_part is not None:
        return None
    if not isinstance(potential, FourierField) or not len(potential.amplitudes):
        return None
    axes = np.nonzero(np.any(potential.wavevectors != 0, axis=0))[0]
    return int(axes[0]) if len(axes) == 1 else None


def mechanical_delta_oracle(spec, x, y):
    """δ(x, y) = 2·min over both directions of ∫√(2(max f − f)) along the potential's axis.

    Motion across the other axes is free on the critical energy surface, so
    only the axis coordinates of x and y matter. None when L is not of that
    one-dimensional mechanical form.
    """
    axis = potential_axis(spec)
    if axis is None:
        return None
    potential = spec.potential
    line = np.zeros((4096, spec.dim))
    line[:, axis] = np.arange(4096) / 4096.0
    f_max = float(np.max(potential.value(line)))
    scale = float(np.sqrt(metric_tensor(spec.metric, line[0])[axis, axis]))

    def speed(s):
        point = np.zeros(spec.dim)
        point[axis] = s
        return scale * np.sqrt(max(0.0, 2.0 * (f_max - float(potential.value(point)))))

    a = float(as_coords(x)[axis]) % 1.0
    b = float(as_coords(y)[axis]) % 1.0
    if b < a:
        a, b = b, a
    inner, _ = quad(speed, a, b, limit=200)
    outer, _ = quad(speed, b, a + 1.0, limit=200)
    return 2.0 * min(inner, outer)


@dataclass
class QuadraticFit:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    residual: float


def cube_offsets(dim, m):
    return np.array(list(itertools.product(range(-m, m + 1), repeat=dim)))


def quadratic_fit(grid, values, center, m):
    """Least-squares quadratic through the (2m+1)^n stencil of ``values`` around node ``center``."""
    offsets = cube_offsets(grid.dim, m)
    nodes = grid.flat_index(grid.multi_index(center) + offsets)
    return fit_quadratic(offsets * grid.spacing, np.asarray(values)[nodes])


def fit_quadratic(y, data):
    """Least-squares a + b·y + ½yᵀHy through samples ``data`` at local coordinates ``y``."""
    n = y.shape[1]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    columns = [np.ones(len(y))] + [y[:, i] for i in range(n)] + [y[:, i] * y[:, j] for i, j in pairs]
    design = np.column_stack(columns)
    coeffs, *_ = np.linalg.lstsq(design, data, rcond=None)
    hessian = np.zeros((n, n))
    for (i, j), a in zip(pairs, coeffs[1 + n :]):
        if i == j:
            hessian[i, i] = 2.0 * a
        else:
            hessian[i, j] = hessian[j, i] = a
    residual = float(np.max(np.abs(design @ coeffs - data)))
    return QuadraticFit(float(coeffs[0]), coeffs[1 : 1 + n], hessian, residual)


def coordinate_laplacian(metric, x, fit):
    """Δφ = g^{ij}(∂_i∂_j φ − Γ^k_ij ∂_k φ)."""
    ginv = inverse_metric(metric, x)
    covariant = fit.hessian - np.einsum("kij,k->ij", christoffel_at(metric, x), fit.gradient)
    return float(np.einsum("ij,ij->", ginv, covariant))


@dataclass
class SupportFunctionProbe:
    base: int
    t: float
    origin: int
    phi: np.ndarray = field(repr=False)
    stencil: np.ndarray = field(repr=False)
    touching_defect: float = 0.0
    from_above_defect: float = 0.0
    laplacian_at_x: float = 0.0
    grid_laplacian: float = 0.0
    resolved: bool = True
    diagnostics: list = field(default_factory=list)

    def summary(self):
        return {
            "base": self.base,
            "t": self.t,
            "origin": self.origin,
            "touching_defect": self.touching_defect,
            "from_above_defect": self.from_above_defect,
            "laplacian_at_x": self.laplacian_at_x,
            "laplacian_source": LAPLACIAN_SOURCE,
            "grid_laplacian": self.grid_laplacian,
            "resolved": self.resolved,
        }


def shot_action_fit(spec, origin, end, t, h, dt=2e-2, fd_step=1e-6, tol=1e-9, max_iter=12):
    """Quadratic fit of y ↦ A_t(origin, y) on the 3^n cube of side 2h around ``end``.

    Each value is the action of the Euler–Lagrange extremal shot from the
    lifted ``origin`` to a lifted target; the targets are solved together
    by Newton's method starting from the extremal to ``end``. Returns None
    when the shooting fails.
    """
    n = spec.dim
    offsets = cube_offsets(n, 1) * h
    targets = end + offsets
    center = shoot_extremal(spec, origin, end, t, (end - origin) / t, dt=dt, fd_step=fd_step, tol=tol)
    if center is None:
        return None
    basis = np.vstack([np.zeros(n), fd_step * np.eye(n), -fd_step * np.eye(n)])
    velocities = np.tile(center, (len(targets), 1))
    try:
        for _ in range(max_iter):
            starts = velocities[:, None, :] + basis[None]
            ends, _ = flow_map(spec, np.broadcast_to(origin, starts.shape), starts, t, dt)
            residual = ends[:, 0] - targets
            if np.max(np.abs(residual)) <= tol:
                break
            jac = (ends[:, 1 : n + 1] - ends[:, n + 1 :]).transpose(0, 2, 1) / (2.0 * fd_step)
            velocities = velocities - np.linalg.solve(jac, residual[..., None])[..., 0]
        else:
            return None
        actions = [action(spec, integrate_flow(spec, PhaseState(origin, v), t, dt)) for v in velocities]
    except (FlowError, np.linalg.LinAlgError):
        return None
    return fit_quadratic(offsets, np.array(actions))


def support_function_probe(kernel, u, c, x, t, m=3, tol=1e-6, flow_dt=2e-2):
    """φ = u(ρ(−t)) + A_t(ρ(−t), ·) + c·t around x, along the backward calibrated curve from x.

    The touching and from-above defects use the grid action on the
    (2m+1)^n stencil. The grid action is piecewise linear between nodes
    reachable in a whole number of steps, so ``laplacian_at_x`` is taken
    from extremals shot from the lifted ρ(−t) instead; the quadratic fit of
    the grid values is kept as ``grid_laplacian``.
    """
    grid = kernel.grid
    spec = kernel.spec
    values = value_array(u)
    steps = horizon_steps(kernel, t)
    curve = backward_calibrated_curve(kernel, values, c, x, steps)
    origin = int(curve.nodes[-1])
    phi = values[origin] + dp_action(kernel, origin, steps).values + c * steps * kernel.dt

    offsets = cube_offsets(grid.dim, m)
    stencil = grid.flat_index(grid.multi_index(x) + offsets)
    touching = abs(phi[x] - values[x])
    from_above = float(np.max(values[stencil] - phi[stencil]))
    x_point = grid.points(x).astype(float)
    grid_lap = coordinate_laplacian(spec.metric, x_point, quadratic_fit(grid, phi, x, m))

    diagnostics = []
    resolved = from_above <= 3.0 * tol
    if not resolved:
        diagnostics.append(f"support function dips {from_above:.3g} below u on the stencil: grid under-resolved")
        logger.warning("probe at node %d, t=%g: from-above defect %.3g", x, t, from_above)
    fit = shot_action_fit(spec, curve.positions[-1], x_point, steps * kernel.dt, grid.spacing, dt=flow_dt)
    if fit is None:
        lap = np.nan
        resolved = False
        diagnostics.append("shooting from ρ(−t) failed")
        logger.warning("probe at node %d, t=%g: no extremal from the calibrated origin", x, t)
    else:
        lap = coordinate_laplacian(spec.metric, x_point, fit)
    return SupportFunctionProbe(
        int(x), float(t), origin, phi[stencil], stencil, float(touching), from_above, lap, grid_lap, resolved, diagnostics
    )


def barrier_laplacian_estimate(kernel, u, c, x, t_list, m=3, tol=1e-6):
    """min over t of Δφ_t(x): the certified barrier-sense upper estimate of Δu(x); nan if every probe failed."""
    probes = [support_function_probe(kernel, u, c, x, t, m=m, tol=tol) for t in t_list]
    laplacians = np.array([probe.laplacian_at_x for probe in probes])
    if np.all(np.isnan(laplacians)):
        return float("nan")
    return float(np.nanmin(laplacians))


@dataclass
class EnergySurfaceReport:
    min_value: float
    sample_minima: np.ndarray
    samples: int
    failed: int
    mane: bool = False
    diagnostics: list = field(default_factory=list)
    trajectories: list = field(default_factory=list, repr=False)

    def summary(self):
        return {
            "min_ric_plus_laplacian": self.min_value,
            "samples": self.samples,
            "failed_samples": self.failed,
            "mane": self.mane,
            "diagnostics": self.diagnostics,
        }


def energy_surface_state(spec, c, x, direction):
    """(x, v) with v ∥ direction and H(x, L_v(x, v)) = c, or None when the fiber has no root."""
    g = metric_tensor(spec.metric, x)
    unit = direction / np.sqrt(direction @ g @ direction)
    kinetic = c + spec.constant - float(spec.potential.value(x))
    if kinetic < 0:
        return None
    return PhaseState(x, np.sqrt(2.0 * kinetic) * unit)


def hypothesis_check_energy_surface(spec, c, samples=16, T=20.0, dt=1e-2, mane=False, rng=None):
    """min over sampled backward orbits on the energy surface of Ric(ρ̇) + Δf(ρ).

    With ``mane`` the hypothesis is evaluated for f = ½g(ω♯, ω♯).
    """
    rng = rng if rng is not None else make_rng(offset=23)
    n = spec.dim
    draws = [(rng.random(n), rng.normal(size=n)) for _ in range(samples)]
    hypothesis_f = HalfNormSquaredField(spec.metric, spec.form) if mane else spec.potential

    def run(draw):
        x, direction = draw
        state = energy_surface_state(spec, c, x, direction)
        if state is None:
            return None, "no fiber root"
        try:
            traj = integrate_flow(spec, state, -T, dt)
        except FlowError as exc:
            return None, str(exc)
        drift = abs(energy(spec, traj.start) - energy(spec, traj.end))
        values = ricci_at(spec.metric, traj.positions, traj.velocities) + laplacian(spec.metric, hypothesis_f, traj.positions)
        return (float(values.min()), traj, drift), None

    outcomes = fork_join(run, draws)
    minima, trajectories, diagnostics = [], [], []
    for index, (result, problem) in enumerate(outcomes):
        if result is None:
            diagnostics.append(f"sample {index}: {problem}")
            continue
        minima.append(result[0])
        trajectories.append(result[1])
        if result[2] > 1e-6:
            diagnostics.append(f"sample {index}: energy drift {result[2]:.3g}")
    if diagnostics:
        logger.info("energy-surface sampling: %d diagnostics", len(diagnostics))
    minima = np.array(minima)
    min_value = float(minima.min()) if len(minima) else np.nan
    return EnergySurfaceReport(min_value, minima, samples, samples - len(minima), mane, diagnostics, trajectories)


def segment_cost(spec, a, b, dt):
    """One-step action of the lifted chord a → b, with the same quadrature as the solver kernel."""
    w = (b - a) / dt
    g_mid = 0.5 * (metric_tensor(spec.metric, a) + metric_tensor(spec.metric, b))
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", w, g_mid, w)
    f_mid = 0.5 * (spec.potential.value(a) + spec.potential.value(b))
    line = (b - a) @ spec.form.constants + spec.form.potential(b) - spec.form.potential(a)
    return dt * (kinetic - f_mid + spec.constant) - line


def lifted_action(spec, grid, start, end, s, m):
    """Two-step A_s(start, ·) on the (2m+1)^n lattice stencil around the lifted ``end``.

    Midpoints range over a lattice window around the lifted chord midpoint,
    so the lift followed by the extremal is kept however far it travels.
    On the solver's own dt the grid action of a short horizon is piecewise
    linear in the displacement and finite differences of it do not see Θ.
    """
    h = grid.spacing
    n = grid.dim
    offsets = cube_offsets(n, m)
    targets = np.rint(np.asarray(end) / h) * h + offsets * h
    middle = np.rint(0.5 * (np.asarray(start) + np.asarray(end)) / h) * h
    mids = middle + cube_offsets(n, m + 2) * h
    first = segment_cost(spec, np.broadcast_to(start, mids.shape), mids, 0.5 * s)
    second = segment_cost(
        spec,
        np.broadcast_to(mids[:, None, :], (len(mids), len(targets), n)),
        np.broadcast_to(targets[None, :, :], (len(mids), len(targets), n)),
        0.5 * s,
    )
    return offsets * h, np.min(first[:, None] + second, axis=0), targets[len(targets) // 2]


def barrier_riccati_crosscheck(kernel, x, velocity, s_values=(1.0, 2.0, 4.0), m=6, frame_dt=1e-2):
    """Finite-difference Δ_y A_s(x, ·) near ρ(s) against Θ(s) − div ω♯(ρ(s)) along the extremal from (x, v)."""
    spec = kernel.spec
    grid = kernel.grid
    x_point = grid.points(x)
    traj = integrate_flow(spec, PhaseState(x_point, velocity), max(s_values), frame_dt)
    frame = propagate_jacobi_frame(spec, traj)
    trace = theta_along(spec, frame)
    tolerance = max(0.1, 8.0 * grid.spacing)
    rows = []
    for s in s_values:
        k = int(np.argmin(np.abs(traj.times - s)))
        y, values, center = lifted_action(spec, grid, x_point, traj.positions[k], s, m)
        fit = fit_quadratic(y, values)
        fd = coordinate_laplacian(spec.metric, center, fit)
        predicted = float(np.interp(s, trace.s, trace.laplacian_estimate))
        rows.append({"s": s, "fd_laplacian": fd, "theta_minus_div": predicted, "error": abs(fd - predicted)})
    passed = all(row["error"] <= tolerance for row in rows)
    return {"rows": rows, "tolerance": tolerance, "passed": passed, "truncated_at": trace.truncated_at}


def divergence_of_form(spec, x):
    """div ω♯(x), the right-hand side of the harmonic-form Laplacian bound."""
    return divergence(spec.metric, form_sharp_field(spec.metric, spec.form), x)
