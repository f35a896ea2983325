"""
Experiment runners behind the ``kam`` management command.

Every runner takes a validated config, the Lagrangian built from it and an
ArtifactWriter, writes its CSV/JSON files and returns a RunResult: output
values for the summary plus pass/fail criteria that each cite their
tolerance.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from kamtoolkit import __version__

from . import barrier, hodge, riccati, variation, weakkam
from .artifacts import jsonable
from .dynamics import LagrangianSpec, PhaseState, action, energy, integrate_flow, shoot_minimizers
from .exceptions import EXIT_CHECK_FAILED, EXIT_NON_CONVERGENCE, EXIT_OK, ConfigurationError
from .fields import ConformalMetric, FlatMetric, FourierField, build_field, build_form, build_metric, gauss_curvature_conformal
from .geometry import (
    ClosedOneForm,
    christoffel_at,
    laplacian,
    metric_tensor,
    ricci_at,
    ricci_tensor,
    sharp,
)
from .parallel import fork_join, make_rng
from .serializers import QuotientReportSerializer, RunSummarySerializer

logger = logging.getLogger(__name__)


@dataclass
class Criterion:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    @classmethod
    def at_most(cls, name, value, tolerance, detail=""):
        return cls(name, bool(value <= tolerance), float(value), float(tolerance), detail)

    @classmethod
    def at_least(cls, name, value, tolerance, detail=""):
        return cls(name, bool(value >= tolerance), float(value), float(tolerance), detail)

    def as_dict(self):
        value = self.value if np.isfinite(self.value) else None
        return {
            "name": self.name,
            "passed": self.passed,
            "value": value,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class RunResult:
    outputs: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    converged: bool = True

    def extend(self, other):
        self.outputs.update(other.outputs)
        self.criteria.extend(other.criteria)
        self.converged = self.converged and other.converged
        return self


# Building blocks --------------------------------------------------------


def build_spec(config):
    dim = config["manifold"]["dim"]
    metric = build_metric(config["manifold"]["metric"], dim)
    lagrangian = config["lagrangian"]
    form = build_form(lagrangian["omega"], dim)
    if lagrangian["mane"]:
        return LagrangianSpec.mane(metric, form, lagrangian["c"], lagrangian["v_max"])
    potential = build_field(lagrangian.get("f"), dim)
    return LagrangianSpec.build(metric, potential, form, lagrangian["c"], lagrangian["v_max"])


def build_kernel(config, spec):
    grid = config["grid"]
    return weakkam.build_kernel(spec, weakkam.Grid(spec.dim, grid["N"]), grid["dt"], grid["stencil_r"])


def solve(config, kernel, writer=None):
    solver = config["solver"]
    estimate, u = weakkam.estimate_critical_value(
        kernel,
        tol=solver["tol"],
        max_iters=solver["max_iters"],
        relaxation=solver["relaxation"],
        strict=solver["strict"],
    )
    if writer is not None:
        writer.table("value_function.csv", u)
        writer.json("weakkam.json", estimate.summary(kernel))
    return estimate, u


def _solve_result(config, kernel, estimate, u):
    result = RunResult(converged=estimate.converged)
    result.outputs.update(
        c_estimate=estimate.c,
        residual=estimate.residual,
        iterations=estimate.iterations,
        converged=estimate.converged,
        spread=u.spread,
    )
    result.criteria.append(
        Criterion.at_most("fixed_point_residual", estimate.residual, config["solver"]["residual_tol"])
    )
    return result


def _is_plain_kinetic(spec):
    """Flat metric with zero potential: the closed-form oracles apply."""
    potential = spec.potential
    return spec.metric.is_flat and isinstance(potential, FourierField) and not np.any(potential.amplitudes)


def _initial_state(config, spec):
    flow = config["flow"]
    n = spec.dim
    x = np.array(flow.get("x") or np.zeros(n))
    if flow.get("v"):
        v = np.array(flow["v"])
    else:
        v = np.zeros(n)
        v[0] = 0.5
    return PhaseState(x, v)


def _random_nodes(grid, count, offset):
    rng = make_rng(offset=offset)
    return rng.choice(grid.size, size=min(count, grid.size), replace=False)


# Subcommands ------------------------------------------------------------


def run_geometry_check(config, spec, writer):
    metric = spec.metric
    n = spec.dim
    rng = make_rng(offset=1)
    points = rng.random((16, n))
    directions = rng.normal(size=(16, n))
    result = RunResult()

    gamma = christoffel_at(metric, points)
    asymmetry = float(np.max(np.abs(gamma - np.swapaxes(gamma, -1, -2))))
    result.criteria.append(Criterion.at_most("christoffel_symmetry", asymmetry, 1e-12))

    ricci = ricci_at(metric, points, directions)
    lap_f = laplacian(metric, spec.potential, points)
    writer.csv(
        "geometry.csv",
        [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["ricci", "laplacian_f"],
        np.column_stack([points, directions, ricci, lap_f]),
    )
    result.outputs.update(min_ricci=float(ricci.min()), max_ricci=float(ricci.max()))

    if metric.is_flat:
        result.criteria.append(Criterion.at_most("flat_ricci", float(np.max(np.abs(ricci))), 1e-8))
    elif metric.analytic:
        errors = [
            float(np.max(np.abs(christoffel_at(metric.with_finite_differences(h), points) - gamma)))
            for h in (2e-3, 1e-3)
        ]
        ratio = errors[0] / errors[1] if errors[1] > 0 else np.inf
        result.outputs["christoffel_fd_errors"] = errors
        result.criteria.append(Criterion.at_least("christoffel_fd_order", ratio, 3.5))

    if isinstance(metric, ConformalMetric) and n == 2:
        g = metric_tensor(metric, points)
        unit = directions / np.sqrt(np.einsum("ki,kij,kj->k", directions, g, directions))[:, None]
        oracle = gauss_curvature_conformal(metric.conformal_factor, points)
        gap = float(np.max(np.abs(ricci_at(metric, points, unit) - oracle)))
        result.criteria.append(Criterion.at_most("gauss_curvature_oracle", gap, 1e-6))

    grid = weakkam.Grid(n, config["grid"]["N"])
    nodes = hodge.grid_points(grid)
    field_values = sharp(metric, nodes, spec.form.components(nodes))
    stokes = abs(hodge.stokes_sum(metric, grid, field_values))
    result.criteria.append(Criterion.at_most("discrete_stokes", stokes, 1e-10))
    return result


def run_flow(config, spec, writer):
    flow = config["flow"]
    state = _initial_state(config, spec)
    traj = integrate_flow(spec, state, flow["T"], flow["dt"])
    back = integrate_flow(spec, traj.end, -flow["T"], flow["dt"])
    drift = abs(energy(spec, traj.end) - energy(spec, traj.start))
    reversibility = float(np.max(np.abs(back.start.x - state.x)))
    writer.table("trajectory.csv", traj)
    result = RunResult()
    result.outputs.update(
        energy=float(energy(spec, traj.start)),
        energy_drift=drift,
        reversibility=reversibility,
        action=float(action(spec, traj)),
    )
    result.criteria.append(Criterion.at_most("energy_drift", drift, flow["energy_tol"]))
    result.criteria.append(Criterion.at_most("flow_reversibility", reversibility, 1e-8))
    return result


def run_jacobi(config, spec, writer):
    flow = config["flow"]
    result = RunResult()
    k = flow.get("synthetic_k")
    if k is not None:
        model = variation.SyntheticJacobiModel.constant_curvature(spec.dim, k)
        frame = variation.propagate_synthetic_frame(model, flow["T"], dt=flow["dt"])
        scan = variation.scan_conjugate_points(frame)
        reverse = variation.reverse_conjugacy_check(model, flow["T"])
        if k > 0:
            expected = np.pi / np.sqrt(k)
            first = scan.points[0] if scan.points else np.inf
            result.criteria.append(Criterion.at_most("first_conjugate_time", abs(first - expected), 1e-4))
        else:
            result.criteria.append(Criterion.at_most("conjugate_free", len(scan.points), 0))
    else:
        traj = integrate_flow(spec, _initial_state(config, spec), flow["T"], flow["dt"])
        frame = variation.propagate_jacobi_frame(spec, traj)
        scan = variation.scan_conjugate_points(frame)
        reverse = variation.reverse_conjugacy_check(spec, traj)
        samples = np.linspace(1, len(frame.s) - 1, 5).astype(int)
        deviation = variation.flow_derivative_check(spec, traj, frame, samples)
        result.criteria.append(Criterion.at_most("jacobi_vs_flow_derivative", deviation, 1e-4))
    writer.table("jacobi.csv", frame)
    writer.json(
        "conjugate.json",
        {"crossings": scan.crossings, "tangential": scan.tangential, "degenerate": scan.degenerate, "reverse": reverse},
    )
    result.outputs.update(conjugate_points=scan.points, degenerate=scan.degenerate)
    result.criteria.append(Criterion.at_most("reverse_conjugacy", len(reverse["mismatches"]), 0, f"tol {reverse['tolerance']:g}"))
    return result


def _comparison_runs(config, writer):
    section = config["riccati"]
    n = section["n"]
    result = RunResult()
    rows = []
    for k in section["k"]:
        horizon = section["horizon"]
        if k > 0:
            horizon = min(horizon, 0.999 * np.pi / np.sqrt(k / n))
        for slack in section["slack"]:
            report = riccati.verify_comparison(
                n, k, s0=section["s0"], horizon=horizon, slack=slack, samples=section["samples"]
            )
            writer.table(f"riccati_k{k:g}_slack{slack:g}.csv", report)
            rows.append({"k": k, "slack": slack, "max_excess": report.max_excess, "blow_down": report.blow_down})
            result.criteria.append(
                Criterion.at_most(f"comparison_k{k:g}_slack{slack:g}", report.max_excess, report.tolerance)
            )
            if k == 0 and slack == 0:
                result.criteria.append(Criterion.at_most("comparison_equality", report.equality_error, 1e-8))
    result.outputs["comparisons"] = rows
    return result


def run_riccati_compare(config, spec, writer):
    return _comparison_runs(config, writer)


def run_weakkam_solve(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    return _solve_result(config, kernel, estimate, u)


def run_barrier(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    solver = config["solver"]
    base = config["quotient"]["base"] % kernel.grid.size
    piece = barrier.peierls_barrier(kernel, estimate.c, base, solver["horizons"], tol=solver["tol_A"])
    writer.table("barrier.csv", piece)
    result = _solve_result(config, kernel, estimate, u)
    result.outputs.update(base=base, stability=piece.stability, suggested_horizon=piece.suggested_horizon)
    detail = "" if piece.stable else f"try horizon {piece.suggested_horizon:g}"
    result.criteria.append(Criterion.at_most("horizon_stability", piece.stability, 5 * solver["tol_A"], detail))
    result.criteria.append(Criterion.at_most("weak_kam_below_barrier", piece.domination_gap(u), 3 * solver["tol_A"]))
    return result


def _aubry(config, kernel, c):
    solver = config["solver"]
    return barrier.aubry_set(
        kernel, c, solver["tol_A"], solver["horizons"], stride=config["quotient"]["stride"], tol=solver["tol_A"]
    )


def _write_aubry(writer, kernel, aubry):
    grid = kernel.grid
    member = np.isin(aubry.candidates, aubry.nodes).astype(int)
    writer.csv(
        "aubry.csv",
        ["node"] + [f"x{i + 1}" for i in range(grid.dim)] + ["h_xx", "in_aubry"],
        np.column_stack([aubry.candidates, grid.points(aubry.candidates), aubry.diagonal, member]),
    )


def run_aubry(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    aubry = _aubry(config, kernel, estimate.c)
    _write_aubry(writer, kernel, aubry)
    result = _solve_result(config, kernel, estimate, u)
    result.outputs.update(aubry_count=len(aubry), sampled=len(aubry.candidates), unstable_slices=aubry.unstable)
    result.criteria.append(Criterion.at_least("aubry_nonempty", len(aubry), 1))
    return result


def _quotient(config, kernel, c, aubry, writer):
    solver = config["solver"]
    report = barrier.mather_quotient(
        kernel, c, aubry, solver["tol_Q"], solver["horizons"], config["quotient"]["max_nodes"], tol=solver["tol_A"]
    )
    summary = QuotientReportSerializer(data=report.summary(kernel.grid))
    summary.is_valid(raise_exception=True)
    writer.json("quotient.json", summary.validated_data)
    return report


def run_quotient(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    aubry = _aubry(config, kernel, estimate.c)
    _write_aubry(writer, kernel, aubry)
    report = _quotient(config, kernel, estimate.c, aubry, writer)
    tol_A = config["solver"]["tol_A"]
    result = _solve_result(config, kernel, estimate, u)
    result.outputs.update(report.summary(kernel.grid))
    result.criteria.append(Criterion.at_least("delta_nonnegative", report.min_delta, -2 * tol_A))
    result.criteria.append(Criterion.at_most("delta_diagonal", report.max_self_delta, 2 * tol_A))
    result.criteria.append(Criterion.at_most("barrier_triangle", report.triangle_violation, 3 * tol_A))
    pair = report.closest_cross_pair()
    if pair is not None:
        x, y, cross = pair
        oracle = barrier.mechanical_delta_oracle(spec, kernel.grid.points(x), kernel.grid.points(y))
        result.outputs["cross_delta"] = cross
        if oracle is not None:
            result.outputs["oracle_delta"] = oracle
            error = abs(cross - oracle) / oracle if oracle > 0 else abs(cross)
            result.criteria.append(Criterion.at_most("cross_delta_oracle", error, 0.1, "relative error"))
    return result


def _hodge_result(config, spec, writer):
    metric = spec.metric
    N = config["grid"]["N"]
    tol = config["solver"]["hodge_tol"]
    harmonic = hodge.is_harmonic(metric, spec.form, N)
    decomposition = hodge.harmonic_representative(metric, spec.form, N, tol)
    bochner = hodge.bochner_check(metric, spec.form, N)
    writer.table("hodge.csv", decomposition)
    writer.json(
        "hodge.json",
        {"harmonic": bool(harmonic), "sup_divergence": harmonic.sup_divergence, **decomposition.summary(), "bochner": bochner.summary()},
    )
    grid = decomposition.grid
    stokes = abs(hodge.stokes_sum(metric, grid, sharp(metric, hodge.grid_points(grid), decomposition.omega)))
    result = RunResult(converged=decomposition.converged)
    result.outputs.update(
        harmonic=bool(harmonic),
        sup_divergence=harmonic.sup_divergence,
        harmonic_class=decomposition.cohomology_class.tolist(),
        bochner=bochner.status,
    )
    class_error = float(np.max(np.abs(decomposition.cohomology_class - spec.form.cohomology_class)))
    result.criteria.append(Criterion.at_most("hodge_class", class_error, 1e-6))
    result.criteria.append(Criterion.at_most("harmonic_part_divergence", decomposition.divergence_sup, 1e-6))
    result.criteria.append(Criterion.at_most("discrete_stokes", stokes, 1e-10))
    if spec.metric.is_flat and spec.form.exact_part is not None:
        phi = spec.form.exact_part.value(hodge.grid_points(grid))
        psi_error = float(np.max(np.abs(decomposition.psi - (phi - phi.mean()))))
        result.criteria.append(Criterion.at_most("potential_recovery", psi_error, 1e-6))
    if bochner.status != "not-applicable":
        result.criteria.append(Criterion.at_most("bochner_spread", bochner.spread, bochner.tolerance))
    return result


def run_hodge(config, spec, writer):
    return _hodge_result(config, spec, writer)


# verify -----------------------------------------------------------------


def _operator_laws(kernel, pairs=256):
    rng = make_rng(offset=31)
    size = kernel.grid.size
    u = rng.normal(size=(pairs, size))
    v = u + np.abs(rng.normal(size=(pairs, size)))
    tu = weakkam.lax_oleinik_minus_argmin(kernel, u)[0]
    tv = weakkam.lax_oleinik_minus_argmin(kernel, v)[0]
    shifted = weakkam.lax_oleinik_minus_argmin(kernel, u + 3.5)[0]
    w = rng.normal(size=(pairs, size))
    tw = weakkam.lax_oleinik_minus_argmin(kernel, w)[0]
    monotone = float(np.max(tu - tv))
    commute = float(np.max(np.abs(shifted - tu - 3.5)))
    lipschitz = float(np.max(np.max(np.abs(tu - tw), axis=1) - np.max(np.abs(u - w), axis=1)))
    return [
        Criterion.at_most("operator_monotone", monotone, 0.0),
        Criterion.at_most("operator_constant_commuting", commute, 1e-9),
        Criterion.at_most("operator_nonexpansive", lipschitz, 1e-9),
    ]


def verify_harmonic_rigidity(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    result = _solve_result(config, kernel, estimate, u)
    harmonic = hodge.is_harmonic(spec.metric, spec.form, kernel.grid.N)
    result.outputs.update(harmonic=bool(harmonic))
    kinetic = _is_plain_kinetic(spec)
    if harmonic:
        result.criteria.append(Criterion.at_most("constant_weak_kam", u.spread, 5e-2))
        if kinetic:
            omega = spec.form.constants
            expected = 0.5 * omega @ np.linalg.solve(metric_tensor(spec.metric, np.zeros(spec.dim)), omega) - spec.constant
            result.criteria.append(Criterion.at_most("critical_value", abs(estimate.c - expected), 5e-3))
            curve = weakkam.backward_calibrated_curve(kernel, u, estimate.c, 0, 20)
            velocity = curve.velocities.mean(axis=0)
            target = sharp(spec.metric, np.zeros(spec.dim), omega)
            result.criteria.append(
                Criterion.at_most(
                    "calibrated_velocity",
                    float(np.max(np.abs(velocity - target))),
                    2 * kernel.grid.spacing / kernel.dt,
                )
            )
            result.criteria.append(Criterion.at_most("calibration_defect", curve.max_defect, 2 * config["solver"]["residual_tol"]))
    else:
        result.criteria.append(Criterion.at_least("nonconstant_weak_kam", u.spread, 0.15))
        if kinetic and not np.any(spec.form.constants) and spec.form.exact_part is not None:
            result.criteria.append(Criterion.at_most("critical_value", abs(estimate.c + spec.constant), 5e-3))
            phi = spec.form.exact_part.value(kernel.grid.points())
            gap = u.values + phi
            result.criteria.append(Criterion.at_most("weak_kam_matches_minus_phi", float(np.max(np.abs(gap - gap.mean()))), 2e-2))
    result.criteria.extend(_operator_laws(kernel))
    return result.extend(_hodge_result(config, spec, writer))


def _ricci_floor(metric, grid):
    return float(np.min(np.linalg.eigvalsh(ricci_tensor(metric, grid.points()))))


def _probe_estimates(config, kernel, estimate, u, bounds):
    probe = config["probe"]
    nodes = _random_nodes(kernel.grid, probe["points"], offset=41)
    residual_tol = config["solver"]["residual_tol"]

    def run(node):
        return barrier.barrier_laplacian_estimate(kernel, u, estimate.c, int(node), probe["t_list"], m=probe["m"], tol=residual_tol)

    values = np.array(fork_join(run, nodes))
    excess = values - bounds(nodes)
    return nodes, values, float(np.max(excess))


def verify_laplacian_bound(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    result = _solve_result(config, kernel, estimate, u)
    grid = kernel.grid
    n = spec.dim
    probe = config["probe"]
    k = min(0.0, float(np.min(laplacian(spec.metric, spec.potential, grid.points()))))
    bound = float(np.sqrt(-n * k))
    result.outputs.update(k=k, bound=bound)
    result.criteria.append(Criterion.at_least("nonnegative_ricci", _ricci_floor(spec.metric, grid), -1e-8))
    if spec.metric.is_flat and not np.any(spec.form.constants) and spec.form.exact_part is None:
        f_max = float(np.max(spec.potential.value(grid.points())))
        result.criteria.append(Criterion.at_most("critical_value", abs(estimate.c - (f_max - spec.constant)), 5e-3))

    nodes, values, excess = _probe_estimates(config, kernel, estimate, u, lambda nodes: bound)
    result.outputs["laplacian_source"] = barrier.LAPLACIAN_SOURCE
    writer.csv("laplacian_estimates.csv", ["node", "estimate", "bound"], np.column_stack([nodes, values, np.full(len(nodes), bound)]))
    result.criteria.append(Criterion.at_most("barrier_laplacian_bound", excess, probe["slack"], f"sqrt(-nk) = {bound:.6g}"))

    horizon = max(probe["t_list"])
    criterion, traces = theta_comparison(spec, estimate.c, k, horizon, probe["samples"])
    for index, trace in traces:
        writer.table(f"theta_{index}.csv", trace)
    result.outputs["theta_frames"] = sum(1 for _, trace in traces if len(trace.s))
    result.criteria.append(criterion)
    return result


def theta_comparison(spec, c, k, horizon, samples, tolerance=1e-2):
    """Criterion max(Θ − bound) over frames on the energy surface; fails when no frame got past s = 0."""
    rng = make_rng(offset=43)
    n = spec.dim
    worst = -np.inf
    traces = []
    for index in range(samples):
        state = barrier.energy_surface_state(spec, c, rng.random(n), rng.normal(size=n))
        if state is None:
            continue
        frame = variation.propagate_jacobi_frame(spec, integrate_flow(spec, state, horizon, 1e-2))
        trace = riccati.theta_along(spec, frame, k=k)
        traces.append((index, trace))
        if len(trace.s):
            worst = max(worst, float(np.max(trace.theta - trace.bound)))
    compared = sum(1 for _, trace in traces if len(trace.s))
    if not compared:
        logger.warning("theta comparison: none of %d samples produced a frame to compare", samples)
        return Criterion("theta_comparison", False, np.nan, tolerance, "no frame compared"), traces
    return Criterion.at_most("theta_comparison", worst, tolerance, f"{compared} of {samples} frames"), traces


def verify_divergence_bound(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    result = _solve_result(config, kernel, estimate, u)
    probe = config["probe"]
    report = barrier.hypothesis_check_energy_surface(spec, estimate.c, samples=probe["samples"], T=probe["energy_T"])
    result.outputs["hypothesis"] = report.summary()
    result.criteria.append(Criterion.at_least("energy_surface_hypothesis", report.min_value, -1e-6))

    def bounds(nodes):
        return -barrier.divergence_of_form(spec, kernel.grid.points(nodes))

    nodes, values, excess = _probe_estimates(config, kernel, estimate, u, bounds)
    result.outputs["laplacian_source"] = barrier.LAPLACIAN_SOURCE
    writer.csv("laplacian_estimates.csv", ["node", "estimate", "bound"], np.column_stack([nodes, values, bounds(nodes)]))
    result.criteria.append(Criterion.at_most("barrier_laplacian_divergence_bound", excess, probe["slack"]))
    return result


def verify_full_aubry_set(config, spec, writer):
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    result = _solve_result(config, kernel, estimate, u)
    tol_A = config["solver"]["tol_A"]
    aubry = _aubry(config, kernel, estimate.c)
    _write_aubry(writer, kernel, aubry)
    report = _quotient(config, kernel, estimate.c, aubry, writer)
    result.outputs.update(report.summary(kernel.grid))
    missing = len(aubry.candidates) - len(aubry)
    result.criteria.append(Criterion.at_most("aubry_is_everything", missing, 0, f"tol_A {tol_A:g}"))
    result.criteria.append(Criterion.at_most("barrier_vanishes", float(np.max(np.abs(report.barrier))), 5e-2))
    result.criteria.append(Criterion.at_most("quotient_singleton", report.component_count, 1, f"tol_Q {report.tol_Q:g}"))

    # same cohomology class, different representative
    bump = build_field({"name": "sine", "params": {"amplitude": 0.05}}, spec.dim)
    exact = bump if spec.form.exact_part is None else spec.form.exact_part + bump
    shifted_form = ClosedOneForm(spec.form.constants, exact)
    shifted = LagrangianSpec.build(spec.metric, spec.potential, shifted_form, spec.constant, spec.v_max)
    shifted_kernel = weakkam.build_kernel(shifted, kernel.grid, kernel.dt, kernel.radius)
    shifted_estimate, _ = solve(config, shifted_kernel)
    other = _aubry(config, shifted_kernel, shifted_estimate.c)
    difference = len(set(aubry.nodes.tolist()) ^ set(other.nodes.tolist()))
    result.criteria.append(Criterion.at_most("aubry_class_invariance", difference, 0, f"tol_A {tol_A:g}"))
    result.converged = result.converged and shifted_estimate.converged
    return result


def verify_mane_rigidity(config, spec, writer):
    if not config["lagrangian"]["mane"]:
        spec = LagrangianSpec.mane(spec.metric, spec.form, spec.constant, spec.v_max)
    kernel = build_kernel(config, spec)
    estimate, u = solve(config, kernel, writer)
    result = _solve_result(config, kernel, estimate, u)
    probe = config["probe"]
    report = barrier.hypothesis_check_energy_surface(
        spec, estimate.c, samples=probe["samples"], T=probe["energy_T"], mane=True
    )
    result.outputs["hypothesis"] = report.summary()
    result.criteria.append(Criterion.at_least("energy_surface_hypothesis", report.min_value, -1e-6))
    harmonic = bool(hodge.is_harmonic(spec.metric, spec.form, kernel.grid.N))
    constant = u.spread <= 5e-2
    aubry = _aubry(config, kernel, estimate.c)
    quotient = _quotient(config, kernel, estimate.c, aubry, writer)
    singleton = quotient.component_count == 1
    result.outputs.update(harmonic=harmonic, constant=constant, singleton=singleton)
    result.criteria.append(Criterion("constant_iff_harmonic", constant == harmonic, u.spread, 5e-2))
    result.criteria.append(
        Criterion("singleton_iff_harmonic", singleton == harmonic, quotient.component_count, config["solver"]["tol_Q"])
    )
    return result


def verify_riccati(config, spec, writer):
    result = _comparison_runs(config, writer)
    flow = config["flow"]
    rng = make_rng(offset=53)
    n = spec.dim
    residuals, gaps = [], []
    for _ in range(flow["trajectories"]):
        state = PhaseState(rng.random(n), rng.uniform(-1.0, 1.0, size=n))
        frame = variation.propagate_jacobi_frame(spec, integrate_flow(spec, state, 2.0, flow["dt"]))
        residuals.append(riccati.matrix_riccati_residual(frame))
        gaps.append(riccati.trace_inequality_gap(frame))
    result.outputs.update(max_matrix_residual=float(np.nanmax(residuals)), min_trace_gap=float(min(gaps)))
    result.criteria.append(Criterion.at_most("matrix_riccati_residual", float(np.nanmax(residuals)), 1e-6))
    result.criteria.append(Criterion.at_least("trace_inequality", float(min(gaps)), -1e-12))

    kernel = build_kernel(config, spec)
    base = config["quotient"]["base"] % kernel.grid.size
    x = kernel.grid.points(base)
    velocity = np.array(flow["v"]) if flow.get("v") else sharp(spec.metric, x, spec.form.components(x))
    check = barrier.barrier_riccati_crosscheck(kernel, base, velocity)
    writer.json("barrier_riccati.json", check)
    worst = max(row["error"] for row in check["rows"])
    result.criteria.append(Criterion.at_most("barrier_riccati_crosscheck", worst, check["tolerance"]))
    return result


def verify_index(config, spec, writer):
    result = RunResult()
    n = spec.dim
    flat = LagrangianSpec.build(FlatMetric(n))
    velocity = np.zeros(n)
    velocity[0] = 0.3
    segment = integrate_flow(flat, PhaseState(np.zeros(n), velocity), 1.0, 1e-2)
    e1 = np.zeros(n)
    e1[0] = 1.0

    def sine(t):
        return np.sin(np.pi * t)[:, None] * e1, (np.pi * np.cos(np.pi * t))[:, None] * e1

    sine_field = variation.PiecewiseField.smooth(0.0, 1.0, sine)
    value = variation.index_form(flat, segment, sine_field, sine_field).value
    result.criteria.append(Criterion.at_most("index_form_sine", abs(value - np.pi**2 / 2), 1e-6))

    sphere = variation.SyntheticJacobiModel.constant_curvature(n, 1.0)
    frame = variation.propagate_synthetic_frame(sphere, np.pi)

    def jacobi(t):
        return np.sin(t)[:, None] * e1, np.cos(t)[:, None] * e1

    jacobi_field = variation.PiecewiseField.smooth(0.0, frame.s[-1], jacobi)
    vanishing = variation.index_form_frame(frame, jacobi_field, jacobi_field).value
    result.criteria.append(Criterion.at_most("index_form_jacobi", abs(vanishing), 1e-5))

    long_frame = variation.propagate_synthetic_frame(sphere, 4.0)
    points = variation.conjugate_points(long_frame)
    first = points[0] if points else np.inf
    result.criteria.append(Criterion.at_most("synthetic_conjugate", abs(first - np.pi), 1e-4))

    straight = integrate_flow(flat, PhaseState(np.zeros(n), np.full(n, 0.3)), 100.0, 1e-2)
    flat_points = variation.conjugate_points(variation.propagate_jacobi_frame(flat, straight))
    result.criteria.append(Criterion.at_most("flat_conjugate_free", len(flat_points), 0))

    traj = integrate_flow(spec, _initial_state(config, spec), 1.0, 1e-2)

    def bump(t):
        return np.sin(np.pi * t)[:, None] * e1 * 0.1, (0.1 * np.pi * np.cos(np.pi * t))[:, None] * e1

    family = variation.VariationFamily(variation.PiecewiseField.smooth(traj.times[0], traj.times[-1], bump))
    check = variation.second_variation_check(spec, traj, family)
    result.outputs["second_variation"] = check
    result.criteria.append(Criterion.at_most("second_variation", max(check["relative_errors"]), check["tolerance"]))

    kernel = build_kernel(config, spec)
    worst = _minimizer_determinants(kernel, config["flow"]["trajectories"])
    result.outputs["min_minimizer_det"] = worst
    result.criteria.append(Criterion.at_least("minimizer_det_positive", worst, 0.0, "det A on (0, t)"))
    return result


def _minimizer_determinants(kernel, count, steps=None):
    """min det A over the open interval along shooting minimizers that match the DP action."""
    spec = kernel.spec
    grid = kernel.grid
    steps = steps or max(1, int(round(1.0 / kernel.dt)))
    t = steps * kernel.dt
    rng = make_rng(offset=61)
    worst = np.inf
    for _ in range(count):
        x, y = rng.choice(grid.size, size=2, replace=False)
        dp = weakkam.dp_action(kernel, int(x), steps).values[int(y)]
        found = shoot_minimizers(spec, grid.points(x), grid.points(y), t, starts=3**spec.dim, dt=1e-2)
        if not found or abs(found[0].action - dp) > max(5e-2, 4 * grid.spacing):
            continue
        frame = variation.propagate_jacobi_frame(spec, found[0].trajectory)
        worst = min(worst, float(np.min(frame.det[1:-1])))
    return worst


RUNNERS = {
    "geometry-check": run_geometry_check,
    "flow": run_flow,
    "jacobi": run_jacobi,
    "riccati-compare": run_riccati_compare,
    "weakkam-solve": run_weakkam_solve,
    "barrier": run_barrier,
    "aubry": run_aubry,
    "quotient": run_quotient,
    "hodge": run_hodge,
}

THEOREM_RUNNERS = {
    "1.5": verify_laplacian_bound,
    "1.6": verify_divergence_bound,
    "1.7": verify_harmonic_rigidity,
    "1.8": verify_full_aubry_set,
    "1.9": verify_mane_rigidity,
    "riccati": verify_riccati,
    "index": verify_index,
}


def run_experiment(subcommand, config, writer, theorem=None):
    """Run one subcommand and return the validated RunSummary."""
    if subcommand == "verify":
        if theorem not in THEOREM_RUNNERS:
            raise ConfigurationError("verify needs --theorem", choices=sorted(THEOREM_RUNNERS))
        runner = THEOREM_RUNNERS[theorem]
    elif subcommand in RUNNERS:
        runner = RUNNERS[subcommand]
    else:
        raise ConfigurationError("unknown subcommand", subcommand=subcommand)

    started = time.perf_counter()
    spec = build_spec(config)
    result = runner(config, spec, writer)
    passed = all(item.passed for item in result.criteria)
    if not result.converged:
        exit_code = EXIT_NON_CONVERGENCE
    else:
        exit_code = EXIT_OK if passed else EXIT_CHECK_FAILED
    summary = {
        "experiment": config["experiment"],
        "subcommand": subcommand,
        "theorem": theorem if subcommand == "verify" else None,
        "inputs": config,
        "outputs": result.outputs,
        "criteria": [item.as_dict() for item in result.criteria],
        "passed": passed,
        "exit_code": exit_code,
        "wall_clock": time.perf_counter() - started,
        "version": __version__,
        "artifacts": list(writer.written),
    }
    serializer = RunSummarySerializer(data=jsonable(summary))
    serializer.is_valid(raise_exception=True)
    logger.info("%s finished with exit code %d", subcommand, exit_code)
    return serializer.validated_data
