"""
Trace and matrix Riccati quantities along Jacobi frames, and the scalar
comparison lemma: a solution of α̇ + α²/n + k ≤ 0 seeded like n/s stays
below n·Ṡ_{n,k}/S_{n,k}.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import DomainError
from .geometry import divergence, form_sharp_field
from .variation import conjugate_points

logger = logging.getLogger(__name__)

DET_FLOOR = 1e-12


def _rate(n, k):
    return np.sqrt(abs(k) / n)


def _check_domain(n, k, s):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise DomainError("comparison functions need s > 0", s=s.tolist() if s.ndim else float(s))
    if k > 0 and np.any(_rate(n, k) * s >= np.pi):
        raise DomainError("s beyond the first zero of S_{n,k}", n=n, k=k, limit=float(np.pi / _rate(n, k)))
    return s


def comparison_function(n, k, s):
    """S_{n,k}(s): √(n/k)·sin(√(k/n)s), s, or √(−n/k)·sinh(√(−k/n)s)."""
    s = _check_domain(n, k, s)
    if k == 0:
        return s * 1.0
    a = _rate(n, k)
    if k > 0:
        return np.sin(a * s) / a
    return np.sinh(a * s) / a


def riccati_bound(n, k, s):
    """n·Ṡ_{n,k}(s)/S_{n,k}(s)."""
    s = _check_domain(n, k, s)
    if k == 0:
        return n / s
    a = _rate(n, k)
    if k > 0:
        return np.sqrt(n * k) / np.tan(a * s)
    return np.sqrt(-n * k) / np.tanh(a * s)


@dataclass
class ComparisonReport:
    n: int
    k: float
    s: np.ndarray
    alpha: np.ndarray
    bound: np.ndarray
    max_excess: float
    equality_error: float
    blow_down: float = None
    tolerance: float = 1e-6

    @property
    def passed(self):
        return self.blow_down is None and self.max_excess <= self.tolerance

    def csv_header(self):
        return ["s", "alpha", "bound", "margin"]

    def csv_rows(self):
        return np.column_stack([self.s, self.alpha, self.bound, self.bound - self.alpha])


def verify_comparison(n, k, alpha0=None, s0=1e-4, horizon=20.0, slack=0.0, samples=2000, tolerance=1e-6, det_floor=DET_FLOOR):
    """Integrate α̇ = −α²/n − k − slack(s) from α(s₀) = α₀ (default n/s₀) and compare with the bound."""
    slack_fn = slack if callable(slack) else (lambda s, value=float(slack): value)
    alpha0 = n / s0 if alpha0 is None else alpha0

    def rhs(s, y):
        return [-y[0] ** 2 / n - k - slack_fn(s)]

    def blow_down(s, y):
        return y[0] + 1.0 / det_floor

    blow_down.terminal = True
    s_eval = np.unique(np.concatenate([np.geomspace(s0, horizon, samples // 2), np.linspace(s0, horizon, samples // 2)]))
    solution = solve_ivp(
        rhs, (s0, horizon), [alpha0], method="DOP853", t_eval=s_eval, rtol=1e-12, atol=1e-12, events=blow_down
    )
    s = solution.t
    alpha = solution.y[0]
    bound = riccati_bound(n, k, s)
    excess = float(np.max(alpha - bound)) if len(s) else np.inf
    equality = float(np.max(np.abs(alpha - bound) / np.maximum(1.0, np.abs(bound)))) if len(s) else np.inf
    stopped = float(solution.t_events[0][0]) if len(solution.t_events[0]) else None
    if stopped is not None:
        logger.info("riccati comparison blew down at s=%.6g", stopped)
    return ComparisonReport(n, k, s, alpha, bound, excess, equality, stopped, tolerance)


@dataclass
class RiccatiTrace:
    s: np.ndarray
    theta: np.ndarray
    residual: np.ndarray
    ric_plus_laplacian: np.ndarray
    div_correction: np.ndarray
    bound: np.ndarray = None
    truncated_at: float = None
    diagnostics: list = field(default_factory=list)

    @property
    def laplacian_estimate(self):
        """Θ(s) − div ω♯(ρ(s)), the value of Δ_y A_s(ρ(0), ρ(s))."""
        return self.theta - self.div_correction

    def csv_header(self):
        return ["s", "theta", "bound", "ric_plus_hessf_trace", "residual"]

    def csv_rows(self):
        bound = np.full_like(self.s, np.nan) if self.bound is None else self.bound
        return np.column_stack([self.s, self.theta, bound, self.ric_plus_laplacian, self.residual])


def derivative_samples(values, h):
    """Fourth-order central differences on a uniform grid; second order at the two outermost samples."""
    values = np.asarray(values, dtype=float)
    out = np.gradient(values, h, axis=0, edge_order=2)
    if len(values) >= 5:
        out[2:-2] = (values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]) / (12.0 * h)
    return out


def _lambda(frame, mask):
    return np.linalg.solve(frame.A[mask], frame.Adot[mask])


def theta_along(spec, frame, det_floor=DET_FLOOR, k=None):
    """Θ(s) = tr(A⁻¹Ȧ) where |det A| > det_floor, with the Riccati residual.

    The trace is cut at the first conjugate point, or at the first s > 0
    where det A falls below the floor; Θ diverges there and is not
    extrapolated past it.
    """
    det = np.abs(frame.det)
    valid = det > det_floor
    valid[0] = False
    diagnostics = []
    truncated_at = None
    conjugate = conjugate_points(frame)
    if conjugate:
        valid &= frame.s < conjugate[0]
    bad = np.nonzero(~valid[1:])[0]
    stop = len(frame.s)
    if len(bad):
        stop = int(bad[0]) + 1
        truncated_at = float(frame.s[stop])
        diagnostics.append(f"det A degenerates near s={truncated_at:.6g}; trace truncated")
        logger.info("theta_along truncated at s=%.6g", truncated_at)
    mask = np.zeros(len(frame.s), dtype=bool)
    mask[1:stop] = True

    s = frame.s[mask]
    n = frame.dim
    theta = np.trace(_lambda(frame, mask), axis1=1, axis2=2)
    h = frame.s[1] - frame.s[0]
    theta_dot = derivative_samples(theta, h)
    ric_plus = frame.ricci[mask] + frame.laplacian_f[mask]
    residual = theta_dot + theta**2 / n + ric_plus

    if spec is not None and frame.base is not None:
        positions = frame.base.positions[mask]
        div = divergence(spec.metric, form_sharp_field(spec.metric, spec.form), positions)
    else:
        div = np.zeros_like(s)
    bound = None if k is None else riccati_bound(n, k, s)
    return RiccatiTrace(s, theta, residual, ric_plus, div, bound, truncated_at, diagnostics)


def matrix_riccati_residual(frame, min_s=0.25, det_floor=DET_FLOOR):
    """max_s ‖Λ̇ + Λ² + R + ∇²f‖_F for Λ = A⁻¹Ȧ, Λ̇ by fourth-order differences, s ≥ min_s."""
    det = np.abs(frame.det)
    mask = (frame.s > 0) & (det > det_floor)
    lam = np.full(frame.A.shape, np.nan)
    lam[mask] = _lambda(frame, mask)
    h = frame.s[1] - frame.s[0]
    lam_dot = derivative_samples(lam, h)
    residual = lam_dot + lam @ lam + frame.curvature + frame.hessian
    norms = np.linalg.norm(residual, axis=(1, 2))
    # exclude the differencing stencil edges and anything touching an invalid sample
    usable = (frame.s >= min_s) & mask
    usable[:2] = False
    usable[-2:] = False
    usable &= np.isfinite(norms)
    return float(np.max(norms[usable])) if np.any(usable) else np.nan


def trace_inequality_gap(frame, det_floor=DET_FLOOR):
    """min_s (tr(Λ²) − tr²(Λ)/n) / (1 + tr²(Λ)); non-negative up to round-off."""
    det = np.abs(frame.det)
    mask = (frame.s > 0) & (det > det_floor)
    lam = _lambda(frame, mask)
    tr = np.trace(lam, axis1=1, axis2=2)
    tr_sq = np.trace(lam @ lam, axis1=1, axis2=2)
    n = frame.dim
    return float(np.min((tr_sq - tr**2 / n) / (1.0 + tr**2)))
