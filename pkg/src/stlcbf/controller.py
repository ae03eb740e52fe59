"""Disturbance-rejection controller built on the reconstructed barrier.

The reconstructed barrier hhat(x_hat, t, eta) = h(x_hat, t) - eta is
evaluated on the reference-model state; the gap e = h(true) - hhat is kept
inside an exponentially shrinking performance funnel by the adaptive laws
for eta and r_hat.  The control input is the minimum-effort solution of a
single-constraint QP enforcing the barrier inequality on hhat, solved in
closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ControllerParams",
    "ControllerState",
    "QpResult",
    "reference_model_deriv",
    "differentiator_deriv",
    "funnel",
    "adaptive_derivs",
    "qp_solve",
    "release_reset",
]


@dataclass(eq=False)
class ControllerParams:
    lam: float = 10.0  # observer gain, must exceed 1/2
    c: float = 0.01
    gamma: float = 0.01
    varsigma: float = 1.0
    varrho: float = 1.0
    rho0: float = 1.0
    rho_inf: float = 0.2
    eps_smooth: float = 0.01  # smoothing constant in the robustifying term
    alpha_gain: float = 0.5  # alpha(y) = alpha_gain * y
    W: np.ndarray = field(default_factory=lambda: np.eye(2))
    input_bounds: np.ndarray | None = None  # per-channel |u_i| <= bound_i
    eta_reset: float = 0.1
    e_guard: float | None = None  # clamp margin; default 1e-6 * rho_inf

    def __post_init__(self):
        if not self.lam > 0.5:
            raise ValueError(f"observer gain must exceed 1/2, got {self.lam}")
        for name in ("c", "gamma", "varsigma", "varrho", "eps_smooth", "alpha_gain"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.rho0 > self.rho_inf > 0):
            raise ValueError(
                f"funnel bounds need rho0 > rho_inf > 0, got {self.rho0}, {self.rho_inf}"
            )
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ValueError("W must be a square matrix")
        if not np.allclose(self.W, self.W.T):
            raise ValueError("W must be symmetric")
        if np.linalg.eigvalsh(self.W).min() <= 0:
            raise ValueError("W must be positive definite")
        if self.input_bounds is not None:
            self.input_bounds = np.asarray(self.input_bounds, dtype=float)
            if np.any(self.input_bounds <= 0):
                raise ValueError("input bounds must be positive")
        if self.e_guard is None:
            self.e_guard = 1e-6 * self.rho_inf

    def alpha(self, y: float) -> float:
        return self.alpha_gain * y


@dataclass
class ControllerState:
    x_hat: np.ndarray
    z: np.ndarray
    eta: float
    r_hat: float
    tau: float = 0.0  # last release time


def reference_model_deriv(x, x_hat, u, plant, lam: float) -> np.ndarray:
    """x_hat rate: f(x) + g(x) u + lam * (x - x_hat)."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"state/estimate shapes differ: {x.shape} vs {x_hat.shape}")
    return plant.f(x) + plant.g(x) @ u + lam * (x - x_hat)


def differentiator_deriv(x, z, plant, lam: float):
    """Input-free rate estimator z_dot = f(x) + lam * (x - z).

    Returns (z_dot, zbar_dot) with zbar_dot = [z_dot, 1] as consumed by the
    adaptive laws.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise ValueError(f"state/differentiator shapes differ: {x.shape} vs {z.shape}")
    z_dot = plant.f(x) + lam * (x - z)
    return z_dot, np.append(z_dot, 1.0)


def funnel(t: float, tau: float, params: ControllerParams) -> float:
    """rho(t) = (rho0 - rho_inf) * exp(-varrho (t - tau)) + rho_inf."""
    if t < tau - 1e-12:
        raise ValueError(f"time {t} precedes the last release {tau}")
    return (params.rho0 - params.rho_inf) * math.exp(
        -params.varrho * (t - tau)
    ) + params.rho_inf


def adaptive_derivs(
    e: float,
    rho: float,
    grad_hhat,
    zbar_dot,
    r_hat: float,
    params: ControllerParams,
    t: float,
    tau: float,
):
    """Update rates for eta and r_hat.

    ``grad_hhat`` is the full gradient of the reconstructed barrier in its
    augmented argument [x_hat, t].  The gap e is clamped into
    [e_guard, rho - e_guard] before the funnel-edge terms; returns
    (eta_dot, r_hat_dot, clamped).
    """
    if not (math.isfinite(e) and math.isfinite(rho) and rho > 0):
        raise ValueError(f"non-finite funnel inputs: e={e}, rho={rho}")
    guard = params.e_guard
    e_c = min(max(e, guard), rho - guard)
    clamped = e_c != e
    eps = 0.5 * math.log(e_c / (rho - e_c))
    norm_sum = float(np.linalg.norm(grad_hhat)) + float(np.linalg.norm(zbar_dot))
    if not math.isfinite(norm_sum):
        raise ValueError("non-finite gradient inputs to the adaptive laws")
    denom = 2.0 * e_c * (rho - e_c)
    chi = eps * rho / denom * norm_sum
    eta_dot = (
        -params.c * (e_c * (rho - e_c) / rho) * eps
        - (params.varrho * e_c / rho)
        * (params.rho0 - params.rho_inf)
        * math.exp(-params.varrho * (t - tau))
        - rho * eps / (4.0 * e_c * (rho - e_c))
        - (r_hat**2 * norm_sum * chi)
        / math.sqrt(chi**2 * r_hat**2 + params.eps_smooth**2)
    )
    r_hat_dot = (
        params.gamma * abs(eps) * rho / denom * norm_sum - params.varsigma * r_hat
    )
    return eta_dot, r_hat_dot, clamped


@dataclass
class QpResult:
    u: np.ndarray
    slack: float  # constraint value c.u - rhs at the returned input
    clamped: bool = False
    infeasible: bool = False
    reason: str = ""


def qp_solve(
    grad_hhat_x,
    grad_hhat_t: float,
    eta_dot: float,
    x,
    x_hat,
    plant,
    params: ControllerParams,
    hhat_value: float,
) -> QpResult:
    """Minimum-effort input: min (1/2) u'Wu subject to the barrier
    inequality on the reconstructed barrier.

    The single affine constraint is c'u >= rhs with c = g(x)' grad_x and
    rhs collecting the drift, adaptation, and class-K terms.  Closed form:
    u = 0 when the constraint is slack at zero, otherwise
    u = W^-1 c * rhs / (c' W^-1 c).  Box bounds are applied by clamping
    and re-checking; residual violations are reported, not hidden.
    """
    gx = np.asarray(grad_hhat_x, dtype=float)
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if not (
        np.all(np.isfinite(gx))
        and math.isfinite(grad_hhat_t)
        and math.isfinite(hhat_value)
        and math.isfinite(eta_dot)
    ):
        raise ValueError("non-finite inputs to the safety QP")
    c = plant.g(x).T @ gx
    drift = float(gx @ (plant.f(x) + params.lam * (x - x_hat)))
    rhs = -params.alpha(hhat_value) + eta_dot - grad_hhat_t - drift
    m = c.shape[0]
    if rhs <= 0:
        return QpResult(np.zeros(m), slack=-rhs)
    winv_c = np.linalg.solve(params.W, c)
    curvature = float(c @ winv_c)
    if curvature <= 0 or not math.isfinite(curvature):
        return QpResult(
            np.zeros(m),
            slack=-rhs,
            infeasible=True,
            reason="constraint unenforceable at this state (degenerate gradient)",
        )
    u = winv_c * (rhs / curvature)
    clamped = False
    if params.input_bounds is not None:
        u_cl = np.clip(u, -params.input_bounds, params.input_bounds)
        clamped = bool(np.any(u_cl != u))
        u = u_cl
    slack = float(c @ u) - rhs
    if slack < -1e-9:
        return QpResult(
            u,
            slack=slack,
            clamped=clamped,
            infeasible=True,
            reason=f"input bounds leave the barrier constraint short by {-slack:.3g}",
        )
    return QpResult(u, slack=slack, clamped=clamped)


def release_reset(
    state: ControllerState,
    hhat_value: float,
    h_true: float,
    params: ControllerParams,
    s: float,
):
    """Re-anchor the funnel at release time s and reselect eta.

    The reselected eta must keep the reconstructed barrier non-negative and
    the gap inside (0, rho_inf).  Tries the configured reset value, the
    halved-gap construction, then the exact mid-window placement
    eta = h_est - h_true + rho_inf/2; if none meets the strict window the
    check relaxes to the restarted funnel (0, rho0) with a fault flag.  As
    a last resort the gap is pinned to rho_inf/2 regardless of the barrier
    sign, so the funnel law stays regular and the violation shows up in
    the log instead of destabilizing the integration.
    Returns (new_state, fault).
    """
    h_est = hhat_value + state.eta  # h evaluated on the estimate
    pinned = h_est - h_true + params.rho_inf / 2.0
    candidates = [
        min(params.eta_reset, h_est - params.rho_inf / 2.0),
        h_est - h_true / 2.0,
        pinned,
    ]

    def gap(eta):
        return h_true - h_est + eta

    for eta in candidates:
        if h_est - eta >= 0 and 0 < gap(eta) < params.rho_inf:
            return replace(state, eta=eta, tau=s), False
    for eta in candidates:  # relaxed: restart funnel admits e up to rho0
        if h_est - eta >= 0 and 0 < gap(eta) < params.rho0:
            return replace(state, eta=eta, tau=s), True
    return replace(state, eta=pinned, tau=s), True
