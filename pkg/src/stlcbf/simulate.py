"""Deterministic fixed-step closed-loop simulation.

Plant, reference model, differentiator, and the adaptive parameters are
integrated jointly with classical fourth-order Runge-Kutta.  The control
input and the adaptation rates are sampled and held at each step start;
plant and observer stage derivatives use stage-exact time (disturbance,
rotation of the input matrix, observer correction).  The step grid is
built per interval between consecutive switching instants, so every
activation, terminal, and release time lands exactly on a grid point and
no step straddles a discontinuity of the barrier.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .barrier import CbfSpec, eval_cbf, synthesize
from .controller import (
    ControllerParams,
    ControllerState,
    adaptive_derivs,
    differentiator_deriv,
    funnel,
    qp_solve,
    reference_model_deriv,
    release_reset,
)
from .formulas import Formula, format_formula, parse_formula
from .monitor import SampledSignal
from .plant import DisturbanceSignal, plant_deriv
from .scenario import ScenarioConfig, ScenarioError
from .transform import to_desired_form
from .tree import TIME_QUANTUM, TimedTree, assign_times, build_tree

__all__ = [
    "IntegrationFault",
    "rk4_step",
    "make_time_grid",
    "TrajectoryLog",
    "ScenarioRun",
    "resolve_node_keys",
    "run_scenario",
]


class IntegrationFault(RuntimeError):
    pass


def rk4_step(deriv, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of size dt for y' = deriv(t, y)."""
    k1 = deriv(t, y)
    k2 = deriv(t + dt / 2.0, y + dt / 2.0 * k1)
    k3 = deriv(t + dt / 2.0, y + dt / 2.0 * k2)
    k4 = deriv(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def make_time_grid(switch_times, horizon: float, dt: float) -> np.ndarray:
    """Uniform substeps of at most dt between consecutive switching marks."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    marks = sorted({0.0, float(horizon)} | {
        float(s) for s in switch_times if 0.0 < s < horizon - TIME_QUANTUM
    })
    grid = [0.0]
    for s0, s1 in zip(marks[:-1], marks[1:]):
        n = max(1, int(np.ceil((s1 - s0) / dt - 1e-9)))
        for k in range(1, n + 1):
            grid.append(s0 + (s1 - s0) * k / n)
    return np.asarray(grid)


_FLAG_GUARD = "guard_clamp"
_FLAG_UCLAMP = "clamp_u"
_FLAG_QP_INFEASIBLE = "qp_infeasible"
_FLAG_RESET_FAULT = "reset_fault"
_FLAG_EXPIRED = "expired"


@dataclass
class TrajectoryLog:
    """Per-step record of the closed loop, CSV-serializable."""

    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    z: np.ndarray
    u: np.ndarray
    h: np.ndarray
    hhat: np.ndarray
    e: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    r_hat: np.ndarray
    flags: list[str]

    def header(self) -> list[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        cols = ["t"]
        cols += [f"x{i}" for i in range(n)]
        cols += [f"xhat{i}" for i in range(n)]
        cols += [f"z{i}" for i in range(n)]
        cols += [f"u{i}" for i in range(m)]
        cols += ["h", "hhat", "e", "rho", "eta", "rhat", "flags"]
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.header()) + "\n")
            for i in range(len(self.t)):
                nums = [
                    self.t[i],
                    *self.x[i],
                    *self.x_hat[i],
                    *self.z[i],
                    *self.u[i],
                    self.h[i],
                    self.hhat[i],
                    self.e[i],
                    self.rho[i],
                    self.eta[i],
                    self.r_hat[i],
                ]
                fh.write(",".join(f"{v:.17g}" for v in nums))
                fh.write("," + self.flags[i] + "\n")

    def signal(self, columns=None) -> SampledSignal:
        states = self.x if columns is None else self.x[:, list(columns)]
        return SampledSignal(self.t, states)

    def flag_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for row in self.flags:
            for tok in row.split(";"):
                if tok:
                    counts[tok] = counts.get(tok, 0) + 1
        return counts


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    table: dict
    original_formula: Formula
    desired_formula: Formula
    trace: list
    tree: TimedTree
    cbf: CbfSpec
    log: TrajectoryLog
    wall_time: float


def resolve_node_keys(tree: TimedTree, mapping: dict, what: str) -> dict[int, float]:
    """Resolve config keys (node index or formatted node formula) to node
    indices."""
    by_text: dict[str, list[int]] = {}
    for node in tree.nodes:
        by_text.setdefault(format_formula(node.formula), []).append(node.index)
    out: dict[int, float] = {}
    for key, value in mapping.items():
        if isinstance(key, int) or (isinstance(key, str) and key.lstrip("-").isdigit()):
            idx = int(key)
            if not 0 <= idx < len(tree.nodes):
                raise ScenarioError(f"{what} key {key!r}: no node with that index")
        else:
            hits = by_text.get(key, [])
            if not hits:
                raise ScenarioError(f"{what} key {key!r} matches no tree node")
            if len(hits) > 1:
                raise ScenarioError(
                    f"{what} key {key!r} is ambiguous (nodes {hits}); use the index"
                )
            idx = hits[0]
        if idx in out:
            raise ScenarioError(f"{what} key {key!r}: node {idx} given twice")
        out[idx] = float(value)
    return out


def _expired_row(m: int):
    return np.zeros(m), float("inf"), float("inf"), float("nan")


def run_scenario(cfg: ScenarioConfig) -> ScenarioRun:
    """Full pipeline: parse, rewrite, time the tree, synthesize the
    barrier, then integrate the closed loop over the switching-aligned
    grid with release resets, logging every step."""
    started = _time.perf_counter()
    table = cfg.build_table()
    original = parse_formula(cfg.formula_text, table)
    desired, trace = to_desired_form(original, table, cfg.build_transform_config())
    nodes = build_tree(desired)
    timed_pre = assign_times(nodes)  # index map for key resolution
    t_star = resolve_node_keys(timed_pre, cfg.t_star_overrides, "t_star")
    tree = assign_times(nodes, t_star) if t_star else timed_pre
    margins = resolve_node_keys(tree, cfg.margins, "margin")
    spec = synthesize(tree, table, margins, cfg.build_transform_config().kappa)

    plant = cfg.build_plant()
    params = cfg.build_controller_params(plant.m)
    dist = cfg.build_disturbance(plant)
    horizon = cfg.horizon_override
    if horizon is None:
        horizon = tree.horizon
    if horizon <= 0:
        raise ScenarioError("nothing to simulate: horizon is 0")
    grid = make_time_grid([s.time for s in tree.switching], horizon, cfg.dt)
    releases = {
        round(s.time / TIME_QUANTUM)
        for s in tree.switching
        if s.is_release and 0.0 < s.time < horizon - TIME_QUANTUM
    }

    x = cfg.initial_state(plant)
    state = ControllerState(
        x_hat=x.copy(), z=x.copy(), eta=cfg.eta0, r_hat=cfg.r_hat0, tau=0.0
    )

    n, m = plant.n, plant.m
    rows_t, rows_x, rows_xh, rows_z, rows_u = [], [], [], [], []
    rows_h, rows_hh, rows_e, rows_rho, rows_eta, rows_rh = [], [], [], [], [], []
    rows_flags: list[str] = []

    def log_row(t, u, h, hhat, e, rho, flags):
        rows_t.append(t)
        rows_x.append(x.copy())
        rows_xh.append(state.x_hat.copy())
        rows_z.append(state.z.copy())
        rows_u.append(np.asarray(u, dtype=float).copy())
        rows_h.append(h)
        rows_hh.append(hhat)
        rows_e.append(e)
        rows_rho.append(rho)
        rows_eta.append(state.eta)
        rows_rh.append(state.r_hat)
        rows_flags.append(";".join(flags))

    for i, t in enumerate(grid):
        flags: list[str] = []

        est_val = eval_cbf(spec, plant.cbf_substate(state.x_hat), t)
        true_val = eval_cbf(spec, plant.cbf_substate(x), t)

        if round(t / TIME_QUANTUM) in releases and not est_val.expired:
            hhat_pre = est_val.value - state.eta
            state, fault = release_reset(state, hhat_pre, true_val.value, params, t)
            if fault:
                flags.append(_FLAG_RESET_FAULT)

        rho = funnel(t, state.tau, params)

        if est_val.expired:
            u, h, hhat, e = _expired_row(m)
            flags.append(_FLAG_EXPIRED)
            log_row(t, u, h, hhat, e, rho, flags)
            eta_dot = r_hat_dot = 0.0
        else:
            h = true_val.value
            hhat = est_val.value - state.eta
            e = h - hhat
            z_dot, zbar_dot = differentiator_deriv(x, state.z, plant, params.lam)
            grad_aug = np.append(
                plant.lift_gradient(est_val.grad_x), est_val.grad_t
            )
            eta_dot, r_hat_dot, guard_hit = adaptive_derivs(
                e, rho, grad_aug, zbar_dot, state.r_hat, params, t, state.tau
            )
            if guard_hit:
                flags.append(_FLAG_GUARD)
            qp = qp_solve(
                plant.lift_gradient(est_val.grad_x),
                est_val.grad_t,
                eta_dot,
                x,
                state.x_hat,
                plant,
                params,
                hhat,
            )
            if qp.clamped:
                flags.append(_FLAG_UCLAMP)
            if qp.infeasible:
                flags.append(_FLAG_QP_INFEASIBLE)
            u = qp.u
            log_row(t, u, h, hhat, e, rho, flags)

        if i == len(grid) - 1:
            break

        dt_step = grid[i + 1] - t

        def joint_deriv(ts, y):
            xs = y[:n]
            xh = y[n : 2 * n]
            zs = y[2 * n : 3 * n]
            d = dist.value(ts)
            dx = plant_deriv(plant, xs, u, d, ts)
            dxh = reference_model_deriv(xs, xh, u, plant, params.lam)
            dz = differentiator_deriv(xs, zs, plant, params.lam)[0]
            return np.concatenate([dx, dxh, dz, [eta_dot, r_hat_dot]])

        y = np.concatenate([x, state.x_hat, state.z, [state.eta, state.r_hat]])
        y = rk4_step(joint_deriv, t, y, dt_step)
        if not np.all(np.isfinite(y)):
            raise IntegrationFault(
                f"non-finite state after the step from t={t:.6g} "
                f"(dt={dt_step:.3g}): {y}"
            )
        x = y[:n]
        state.x_hat = y[n : 2 * n]
        state.z = y[2 * n : 3 * n]
        state.eta = float(y[3 * n])
        state.r_hat = float(y[3 * n + 1])

    log = TrajectoryLog(
        t=np.asarray(rows_t),
        x=np.vstack(rows_x),
        x_hat=np.vstack(rows_xh),
        z=np.vstack(rows_z),
        u=np.vstack(rows_u),
        h=np.asarray(rows_h),
        hhat=np.asarray(rows_hh),
        e=np.asarray(rows_e),
        rho=np.asarray(rows_rho),
        eta=np.asarray(rows_eta),
        r_hat=np.asarray(rows_rh),
        flags=rows_flags,
    )
    return ScenarioRun(
        config=cfg,
        table=table,
        original_formula=original,
        desired_formula=desired,
        trace=trace,
        tree=tree,
        cbf=spec,
        log=log,
        wall_time=_time.perf_counter() - started,
    )
