import math

import numpy as np
import pytest

from stlcbf.controller import (
    ControllerParams,
    ControllerState,
    adaptive_derivs,
    differentiator_deriv,
    funnel,
    qp_solve,
    reference_model_deriv,
    release_reset,
)
from stlcbf.plant import Unicycle

PARAMS = ControllerParams()  # defaults mirror the worked scenario


class TestReferenceModel:
    def test_fixed_point(self):
        plant = Unicycle()
        x = np.array([1.0, 2.0, 0.3])
        assert np.allclose(
            reference_model_deriv(x, x, np.zeros(2), plant, 10.0), np.zeros(3)
        )

    def test_robot_heading_zero(self):
        plant = Unicycle(l=0.036)
        x = np.array([0.0, 0.0, 0.0])
        dxh = reference_model_deriv(x, x, np.array([1.0, 0.0]), plant, 10.0)
        assert np.allclose(dxh, [1.0, 0.0, 0.0])

    def test_correction_term(self):
        plant = Unicycle()
        x = np.array([0.1, 0.0, 0.0])
        x_hat = np.zeros(3)
        dxh = reference_model_deriv(x, x_hat, np.zeros(2), plant, 10.0)
        assert np.allclose(dxh, [1.0, 0.0, 0.0])

    def test_shape_mismatch(self):
        plant = Unicycle()
        with pytest.raises(ValueError):
            reference_model_deriv(np.zeros(3), np.zeros(2), np.zeros(2), plant, 10.0)


class TestDifferentiator:
    def test_fixed_point(self):
        plant = Unicycle()
        z_dot, zbar = differentiator_deriv(np.zeros(3), np.zeros(3), plant, 10.0)
        assert np.allclose(z_dot, 0.0)
        assert np.allclose(zbar, [0, 0, 0, 1])

    def test_correction_gain(self):
        plant = Unicycle()
        x = np.array([0.0, 0.2, 0.0])
        z_dot, _ = differentiator_deriv(x, np.zeros(3), plant, 10.0)
        assert np.allclose(z_dot, [0.0, 2.0, 0.0])


class TestFunnel:
    def test_restart_value(self):
        assert funnel(3.0, 3.0, PARAMS) == pytest.approx(1.0)

    def test_asymptote(self):
        assert funnel(100.0, 0.0, PARAMS) == pytest.approx(0.2, abs=1e-9)

    def test_halfway(self):
        assert funnel(math.log(2.0), 0.0, PARAMS) == pytest.approx(0.6)

    def test_before_release_rejected(self):
        with pytest.raises(ValueError):
            funnel(1.0, 2.0, PARAMS)


class TestAdaptiveLaws:
    def test_centered_gap(self):
        # e = rho/2 zeroes the transformed error, leaving only the funnel
        # tracking term; the leakage drives r_hat down
        rho = funnel(0.5, 0.0, PARAMS)
        e = rho / 2.0
        eta_dot, r_dot, clamped = adaptive_derivs(
            e, rho, np.zeros(4), np.array([0, 0, 0, 1.0]), 0.4, PARAMS, 0.5, 0.0
        )
        want = -(PARAMS.varrho * e / rho) * (PARAMS.rho0 - PARAMS.rho_inf) * math.exp(-0.5)
        assert eta_dot == pytest.approx(want)
        assert r_dot == pytest.approx(-PARAMS.varsigma * 0.4)
        assert not clamped

    def test_zero_gain_estimate(self):
        eta_dot, r_dot, _ = adaptive_derivs(
            0.3, 1.0, np.array([0.6, -0.8, 0.0, 0.5]),
            np.array([0.1, -0.2, 0.0, 1.0]), 0.0, PARAMS, 0.5, 0.0
        )
        assert r_dot >= 0.0
        # fourth term vanishes with r_hat = 0
        e, rho = 0.3, 1.0
        eps = 0.5 * math.log(e / (rho - e))
        norms = math.sqrt(1.25) + math.sqrt(1.05)
        manual = (
            -PARAMS.c * e * (rho - e) / rho * eps
            - (PARAMS.varrho * e / rho) * 0.8 * math.exp(-0.5)
            - rho * eps / (4 * e * (rho - e))
        )
        assert eta_dot == pytest.approx(manual)

    def test_full_terms_frozen_oracle(self):
        # inputs: e=0.3, rho=1, t-tau=0.5, r_hat=0.7, gradient [.6,-.8,0,.5],
        # zbar [.1,-.2,0,1]; expected values from a 40-digit independent
        # transcription of the update laws
        eta_dot, r_dot, clamped = adaptive_derivs(
            0.3,
            1.0,
            np.array([0.6, -0.8, 0.0, 0.5]),
            np.array([0.1, -0.2, 0.0, 1.0]),
            0.7,
            PARAMS,
            0.5,
            0.0,
        )
        assert not clamped
        assert eta_dot == pytest.approx(1.8595438521962997, rel=1e-12)
        assert r_dot == pytest.approx(-0.678386550565988, rel=1e-12)

    def test_guard_clamps_and_flags(self):
        eta_dot, _, clamped = adaptive_derivs(
            -0.05, 1.0, np.zeros(4), np.array([0, 0, 0, 1.0]), 0.0, PARAMS, 0.0, 0.0
        )
        assert clamped
        assert math.isfinite(eta_dot)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            adaptive_derivs(
                math.nan, 1.0, np.zeros(4), np.zeros(4), 0.0, PARAMS, 0.0, 0.0
            )


class _LinearPlant:
    n = 2
    m = 2
    cbf_state = (0, 1)
    disturbed = (0, 1)

    def f(self, x):
        return np.zeros(2)

    def g(self, x):
        return np.eye(2)


def _square_plant(m):
    plant = _LinearPlant()
    plant.n = plant.m = m
    plant.f = lambda x: np.zeros(m)
    plant.g = lambda x: np.eye(m)
    return plant


class TestQp:
    def test_slack_constraint_gives_zero(self):
        params = ControllerParams(W=np.eye(2))
        qp = qp_solve(
            np.array([0.0, 1.0]), 0.0, 0.0, np.zeros(2), np.zeros(2),
            _LinearPlant(), params, hhat_value=5.0,
        )
        assert np.allclose(qp.u, 0.0)
        assert qp.slack >= 0.0

    def test_identity_weight_closed_form(self):
        # c = (1, 0), rhs = 2 -> u = (2, 0)
        params = ControllerParams(W=np.eye(2), alpha_gain=0.5)
        gx = np.array([1.0, 0.0])
        # choose hhat so rhs = -alpha*hhat = 2
        qp = qp_solve(
            gx, 0.0, 0.0, np.zeros(2), np.zeros(2), _LinearPlant(), params,
            hhat_value=-4.0,
        )
        assert np.allclose(qp.u, [2.0, 0.0], atol=1e-12)
        assert qp.slack == pytest.approx(0.0, abs=1e-12)

    def test_channel_weighting(self):
        l = 0.036
        params = ControllerParams(W=np.diag([1.0, l**2]))
        gx = np.array([1.0, 1.0])
        qp = qp_solve(
            gx, 0.0, 0.0, np.zeros(2), np.zeros(2), _LinearPlant(), params,
            hhat_value=-2.0,
        )
        # cheap channel takes (1/l^2) times more of the effort
        assert qp.u[1] / qp.u[0] == pytest.approx(1.0 / l**2)

    def test_degenerate_gradient(self):
        params = ControllerParams(W=np.eye(2))
        qp = qp_solve(
            np.zeros(2), 0.0, 0.0, np.zeros(2), np.zeros(2), _LinearPlant(),
            params, hhat_value=-2.0,
        )
        assert qp.infeasible and "unenforceable" in qp.reason

    def test_bounds_clamp_and_report(self):
        params = ControllerParams(W=np.eye(2), input_bounds=np.array([1.0, 1.0]))
        qp = qp_solve(
            np.array([1.0, 0.0]), 0.0, 0.0, np.zeros(2), np.zeros(2),
            _LinearPlant(), params, hhat_value=-4.0,
        )
        assert qp.clamped and qp.infeasible
        assert np.allclose(qp.u, [1.0, 0.0])
        assert qp.slack == pytest.approx(-1.0)

    def test_kkt_conditions_random(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            m = int(rng.integers(1, 5))
            A = rng.normal(size=(m, m))
            W = A @ A.T + 0.2 * np.eye(m)
            params = ControllerParams(W=W)
            plant = _square_plant(m)
            gx = rng.normal(size=m)
            hhat = float(rng.normal())
            qp = qp_solve(gx, 0.0, 0.0, np.zeros(m), np.zeros(m), plant, params, hhat)
            rhs = -params.alpha(hhat)
            if rhs <= 0:
                assert np.allclose(qp.u, 0.0)
            else:
                # stationarity W u = mu c with mu >= 0, and the constraint active
                c = gx
                resid = W @ qp.u
                mu = (c @ resid) / (c @ c)
                assert mu >= -1e-12
                assert np.linalg.norm(resid - mu * c) <= 1e-9
                assert abs(c @ qp.u - rhs) <= 1e-9


class TestReleaseReset:
    def make_state(self, eta=0.3):
        return ControllerState(
            x_hat=np.zeros(3), z=np.zeros(3), eta=eta, r_hat=0.0, tau=0.0
        )

    def test_configured_reset_value(self):
        # estimate matches truth: gap after reset equals the new eta
        state = self.make_state(eta=0.25)
        h = 2.0
        new, fault = release_reset(state, h - state.eta, h, PARAMS, 5.0)
        assert not fault
        assert new.eta == pytest.approx(PARAMS.eta_reset)
        assert new.tau == 5.0

    def test_initialization_construction(self):
        # halved-gap choice: hhat = h/2 and e = h/2 for matching estimate
        state = self.make_state(eta=0.0)
        h = 0.3  # small enough that e = h/2 < rho_inf
        new, fault = release_reset(state, h, h, PARAMS, 0.0)
        assert not fault
        e = h - (h - new.eta)
        assert 0 < e < PARAMS.rho_inf

    def test_matching_estimate_gap_is_eta(self):
        state = self.make_state(eta=0.4)
        h = 1.5
        new, _ = release_reset(state, h - 0.4, h, PARAMS, 8.0)
        e = h - ((h - new.eta))
        assert e == pytest.approx(new.eta)

    def test_fault_when_barrier_negative(self):
        state = self.make_state(eta=0.1)
        new, fault = release_reset(state, -0.6, -0.5, PARAMS, 5.0)
        assert fault
        # the pinned fallback keeps the gap centered in the floor window
        e = -0.5 - (-0.6 + 0.1 - new.eta)
        assert e == pytest.approx(PARAMS.rho_inf / 2.0)
