"""Reciprocal-barrier filter and its duality with the direct form."""

import numpy as np
import pytest

from safefilt.comparison import identity_k, power_extended
from safefilt.filters import DssfCbfSpec, qp_filter
from safefilt.reciprocal import (RcbfSpec, RcbfViolation, omega_tilde,
                                 rcbf_condition, rcbf_inverse_optimal,
                                 rcbf_penalty_bound_gap, rcbf_penalty_l,
                                 rcbf_qp_filter, rcbf_weights)
from safefilt.scenarios import neg_state_barrier
from safefilt.systems import lie_data, scalar_system

DUAL_TOL = 1e-12


def recip_spec(u0=0.0, beta=2.0):
    sys = scalar_system(lambda x: 0.0, None, lambda x: 1.0)
    return RcbfSpec(sys, lambda x: -1.0 / x[0], identity_k(),
                    lambda x, t: np.array([u0]),
                    gradB=lambda x: np.array([1.0 / x[0] ** 2]),
                    beta_gain=beta)


def test_omega_tilde_frozen_points():
    assert omega_tilde(recip_spec(0.0), np.array([-1.0]), 0.0) == \
        pytest.approx(-1.0, abs=1e-12)
    assert omega_tilde(recip_spec(1.0), np.array([-1.0]), 0.0) == \
        pytest.approx(0.0, abs=1e-12)
    assert omega_tilde(recip_spec(0.0), np.array([-2.0]), 0.0) == \
        pytest.approx(-2.0, abs=1e-12)


def test_filter_cancels_unsafe_push():
    u = rcbf_qp_filter(recip_spec(2.0), np.array([-1.0]), 0.0)
    assert u[0] == pytest.approx(0.0, abs=1e-12)


def test_filter_passive_when_barrier_decreasing():
    u = rcbf_qp_filter(recip_spec(0.0), np.array([-1.0]), 0.0)
    assert u[0] == 0.0


def test_boundary_contact_raises():
    with pytest.raises(RcbfViolation):
        rcbf_qp_filter(recip_spec(0.0), np.array([0.5]), 0.0)


def test_disturbance_channel_rejected():
    sys = scalar_system(lambda x: 0.0, lambda x: 1.0, lambda x: 1.0)
    with pytest.raises(ValueError):
        RcbfSpec(sys, lambda x: -1.0 / x[0], identity_k(),
                 lambda x, t: np.array([0.0]))


def test_gain_floor():
    with pytest.raises(ValueError):
        recip_spec(0.0, beta=1.5)


def test_duality_with_direct_filter():
    """On h = 1/B the reciprocal update coincides with the direct
    min-norm update run against the commuted gain h^2 * abar(h)."""
    beta = 2.0
    rspec = recip_spec(u0=0.7, beta=beta)
    det = DssfCbfSpec(scalar_system(lambda x: 0.0, None, lambda x: 1.0),
                      neg_state_barrier(), identity_k(),
                      power_extended(3), lambda x, t: np.array([0.7]))
    for x0 in np.linspace(-3.0, -0.2, 57):
        x = np.array([x0])
        u_r = rcbf_qp_filter(rspec, x, 0.0)
        u_d = det.u0(x, 0.0) + beta * qp_filter(det, x, 0.0)
        assert abs(u_r[0] - u_d[0]) <= DUAL_TOL


def test_weights_frozen_and_infinite():
    rbar, _ = rcbf_weights(recip_spec(2.0), np.array([-1.0]), 0.0)
    assert float(rbar) == pytest.approx(1.0, abs=1e-12)
    rbar0, _ = rcbf_weights(recip_spec(0.0), np.array([-1.0]), 0.0)
    assert rbar0.infinite


def test_penalty_floor_and_equality_cases():
    spec3 = recip_spec(u0=0.4, beta=3.0)
    for x0 in np.linspace(-3.0, -0.2, 57):
        gap = rcbf_penalty_bound_gap(spec3, np.array([x0]), 0.0)
        assert gap >= -1e-9
        w = omega_tilde(spec3, np.array([x0]), 0.0)
        if abs(w) > 1e-3:
            assert gap > 0.0
    # equality exactly where the margin vanishes
    spec_eq = recip_spec(u0=1.0, beta=3.0)
    assert rcbf_penalty_bound_gap(spec_eq, np.array([-1.0]), 0.0) == \
        pytest.approx(0.0, abs=1e-12)


def test_running_cost_identity_along_filter():
    # d(-2 beta h)/dt + lbar + R2eff |u - u0|^2 = 0 where the filter acts
    beta = 2.0
    spec = recip_spec(u0=3.0, beta=beta)
    for x0 in (-1.2, -1.0, -0.4):
        x = np.array([x0])
        w = omega_tilde(spec, x, 0.0)
        assert w > 0.0
        u = rcbf_qp_filter(spec, x, 0.0)
        u0v = spec.u0(x, 0.0)
        ld = lie_data(spec.sys, neg_state_barrier(), x)
        hdot = ld.Lfh + float(ld.Lg2h @ u)
        lbar = rcbf_penalty_l(spec, x, 0.0)
        rbar, _ = rcbf_weights(spec, x, 0.0)
        h = -x0
        dev = u - u0v
        total = -2.0 * beta * hdot + lbar \
            + h * h * float(rbar) * float(dev @ dev)
        assert abs(total) <= 1e-10


def test_weighted_form_collapses_to_qp():
    spec = recip_spec(u0=3.0, beta=2.0)
    x = np.array([-1.0])
    # with Rbar set to the pointwise min-norm weight the two agree
    rbar, _ = rcbf_weights(spec, x, 0.0)
    spec_w = RcbfSpec(spec.sys, spec.B, spec.alpha_bar, spec.u0,
                      gradB=spec.gradB,
                      Rbar=lambda xx, uu: np.array([[float(rbar)]]),
                      beta_gain=2.0)
    assert rcbf_inverse_optimal(spec_w, x, 0.0)[0] == pytest.approx(
        rcbf_qp_filter(spec, x, 0.0)[0], abs=1e-12)


def test_condition_sign_tracks_margin():
    spec = recip_spec(u0=1.0)
    # condition = abar(1/B) - L_{f+g u0} B + Sbar; with unit weight it
    # is -omega_tilde + |LgB|^2
    x = np.array([-1.0])
    w = omega_tilde(spec, x, 0.0)
    c = rcbf_condition(spec, x, 0.0)
    assert c == pytest.approx(-w + 1.0, abs=1e-12)
