import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamopt.extremal import (
    AdjointInit,
    adjoint_closed_form,
    hamiltonian,
    lq_controls,
    lq_field,
    lq_q,
    make_lq_field,
    make_reach_field,
    reach_field,
    reach_sigma,
    reach_u1,
    reach_u2,
    sparse_lq_control,
)
from jamopt.model import ControlBox, LqProblem, LtiSystem, ReachProblem, load_problem
from jamopt.numkernel import integrate_with_events, mat_exp


SYM_BOX1 = ControlBox(lower=[-1.0], upper=[1.0])
SYM_BOX2 = ControlBox(lower=[-1.0, -1.0], upper=[1.0, 1.0])
SYS_1D = LtiSystem(A=[[0.0]], B=[[1.0]])


def _sys_with_identity_b(m):
    return LtiSystem(A=np.zeros((m, m)), B=np.eye(m))


class TestReachLaws:
    def test_u1_componentwise(self):
        sys = _sys_with_identity_b(2)
        u1 = reach_u1(np.array([2.0, -3.0]), sys, SYM_BOX2)
        np.testing.assert_array_equal(u1, [1.0, -1.0])

    def test_u1_tie_rule(self):
        sys = _sys_with_identity_b(2)
        np.testing.assert_array_equal(reach_u1(np.zeros(2), sys, SYM_BOX2), [0.0, 0.0])

    def test_u1_single_channel(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        u1 = reach_u1(np.array([5.0, 0.5]), sys, SYM_BOX1)
        np.testing.assert_array_equal(u1, [1.0])

    def test_sigma_is_one_norm_on_unit_cube(self):
        sys = _sys_with_identity_b(2)
        assert reach_sigma(np.array([2.0, -3.0]), sys, SYM_BOX2) == 5.0

    def test_sigma_zero_functional(self):
        sys = _sys_with_identity_b(2)
        assert reach_sigma(np.zeros(2), sys, SYM_BOX2) == 0.0

    def test_sigma_asymmetric_box(self):
        box = ControlBox(lower=[-2.0], upper=[1.0])
        assert reach_sigma(np.array([-3.0]), SYS_1D, box) == 6.0

    def test_u2_threshold(self):
        assert reach_u2(5.0, eta=1) == 1
        assert reach_u2(0.5, eta=1) == 0
        assert reach_u2(1.0, eta=1) == 1  # tie goes to the on branch

    def test_u2_abnormal_always_on(self):
        assert reach_u2(0.5, eta=0) == 1
        assert reach_u2(0.0, eta=0) == 1

    def test_field_at_origin(self):
        out = reach_field(0.0, np.zeros(2), SYS_1D, SYM_BOX1, eta=1)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_field_active(self):
        out = reach_field(0.0, np.array([0.0, 2.0]), SYS_1D, SYM_BOX1, eta=1)
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_field_jammer_off(self):
        out = reach_field(0.0, np.array([0.0, 0.5]), SYS_1D, SYM_BOX1, eta=1)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_closure_matches_plain_field(self):
        rng = np.random.default_rng(8)
        sys = LtiSystem(A=rng.standard_normal((3, 3)), B=rng.standard_normal((3, 2)))
        box = ControlBox(lower=[-1.0, -2.0], upper=[0.5, 1.0])
        field, events = make_reach_field(sys, box, eta=1)
        assert len(events) == 1
        for _ in range(20):
            zp = rng.standard_normal(6)
            np.testing.assert_allclose(
                field(0.0, zp), reach_field(0.0, zp, sys, box, eta=1)
            )


class TestAdjointClosedForm:
    def test_zero_generator(self):
        sys = _sys_with_identity_b(2)
        p0 = np.array([1.0, -2.0])
        np.testing.assert_array_equal(adjoint_closed_form(p0, sys, 3.0, 0.0), p0)

    def test_scalar_decay(self):
        sys = LtiSystem(A=[[1.0]], B=[[1.0]])
        out = adjoint_closed_form(np.array([1.0]), sys, 1.0, 0.0)
        np.testing.assert_allclose(out, [np.exp(-1.0)], rtol=1e-12)

    def test_identity_at_start(self):
        rng = np.random.default_rng(9)
        sys = LtiSystem(A=rng.standard_normal((3, 3)), B=rng.standard_normal((3, 1)))
        p0 = rng.standard_normal(3)
        np.testing.assert_array_equal(adjoint_closed_form(p0, sys, 0.5, 0.5), p0)

    def test_matches_integrated_adjoint(self):
        rng = np.random.default_rng(10)
        sys = LtiSystem(A=rng.standard_normal((2, 2)), B=[[0.0], [1.0]])
        p0 = rng.standard_normal(2)
        traj = integrate_with_events(
            lambda t, p: -(sys.A.T @ p), 0.0, 1.0, p0, step=1e-3
        )
        expected = adjoint_closed_form(p0, sys, 1.0, 0.0)
        assert np.linalg.norm(traj.states[-1] - expected) <= 1e-8


class TestLqLaws:
    def test_q_at_zero(self):
        assert lq_q(np.zeros(2), LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]]), [[3.0]]) == 0.0

    def test_q_scalar_form(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        assert lq_q(np.array([7.0, 3.0]), sys, [[3.0]]) == pytest.approx(3.0)

    def test_q_identity_weights(self):
        sys = _sys_with_identity_b(2)
        assert lq_q(np.array([3.0, 4.0]), sys, np.eye(2)) == pytest.approx(25.0)

    def test_controls_zero_gamma_is_classical(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = rng.standard_normal(2)
            u1, on = lq_controls(p, sys, [[3.0]], gamma=0.0)
            assert on == 1
            np.testing.assert_allclose(u1, [p[1] / 3.0])

    def test_controls_above_threshold(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        u1, on = lq_controls(np.array([0.0, 0.3]), sys, [[3.0]], gamma=0.01)
        assert on == 1
        np.testing.assert_allclose(u1, [0.1])

    def test_controls_below_threshold(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        u1, on = lq_controls(np.array([0.0, 0.3]), sys, [[3.0]], gamma=1.0)
        assert on == 0
        np.testing.assert_array_equal(u1, [0.0])

    def test_threshold_factor_moves_switch(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        p = np.array([0.0, 0.3])  # q = 0.03
        _, on_paper = lq_controls(p, sys, [[3.0]], gamma=0.02, threshold_factor=1.0)
        _, on_joint = lq_controls(p, sys, [[3.0]], gamma=0.02, threshold_factor=2.0)
        assert on_paper == 1 and on_joint == 0

    def test_field_at_origin(self):
        sys = LtiSystem(A=np.zeros((1, 1)), B=[[1.0]])
        out = lq_field(0.0, np.zeros(2), sys, np.zeros((1, 1)), [[1.0]], gamma=4.0)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_field_jammer_off_zero_drift(self):
        sys = LtiSystem(A=np.zeros((1, 1)), B=[[1.0]])
        out = lq_field(0.0, np.array([1.0, 1.0]), sys, np.zeros((1, 1)), [[1.0]], gamma=4.0)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_zero_gamma_field_is_linear_block_flow(self):
        rng = np.random.default_rng(12)
        sys = LtiSystem(A=rng.standard_normal((2, 2)), B=rng.standard_normal((2, 1)))
        Q = np.eye(2)
        R = np.array([[2.0]])
        BRB = sys.B @ np.linalg.solve(R, sys.B.T)
        block = np.block([[sys.A, BRB], [Q, -sys.A.T]])
        for _ in range(20):
            zp = rng.standard_normal(4)
            np.testing.assert_allclose(
                lq_field(0.0, zp, sys, Q, R, gamma=0.0), block @ zp, rtol=1e-12
            )

    def test_closure_matches_plain_field(self):
        prob = load_problem(
            json.dumps(
                {
                    "kind": "lq",
                    "A": [[0.0, 1.0], [29.43, -0.03]],
                    "B": [[0.0], [1.0]],
                    "t0": 0.0,
                    "tf": 2.0,
                    "z0": [0.0, 0.3],
                    "Q": 3.0,
                    "R": 3.0,
                    "Qf": 10.0,
                    "gamma": 0.01,
                }
            )
        )
        field, events = make_lq_field(prob)
        assert len(events) == 1
        rng = np.random.default_rng(13)
        for _ in range(20):
            zp = rng.standard_normal(4)
            np.testing.assert_allclose(
                field(0.0, zp),
                lq_field(0.0, zp, prob.system, prob.Q, prob.R, prob.gamma),
            )


class TestHamiltonian:
    def _reach_problem(self):
        return ReachProblem(
            system=SYS_1D, box=SYM_BOX1, t_start=0.0, t_end=2.0,
            z_start=[0.0], z_end=[1.0],
        )

    def _lq_problem(self, gamma=0.01):
        return LqProblem(
            system=LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]]),
            Q=np.zeros((2, 2)), R=[[1.0]], Qf=np.zeros((2, 2)), gamma=gamma,
            t_start=0.0, t_end=1.0, z_start=[0.0, 0.0],
        )

    def test_reach_indicator_only(self):
        h = hamiltonian("reach", [0.0], [0.0], [0.0], 0, self._reach_problem(), eta=1)
        assert h == 1.0

    def test_lq_all_zero_on(self):
        h = hamiltonian("lq", [0.0, 0.0], [0.0, 0.0], [0.0], 1, self._lq_problem(), eta=1)
        assert h == 0.0

    def test_reach_drive_term(self):
        sys2 = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        prob = ReachProblem(
            system=sys2, box=SYM_BOX1, t_start=0.0, t_end=1.0,
            z_start=[0.0, 0.0], z_end=[1.0, 0.0],
        )
        h = hamiltonian("reach", [0.0, 0.0], [0.0, 2.0], [1.0], 1, prob, eta=1)
        assert h == 2.0

    def test_sparse_matches_lq_on_valid_controls(self):
        prob = self._lq_problem()
        rng = np.random.default_rng(14)
        for _ in range(20):
            z = rng.standard_normal(2)
            p = rng.standard_normal(2)
            on = int(rng.integers(0, 2))
            u1 = rng.standard_normal(1) * on  # lq law zeroes u1 when off
            np.testing.assert_allclose(
                hamiltonian("lq", z, p, u1, on, prob),
                hamiltonian("sparse_lq", z, p, u1, on, prob),
            )


class TestSparseLqControl:
    def test_zero_gamma_matches_classical(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        rng = np.random.default_rng(15)
        for _ in range(30):
            p = rng.standard_normal(2)
            np.testing.assert_allclose(
                sparse_lq_control(p, sys, [[3.0]], gamma=0.0), [p[1] / 3.0]
            )

    def test_zero_adjoint(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        np.testing.assert_array_equal(
            sparse_lq_control(np.zeros(2), sys, [[1.0]], gamma=0.5), [0.0]
        )

    def test_below_threshold(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        out = sparse_lq_control(np.array([9.0, 0.4]), sys, [[1.0]], gamma=0.25)
        np.testing.assert_array_equal(out, [0.0])

    def test_is_gated_lq_product(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=[[0.0], [1.0]])
        rng = np.random.default_rng(16)
        for _ in range(30):
            p = rng.standard_normal(2)
            gamma = float(rng.uniform(0.0, 2.0))
            u1, on = lq_controls(p, sys, [[1.0]], gamma)
            np.testing.assert_allclose(
                sparse_lq_control(p, sys, [[1.0]], gamma), u1 * on
            )


class TestAdjointInit:
    def test_nontriviality_enforced(self):
        with pytest.raises(ValueError, match="nontriviality"):
            AdjointInit(p0=np.zeros(2), eta=0)

    def test_normal_zero_adjoint_allowed(self):
        init = AdjointInit(p0=np.zeros(2), eta=1)
        assert init.eta == 1


# ---------------------------------------------------------------------------
# Randomized and property-based checks of the argmax structure
# ---------------------------------------------------------------------------


def test_componentwise_argmax_dominates_random_candidates():
    # exact maximizer property over 1000 random (p, box) draws
    rng = np.random.default_rng(17)
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        sys = LtiSystem(A=np.zeros((d, d)), B=rng.standard_normal((d, m)))
        box = ControlBox(lower=-rng.uniform(0.1, 3.0, m), upper=rng.uniform(0.1, 3.0, m))
        p = rng.standard_normal(d)
        s = sys.B.T @ p
        best = float(s @ reach_u1(p, sys, box))
        candidates = rng.uniform(box.lower, box.upper, size=(100, m))
        assert np.all(best >= candidates @ s - 1e-12)


def test_sigma_equals_value_at_maximizer():
    rng = np.random.default_rng(18)
    for _ in range(200):
        m = int(rng.integers(1, 5))
        sys = LtiSystem(A=np.zeros((m, m)), B=rng.standard_normal((m, m)))
        box = ControlBox(lower=-rng.uniform(0.1, 2.0, m), upper=rng.uniform(0.1, 2.0, m))
        p = rng.standard_normal(m)
        s = sys.B.T @ p
        assert reach_sigma(p, sys, box) == float(s @ reach_u1(p, sys, box))


@settings(max_examples=200, deadline=None)
@given(
    p=st.lists(st.floats(-50, 50), min_size=1, max_size=4),
    c=st.floats(1e-3, 1e3),
)
def test_reach_u1_positive_scale_invariant(p, c):
    p = np.asarray(p)
    m = p.size
    sys = _sys_with_identity_b(m)
    box = ControlBox(lower=-np.ones(m), upper=np.ones(m))
    np.testing.assert_array_equal(
        reach_u1(c * p, sys, box), reach_u1(p, sys, box)
    )
    assert reach_sigma(c * p, sys, box) == pytest.approx(
        c * reach_sigma(p, sys, box), rel=1e-9
    )


@settings(max_examples=100, deadline=None)
@given(sigma=st.floats(0, 100))
def test_reach_u2_threshold_property(sigma):
    assert reach_u2(sigma, eta=0) == 1
    assert reach_u2(sigma, eta=1) == (1 if sigma >= 1.0 else 0)


# ---------------------------------------------------------------------------
# In-interval Hamiltonian conservation along raw extremal flows
# ---------------------------------------------------------------------------


def _interval_drift(times, H, switch_times):
    cuts = [int(np.searchsorted(times, s)) for s in switch_times]
    bounds = [0] + cuts + [len(times)]
    worst = 0.0
    for i0, i1 in zip(bounds[:-1], bounds[1:]):
        if i1 > i0:
            worst = max(worst, float(H[i0:i1].max() - H[i0:i1].min()))
    return worst


def test_reach_flow_piecewise_hamiltonian_constant():
    # double integrator with an adjoint that forces two switches
    sys = LtiSystem(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]])
    box = SYM_BOX1
    prob = ReachProblem(
        system=sys, box=box, t_start=0.0, t_end=3.0, z_start=[0.0, 0.0],
        z_end=[1.0, 0.0],
    )
    field, events = make_reach_field(sys, box, eta=1)
    zp0 = np.array([0.0, 0.0, 2.0, 3.0])
    traj = integrate_with_events(field, 0.0, 3.0, zp0, events=events, step=3.0 / 2000)
    assert traj.switch_times.size == 2
    H = np.array(
        [
            hamiltonian(
                "reach", traj.states[i, :2], traj.states[i, 2:],
                reach_u1(traj.states[i, 2:], sys, box),
                reach_u2(reach_sigma(traj.states[i, 2:], sys, box), 1),
                prob, eta=1,
            )
            for i in range(traj.times.shape[0])
        ]
    )
    assert _interval_drift(traj.times, H, traj.switch_times) <= 10 * 1e-4


def test_lq_flow_piecewise_hamiltonian_constant():
    prob = load_problem(
        json.dumps(
            {
                "kind": "lq",
                "A": [[0.0, 1.0], [29.43, -0.03]],
                "B": [[0.0], [1.0]],
                "t0": 0.0,
                "tf": 0.6,
                "z0": [0.0, 0.3],
                "Q": 3.0,
                "R": 3.0,
                "Qf": 10.0,
                "gamma": 1.0,
            }
        )
    )
    field, events = make_lq_field(prob)
    zp0 = np.concatenate([prob.z_start, [-5.0, -1.0]])
    traj = integrate_with_events(
        field, prob.t_start, prob.t_end, zp0, events=events, step=prob.horizon / 2000
    )
    assert traj.switch_times.size >= 1
    H = []
    for i in range(traj.times.shape[0]):
        p = traj.states[i, 2:]
        u1, on = lq_controls(p, prob.system, prob.R, prob.gamma)
        H.append(
            hamiltonian("lq", traj.states[i, :2], p, u1, on, prob, eta=1)
        )
    H = np.array(H)
    scale = 1.0 + float(np.max(np.abs(H)))
    assert _interval_drift(traj.times, H, traj.switch_times) <= 1e-3 * scale
