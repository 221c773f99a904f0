import math

import numpy as np
import pytest

from hamlearn import hl_core as hc
from hamlearn import netspec as ns
from hamlearn.hl_core import ConstantPhi, Costate, HLConfig, LossSpec, hl_step
from hamlearn.oracles import SGDConfig, sgd_momentum_step
from hamlearn.stream import StreamItem
from conftest import rel_err

MSE = LossSpec("mse")


def item(u, y=None, t=0.0):
    return StreamItem(np.atleast_1d(np.asarray(u, dtype=float)), None if y is None else np.atleast_1d(np.asarray(y, dtype=float)), 1, t)


def scalar_ff():
    spec = ns.NetSpec(input_dim=1, output_layers=(ns.Dense(1, 1, bias=False),), output_source="u")
    return spec, ns.make_state(spec)


def u_driven(n=2):
    """Plain state net whose velocity depends on u only, so dH'/dh = 0."""
    spec = ns.NetSpec(input_dim=1, state_dim=n, state_layers=(ns.Dense(1, n, "tanh"),), state_source="u",
                      output_layers=(ns.Dense(n, 1),))
    return spec


# -- Hamiltonian ----------------------------------------------------------------------


def test_hamiltonian_with_zero_costate_is_the_loss(rng):
    spec = ns.rnn_state_net(2, 3, readout=2)
    st = ns.init_state(spec, 0, random_h=True)
    cs = Costate.zeros_like(st)
    u, y = rng.normal(size=2), np.array(1.0)
    H = hc.robust_hamiltonian(st, cs, u, y, 0.0, HLConfig(), LossSpec(), spec)
    loss = float(LossSpec()(ns.eval_output_net(u, st, spec), y))
    assert H == loss


def test_hamiltonian_of_perfect_prediction_is_costate_term():
    # hdot = [2] (bias), output = identity on h = [0] matches target 0
    spec = ns.NetSpec(input_dim=1, state_dim=1, state_layers=(ns.Dense(1, 1),), state_source="u")
    st = ns.make_state(spec, theta_h=[0.0, 2.0])
    cs = Costate(np.array([1.0]), np.zeros(2), np.zeros(0))
    assert hc.robust_hamiltonian(st, cs, np.array([5.0]), np.array([0.0]), 0.0, HLConfig(), MSE, spec) == 2.0


def test_feed_forward_hamiltonian_is_scaled_loss(rng):
    spec = ns.linear_classifier(3, 2)
    st = ns.init_state(spec, 1)
    u = rng.normal(size=3)
    base = hc.robust_hamiltonian(st, Costate.zeros_like(st), u, np.array(0.0), 0.0, HLConfig(), LossSpec(), spec)
    scaled = hc.robust_hamiltonian(st, Costate.zeros_like(st), u, np.array(0.0), 0.0,
                                   HLConfig(phi=ConstantPhi(0.25)), LossSpec(), spec)
    assert scaled == 0.25 * base


def test_missing_target_drops_the_loss_term():
    spec = ns.NetSpec(input_dim=1, state_dim=1, state_layers=(ns.Dense(1, 1),), state_source="u")
    st = ns.make_state(spec, theta_h=[0.0, 3.0])
    cs = Costate(np.array([2.0]), np.zeros(2), np.zeros(0))
    assert hc.robust_hamiltonian(st, cs, np.array([1.0]), None, 0.0, HLConfig(), MSE, spec) == 6.0


# -- right-hand sides -------------------------------------------------------------------


def test_state_rhs_delegates_to_state_net():
    spec = ns.NetSpec(input_dim=1, state_dim=1, state_layers=(ns.Dense(1, 1, bias=False),), state_source="u")
    st = ns.make_state(spec, theta_h=[2.0])
    assert hc.he_state_rhs(np.array([3.0]), st, spec).tolist() == [6.0]


def test_param_rhs_examples():
    st = ns.make_state(scalar_ff()[0])
    assert hc.he_param_rhs(Costate.zeros_like(st), HLConfig(beta=0.1)).tolist() == [0.0]
    cs = Costate(np.zeros(0), np.zeros(0), np.array([-1.0]))
    assert hc.he_param_rhs(cs, HLConfig(beta=0.0)).tolist() == [0.0]
    assert hc.he_param_rhs(cs, HLConfig(beta=np.array([0.1]))).tolist() == [0.1]


def test_costate_rhs_is_zero_at_flat_loss():
    spec, st = scalar_ff()
    # prediction 0 equals target 0: gradient vanishes
    zdot, wdot = hc.he_costate_rhs(st, Costate.zeros_like(st), np.array([1.0]), np.array([0.0]), 0.0,
                                   HLConfig(eta=0.5), MSE, spec)
    assert zdot.size == 0 and wdot.tolist() == [0.0]


def test_costate_rhs_pure_decay():
    spec = u_driven()
    st = ns.init_state(spec, 0)
    cs = Costate(np.array([1.0, -2.0]), np.zeros(spec.n_params_h), np.zeros(spec.n_params_y))
    zdot, _ = hc.he_costate_rhs(st, cs, np.array([0.3]), None, 0.0, HLConfig(eta=0.5), MSE, spec)
    assert zdot.tolist() == [-0.5, 1.0]


def test_costate_rhs_scalar_gradient():
    spec, st = scalar_ff()
    _, wdot = hc.he_costate_rhs(st, Costate.zeros_like(st), np.array([1.0]), np.array([1.0]), 0.0,
                                HLConfig(eta=1.0), MSE, spec)
    assert wdot.tolist() == [-1.0]


def test_euler_step_examples():
    assert hc.euler_step(np.array([1.0]), np.array([0.0]), 0.3).tolist() == [1.0]
    assert hc.euler_step(np.array([1.0]), np.array([2.0]), 0.5).tolist() == [2.0]
    with pytest.raises(ValueError):
        hc.euler_step(np.ones(2), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        hc.euler_step(np.ones(2), np.ones(2), 0.0)


# -- full step ----------------------------------------------------------------------------


def test_scalar_step_matches_sgd():
    spec, st = scalar_ff()
    cfg = HLConfig(tau=1.0, beta=0.1, eta=1.0, ordering="sequential")
    res = hl_step(st, Costate.zeros_like(st), item(1.0, 1.0), cfg, MSE, spec)
    assert res.state.theta.tolist() == [0.1]
    th, _ = sgd_momentum_step(np.zeros(1), np.array([-1.0]), None, SGDConfig(0.1))
    assert res.state.theta.tolist() == th.tolist()
    assert res.loss == 0.5


def test_frozen_weights_still_accumulate_costate(rng):
    spec = ns.rnn_state_net(2, 3, readout=2)
    spec = ns.NetSpec(input_dim=2, state_dim=3, state_layers=spec.state_layers, state_source="uh",
                      output_layers=spec.output_layers)
    st = ns.init_state(spec, 0)
    cs = Costate.zeros_like(st)
    th0 = st.theta.copy()
    cfg = HLConfig(beta=0.0, eta=0.0)
    for k in range(5):
        res = hl_step(st, cs, item(rng.normal(size=2), [0.0, 1.0], k), cfg, MSE, spec)
        st, cs = res.state, res.costate
    assert st.theta.tobytes() == th0.tobytes()
    assert np.any(cs.z != 0) and np.any(cs.omega != 0)


def test_one_step_sgd_parity_gd_a(rng):
    spec = ns.mlp_output(4, 5, 3)
    st = ns.init_state(spec, 2)
    u = rng.normal(size=4)
    res = hl_step(st, Costate.zeros_like(st), item(u, 2.0), HLConfig(tau=1.0, beta=0.01, eta=1.0,
                                                                       ordering="sequential"), LossSpec(), spec)
    from hamlearn.oracles import ff_loss_and_grad

    _, g, _ = ff_loss_and_grad(spec, st, u, np.array(2.0), LossSpec())
    th, _ = sgd_momentum_step(st.theta_y, g, None, SGDConfig(0.01))
    assert np.max(np.abs(res.state.theta_y - th)) <= 1e-15


def test_simultaneous_ordering_uses_previous_costate():
    spec, st = scalar_ff()
    cfg = HLConfig(tau=1.0, beta=0.1, eta=1.0, ordering="simultaneous")
    res = hl_step(st, Costate.zeros_like(st), item(1.0, 1.0), cfg, MSE, spec)
    assert res.state.theta.tolist() == [0.0]  # omega_0 = 0
    res2 = hl_step(res.state, res.costate, item(1.0, 1.0, 1.0), cfg, MSE, spec)
    assert res2.state.theta.tolist() == [0.1]


def test_reset_costate_examples():
    cs = Costate(np.array([1.0]), np.array([2.0, 3.0]), np.array([4.0]))
    both = hc.reset_costate(cs, "both")
    assert both.z.tolist() == [0.0] and both.omega.tolist() == [0.0, 0.0, 0.0]
    zonly = hc.reset_costate(cs, "z")
    assert zonly.omega.tobytes() == cs.omega.tobytes() and zonly.z.tolist() == [0.0]
    with pytest.raises(ValueError):
        hc.reset_costate(cs, "h")


def test_zeroing_omega_each_sample_removes_momentum(rng):
    spec = ns.linear_classifier(3, 2)
    st = ns.init_state(spec, 0)
    cs = Costate.zeros_like(st)
    cfg = HLConfig(tau=1.0, beta=0.01, eta=0.3, ordering="sequential")
    theta, buf = st.theta_y, None
    from hamlearn.oracles import ff_loss_and_grad

    for k in range(30):
        u, y = rng.normal(size=3), np.array(float(k % 2))
        _, g, _ = ff_loss_and_grad(spec, st, u, y, LossSpec())
        theta, buf = sgd_momentum_step(theta, g, buf, SGDConfig(0.01))
        cs = hc.reset_costate(cs, "omega")
        res = hl_step(st, cs, item(u, y, k), cfg, LossSpec(), spec)
        st, cs = res.state, res.costate
        assert np.max(np.abs(st.theta_y - theta)) <= 1e-15


# -- invariants ---------------------------------------------------------------------------


def test_shapes_are_conserved(rng):
    spec = ns.rnn_state_net(2, 4, readout=3)
    st = ns.init_state(spec, 0)
    cs = Costate.zeros_like(st)
    shapes = st.shapes(), cs.shapes()
    for k in range(10):
        res = hl_step(st, cs, item(rng.normal(size=2), float(k % 3), k), HLConfig(tau=0.5, beta=0.1, eta=0.2),
                      LossSpec(), spec)
        st, cs = res.state, res.costate
    assert (st.shapes(), cs.shapes()) == shapes


@pytest.mark.parametrize("tau,eta", [(1.0, 0.0), (0.5, 0.5), (1.0, 0.25), (1.0, 0.5), (0.5, 1.0), (0.5, 2.0)])
def test_dissipation_contracts_costate_exactly(tau, eta, rng):
    spec = u_driven(3)
    st = ns.init_state(spec, 0)
    cs = Costate(rng.normal(size=3), np.zeros(spec.n_params_h), np.zeros(spec.n_params_y))
    factor = 1.0 - tau * eta
    for k in range(8):
        res = hl_step(st, cs, item(rng.normal(), None, k * tau), HLConfig(tau=tau, beta=0.0, eta=eta), MSE, spec)
        assert np.array_equal(res.costate.z, factor * cs.z)  # exact, signed zeros aside
        n0, n1 = np.linalg.norm(cs.z), np.linalg.norm(res.costate.z)
        assert abs(n1 - factor * n0) <= 4 * np.finfo(float).eps * n0
        cs = res.costate


def test_sign_flag_flips_non_dissipative_part(rng):
    spec = ns.rnn_state_net(2, 3, readout=2)
    st = ns.init_state(spec, 5, random_h=True)
    it = item(rng.normal(size=2), 1.0)
    a = hl_step(st, Costate.zeros_like(st), it, HLConfig(s=-1, eta=0.0), LossSpec(), spec).costate
    b = hl_step(st, Costate.zeros_like(st), it, HLConfig(s=1, eta=0.0), LossSpec(), spec).costate
    assert np.array_equal(a.z, -b.z) and np.array_equal(a.omega, -b.omega)
    assert np.any(a.omega != 0)


def test_momentum_recurrence_in_feed_forward_mode(rng):
    spec = ns.mlp_output(3, 4, 2)
    st = ns.init_state(spec, 0)
    cs = Costate.zeros_like(st)
    tau, eta, phi = 0.5, 1.8, 1.0
    cfg = HLConfig(tau=tau, beta=0.02, eta=eta, phi=ConstantPhi(phi), ordering="sequential")
    from hamlearn.oracles import ff_loss_and_grad

    for k in range(25):
        u, y = rng.normal(size=3), np.array(float(k % 2))
        _, g, _ = ff_loss_and_grad(spec, st, u, y, LossSpec())
        expected = (1 - tau * eta) * cs.omega_y + tau * phi * g
        res = hl_step(st, cs, item(u, y, k * tau), cfg, LossSpec(), spec)
        assert rel_err(res.costate.omega_y, expected) <= 1e-13
        st, cs = res.state, res.costate


def test_step_is_a_pure_function_of_its_arguments(rng):
    spec = ns.rnn_state_net(2, 3, readout=2)
    st = ns.init_state(spec, 0, random_h=True)
    cs = Costate(rng.normal(size=3), rng.normal(size=spec.n_params_h), rng.normal(size=spec.n_params_y))
    it = item(rng.normal(size=2), 0.0, 3.0)
    cfg = HLConfig(tau=0.5, beta=0.1, eta=0.1)
    a = hl_step(st, cs, it, cfg, LossSpec(), spec)
    b = hl_step(st, cs, it, cfg, LossSpec(), spec)
    for x, y in zip((a.state.h, a.state.theta, a.costate.z, a.costate.omega),
                    (b.state.h, b.state.theta, b.costate.z, b.costate.omega)):
        assert x.tobytes() == y.tobytes()


# -- configuration / schedules -------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        HLConfig(tau=0.0)
    with pytest.raises(ValueError):
        HLConfig(eta=-1.0)
    with pytest.raises(ValueError):
        HLConfig(s=0)
    with pytest.raises(ValueError):
        HLConfig(ordering="random")
    with pytest.raises(ValueError):
        HLConfig(beta=np.array([0.1, -0.1]))
    with pytest.raises(ValueError):
        HLConfig(phi=ConstantPhi(0.0)).phi_at(0.0)
    with pytest.raises(ValueError):
        HLConfig(beta=np.ones(3)).beta_vector(2)


def test_phi_schedules():
    assert hc.ExponentialPhi(2.0, -0.5)(2.0) == 2.0 * math.exp(-1.0)
    assert hc.ReciprocalPhi(0.5)(123.0) == 2.0
    w = hc.WarmStartPhi(2.0, ConstantPhi(0.8), 0.25)
    assert (w(0.0), w(0.5)) == (2.0, 0.8)


def test_beta_schedule_overrides_constant():
    cfg = HLConfig(beta=0.1, beta_schedule=lambda t: 0.0 if t < 5 else 0.2)
    assert cfg.beta_vector(2, 1.0).tolist() == [0.0, 0.0]
    assert cfg.beta_vector(2, 6.0).tolist() == [0.2, 0.2]


def test_accuracy():
    assert hc.accuracy(np.array([0.1, 0.9]), np.array(1.0)) == 1.0
    assert hc.accuracy(np.array([0.1, 0.9]), np.array([1.0, 0.0])) == 0.0
    assert hc.accuracy(np.array([1.0]), None) is None


def test_unknown_loss_kind():
    with pytest.raises(ValueError):
        LossSpec("hinge")


# -- learner ----------------------------------------------------------------------------------


def test_learner_uses_elapsed_time_for_uneven_streams():
    spec, st = scalar_ff()
    learner = hc.HLLearner(spec, st, HLConfig(tau=None, beta=1.0, eta=0.0, ordering="sequential"), MSE,
                           first_tau=0.5)
    taus = []
    for t in (0.0, 0.25, 1.0, 3.0):
        taus.append(learner.step_size(t))
        learner.observe(item(0.0, None, t))
    assert taus == [0.5, 0.25, 0.75, 2.0]


def test_learner_rejects_non_increasing_time():
    spec, st = scalar_ff()
    learner = hc.HLLearner(spec, st, HLConfig(), MSE)
    learner.observe(item(1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        learner.observe(item(1.0, 1.0, 1.0))


def test_learner_reset_parts(rng):
    spec = ns.rnn_state_net(2, 3, readout=2)
    learner = hc.HLLearner(spec, ns.init_state(spec, 0), HLConfig(), LossSpec())
    learner.observe(item(rng.normal(size=2), 1.0, 0.0))
    learner.reset("h")
    assert learner.state.h.tolist() == [0.0, 0.0, 0.0]
    learner.reset("z")
    assert learner.costate.z.tolist() == [0.0, 0.0, 0.0] and np.any(learner.costate.omega != 0)


# -- mini-batches -------------------------------------------------------------------------------


def test_batch_of_identical_rows_equals_single_sample(rng):
    spec = ns.mlp_output(3, 4, 2)
    st = ns.init_state(spec, 0)
    u, y = rng.normal(size=3), np.array(1.0)
    cfg = HLConfig(tau=1.0, beta=0.05, eta=1.0, ordering="sequential")
    single = hl_step(st, Costate.zeros_like(st), item(u, y), cfg, LossSpec(), spec)
    batch = hl_step(st, Costate.zeros_like(st), StreamItem(np.stack([u, u]), np.array([1.0, 1.0]), 1, 0.0), cfg,
                    LossSpec(), spec)
    assert rel_err(batch.state.theta, single.state.theta) <= 1e-15


def test_batch_costate_is_mean_gradient(rng):
    spec = ns.linear_classifier(3, 2)
    st = ns.init_state(spec, 0)
    us = rng.normal(size=(4, 3))
    ys = np.array([0.0, 1.0, 1.0, 0.0])
    from hamlearn.oracles import ff_loss_and_grad

    g = np.mean([ff_loss_and_grad(spec, st, u, np.array(y), LossSpec())[1] for u, y in zip(us, ys)], axis=0)
    res = hl_step(st, Costate.zeros_like(st), StreamItem(us, ys, 1, 0.0),
                  HLConfig(tau=1.0, beta=0.0, eta=1.0), LossSpec(), spec)
    assert rel_err(res.costate.omega_y, g) <= 1e-14
    assert res.y.shape == (4, 2)
