import numpy as np
import pytest

from clbench.nn import MLP, ParamSet, ConfigurationError
from clbench.losses import masked_nll, masked_nll_grad, softmax
from clbench.regularization import (fisher_diag, ewc_penalty, ewc_penalty_grad,
                                    anchored_quadratic_penalty,
                                    anchored_quadratic_penalty_grad, RegState)
from conftest import finite_diff, assert_grads_close


def tiny_model(sizes=(2, 3, 2), seed=0):
    return MLP.create(list(sizes), np.random.default_rng(seed), dtype=np.float64)


def const_paramset(model, value):
    ps = ParamSet.zeros_like(model.params)
    for a in ps.arrays():
        a[:] = value
    return ps


# --- Fisher diagonal ---------------------------------------------------------

def test_fisher_zero_for_zero_gradient_parameters():
    model = tiny_model((3, 2, 4))
    xs = np.random.default_rng(1).random((8, 3))
    fisher = fisher_diag(model, xs, active_units=np.array([0, 1]))
    # output weights of the inactive units never receive gradient
    assert np.all(fisher.weights[-1][:, 2:] == 0.0)
    assert np.all(fisher.biases[-1][2:] == 0.0)


def test_fisher_matches_per_sample_loop():
    # direct oracle: per-sample squared gradients of log p(yhat), averaged
    model = tiny_model((2, 3, 3), seed=2)
    xs = np.random.default_rng(3).random((4, 2))
    active = np.array([0, 1, 2])
    fisher = fisher_diag(model, xs, active)

    expect = [np.zeros_like(a) for a in model.params.arrays()]
    for x in xs:
        x1 = x[None, :]
        logits, cache = model.forward(x1, active_units=active, return_cache=True)
        p = softmax(logits)
        yhat = int(np.argmax(p[0]))
        d = -p
        d[0, yhat] += 1.0
        g = model.backward(cache, d)
        for e, ga in zip(expect, g.arrays()):
            e += np.square(ga)
    for e, f in zip(expect, fisher.arrays()):
        np.testing.assert_allclose(f, e / len(xs), rtol=1e-10)


def test_fisher_cap_equal_to_size_is_vacuous():
    model = tiny_model((2, 3, 2), seed=4)
    xs = np.random.default_rng(5).random((6, 2))
    full = fisher_diag(model, xs, np.array([0, 1]))
    capped = fisher_diag(model, xs, np.array([0, 1]), n_cap=6,
                         rng=np.random.default_rng(0))
    for a, b in zip(full.arrays(), capped.arrays()):
        np.testing.assert_allclose(a, b)


def test_fisher_empty_dataset_rejected():
    model = tiny_model()
    with pytest.raises(ConfigurationError):
        fisher_diag(model, np.zeros((0, 2)), np.array([0, 1]))


# --- penalties ---------------------------------------------------------------

def test_ewc_penalty_zero_at_anchors_and_arithmetic():
    model = tiny_model()
    anchor = model.params.copy()
    fisher = const_paramset(model, 2.0)
    assert ewc_penalty(model.params, [fisher], [anchor]) == 0.0

    # one parameter displaced by 3 with F=2 -> 0.5 * 2 * 9 = 9
    model.params.weights[0][0, 0] += 3.0
    f_single = ParamSet.zeros_like(model.params)
    f_single.weights[0][0, 0] = 2.0
    assert ewc_penalty(model.params, [f_single], [anchor]) == pytest.approx(9.0)


def test_ewc_penalty_quadratic_scaling():
    model = tiny_model(seed=6)
    anchor = model.params.copy()
    fisher = const_paramset(model, 1.3)
    for a in model.params.arrays():
        a += 0.1
    p1 = ewc_penalty(model.params, [fisher], [anchor])
    for a, b in zip(model.params.arrays(), anchor.arrays()):
        a[:] = b + 2 * (a - b)
    assert ewc_penalty(model.params, [fisher], [anchor]) == pytest.approx(4 * p1)


def test_anchored_penalty_values_and_half_relation():
    model = tiny_model(seed=7)
    anchor = model.params.copy()
    w = const_paramset(model, 1.0)
    assert anchored_quadratic_penalty(model.params, anchor, w) == 0.0
    model.params.weights[0][0, 0] += 1.0
    model.params.weights[0][0, 1] += 2.0
    assert anchored_quadratic_penalty(model.params, anchor, w) == pytest.approx(5.0)
    # same weights as a single-task Fisher: exactly twice the EWC term
    assert anchored_quadratic_penalty(model.params, anchor, w) == pytest.approx(
        2 * ewc_penalty(model.params, [w], [anchor]))


def test_anchored_penalty_rejects_negative_weights():
    model = tiny_model()
    w = const_paramset(model, -1.0)
    model.params.weights[0][0, 0] += 1.0
    with pytest.raises(ConfigurationError):
        anchored_quadratic_penalty(model.params, model.params.copy(), w)


def test_penalty_gradients_match_finite_differences():
    model = tiny_model(seed=8)
    anchor = model.params.copy()
    for a in model.params.arrays():
        a += np.random.default_rng(9).normal(scale=0.2, size=a.shape)
    fisher = const_paramset(model, 0.7)

    g = ewc_penalty_grad(model.params, [fisher], [anchor])
    numeric = finite_diff(lambda: ewc_penalty(model.params, [fisher], [anchor]),
                          list(model.params.arrays()))
    assert_grads_close(list(g.arrays()), numeric)

    g = anchored_quadratic_penalty_grad(model.params, anchor, fisher)
    numeric = finite_diff(
        lambda: anchored_quadratic_penalty(model.params, anchor, fisher),
        list(model.params.arrays()))
    assert_grads_close(list(g.arrays()), numeric)


def test_penalty_gradient_zero_at_anchor():
    model = tiny_model(seed=10)
    anchor = model.params.copy()
    fisher = const_paramset(model, 3.0)
    for g in ewc_penalty_grad(model.params, [fisher], [anchor]).arrays():
        assert np.all(g == 0.0)


# --- consolidation -----------------------------------------------------------

def test_online_consolidation_recursion():
    model = tiny_model(seed=11)
    fisher = const_paramset(model, 1.0)
    for gamma in (1.0, 0.0, 0.8):
        state = RegState("oewc", lam=1.0, gamma=gamma)
        for _ in range(3):
            state.consolidate(model, const_paramset(model, 1.0))
        expected = 1.0 + gamma + gamma ** 2
        for a in state.running_fisher.arrays():
            np.testing.assert_allclose(a, expected)


def test_ewc_state_grows_online_state_constant():
    model = tiny_model(seed=12)
    ewc = RegState("ewc", lam=1.0)
    oewc = RegState("oewc", lam=1.0)
    for k in range(4):
        f = const_paramset(model, 1.0)
        ewc.consolidate(model, f)
        oewc.consolidate(model, const_paramset(model, 1.0))
        assert len(ewc.fishers) == k + 1
        assert sum(1 for _ in oewc.running_fisher.arrays()) == \
            sum(1 for _ in model.params.arrays())


def test_si_step_accumulates_displacement_times_negative_gradient():
    model = tiny_model(seed=13)
    state = RegState("si", lam=1.0)
    state.si_begin_task(model.params)
    before = model.params.copy()
    grads = const_paramset(model, 2.0)
    # plain gradient descent with rate eta: omega gains eta * g^2 per step
    eta = 0.05
    model.params.add_scaled(grads, -eta)
    state.si_step(before, model.params, grads)
    for o in state.omega.arrays():
        np.testing.assert_allclose(o, eta * 4.0)
        assert np.all(o >= 0)


def test_si_zero_displacement_leaves_omega():
    model = tiny_model(seed=14)
    state = RegState("si", lam=1.0)
    state.si_begin_task(model.params)
    state.si_step(model.params.copy(), model.params, const_paramset(model, 5.0))
    for o in state.omega.arrays():
        assert np.all(o == 0.0)


def test_si_consolidation_damping_and_additivity():
    model = tiny_model(seed=15)
    state = RegState("si", lam=1.0, xi=0.1)
    state.si_begin_task(model.params)
    omega_val = 0.3
    for o in state.omega.arrays():
        o[:] = omega_val
    state.consolidate(model)  # zero net displacement -> omega / xi
    for imp in state.importance.arrays():
        np.testing.assert_allclose(imp, omega_val / 0.1)
    # second task adds its (zero) contribution; importance unchanged
    state.si_begin_task(model.params)
    state.consolidate(model)
    for imp in state.importance.arrays():
        np.testing.assert_allclose(imp, omega_val / 0.1)


def test_penalty_zero_before_any_consolidation():
    model = tiny_model(seed=16)
    for method in ("ewc", "oewc", "si"):
        state = RegState(method, lam=1.0)
        if method == "si":
            state.si_begin_task(model.params)
        assert state.penalty(model.params) == 0.0
        assert state.penalty_grad(model.params) is None
