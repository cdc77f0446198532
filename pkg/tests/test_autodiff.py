import math

import numpy as np
import pytest

from wdro.autodiff import (
    ComputationGraph,
    SlotShapeError,
    engine,
    evaluate,
    finite_difference_check,
    finite_difference_check_penalized,
    input_gradient,
    parameter_gradient,
    parameter_gradient_of_penalized_loss,
)
from wdro.autodiff.engine import deep_value, grad, value_and_grad


# ---------------------------------------------------------------------------
# engine primitives
# ---------------------------------------------------------------------------

def test_value_and_grad_polynomial():
    def f(x):
        # x^3 - 2x  via primitives
        return engine.sub(engine.mul(engine.mul(x, x), x),
                          engine.mul(2.0, x))

    v, (g,) = value_and_grad(f)(np.array(2.0))
    assert float(deep_value(v)) == pytest.approx(4.0)
    assert float(deep_value(g)) == pytest.approx(10.0)  # 3x^2 - 2


def test_grad_of_tanh_matches_identity():
    x = np.array(0.7)
    g = grad(lambda t: engine.tanh(t))(x)
    assert float(deep_value(g)) == pytest.approx(1.0 - math.tanh(0.7) ** 2,
                                                 abs=1e-15)


def test_second_derivative_by_taping_the_tape():
    """grad(grad(tanh)) must match -2 tanh (1 - tanh^2) analytically."""
    def d1(x):
        return grad(lambda t: engine.tanh(t))(x)

    for xv in (-1.3, -0.2, 0.0, 0.45, 2.1):
        g2 = grad(d1)(np.array(xv))
        t = math.tanh(xv)
        assert float(deep_value(g2)) == pytest.approx(-2.0 * t * (1 - t * t),
                                                      abs=1e-12)


def test_leaky_relu_kink_takes_right_derivative():
    for slope in (0.01, 0.2):
        g = grad(lambda t: engine.leaky_relu(t, slope))(np.array(0.0))
        assert float(deep_value(g)) == 1.0
        g = grad(lambda t: engine.leaky_relu(t, slope))(np.array(-1.0))
        assert float(deep_value(g)) == slope


def test_logsumexp_is_shift_stable():
    big = np.array([1000.0, 1000.0])
    v = engine.logsumexp(big)
    assert float(deep_value(v)) == pytest.approx(1000.0 + math.log(2.0))


def test_softmax_cross_entropy_value_and_gradient():
    logits = np.array([2.0, -1.0, 0.5])
    target = np.array([0.0, 1.0, 0.0])

    def f(z):
        return engine.softmax_cross_entropy(z, target)

    v, (g,) = value_and_grad(f)(logits)
    shifted = logits - logits.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    expected = -float(np.log(probs[1]))
    assert float(deep_value(v)) == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(np.asarray(deep_value(g)), probs - target,
                               rtol=1e-14)


def test_matvec_vecmat_outer_agree_with_numpy():
    m = np.arange(6.0).reshape(2, 3)
    v3 = np.array([1.0, -1.0, 2.0])
    v2 = np.array([0.5, 2.0])
    assert np.allclose(deep_value(engine.matvec(m, v3)), m @ v3)
    assert np.allclose(deep_value(engine.vecmat(v2, m)), v2 @ m)
    assert np.allclose(deep_value(engine.outer(v2, v3)), np.outer(v2, v3))


def test_unbroadcast_through_add():
    # vector + scalar: the scalar leaf accumulates the summed cotangent
    def f(b):
        return engine.asum(engine.add(np.array([1.0, 2.0, 3.0]), b))

    g = grad(f)(np.array(2.0))
    assert float(deep_value(g)) == 3.0


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def _tiny_graph():
    """h(x; w, b) = sum(tanh(w @ x + b)), 2 -> 3."""
    def builder(x, y, params):
        w, b = params
        return engine.asum(engine.tanh(engine.add(engine.matvec(w, x), b)))

    return ComputationGraph(x_dim=2, y_dim=None,
                            param_shapes=((3, 2), (3,)),
                            builder=builder, name="tiny")


def test_graph_evaluate_matches_numpy():
    g = _tiny_graph()
    rng = np.random.default_rng(0)
    w, b = rng.normal(size=(3, 2)), rng.normal(size=3)
    x = rng.normal(size=2)
    assert evaluate(g, x, None, (w, b)) == pytest.approx(
        float(np.tanh(w @ x + b).sum()), rel=1e-15)


def test_graph_rejects_wrong_shapes():
    g = _tiny_graph()
    with pytest.raises(SlotShapeError):
        evaluate(g, np.zeros(3), None, (np.zeros((3, 2)), np.zeros(3)))
    with pytest.raises(SlotShapeError):
        evaluate(g, np.zeros(2), None, (np.zeros((2, 2)), np.zeros(3)))


def test_input_gradient_matches_analytic():
    g = _tiny_graph()
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=(3, 2)), rng.normal(size=3)
    x = rng.normal(size=2)
    grad_x = input_gradient(g, x, None, (w, b))
    s = np.tanh(w @ x + b)
    np.testing.assert_allclose(grad_x, w.T @ (1 - s * s), rtol=1e-13)


def test_parameter_gradient_shapes():
    g = _tiny_graph()
    rng = np.random.default_rng(2)
    w, b = rng.normal(size=(3, 2)), rng.normal(size=3)
    _, grads = parameter_gradient(g, rng.normal(size=2), None, (w, b))
    assert grads[0].shape == (3, 2)
    assert grads[1].shape == (3,)


# ---------------------------------------------------------------------------
# penalized objective: closed form and finite differences
# ---------------------------------------------------------------------------

def test_penalized_objective_closed_form_linear_model():
    """h(x) = theta * x: objective theta*x + lam*theta^2, gradient in
    theta is x + 2*lam*theta. The second-order path must reproduce this
    to near machine precision."""
    def builder(x, y, params):
        (theta,) = params
        return engine.dot(theta, x)

    g = ComputationGraph(x_dim=1, y_dim=None, param_shapes=((1,),),
                         builder=builder, name="linear")
    theta = np.array([0.8])
    x = np.array([1.7])
    lam = 0.3
    obj, mean_loss, mean_pen, grads = parameter_gradient_of_penalized_loss(
        g, [x], [None], (theta,), lam)
    assert obj == pytest.approx(0.8 * 1.7 + lam * 0.8 ** 2, abs=1e-10)
    assert mean_loss == pytest.approx(0.8 * 1.7, abs=1e-12)
    assert mean_pen == pytest.approx(0.8 ** 2, abs=1e-12)
    assert grads[0][0] == pytest.approx(1.7 + 2 * lam * 0.8, abs=1e-10)


def test_penalized_objective_rejects_empty_batch():
    g = _tiny_graph()
    with pytest.raises(Exception):
        parameter_gradient_of_penalized_loss(g, [], [], (np.zeros((3, 2)),
                                                         np.zeros(3)), 0.1)


def _random_classifier_graph(rng, activation="tanh"):
    from wdro.models import ModelSpec, classifier_graph, init_params

    widths = (int(rng.integers(1, 4)), int(rng.integers(2, 6)),
              int(rng.integers(2, 5)))
    spec = ModelSpec(widths, activation=activation)
    graph = classifier_graph(spec)
    params = init_params(spec, rng)
    x = rng.uniform(-1, 1, size=widths[0])
    y = np.zeros(widths[-1])
    y[int(rng.integers(widths[-1]))] = 1.0
    return graph, x, y, params


def test_first_order_finite_differences_20_models():
    rng = np.random.default_rng(42)
    worst = 0.0
    for k in range(20):
        act = "tanh" if k % 2 == 0 else "leaky_relu"
        graph, x, y, params = _random_classifier_graph(rng, act)
        report = finite_difference_check(graph, x, y, params)
        worst = max(worst, report.max_rel_error)
    assert worst <= 1e-5


def test_penalty_gradient_finite_differences_20_models():
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(20):
        graph, x, y, params = _random_classifier_graph(rng, "tanh")
        report = finite_difference_check_penalized(graph, [x], [y], params,
                                                   lam_grad=0.05)
        worst = max(worst, report.max_rel_error)
    assert worst <= 1e-4
