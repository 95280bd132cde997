import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsysid import dual
from diffsysid.dual import Dual, lift_params, lift_vector
from diffsysid.model import ModelParams, ParamLayout

finite = st.floats(-3, 3, allow_nan=False)


def test_seeding():
    x = lift_vector([4.0, 5.0, 6.0])
    assert x[1].value == 5.0
    assert np.array_equal(x[1].partials, [0.0, 1.0, 0.0])
    assert np.array_equal(x.sum().partials, np.ones(3))


def test_product_rule():
    x = lift_vector([2.0, 3.0, 7.0])
    p = x[0] * x[1]
    assert p.value == 6.0
    assert np.array_equal(p.partials, [3.0, 2.0, 0.0])


def test_constant_has_zero_partials():
    c = Dual.constant(np.array([1.0, 2.0]), 4)
    assert not c.partials.any()
    assert c.partials.shape == (2, 4)


def test_masked_seed_rows_are_zero():
    x = lift_vector([1.0, 2.0, 3.0], active=np.array([True, False, True]))
    assert np.array_equal(x.partials, np.diag([1.0, 0.0, 1.0]))


def test_lift_params_covers_every_entry(model):
    layout = ParamLayout.default(model)
    lifted = lift_params(ModelParams.nominal(layout))
    assert np.array_equal(lifted.damping_scale.value, np.ones(layout.n_joints))
    assert np.array_equal(lifted.mass_delta.partials, np.eye(layout.dim)[: layout.n_links])


def _fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@settings(max_examples=100, deadline=None)
@given(finite, st.floats(0.1, 3))
def test_unary_chain_rules(a, b):
    x = lift_vector([a, b])
    for fd, fn in ((dual.sin, np.sin), (dual.cos, np.cos), (dual.tanh, np.tanh), (dual.exp, np.exp)):
        y = fd(x[0] * x[1])
        assert y.value == pytest.approx(fn(a * b))
        assert y.partials[0] == pytest.approx(_fd(lambda t: fn(t * b), a), rel=1e-6, abs=1e-8)
        assert y.partials[1] == pytest.approx(_fd(lambda t: fn(a * t), b), rel=1e-6, abs=1e-8)
    for fd, fn in ((dual.log, np.log), (dual.sqrt, np.sqrt)):
        y = fd(x[1])
        assert y.partials[1] == pytest.approx(_fd(fn, b), rel=1e-6)
    q = x[0] / x[1]
    assert q.partials == pytest.approx([1 / b, -a / b**2])


def test_power_and_reverse_ops():
    x = lift_vector([3.0])
    assert (x**2).partials[0, 0] == pytest.approx(6.0)
    assert (1.0 - x).partials[0, 0] == -1.0
    assert (2.0 / x).partials[0, 0] == pytest.approx(-2.0 / 9.0)


def test_matmul_both_sides(rng):
    A = rng.normal(size=(3, 3))
    x = lift_vector(rng.normal(size=3))
    assert np.allclose((A @ x).partials, A)
    assert np.allclose((x @ A).partials, A.T)


def test_solve_implicit_function_identity(rng):
    n, d = 4, 3
    A0 = rng.normal(size=(n, n)) + 4 * np.eye(n)
    b0 = rng.normal(size=n)
    dA = rng.normal(size=(n, n, d))
    db = rng.normal(size=(n, d))
    x = dual.solve(Dual(A0, dA), Dual(b0, db))
    expected = np.linalg.solve(A0, db - np.einsum("ijd,j->id", dA, x.value))
    assert np.allclose(x.value, np.linalg.solve(A0, b0), atol=1e-14)
    assert np.max(np.abs(x.partials - expected)) < 1e-12


def test_jets_packing():
    x = lift_vector([1.5, -2.0])
    j = dual.jets(x)
    assert j.shape == (2, 3)
    assert np.array_equal(j[:, 0], [1.5, -2.0])
    assert np.array_equal(dual.jets(x, [1]), [[1.5, 0.0], [-2.0, 1.0]])
