import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsysid.dual import lift_vector
from diffsysid.errors import ShapeError
from diffsysid.model import ModelParams, ParamLayout
from diffsysid.objective import LossSpec, box_penalty, regularization, total_loss, tracking_loss


def test_perfect_tracking():
    x = np.random.default_rng(0).normal(size=(2, 5, 4, 2))
    assert tracking_loss(x, x.copy(), [3]) == (0.0, 0.0)


def test_single_offset_outside_upper_set():
    ref = np.zeros((1, 1, 2, 2))
    sim = ref.copy()
    sim[0, 0, 0] = (0.3, 0.4)
    assert tracking_loss(sim, ref, [1], batch_size=1, horizon=1) == (pytest.approx(0.25, abs=0), 0.0)


def test_tracking_matches_loop_oracle(rng):
    B, N, J = 3, 7, 5
    sim, ref = rng.normal(size=(2, B, N, J, 2))
    upper = [1, 4]
    all_, up = 0.0, 0.0
    for b in range(B):
        for t in range(N):
            for j in range(J):
                e = (sim[b, t, j, 0] - ref[b, t, j, 0]) ** 2 + (sim[b, t, j, 1] - ref[b, t, j, 1]) ** 2
                all_ += e
                up += e if j in upper else 0.0
    got = tracking_loss(sim, ref, upper)
    assert got[0] == pytest.approx(all_ / B, rel=1e-12)
    assert got[1] == pytest.approx(up / B, rel=1e-12)


def test_tracking_batch_permutation_invariant(rng):
    sim, ref = rng.normal(size=(2, 6, 4, 3, 2))
    perm = rng.permutation(6)
    a = tracking_loss(sim, ref, [0])
    b = tracking_loss(sim[perm], ref[perm], [0])
    assert a[0] == pytest.approx(b[0], rel=1e-14) and a[1] == pytest.approx(b[1], rel=1e-14)


def test_tracking_shape_errors():
    with pytest.raises(ShapeError):
        tracking_loss(np.zeros((1, 2, 3, 2)), np.zeros((1, 2, 4, 2)), [0])
    with pytest.raises(ShapeError):
        tracking_loss(np.zeros((1, 2, 3, 2)), np.zeros((1, 2, 3, 2)), [0], batch_size=2)


@pytest.mark.parametrize("alpha,expected", [(1.0, 0.0), (0.8, 0.0), (1.2, 0.0), (0.7, 0.01), (1.5, 0.09)])
def test_box_penalty_values(alpha, expected):
    assert box_penalty(alpha, 0.8, 1.2) == pytest.approx(expected, abs=1e-15)


def test_box_penalty_rejects_empty_interval():
    with pytest.raises(ValueError):
        box_penalty(1.0, 1.2, 0.8)


@pytest.mark.parametrize("edge", [0.8, 1.2])
def test_box_penalty_smooth_at_edges(edge):
    h = 1e-6
    fd = (box_penalty(edge + h) - box_penalty(edge - h)) / (2 * h)
    assert abs(fd) < 1e-5
    dual = box_penalty(lift_vector([edge]))
    assert dual.partials[0, 0] == 0.0
    # derivative is continuous: one-sided slopes just outside the edge tend to zero
    for side in (-1, 1):
        x = edge + side * 1e-4
        slope = (box_penalty(x + 1e-8) - box_penalty(x - 1e-8)) / 2e-8
        assert abs(slope) <= 2e-4 + 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5, allow_nan=False))
def test_box_penalty_dual_matches_values(a):
    d = box_penalty(lift_vector([a]))
    assert d.value[0] == pytest.approx(box_penalty(a), abs=1e-15)
    assert d.partials[0, 0] == pytest.approx(2 * min(0, a - 0.8) + 2 * max(0, a - 1.2), abs=1e-12)


@pytest.fixture
def layout(model):
    return ParamLayout.default(model)


def test_regularization_at_nominal(layout):
    assert regularization(ModelParams.nominal(layout)) == (0.0, 0.0, 0.0, 0.0)


def test_regularization_direct_squares(layout):
    p = ModelParams.from_dict(layout, {"mass[torso]": 2.0, "com_x[torso]": 0.01, "com_z[torso]": 0.02})
    reg_com, reg_mass, reg_damp, reg_fric = regularization(p)
    assert reg_mass == pytest.approx(4.0)
    assert reg_com == pytest.approx(0.0005, abs=1e-15)
    assert reg_damp == reg_fric == 0.0


def test_regularization_damping(layout):
    p = ModelParams.from_dict(layout, {"damping[knee]": 1.3})
    assert regularization(p)[2] == pytest.approx(0.01, abs=1e-15)


def test_total_without_regularization():
    b = total_loss(1.0, 2.0, (5.0, 5.0, 5.0, 5.0), LossSpec(alpha_upper=0.5, regularization_enabled=False))
    assert b.total == 2.0
    assert (b.reg_com, b.reg_mass, b.reg_damp, b.reg_fric) == (0.0, 0.0, 0.0, 0.0)


def test_total_all_zero():
    assert total_loss(0.0, 0.0, (0.0,) * 4, LossSpec()).total == 0.0


def test_total_arithmetic():
    spec = LossSpec(alpha_upper=0.5, lambda_com=0.1, lambda_mass=0.1, lambda_damp=0.1, lambda_fric=0.1)
    assert total_loss(1.0, 2.0, (1.0, 1.0, 1.0, 1.0), spec).total == pytest.approx(2.4, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0.1, 5),
       st.lists(st.floats(0, 3), min_size=4, max_size=4))
def test_alpha_scaling_and_nonnegativity(ta, tu, alpha, c, regs):
    spec = LossSpec(alpha_upper=alpha)
    scaled = LossSpec(alpha_upper=c * alpha)
    a = total_loss(ta, tu, regs, spec)
    b = total_loss(ta, tu, regs, scaled)
    assert b.total - a.total == pytest.approx((c - 1) * alpha * tu, abs=1e-12 * max(1.0, b.total))
    assert all(v >= 0 for v in a.to_dict().values())
    lams = (spec.lambda_com, spec.lambda_mass, spec.lambda_damp, spec.lambda_fric)
    assert a.total == pytest.approx(ta + alpha * tu + sum(l * r for l, r in zip(lams, regs)), abs=1e-12)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec(lambda_mass=-1.0)
    with pytest.raises(ValueError):
        LossSpec(box_low=1.2, box_high=0.8)
    spec = LossSpec(alpha_upper=3.0)
    assert LossSpec.from_dict(spec.to_dict()) == spec
