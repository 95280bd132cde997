import numpy as np
import pytest

from diffsysid.dynamics import RolloutConfig, rollout
from diffsysid.gradients import (
    central_difference,
    evaluate,
    fd_gradient,
    grad_rollout_loss,
    gradient_error,
    gradient_matches,
    loss_value,
)
from diffsysid.model import ModelParams, ParamLayout, State, apply_params
from diffsysid.objective import LossSpec, tracking_loss
from diffsysid.trajectory import PRESETS, Fragment, excitation_actions, generate_real, project_params

SPEC = LossSpec(alpha_upper=2.0, regularization_enabled=False)


@pytest.fixture(scope="module")
def layout(model):
    return ParamLayout.default(model)


@pytest.fixture(scope="module")
def truth(model, layout):
    return project_params(PRESETS["setting1"].truth(model), layout)


def test_zero_loss_and_gradient_at_truth(model, truth, loaded_traj):
    frags = [loaded_traj.fragment(s, 50) for s in (0, 60, 120)]
    res = evaluate(model, truth, frags, SPEC)
    assert res.loss_value == 0.0
    assert np.array_equal(res.gradient, np.zeros(truth.dim))


def test_loss_matches_plain_rollout(model, layout, loaded_traj):
    params = ModelParams.from_dict(layout, {"mass[torso]": 4.0, "damping[knee]": 1.1})
    frag = loaded_traj.fragment(30, 40)
    res = grad_rollout_loss(model, params, frag.initial, frag.actions, frag.reference, SPEC)
    sim = rollout(apply_params(model, params), frag.initial, frag.actions, RolloutConfig(40)).body_positions
    track_all, track_upper = tracking_loss(sim[None, 1:], frag.reference[None, 1:], model.upper_mask)
    assert res.loss_value == pytest.approx(track_all + 2.0 * track_upper, rel=1e-12, abs=1e-12)
    assert loss_value(model, params, [frag], SPEC) == res.loss_value


def test_gradient_matches_finite_differences(model, layout, loaded_traj, rng):
    cls = layout.class_of()
    for start in (0, 77, 140):
        theta = ModelParams.nominal(layout).flatten()
        theta += np.where(cls == "mass", rng.uniform(-0.1, 2.0, theta.size), 0.0)
        theta += np.where(cls == "com", rng.uniform(-0.02, 0.02, theta.size), 0.0)
        theta += np.where((cls == "damping") | (cls == "friction"), rng.uniform(-0.3, 0.3, theta.size), 0.0)
        params = ModelParams.unflatten(layout, theta)
        frags = [loaded_traj.fragment(start, 50)]
        g = evaluate(model, params, frags, SPEC).gradient
        g_fd = fd_gradient(model, params, frags, SPEC)
        rel, small = gradient_error(g, g_fd)
        assert rel < 1e-4 and small < 1e-8
        assert gradient_matches(g, g_fd)


def test_gradient_with_regularization(model, layout, loaded_traj):
    spec = LossSpec(lambda_mass=0.5, lambda_com=10.0, lambda_damp=1.0)
    params = ModelParams.from_dict(layout, {"mass[left_hand]": 1.0, "com_x[torso]": 0.01, "damping[ankle]": 1.4})
    frags = [loaded_traj.fragment(10, 30)]
    g = evaluate(model, params, frags, spec).gradient
    assert gradient_matches(g, fd_gradient(model, params, frags, spec))


def test_torso_mass_gradient_sign_in_lean(model, layout, truth):
    acts = excitation_actions(model, 3.0, "hold-and-lean")
    traj = generate_real(model, PRESETS["setting1"], acts, loaded=True)
    frag = traj.fragment(50, 100)
    heavy = truth.as_dict()
    heavy["mass[torso]"] += 1.0
    params = ModelParams.from_dict(layout, heavy)
    g = evaluate(model, params, [frag], SPEC).gradient
    assert g[layout.index("mass[torso]")] > 0
    # and the loss indeed falls when stepping toward the truth
    lighter = dict(heavy, **{"mass[torso]": heavy["mass[torso]"] - 0.1})
    assert loss_value(model, ModelParams.from_dict(layout, lighter), [frag], SPEC) < loss_value(model, params, [frag], SPEC)


def test_masked_gradient_is_exactly_zero(model, layout, loaded_traj):
    params = ModelParams.from_dict(layout, {"mass[torso]": 3.0})
    active = layout.mask(links=["torso"], classes=["mass", "com"])
    g = evaluate(model, params, [loaded_traj.fragment(0, 30)], SPEC, active=active).gradient
    assert np.all(g[~active] == 0.0)
    assert np.all(g[active] != 0.0)


def test_gradient_is_deterministic(model, layout, loaded_traj):
    params = ModelParams.from_dict(layout, {"mass[torso]": 3.0})
    frags = [loaded_traj.fragment(0, 30), loaded_traj.fragment(90, 30)]
    a = evaluate(model, params, frags, SPEC)
    b = evaluate(model, params, frags, SPEC)
    assert a.loss_value == b.loss_value and np.array_equal(a.gradient, b.gradient)


def test_central_difference_exact_for_quadratics(rng):
    c = rng.normal(size=6)
    theta = rng.normal(size=6)
    g = central_difference(lambda x: float(np.sum((x - c) ** 2)), theta, 1e-3)
    assert np.max(np.abs(g - 2 * (theta - c))) < 1e-9


def test_fd_error_shrinks_with_step(model, layout, loaded_traj):
    params = ModelParams.from_dict(layout, {"mass[torso]": 3.0, "com_z[torso]": 0.02})
    frags = [loaded_traj.fragment(20, 40)]
    g = evaluate(model, params, frags, SPEC).gradient
    err = [np.max(np.abs(fd_gradient(model, params, frags, SPEC, h) - g)) for h in (1e-2, 5e-3)]
    assert err[1] < err[0]
    with pytest.raises(ValueError):
        fd_gradient(model, params, frags, SPEC, 0.0)


def test_zero_horizon_fragment(model, layout, loaded_traj):
    frag = Fragment(State(loaded_traj.q[0], loaded_traj.qdot[0]), np.zeros((0, model.n_joints)),
                    loaded_traj.body_positions[:1])
    params = ModelParams.from_dict(layout, {"mass[torso]": 3.0})
    res = evaluate(model, params, [frag], SPEC)
    assert res.loss_value == 0.0
    assert not res.gradient.any()
    assert not fd_gradient(model, params, [frag], SPEC).any()
