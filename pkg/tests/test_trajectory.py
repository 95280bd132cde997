import json

import numpy as np
import pytest

from diffsysid.dynamics import RolloutConfig, rollout
from diffsysid.errors import FormatError
from diffsysid.model import ModelParams, ParamLayout, State, apply_params, forward_kinematics
from diffsysid.trajectory import (
    PRESETS,
    NoiseSpec,
    PerturbationSetting,
    Trajectory,
    excitation_actions,
    full_layout,
    generate_real,
    load_trajectory,
    project_params,
    save_trajectory,
    truth_model,
)


def test_multi_sine_length_and_bounds(model):
    for variant in range(6):
        a = excitation_actions(model, 10.0, variant=variant)
        assert a.shape == (500, model.n_joints)
        assert np.all(a >= model.angle_limits[:, 0]) and np.all(a <= model.angle_limits[:, 1])


def test_multi_sine_has_three_frequencies(model):
    a = excitation_actions(model, 100.0)
    a = a[int(1.0 / model.control_dt):]  # drop the ramp
    for k in range(model.n_joints):
        spec = np.abs(np.fft.rfft(a[:, k] - a[:, k].mean()))
        freqs = np.fft.rfftfreq(len(a), model.control_dt)
        peaks = [i for i in range(1, len(spec) - 1) if spec[i] > spec[i - 1] and spec[i] > spec[i + 1]
                 and spec[i] > 0.2 * spec.max()]
        assert len(peaks) >= 3, k
        assert all(0.2 <= freqs[i] <= 1.5 for i in peaks)


def test_hold_and_lean(model):
    a = excitation_actions(model, 3.0, "hold-and-lean")
    k = model.joint_index("stance_hip")
    assert np.all(a[:50] == model.home)
    assert a[100, k] == pytest.approx(model.home[k] + 0.2)
    assert np.all(a[100:, k] == a[100, k])
    others = np.delete(np.arange(model.n_joints), k)
    assert np.all(a[:, others] == model.home[others])


def test_squat_wave_and_errors(model):
    a = excitation_actions(model, 5.0, "squat-wave")
    assert a.shape == (250, 7)
    with pytest.raises(ValueError):
        excitation_actions(model, 1.0, "jumping-jacks")
    with pytest.raises(ValueError):
        excitation_actions(model, 0.0)


def test_truth_layouts(model):
    t = PRESETS["setting1"].truth(model)
    assert t.layout == full_layout(model)
    d = t.as_dict()
    assert d["mass[torso]"] == 6.0 and d["com_z[torso]"] == 0.05 and d["mass[stance_shin]"] == 0.0
    assert not PRESETS["setting1"].truth(model, loaded=False).flatten()[:21].any()
    base = PerturbationSetting(6.0, base_mismatch={"mass_scale": 1.05, "damping_scale": 1.15}).truth(model)
    assert base.as_dict()["mass[torso]"] == pytest.approx(6.0 + 0.05 * 7.818)
    assert base.as_dict()["damping[knee]"] == 1.15
    again = PerturbationSetting.from_dict(json.loads(json.dumps(PRESETS["setting2"].to_dict())))
    assert again == PRESETS["setting2"]


def test_noiseless_generation_is_exact(model, loaded_traj):
    eff = apply_params(model, PRESETS["setting1"].truth(model))
    res = rollout(eff, loaded_traj.states[0], loaded_traj.actions, RolloutConfig(len(loaded_traj.actions)))
    assert np.array_equal(loaded_traj.body_positions, res.body_positions)
    assert np.max(np.abs(res.q - loaded_traj.q)) < 1e-10
    assert loaded_traj.ground_truth() == PRESETS["setting1"].truth(model).as_dict()
    assert len(loaded_traj) == 201


def test_noisy_body_error_bound(model):
    acts = excitation_actions(model, 4.0)
    clean = generate_real(model, PRESETS["setting1"], acts)
    noisy = generate_real(model, PRESETS["setting1"], acts, NoiseSpec(0.002, 0.0, seed=4))
    err = np.linalg.norm(noisy.body_positions - clean.body_positions, axis=-1)
    bound = model.n_joints * model.lengths.sum() * 3 * 0.002
    assert err.max() < min(bound, 0.02)
    biased = generate_real(model, PRESETS["setting1"], acts, NoiseSpec(0.0, 0.01, seed=4))
    offset = biased.q - clean.q
    assert np.allclose(offset, offset[0]) and np.all(np.abs(offset[0]) <= 0.01)


def test_generation_reproducible(model, tmp_path):
    acts = excitation_actions(model, 2.0, variant=1)
    noise = NoiseSpec(0.002, 0.01, seed=9)
    for name in ("a", "b"):
        save_trajectory(generate_real(model, PRESETS["setting2"], acts, noise), tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.meta.json").read_bytes() == (tmp_path / "b.meta.json").read_bytes()


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)
    assert NoiseSpec().noiseless and not NoiseSpec(0.001).noiseless


def test_io_roundtrip(model, tmp_path):
    acts = excitation_actions(model, 10.0)
    stance = np.zeros(501, dtype=bool)
    traj = generate_real(model, PRESETS["setting1"], acts, NoiseSpec(0.002, 0.01, 3), meta={"scenario": "x"})
    traj.stance = stance
    traj.stance[10:20] = True
    path = tmp_path / "t.csv"
    save_trajectory(traj, path)
    assert len(path.read_text().splitlines()) == 502
    back = load_trajectory(path)
    for name in ("q", "qdot", "actions", "body_positions", "stance"):
        assert np.array_equal(getattr(back, name), getattr(traj, name)), name
    assert back.meta == traj.meta and back.loaded and back.dt == traj.dt


def test_io_without_bodies(tmp_path):
    traj = Trajectory(0.02, np.zeros((3, 2)), np.ones((3, 2)), np.zeros((2, 2)))
    save_trajectory(traj, tmp_path / "t.csv")
    back = load_trajectory(tmp_path / "t.csv")
    assert back.body_positions is None and np.array_equal(back.qdot, traj.qdot)


def test_io_format_errors(model, tmp_path, loaded_traj):
    path = tmp_path / "t.csv"
    save_trajectory(loaded_traj, path)
    lines = path.read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="row 6"):
        load_trajectory(path)
    save_trajectory(loaded_traj, path)
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace("q_3", "angle_3")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="q_3"):
        load_trajectory(path)
    save_trajectory(loaded_traj, path)
    (tmp_path / "t.meta.json").write_text("{}")
    with pytest.raises(FormatError):
        load_trajectory(path)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(0.02, np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Trajectory(0.0, np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2)))


def test_fragment_contents(loaded_traj):
    f = loaded_traj.fragment(10, 20)
    assert f.horizon == 20
    assert np.array_equal(f.initial.q, loaded_traj.q[10])
    assert np.array_equal(f.reference, loaded_traj.body_positions[10:31])


def test_truth_model_and_projection(model, loaded_traj):
    eff = truth_model(model, loaded_traj)
    assert eff.mass[model.link_index("torso")] == pytest.approx(13.818)
    p = project_params(PRESETS["setting1"].truth(model), ParamLayout.default(model))
    assert p.as_dict()["mass[left_hand]"] == 2.4
    assert project_params(p, full_layout(model)).as_dict()["mass[stance_thigh]"] == 0.0


def test_stance_generation_plants_foot(model):
    from diffsysid.footqp import foot_height

    pose = model.home.copy()
    pose[:5] = [0.25, -0.5, 0.25, np.pi - 0.35, -0.7]
    acts = excitation_actions(model, 2.0, "hold-and-lean", center=pose)
    stance = np.zeros(101, dtype=bool)
    stance[20:80] = True
    traj = generate_real(model, PRESETS["setting1"], acts, initial=State(pose, np.zeros(7)), stance=stance)
    heights = np.array([foot_height(model, q) for q in traj.q])
    assert np.max(np.abs(heights[stance])) < 1e-9
    eff = truth_model(model, traj)
    assert np.allclose(traj.body_positions, forward_kinematics(eff, traj.q).coms, atol=1e-15)
