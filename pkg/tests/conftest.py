import copy
import json

import numpy as np
import pytest

from diffsysid.model import DEFAULT_MODEL_PATH, build_model, default_model


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def model_doc():
    return json.loads(DEFAULT_MODEL_PATH.read_text())


def chain_doc(n_links=2, *, length=1.0, mass=1.0, com=(0.0, 0.5), inertia=0.1, gravity=(0.0, -9.81),
              kp=100.0, kd=0.0, damping=0.0, friction=0.0, limits=(-10.0, 10.0), free_foot=False):
    """Root foot plus ``n_links`` identical links stacked along +y, one revolute joint each."""
    links = [{"name": "base", "parent": None, "joint_anchor": [0, 0], "length": 0.0, "nominal_mass": 1.0,
              "nominal_com": [0, 0], "nominal_inertia": 0.01, "tag": "fixed-foot"}]
    joints = []
    for k in range(n_links):
        tag = "upper-body" if k == n_links - 1 else "lower-body"
        if free_foot and k == n_links - 1:
            tag = "free-foot"
        links.append({"name": f"l{k}", "parent": "base" if k == 0 else f"l{k - 1}",
                      "joint_anchor": [0, 0.0 if k == 0 else length], "length": length, "nominal_mass": mass,
                      "nominal_com": list(com), "nominal_inertia": inertia, "tag": tag})
        joints.append({"name": f"j{k}", "child_link": f"l{k}", "nominal_damping": damping,
                       "nominal_friction": friction, "kp": kp, "kd": kd, "torque_limit": 1e6,
                       "angle_limits": list(limits)})
    if free_foot:
        # the upper-body set must stay non-empty
        links.append({"name": "arm", "parent": "base", "joint_anchor": [0, 0], "length": 0.1, "nominal_mass": 0.1,
                      "nominal_com": [0, 0.05], "nominal_inertia": 0.001, "tag": "upper-body"})
        joints.append({"name": "arm_joint", "child_link": "arm", "nominal_damping": 0.0, "nominal_friction": 0.0,
                       "kp": 10.0, "kd": 0.0, "torque_limit": 10.0, "angle_limits": [-1, 1]})
    return {"links": links, "joints": joints, "gravity": list(gravity), "dt_sim": 0.002, "substeps": 10}


def chain_model(n_links=2, **kw):
    return build_model(chain_doc(n_links, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mutated(doc, fn):
    d = copy.deepcopy(doc)
    fn(d)
    return d


@pytest.fixture(scope="session")
def loaded_traj(model):
    from diffsysid.trajectory import PRESETS, excitation_actions, generate_real

    return generate_real(model, PRESETS["setting1"], excitation_actions(model, 4.0, variant=3), loaded=True)


@pytest.fixture(scope="session")
def unloaded_traj(model):
    from diffsysid.trajectory import PRESETS, excitation_actions, generate_real

    return generate_real(model, PRESETS["setting1"], excitation_actions(model, 4.0, variant=0), loaded=False)


# lines appended by tests are printed after the run (measured numbers behind the pass/fail verdicts)
FINDINGS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if FINDINGS:
        terminalreporter.section("measured results")
        for line in FINDINGS:
            terminalreporter.write_line(line)
