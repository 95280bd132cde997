"""Trajectories: synthetic "real-world" data generation and CSV I/O."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import (
    PAYLOAD_LINKS,
    EffectiveModel,
    ModelParams,
    ParamLayout,
    RobotModel,
    State,
    apply_params,
    forward_kinematics,
)


@dataclass(frozen=True)
class Fragment:
    """Reset state, ``N`` recorded actions and ``N + 1`` reference CoM frames."""

    initial: State
    actions: np.ndarray  # (N, J)
    reference: np.ndarray  # (N + 1, L, 2)

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass
class Trajectory:
    dt: float
    q: np.ndarray  # (T + 1, J) measured joint angles
    qdot: np.ndarray  # (T + 1, J)
    actions: np.ndarray  # (T, J) commanded joint targets
    body_positions: np.ndarray | None = None  # (T + 1, L, 2) world CoMs
    loaded: bool = False
    meta: dict[str, str] = field(default_factory=dict)
    stance: np.ndarray | None = None  # (T + 1,) free-foot contact flags

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float).reshape(-1, self.q.shape[1])
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.q.shape != self.qdot.shape or len(self.q) != len(self.actions) + 1:
            raise ValueError("need len(states) == len(actions) + 1")
        if self.body_positions is not None and len(self.body_positions) != len(self.q):
            raise ValueError("body_positions must have one frame per state")
        if self.stance is None:
            self.stance = np.zeros(len(self.q), dtype=bool)
        self.stance = np.asarray(self.stance, dtype=bool)

    def __len__(self) -> int:
        return len(self.q)

    @property
    def states(self) -> list[State]:
        return [State(q, qd) for q, qd in zip(self.q, self.qdot)]

    def ground_truth(self) -> dict[str, float]:
        return json.loads(self.meta.get("ground_truth", "{}"))

    def fragment(self, start: int, horizon: int) -> Fragment:
        if self.body_positions is None:
            raise ValueError("trajectory has no body positions")
        end = start + horizon
        return Fragment(
            State(self.q[start], self.qdot[start]),
            self.actions[start:end].copy(),
            self.body_positions[start : end + 1].copy(),
        )


# -- perturbations and noise ----------------------------------------------


@dataclass(frozen=True)
class PerturbationSetting:
    """Payload offsets plus an optional off-nominal base model.

    ``base_mismatch`` keys: ``mass_scale`` (all non-root link masses),
    ``damping_scale`` and ``friction_scale`` (all joints).
    """

    torso_mass_delta: float = 0.0
    lhand_mass_delta: float = 0.0
    rhand_mass_delta: float = 0.0
    torso_com_delta: tuple[float, float] = (0.0, 0.0)
    base_mismatch: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSetting":
        d = dict(d)
        if "torso_com_delta" in d:
            d["torso_com_delta"] = tuple(float(v) for v in d["torso_com_delta"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "torso_mass_delta": self.torso_mass_delta,
            "lhand_mass_delta": self.lhand_mass_delta,
            "rhand_mass_delta": self.rhand_mass_delta,
            "torso_com_delta": list(self.torso_com_delta),
            "base_mismatch": self.base_mismatch,
        }

    def truth(self, model: RobotModel, loaded: bool = True) -> ModelParams:
        """Ground-truth parameters on the full layout (every movable link and joint)."""
        layout = full_layout(model)
        flat = ModelParams.nominal(layout).flatten()
        base = self.base_mismatch or {}
        mass_scale = float(base.get("mass_scale", 1.0))
        for name in layout.links:
            i = model.link_index(name)
            flat[layout.index(f"mass[{name}]")] = (mass_scale - 1.0) * model.links[i].nominal_mass
        for name in layout.joints:
            flat[layout.index(f"damping[{name}]")] = float(base.get("damping_scale", 1.0))
            flat[layout.index(f"friction[{name}]")] = float(base.get("friction_scale", 1.0))
        if loaded:
            for link, delta in zip(PAYLOAD_LINKS, (self.torso_mass_delta, self.lhand_mass_delta, self.rhand_mass_delta)):
                flat[layout.index(f"mass[{link}]")] += delta
            flat[layout.index("com_x[torso]")] += self.torso_com_delta[0]
            flat[layout.index("com_z[torso]")] += self.torso_com_delta[1]
        return ModelParams.unflatten(layout, flat)


# Payload offsets of the three benchmark settings; CoM on the planar (x, z) axes.
PRESETS = {
    "setting1": PerturbationSetting(6.0, 2.4, 2.0, (0.01, 0.05)),
    "setting2": PerturbationSetting(9.0, 3.2, 2.8, (0.02, 0.07)),
    "setting3": PerturbationSetting(12.0, 3.5, 3.0, (0.02, 0.07)),
}


def full_layout(model: RobotModel) -> ParamLayout:
    links = tuple(l.name for l in model.links if l.tag != "fixed-foot")
    return ParamLayout(links, tuple(j.name for j in model.joints))


def project_params(params: ModelParams, layout: ParamLayout) -> ModelParams:
    """Restrict (or extend with nominal values) ``params`` to another layout."""
    values = {n: v for n, v in params.as_dict().items() if n in layout.names}
    return ModelParams.from_dict(layout, values)


@dataclass(frozen=True)
class NoiseSpec:
    encoder_std: float = 0.0
    encoder_bias_range: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.encoder_std < 0 or self.encoder_bias_range < 0:
            raise ValueError("noise magnitudes must be non-negative")

    @property
    def noiseless(self) -> bool:
        return self.encoder_std == 0 and self.encoder_bias_range == 0


# -- excitation ------------------------------------------------------------

# Incommensurate frequencies (Hz) in 0.2-1.5 Hz; each joint takes three.
_FREQS = np.array([0.23, 0.31, 0.37, 0.43, 0.53, 0.61, 0.71, 0.79, 0.89, 0.97, 1.07, 1.13, 1.21, 1.31, 1.39, 1.47])


def _clip_targets(model: RobotModel, targets: np.ndarray, margin: float = 0.05) -> np.ndarray:
    lo = model.angle_limits[:, 0] + margin
    hi = model.angle_limits[:, 1] - margin
    return np.clip(targets, lo, hi)


def excitation_actions(
    model: RobotModel, duration: float, profile: str = "multi-sine", *, variant: int = 0, amplitude=None, center=None
) -> np.ndarray:
    """Joint-target sequence of ``round(duration / control_dt)`` steps.

    ``multi-sine``: three incommensurate sines per joint around the home
    posture, amplitude ramped in over the first second. ``hold-and-lean``:
    home posture for 1 s, then the stance hip leans 0.2 rad over 1 s and
    holds. ``squat-wave``: slow coordinated ankle/knee/hip squat.
    ``variant`` reshuffles frequencies and phases; ``center`` replaces the
    home posture as the nominal pose.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    dt = model.control_dt
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    J = model.n_joints
    home = model.home if center is None else np.asarray(center, dtype=float)
    if home.shape != (J,):
        raise ValueError(f"center must have shape ({J},)")
    if profile == "multi-sine":
        if amplitude is None:
            amplitude = default_amplitude(model)
        amplitude = np.broadcast_to(np.asarray(amplitude, dtype=float), (J,))
        ramp = np.clip(t / 1.0, 0.0, 1.0)
        out = np.tile(home, (n, 1))
        for k in range(J):
            idx = [(3 * k + 5 * variant + i * 5) % len(_FREQS) for i in range(3)]
            for i, fi in enumerate(idx):
                phase = 2.0 * np.pi * ((0.618033988749895 * (k + 1) * (i + 1) + 0.377 * variant) % 1.0)
                out[:, k] += amplitude[k] / 3.0 * ramp * (np.sin(2 * np.pi * _FREQS[fi] * t + phase) - np.sin(phase))
        return _clip_targets(model, out)
    if profile == "hold-and-lean":
        out = np.tile(home, (n, 1))
        k = model.joint_of_link[model.link_index("torso")]
        out[:, k] += 0.2 * np.clip(t - 1.0, 0.0, 1.0)
        return out
    if profile == "squat-wave":
        out = np.tile(home, (n, 1))
        depth = 0.25 * (1.0 - np.cos(2 * np.pi * 0.4 * t)) / 2.0
        ankle, knee, hip = model.chain_to(model.link_index("torso"))
        out[:, ankle] += depth
        out[:, knee] -= 2.0 * depth
        out[:, hip] += depth
        return _clip_targets(model, out)
    raise ValueError(f"unknown excitation profile {profile!r}")


def default_amplitude(model: RobotModel) -> np.ndarray:
    """Peak excursion per joint: 30% of the range for joints moving a
    terminal upper-body link (the arms), 10% elsewhere."""
    span = model.angle_limits[:, 1] - model.angle_limits[:, 0]
    has_child = np.zeros(model.n_links, dtype=bool)
    has_child[model.parent[model.parent >= 0]] = True
    arm = np.array([model.links[l].tag == "upper-body" and not has_child[l] for l in model.link_of_joint])
    return np.where(arm, 0.3, 0.1) * span


# -- synthetic data ----------------------------------------------------------


def generate_real(
    model: RobotModel,
    setting: PerturbationSetting,
    actions: np.ndarray,
    noise: NoiseSpec = NoiseSpec(),
    *,
    loaded: bool = True,
    initial: State | None = None,
    meta: dict[str, str] | None = None,
    stance=None,
) -> Trajectory:
    """Simulate the perturbed "real" robot and sense it through joint encoders.

    Measured angles carry a constant per-joint bias and Gaussian noise;
    velocities are central differences of the measured angles (exact
    simulator velocities when the noise spec is all zeros); body CoM
    positions are reconstructed by forward kinematics of the measured
    angles on the true model.

    ``stance`` (one flag per state) marks rows where the free foot is on
    the ground. There is no contact model, so those true configurations
    are projected onto the contact constraint before sensing.
    """
    from .dynamics import RolloutConfig, rollout
    from .footqp import foot_height_qp

    truth = setting.truth(model, loaded)
    eff = apply_params(model, truth)
    actions = np.asarray(actions, dtype=float)
    if initial is None:
        initial = State(model.home, np.zeros(model.n_joints))
    result = rollout(eff, initial, actions, RolloutConfig(len(actions)))
    q_true = result.q
    qdot_true = result.qdot
    bodies = result.body_positions
    dt = model.control_dt
    stance = np.zeros(len(q_true), dtype=bool) if stance is None else np.asarray(stance, dtype=bool)
    if stance.shape != (len(q_true),):
        raise ValueError(f"stance schedule needs {len(q_true)} entries")
    if stance.any():
        for t in np.flatnonzero(stance):
            q_true[t] = foot_height_qp(model, q_true[t]).q
        qdot_true = np.gradient(q_true, dt, axis=0)
        bodies = forward_kinematics(eff, q_true).coms
    if noise.noiseless:
        q_meas = q_true
        qdot = qdot_true
    else:
        rng = np.random.default_rng(noise.seed)
        bias = rng.uniform(-noise.encoder_bias_range, noise.encoder_bias_range, model.n_joints)
        q_meas = q_true + bias + rng.normal(0.0, noise.encoder_std, q_true.shape)
        qdot = np.gradient(q_meas, dt, axis=0)
        bodies = forward_kinematics(eff, q_meas).coms
    info = {
        "loaded": str(loaded).lower(),
        "encoder_std": repr(noise.encoder_std),
        "encoder_bias_range": repr(noise.encoder_bias_range),
        "noise_seed": str(noise.seed),
        "ground_truth": json.dumps(truth.as_dict(), sort_keys=True),
    }
    info.update(meta or {})
    return Trajectory(dt, q_meas, qdot, actions, bodies, loaded, info, stance)


def truth_model(model: RobotModel, traj: Trajectory) -> EffectiveModel:
    """Effective model recorded as ground truth in a trajectory's metadata."""
    layout = full_layout(model)
    truth = traj.ground_truth()
    if not truth:
        return EffectiveModel.nominal(model)
    return apply_params(model, ModelParams.from_dict(layout, truth))


# -- file I/O --------------------------------------------------------------


def _rle(flags) -> list[list[int]]:
    out: list[list[int]] = []
    for f in np.asarray(flags, dtype=int):
        if out and out[-1][0] == f:
            out[-1][1] += 1
        else:
            out.append([int(f), 1])
    return out


def _unrle(runs) -> np.ndarray:
    return np.concatenate([np.full(int(n), bool(v)) for v, n in runs]) if runs else np.zeros(0, dtype=bool)


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save_trajectory(traj: Trajectory, path) -> None:
    """Write ``path`` (CSV) and its ``.meta.json`` sidecar."""
    path = Path(path)
    T1, J = traj.q.shape
    has_bodies = traj.body_positions is not None
    L = traj.body_positions.shape[1] if has_bodies else 0
    header = ["t"] + [f"q_{k}" for k in range(J)] + [f"qdot_{k}" for k in range(J)] + [f"a_{k}" for k in range(J)]
    header += [f"{ax}_{l}" for l in range(L) for ax in ("x", "z")]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(T1):
            row = [repr(float(i * traj.dt))]
            row += [repr(float(v)) for v in traj.q[i]]
            row += [repr(float(v)) for v in traj.qdot[i]]
            row += [repr(float(v)) for v in traj.actions[i]] if i < len(traj.actions) else [""] * J
            if has_bodies:
                row += [repr(float(v)) for v in traj.body_positions[i].ravel()]
            w.writerow(row)
    side = {
        "dt": traj.dt,
        "loaded": traj.loaded,
        "meta": dict(sorted(traj.meta.items())),
        "has_body_positions": has_bodies,
        "n_joints": J,
        "n_links": L,
        "stance": _rle(traj.stance),
    }
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        side = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar_path(path)}: invalid metadata: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        J = int(side["n_joints"])
        L = int(side["n_links"]) if side.get("has_body_positions") else 0
        dt = float(side["dt"])
        loaded = bool(side["loaded"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{sidecar_path(path)}: bad or missing field {exc}") from exc
    expected = ["t"] + [f"q_{k}" for k in range(J)] + [f"qdot_{k}" for k in range(J)] + [f"a_{k}" for k in range(J)]
    expected += [f"{ax}_{l}" for l in range(L) for ax in ("x", "z")]
    if header != expected:
        missing = [c for c in expected if c not in header]
        raise FormatError(f"{path}: unexpected header (missing columns: {missing or 'none'})")
    q, qdot, actions, bodies = [], [], [], []
    for n, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {n} has {len(row)} fields, expected {len(header)}")
        try:
            q.append([float(v) for v in row[1 : 1 + J]])
            qdot.append([float(v) for v in row[1 + J : 1 + 2 * J]])
            a = row[1 + 2 * J : 1 + 3 * J]
            if any(a):
                actions.append([float(v) for v in a])
            if L:
                bodies.append([float(v) for v in row[1 + 3 * J :]])
        except ValueError as exc:
            raise FormatError(f"{path}: row {n}: {exc}") from exc
    if len(actions) != len(q) - 1:
        raise FormatError(f"{path}: expected {len(q) - 1} action rows, found {len(actions)}")
    stance = _unrle(side.get("stance", []))
    if stance.size and stance.size != len(q):
        raise FormatError(f"{path}: stance schedule length {stance.size} != {len(q)} states")
    return Trajectory(
        dt=dt,
        q=np.array(q),
        qdot=np.array(qdot),
        actions=np.array(actions).reshape(-1, J),
        body_positions=np.array(bodies).reshape(len(q), L, 2) if L else None,
        loaded=loaded,
        meta={str(k): str(v) for k, v in side.get("meta", {}).items()},
        stance=stance if stance.size else None,
    )
