"""Forward dynamics of the welded-root planar tree and action-replay rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dual import Dual, jets
from .errors import DimensionError, DivergenceError
from .model import EffectiveModel, RobotModel, State

ACTION_MARGIN = 0.5  # rad beyond the joint limits still accepted as a target


@dataclass(frozen=True)
class ControlInput:
    q_target: np.ndarray

    def __post_init__(self):
        q = np.array(self.q_target, dtype=float)
        q.flags.writeable = False
        object.__setattr__(self, "q_target", q)

    def check(self, model: RobotModel) -> None:
        check_actions(model, self.q_target[None, :])


@dataclass(frozen=True)
class RolloutConfig:
    horizon: int
    record_bodies: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class RolloutResult:
    states: list[State]
    body_positions: np.ndarray | None  # (N+1, L, 2) world CoMs
    applied_torques: np.ndarray  # (N, J), mean over the substeps of each control step
    body_sensitivities: np.ndarray | None = None  # (N+1, L, 2, d)

    @property
    def q(self) -> np.ndarray:
        return np.array([s.q for s in self.states])

    @property
    def qdot(self) -> np.ndarray:
        return np.array([s.qdot for s in self.states])


def check_actions(model: RobotModel, actions: np.ndarray) -> np.ndarray:
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or actions.shape[1] != model.n_joints:
        raise DimensionError(f"actions must have shape (n, {model.n_joints}), got {actions.shape}")
    if not np.all(np.isfinite(actions)):
        raise ValueError("actions must be finite")
    lo = model.angle_limits[:, 0] - ACTION_MARGIN
    hi = model.angle_limits[:, 1] + ACTION_MARGIN
    if np.any(actions < lo) or np.any(actions > hi):
        raise ValueError("action targets outside the widened joint limits")
    return actions


def _as_effective(eff) -> EffectiveModel:
    if isinstance(eff, RobotModel):
        return EffectiveModel.nominal(eff)
    return eff


def _plain(x) -> np.ndarray:
    return np.asarray(x.value if isinstance(x, Dual) else x, dtype=float)


def joint_torque(eff, q, qdot, u) -> np.ndarray:
    """Actuator torque: clamped PD minus damping minus smooth Coulomb friction."""
    eff = _as_effective(eff)
    m = eff.model
    q, qdot, u = (np.asarray(v, dtype=float) for v in (q, qdot, getattr(u, "q_target", u)))
    for name, v in (("q", q), ("qdot", qdot), ("u", u)):
        if v.shape != (m.n_joints,):
            raise DimensionError(f"{name} must have shape ({m.n_joints},), got {v.shape}")
    return _kernels.joint_torque_values(
        q, qdot, u, _plain(eff.damping), _plain(eff.friction), m.kp, m.kd, m.torque_limit, m.friction_velocity
    )


def _mass_bias(eff, q, qdot):
    eff = _as_effective(eff)
    m = eff.model
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if q.shape != (m.n_joints,) or qdot.shape != (m.n_joints,):
        raise DimensionError(f"q and qdot must have shape ({m.n_joints},)")
    return _kernels.mass_bias(
        q, qdot, _plain(eff.mass), np.ascontiguousarray(_plain(eff.com)), eff.inertia,
        m.parent, m.joint_of_link, m.link_of_joint, m.anchors, m.joint_pairs, m.gravity[0], m.gravity[1],
    )


def mass_matrix(eff, q) -> np.ndarray:
    """Joint-space inertia matrix ``M(q)``."""
    q = np.asarray(q, dtype=float)
    return _mass_bias(eff, q, np.zeros_like(q))[0]


def bias_forces(eff, q, qdot) -> np.ndarray:
    """Coriolis/centrifugal plus gravity generalized forces, so ``M qdd + bias = tau``."""
    return _mass_bias(eff, q, qdot)[1]


@dataclass(frozen=True)
class _Packed:
    mass: np.ndarray
    com: np.ndarray
    damp: np.ndarray
    fric: np.ndarray
    inertia: np.ndarray

    @property
    def width(self) -> int:
        return self.mass.shape[-1]


def pack(eff: EffectiveModel, columns=None) -> _Packed:
    """Kernel jets for an effective model; ``columns`` picks the carried partials."""
    return _Packed(
        jets(eff.mass, columns),
        jets(eff.com, columns),
        jets(eff.damping, columns),
        jets(eff.friction, columns),
        np.ascontiguousarray(eff.inertia, dtype=float),
    )


def simulate(model: RobotModel, packed: _Packed, q0, qd0, actions, ref=None, *, record_jets=False):
    """Batched kernel rollout; raises :class:`DivergenceError` on blow-up.

    ``q0``/``qd0``: ``(B, J)``; ``actions``: ``(B, N, J)``; ``ref``:
    ``(B, N+1, L, 2)`` reference CoM positions or None.
    """
    q0 = np.ascontiguousarray(q0, dtype=float)
    qd0 = np.ascontiguousarray(qd0, dtype=float)
    actions = np.ascontiguousarray(actions, dtype=float)
    B, N = actions.shape[:2]
    use_ref = ref is not None
    if ref is None:
        ref = np.zeros((B, N + 1, model.n_links, 2))
    ref = np.ascontiguousarray(ref, dtype=float)
    if ref.shape != (B, N + 1, model.n_links, 2):
        raise DimensionError(f"reference shape {ref.shape} does not match {(B, N + 1, model.n_links, 2)}")
    out = _kernels.rollout_batch(
        q0, qd0, actions, ref, use_ref, model.upper_mask,
        packed.mass, packed.com, packed.inertia, packed.damp, packed.fric,
        model.kp, model.kd, model.torque_limit,
        np.ascontiguousarray(model.angle_limits[:, 0]), np.ascontiguousarray(model.angle_limits[:, 1]),
        model.friction_velocity, model.limit_stiffness,
        model.parent, model.joint_of_link, model.link_of_joint, model.anchors, model.joint_pairs,
        model.gravity[0], model.gravity[1], model.dt_sim, model.substeps,
        record_jets,
    )
    status = out[-1]
    if np.any(status):
        b = int(np.flatnonzero(status)[0])
        raise DivergenceError(f"rollout diverged at control step {int(status[b])} (fragment {b})", step=int(status[b]))
    return out


def step(eff, state: State, u) -> State:
    """Advance one control period (``substeps`` semi-implicit Euler steps)."""
    eff = _as_effective(eff)
    m = eff.model
    u = np.asarray(getattr(u, "q_target", u), dtype=float)
    check_actions(m, u[None, :])
    if state.q.shape != (m.n_joints,):
        raise DimensionError("state does not match the model")
    q, qd, *_ = simulate(m, pack(eff), state.q[None], state.qdot[None], u[None, None, :])
    return State(q[0, 1], qd[0, 1])


def rollout(eff, initial: State, actions: Sequence, config: RolloutConfig, *, sensitivities=False) -> RolloutResult:
    """Replay ``actions`` from ``initial`` for ``config.horizon`` control steps.

    With ``sensitivities=True`` and a Dual-valued effective model the result
    also carries d(body CoM)/d(theta) for every step.
    """
    eff = _as_effective(eff)
    m = eff.model
    acts = np.array([getattr(a, "q_target", a) for a in actions], dtype=float)
    if len(acts) < config.horizon:
        raise ValueError(f"need at least {config.horizon} actions, got {len(acts)}")
    acts = check_actions(m, acts[: config.horizon])
    record = bool(sensitivities and isinstance(eff.mass, Dual))
    packed = pack(eff)
    q, qd, bodies, tau, body_jets, _, _ = simulate(m, packed, initial.q[None], initial.qdot[None], acts[None], record_jets=record)
    states = [State(q[0, t], qd[0, t]) for t in range(config.horizon + 1)]
    return RolloutResult(
        states=states,
        body_positions=bodies[0] if config.record_bodies else None,
        applied_torques=tau[0],
        body_sensitivities=body_jets[0, ..., 1:] if record else None,
    )
