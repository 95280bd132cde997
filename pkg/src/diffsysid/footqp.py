"""Minimal joint corrections that put the free foot on the ground during stance."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NonConvergedError, SingularJacobianError
from .model import RobotModel, forward_kinematics
from .trajectory import Trajectory, truth_model

HEIGHT_TOL = 1e-9
MAX_ITERATIONS = 20
JACOBIAN_FLOOR = 1e-10
STEP_TOL = 1e-13  # keep refining the multiplier once the height is met


@dataclass(frozen=True)
class FootCorrection:
    q: np.ndarray  # corrected joint angles
    delta: np.ndarray  # q - q_measured
    multiplier: float  # lambda with delta = J^T lambda at the solution
    jacobian: np.ndarray  # d(foot height)/dq at the solution, zero off the active set
    residual: float  # foot height minus target
    iterations: int

    @property
    def stationarity(self) -> float:
        return float(np.linalg.norm(self.delta - self.jacobian * self.multiplier))


def foot_height(model: RobotModel, q) -> float:
    """Vertical coordinate of the free-foot link's far end."""
    return float(forward_kinematics(model, q).tips[model.free_foot, 1])


def foot_jacobian(model: RobotModel, q, active) -> np.ndarray:
    """d(foot height)/dq; a rotation about joint k moves the tip by perp(tip - origin_k)."""
    kin = forward_kinematics(model, q)
    tip = kin.tips[model.free_foot]
    J = np.zeros(model.n_joints)
    for k in active:
        link = model.link_of_joint[k]
        if model.ancestor[model.free_foot, link]:
            J[k] = tip[0] - kin.origins[link, 0]
    return J


def foot_hessian(model: RobotModel, q, active) -> np.ndarray:
    """Second derivatives of the foot height over ``active`` (chain order, root first).

    With joints ``j``, ``k`` on the foot chain, ``d2h/dq_j dq_k = -(tip_z - origin_z)`` of
    whichever of the two joints sits further from the root; off-chain entries are zero.
    """
    kin = forward_kinematics(model, q)
    tip_z = kin.tips[model.free_foot, 1]
    chain = model.chain_to(model.free_foot)
    depth = {k: i for i, k in enumerate(chain)}
    H = np.zeros((len(active), len(active)))
    for a, j in enumerate(active):
        for b, k in enumerate(active):
            if j in depth and k in depth:
                outer = j if depth[j] >= depth[k] else k
                H[a, b] = -(tip_z - kin.origins[model.link_of_joint[outer], 1])
    return H


def _kkt_step(block, J, top, r) -> np.ndarray:
    n = len(J)
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = block
    kkt[:n, n] = -J
    kkt[n, :n] = J
    try:
        return np.linalg.solve(kkt, np.concatenate([top, [-r]]))
    except np.linalg.LinAlgError as exc:
        raise SingularJacobianError(f"KKT system is singular: {exc}") from exc


def _tangent_curvature_positive(block, J) -> bool:
    """``block`` restricted to the null space of ``J`` is positive definite."""
    Z = np.linalg.svd(J[None, :])[2][1:].T
    return bool(np.linalg.eigvalsh(Z.T @ block @ Z).min() > 0)


def _residual(model, q0, delta, active, sol, target) -> float:
    trial = delta.copy()
    trial[active] += sol[: len(active)]
    return foot_height(model, q0 + trial) - target


def foot_height_qp(
    model: RobotModel,
    q_measured,
    active_indices=None,
    *,
    target: float = 0.0,
    tol: float = HEIGHT_TOL,
    max_iterations: int = MAX_ITERATIONS,
) -> FootCorrection:
    """Smallest ``dq`` (Euclidean) on the active joints with foot height equal to ``target``.

    Each iteration solves the KKT system of ``min |dq|^2`` subject to the
    constraint linearized at the current point, for the total correction
    and its multiplier. The plain Gauss-Newton step (no curvature) is
    the fallback; the constraint curvature weighted by the current
    multiplier is added when it is positive on the constraint tangent
    and the resulting step lowers the residual, which keeps convergence
    quadratic for large corrections without losing robustness far from
    the solution. ``active_indices`` defaults to the joint chain from the welded
    root to the free foot.
    """
    q0 = np.asarray(q_measured, dtype=float)
    if q0.shape != (model.n_joints,):
        raise ValueError(f"q must have shape ({model.n_joints},)")
    active = model.chain_to(model.free_foot) if active_indices is None else sorted(int(k) for k in active_indices)
    if not active or min(active) < 0 or max(active) >= model.n_joints:
        raise ValueError("active_indices must name valid joints")
    n = len(active)
    delta = np.zeros(model.n_joints)
    lam = 0.0
    r = foot_height(model, q0) - target
    it = 0
    step = np.inf
    while abs(r) >= tol and it < max_iterations or 0 < it < max_iterations and step > STEP_TOL:
        q = q0 + delta
        J = foot_jacobian(model, q, active)[active]
        if np.linalg.norm(J) < JACOBIAN_FLOOR:
            raise SingularJacobianError("foot height is insensitive to the active joints")
        # Newton on the stationarity d = lam J and feasibility h = target; the curvature
        # term is used only where it describes a minimum and actually reduces the residual
        H = foot_hessian(model, q, active)
        trial = None
        if lam != 0.0 and _tangent_curvature_positive(np.eye(n) - lam * H, J):
            trial = _kkt_step(np.eye(n) - lam * H, J, lam * J - delta[active], r)
            if abs(_residual(model, q0, delta, active, trial, target)) >= abs(r):
                trial = None
        sol = trial if trial is not None else _kkt_step(np.eye(n), J, -delta[active], r)
        step = float(np.linalg.norm(sol[:n]))
        delta[active] += sol[:n]
        lam = lam + sol[n] if trial is not None else sol[n]
        r = foot_height(model, q0 + delta) - target
        it += 1
    if abs(r) >= tol:
        raise NonConvergedError(f"foot height residual {r:.3e} m after {it} iterations")
    q = q0 + delta
    J_full = foot_jacobian(model, q, active)
    jj = float(J_full @ J_full)
    if jj < JACOBIAN_FLOOR**2:
        raise SingularJacobianError("foot height is insensitive to the active joints")
    lam = float(J_full @ delta) / jj
    return FootCorrection(q, delta, lam, J_full, float(r), it)


def process_trajectory(model: RobotModel, raw: Trajectory, stance_schedule=None) -> Trajectory:
    """Correct every stance timestep with :func:`foot_height_qp`.

    Velocities are re-derived by central differences (one-sided at the
    ends) and body positions by forward kinematics, but only on rows the
    correction can affect; all other rows pass through untouched.
    """
    stance = raw.stance if stance_schedule is None else np.asarray(stance_schedule, dtype=bool)
    if stance.shape != (len(raw),):
        raise ValueError(f"stance schedule needs {len(raw)} entries, got {stance.shape}")
    q = raw.q.copy()
    for t in np.flatnonzero(stance):
        try:
            q[t] = foot_height_qp(model, raw.q[t]).q
        except (SingularJacobianError, NonConvergedError) as exc:
            raise type(exc)(f"timestep {t}: {exc}") from exc
    changed = np.flatnonzero(np.any(q != raw.q, axis=1))
    if changed.size == 0:
        return replace(raw, q=q, qdot=raw.qdot.copy(), stance=stance.copy(),
                       body_positions=None if raw.body_positions is None else raw.body_positions.copy())
    touched = np.unique(np.clip(np.concatenate([changed - 1, changed, changed + 1]), 0, len(q) - 1))
    qdot = raw.qdot.copy()
    qdot[touched] = np.gradient(q, raw.dt, axis=0)[touched]
    eff = truth_model(model, raw)
    if raw.body_positions is None:
        bodies = forward_kinematics(eff, q).coms
    else:
        bodies = raw.body_positions.copy()
        bodies[changed] = forward_kinematics(eff, q[changed]).coms
    meta = dict(raw.meta, processed="true")
    return Trajectory(raw.dt, q, qdot, raw.actions.copy(), bodies, raw.loaded, meta, stance.copy())
