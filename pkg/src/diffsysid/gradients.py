"""Loss and exact parameter gradients over batches of trajectory fragments.

Gradients are forward-mode: parameters are lifted to duals, mapped into
the effective model, and the rollout kernel carries the partials of the
active parameters through every substep, torque evaluation, forward
kinematics call and loss term. Fragment initial states are constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import dual as _dual
from .dynamics import pack, simulate
from .errors import NonFiniteGradientError
from .model import ModelParams, RobotModel, apply_params
from .objective import LossBreakdown, LossSpec, combine, regularization, total_loss
from .trajectory import Fragment


@dataclass(frozen=True)
class GradientResult:
    loss_value: float
    gradient: np.ndarray
    breakdown: LossBreakdown | None = None


def _stack(fragments: Sequence[Fragment]):
    q0 = np.array([f.initial.q for f in fragments])
    qd0 = np.array([f.initial.qdot for f in fragments])
    actions = np.array([f.actions for f in fragments])
    ref = np.array([f.reference for f in fragments])
    return q0, qd0, actions, ref


def evaluate(
    model: RobotModel,
    params: ModelParams,
    fragments: Sequence[Fragment],
    spec: LossSpec,
    *,
    active=None,
    with_grad: bool = True,
) -> GradientResult:
    """Total loss over ``fragments`` and, optionally, its gradient.

    ``active`` is a boolean mask over the flat parameters; inactive
    coordinates get exactly zero gradient.
    """
    d = params.dim
    active = np.ones(d, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    B = len(fragments)
    q0, qd0, actions, ref = _stack(fragments)

    if with_grad:
        lifted = _dual.lift_params(params, active)
        eff = apply_params(model, lifted)
        columns = np.flatnonzero(active)
    else:
        lifted = params
        eff = apply_params(model, params)
        columns = None
    packed = pack(eff, columns)
    *_, loss, _ = simulate(model, packed, q0, qd0, actions, ref)
    track = loss.sum(axis=0) / B if B else np.zeros((2, packed.width))
    regs = regularization(lifted, model, spec)

    grad = np.zeros(d)
    if with_grad:
        total_reg = combine(0.0, 0.0, regs, spec)
        if isinstance(total_reg, _dual.Dual):
            grad += total_reg.partials
        grad[columns] += track[0, 1:] + spec.alpha_upper * track[1, 1:]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError("gradient has non-finite entries")
    breakdown = total_loss(track[0, 0], track[1, 0], regs, spec)
    return GradientResult(breakdown.total, grad, breakdown)


def grad_rollout_loss(model, params, initial, actions, reference, loss_spec, *, active=None) -> GradientResult:
    """Loss and gradient for one fragment given as (initial state, actions, reference)."""
    frag = Fragment(initial, np.asarray(actions, dtype=float), np.asarray(reference, dtype=float))
    return evaluate(model, params, [frag], loss_spec, active=active)


def loss_value(model, params, fragments, spec) -> float:
    return evaluate(model, params, fragments, spec, with_grad=False).loss_value


def fd_steps(params: ModelParams, h: float) -> np.ndarray:
    """Per-coordinate steps: absolute for deltas, relative for scales."""
    flat = params.flatten()
    steps = np.full(flat.size, h)
    cls = params.layout.class_of()
    scale = (cls == "damping") | (cls == "friction")
    steps[scale] = h * np.maximum(np.abs(flat[scale]), 1.0)
    return steps


def central_difference(f: Callable[[np.ndarray], float], theta, steps) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), theta.shape)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        g[j] = (f(theta + e) - f(theta - e)) / (2.0 * steps[j])
    return g


def fd_gradient(model, params, fragments, spec, h: float = 1e-5, *, active=None) -> np.ndarray:
    """Central-difference gradient of :func:`evaluate`'s loss (validation oracle)."""
    if h <= 0:
        raise ValueError("h must be positive")
    layout = params.layout

    def f(flat):
        return loss_value(model, ModelParams.unflatten(layout, flat), fragments, spec)

    g = central_difference(f, params.flatten(), fd_steps(params, h))
    if active is not None:
        g[~np.asarray(active, dtype=bool)] = 0.0
    return g


def gradient_error(g, g_ref, floor: float = 1e-8) -> tuple[float, float]:
    """``(max relative error where |g_ref| > floor, max absolute error elsewhere)``."""
    g = np.asarray(g, dtype=float)
    g_ref = np.asarray(g_ref, dtype=float)
    err = np.abs(g - g_ref)
    big = np.abs(g_ref) > floor
    rel = float(np.max(err[big] / np.abs(g_ref[big]))) if big.any() else 0.0
    small = float(np.max(err[~big])) if (~big).any() else 0.0
    return rel, small


def gradient_matches(g, g_ref, rtol: float = 1e-4, floor: float = 1e-8) -> bool:
    rel, small = gradient_error(g, g_ref, floor)
    return rel < rtol and small < floor
