"""Trajectory-matching loss: body-position tracking plus parameter regularizers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dual import Dual
from .errors import ShapeError


@dataclass(frozen=True)
class LossSpec:
    alpha_upper: float = 1.0
    lambda_com: float = 10.0
    lambda_mass: float = 0.01
    lambda_damp: float = 0.1
    lambda_fric: float = 0.1
    box_low: float = 0.8
    box_high: float = 1.2
    regularization_enabled: bool = True

    def __post_init__(self):
        weights = (self.alpha_upper, self.lambda_com, self.lambda_mass, self.lambda_damp, self.lambda_fric)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be non-negative")
        if not self.box_low < self.box_high:
            raise ValueError("box_low must be below box_high")

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    track_all: float
    track_upper: float
    reg_com: float
    reg_mass: float
    reg_damp: float
    reg_fric: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def tracking_loss(sim_bodies, ref_bodies, upper_set, alpha_upper=None, batch_size=None, horizon=None):
    """Batch-averaged squared CoM errors, over all bodies and over the upper-body subset.

    ``sim_bodies`` and ``ref_bodies`` have shape ``(B, N, n_bodies, 2)``
    and cover steps 1..N. ``upper_set`` is a boolean mask or index list
    over bodies. ``alpha_upper`` is accepted for signature symmetry; the
    weighting happens in :func:`total_loss`.
    """
    sim = np.asarray(sim_bodies, dtype=float)
    ref = np.asarray(ref_bodies, dtype=float)
    if sim.shape != ref.shape or sim.ndim != 4 or sim.shape[-1] != 2:
        raise ShapeError(f"sim {sim.shape} and ref {ref.shape} must both be (B, N, bodies, 2)")
    B, N = sim.shape[:2]
    if batch_size is not None and batch_size != B or horizon is not None and horizon != N:
        raise ShapeError("batch_size/horizon disagree with the tensors")
    upper = np.zeros(sim.shape[2], dtype=bool)
    upper[np.asarray(upper_set)] = True
    sq = np.sum((sim - ref) ** 2, axis=-1)  # (B, N, bodies)
    if B == 0:
        return 0.0, 0.0
    track_all = float(np.sum(sq) / B)
    track_upper = float(np.sum(sq[:, :, upper]) / B)
    return track_all, track_upper


def box_penalty(alpha, low=0.8, high=1.2):
    """Zero inside ``[low, high]``, quadratic outside; elementwise, Dual-aware."""
    if not low < high:
        raise ValueError("low must be below high")
    if isinstance(alpha, Dual):
        below = (alpha.value < low).astype(float)
        above = (alpha.value > high).astype(float)
        lo = (low - alpha) * below
        hi = (alpha - high) * above
        return lo * lo + hi * hi
    a = np.asarray(alpha, dtype=float)
    out = np.maximum(0.0, low - a) ** 2 + np.maximum(0.0, a - high) ** 2
    return float(out) if out.ndim == 0 else out


def _total(x):
    if isinstance(x, Dual):
        return x.sum() if x.ndim else x
    return float(np.sum(x))


def regularization(params, model=None, spec: LossSpec | None = None):
    """``(reg_com, reg_mass, reg_damp, reg_fric)`` for a parameter set.

    Deltas are exactly the stored offsets, so the nominal values cancel.
    """
    spec = spec or LossSpec()
    com = params.com_delta
    mass = params.mass_delta
    reg_com = _total(com * com)
    reg_mass = _total(mass * mass)
    reg_damp = _total(box_penalty(params.damping_scale, spec.box_low, spec.box_high))
    reg_fric = _total(box_penalty(params.friction_scale, spec.box_low, spec.box_high))
    return reg_com, reg_mass, reg_damp, reg_fric


def combine(track_all, track_upper, regs, spec: LossSpec):
    """Weighted total; works on floats or Duals."""
    total = track_all + spec.alpha_upper * track_upper
    if spec.regularization_enabled:
        lams = (spec.lambda_com, spec.lambda_mass, spec.lambda_damp, spec.lambda_fric)
        for lam, r in zip(lams, regs):
            total = total + lam * r
    return total


def total_loss(track_all, track_upper, regs, spec: LossSpec) -> LossBreakdown:
    """Assemble a :class:`LossBreakdown`; disabled regularization reports zeros."""
    regs = tuple(float(getattr(r, "value", r)) for r in regs)
    if not spec.regularization_enabled:
        regs = (0.0, 0.0, 0.0, 0.0)
    track_all = float(track_all)
    track_upper = float(track_upper)
    total = float(combine(track_all, track_upper, regs, spec))
    return LossBreakdown(track_all, track_upper, *regs, total)
