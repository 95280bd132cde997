"""Fragment-batched gradient-descent identification and the two-stage schedule."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergenceError, TooShortError
from .gradients import evaluate
from .model import PAYLOAD_LINKS, ModelParams, ParamLayout, RobotModel
from .objective import LossSpec
from .trajectory import Fragment, Trajectory

STAGES = ("stage1", "stage2", "one-stage", "cma-es")
CONVERGENCE_WINDOW = 50
CONVERGENCE_RTOL = 1e-8
MIN_MASS = 0.05  # kg, floor on every effective link mass during GD


# -- fragment sampling -------------------------------------------------------


@dataclass(frozen=True)
class FragmentSampler:
    """Deterministic, evenly spaced fragment windows over a set of trajectories.

    The batch is split across sources as evenly as possible (earlier
    sources take the remainder). Within a source that receives ``n``
    fragments, fragment ``k`` starts at ``k * floor(len / n)``, clipped so
    the window fits.
    """

    sources: Sequence[Trajectory]
    batch_size: int
    horizon: int

    def __post_init__(self):
        if not self.sources:
            raise ValueError("need at least one source trajectory")
        if self.batch_size < 1 or self.horizon < 1:
            raise ValueError("batch_size and horizon must be >= 1")
        for i, src in enumerate(self.sources):
            if len(src) <= self.horizon:
                raise TooShortError(f"source {i} has {len(src)} states; horizon {self.horizon} needs more")

    def starts(self) -> list[tuple[int, int]]:
        """``(source index, start index)`` of every fragment, in batch order."""
        S = len(self.sources)
        base, extra = divmod(self.batch_size, S)
        out = []
        for s, src in enumerate(self.sources):
            n = base + (s < extra)
            if n == 0:
                continue
            spacing = len(src) // n
            last = len(src) - 1 - self.horizon
            out += [(s, min(k * spacing, last)) for k in range(n)]
        return out

    def sample(self) -> list[Fragment]:
        return [self.sources[s].fragment(i, self.horizon) for s, i in self.starts()]


def sample_fragments(sampler: FragmentSampler) -> list[Fragment]:
    return sampler.sample()


# -- reports -----------------------------------------------------------------


@dataclass
class IdentificationReport:
    history: list[dict]  # {"iteration", "loss"[, "theta"]}
    final_params: ModelParams
    stage_label: str
    wall_time: float = 0.0
    converged: bool = False
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def losses(self) -> np.ndarray:
        return np.array([h["loss"] for h in self.history])

    @property
    def initial_loss(self) -> float:
        return float(self.history[0]["loss"])

    @property
    def final_loss(self) -> float:
        return float(self.history[-1]["loss"])

    def snapshots(self) -> list[tuple[int, np.ndarray]]:
        return [(h["iteration"], np.asarray(h["theta"])) for h in self.history if "theta" in h]

    def to_dict(self, *, include_wall_time: bool = True) -> dict:
        out = {
            "stage": self.stage_label,
            "layout": {"links": list(self.final_params.layout.links), "joints": list(self.final_params.layout.joints)},
            "parameter_names": list(self.final_params.layout.names),
            "final_params": self.final_params.as_dict(),
            "converged": self.converged,
            "seed": self.seed,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "history": [
                {k: (list(map(float, v)) if k == "theta" else v) for k, v in h.items()} for h in self.history
            ],
            "extra": self.extra,
        }
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, *, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time=include_wall_time), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "IdentificationReport":
        layout = ParamLayout(tuple(d["layout"]["links"]), tuple(d["layout"]["joints"]))
        return cls(
            history=[dict(h) for h in d["history"]],
            final_params=ModelParams.from_dict(layout, d["final_params"]),
            stage_label=d["stage"],
            wall_time=float(d.get("wall_time", 0.0)),
            converged=bool(d["converged"]),
            seed=d.get("seed"),
            extra=dict(d.get("extra", {})),
        )

    def to_csv(self) -> str:
        """One row per snapshot: iteration, loss, then every flat parameter."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", *self.final_params.layout.names])
        for h in self.history:
            if "theta" in h:
                w.writerow([h["iteration"], repr(float(h["loss"])), *(repr(float(v)) for v in h["theta"])])
        return buf.getvalue()


def has_converged(losses, window: int = CONVERGENCE_WINDOW, rtol: float = CONVERGENCE_RTOL) -> bool:
    """Relative loss change over the last ``window`` iterations below ``rtol``."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        return False
    if losses[-1] == 0.0:
        return True
    if losses.size <= window:
        return False
    before = losses[-1 - window]
    return abs(losses[-1] - before) <= rtol * abs(before)


# -- gradient descent ----------------------------------------------------------

DEFAULT_RATES = {"mass": 0.03, "com": 0.0002, "damping": 0.01, "friction": 0.01}


@dataclass(frozen=True)
class GDConfig:
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    iterations: int = 2000
    active_mask: np.ndarray | None = None  # None: every coordinate
    clip_norm: float | None = None
    snapshot_every: int = 10

    def __post_init__(self):
        rates = {**DEFAULT_RATES, **self.learning_rates}
        if set(rates) != set(DEFAULT_RATES):
            raise ValueError(f"unknown parameter classes: {sorted(set(rates) - set(DEFAULT_RATES))}")
        if any(r <= 0 for r in rates.values()):
            raise ValueError("learning rates must be positive")
        object.__setattr__(self, "learning_rates", rates)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.active_mask is not None:
            mask = np.asarray(self.active_mask, dtype=bool)
            if not mask.any():
                raise ValueError("active_mask selects no parameters")
            object.__setattr__(self, "active_mask", mask)

    def rates_for(self, layout: ParamLayout) -> np.ndarray:
        return np.array([self.learning_rates[c] for c in layout.class_of()])

    def mask_for(self, layout: ParamLayout) -> np.ndarray:
        if self.active_mask is None:
            return np.ones(layout.dim, dtype=bool)
        if self.active_mask.shape != (layout.dim,):
            raise ValueError(f"active_mask has {self.active_mask.size} entries, layout has {layout.dim}")
        return self.active_mask

    def with_mask(self, mask) -> "GDConfig":
        return GDConfig(dict(self.learning_rates), self.iterations, mask, self.clip_norm, self.snapshot_every)

    @classmethod
    def from_dict(cls, d: dict) -> "GDConfig":
        d = dict(d)
        d.pop("active_mask", None)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "learning_rates": dict(self.learning_rates),
            "iterations": self.iterations,
            "clip_norm": self.clip_norm,
            "snapshot_every": self.snapshot_every,
        }


def mass_floor(model: RobotModel, layout: ParamLayout) -> np.ndarray:
    """Lowest allowed mass delta per flat coordinate (-inf for non-mass entries)."""
    floor = np.full(layout.dim, -np.inf)
    for c, name in enumerate(layout.links):
        floor[c] = MIN_MASS - model.links[model.link_index(name)].nominal_mass
    return floor


def gd_identify(
    model: RobotModel,
    init_params: ModelParams,
    sampler: FragmentSampler | Sequence[Fragment],
    loss_spec: LossSpec,
    config: GDConfig = GDConfig(),
    *,
    stage_label: str = "one-stage",
    seed: int | None = None,
) -> IdentificationReport:
    """Plain gradient descent with per-class learning rates.

    ``theta <- theta - eta * grad`` on the active coordinates only. Mass
    deltas are clamped so every effective mass stays above ``MIN_MASS``
    (the step is discarded for a clamped coordinate). If the
    active gradient is exactly zero the remaining iterations would be
    no-ops, so the loop stops early. ``seed`` is recorded but unused:
    the procedure is deterministic.
    """
    if stage_label not in STAGES:
        raise ValueError(f"stage_label must be one of {STAGES}")
    started = time.perf_counter()
    layout = init_params.layout
    fragments = sampler.sample() if isinstance(sampler, FragmentSampler) else list(sampler)
    active = config.mask_for(layout)
    eta = config.rates_for(layout)
    floor = mass_floor(model, layout)
    theta = init_params.flatten()
    history: list[dict] = []

    def record(it: int, loss: float, snapshot: bool):
        entry = {"iteration": it, "loss": float(loss)}
        if snapshot:
            entry["theta"] = theta.copy()
        history.append(entry)

    it = 0
    try:
        for it in range(config.iterations):
            res = evaluate(model, ModelParams.unflatten(layout, theta), fragments, loss_spec, active=active)
            record(it, res.loss_value, it % config.snapshot_every == 0)
            g = np.where(active, res.gradient, 0.0)
            if not g.any():
                break
            if config.clip_norm is not None:
                norm = float(np.linalg.norm(g))
                if norm > config.clip_norm:
                    g = g * (config.clip_norm / norm)
            # a mass delta that would cross the floor is pinned to it instead
            theta = np.where(active, np.maximum(theta - eta * g, floor), theta)
        else:
            it = config.iterations
        final = evaluate(model, ModelParams.unflatten(layout, theta), fragments, loss_spec, with_grad=False)
    except DivergenceError as exc:
        exc.iteration = it
        raise
    if history and history[-1]["iteration"] == it:
        history.pop()
    record(it, final.loss_value, True)
    losses = [h["loss"] for h in history]
    stationary = it < config.iterations
    return IdentificationReport(
        history=history,
        final_params=ModelParams.unflatten(layout, theta),
        stage_label=stage_label,
        wall_time=time.perf_counter() - started,
        converged=stationary or has_converged(losses),
        seed=seed,
        extra={"iterations_run": it, "batch_size": len(fragments)},
    )


def payload_mask(layout: ParamLayout) -> np.ndarray:
    """Mass and CoM deltas of the payload-carrying links."""
    return layout.mask(links=[l for l in PAYLOAD_LINKS if l in layout.links], classes=("mass", "com"))


def two_stage_identify(
    model: RobotModel,
    unloaded_sources: Sequence[Trajectory],
    loaded_sources: Sequence[Trajectory],
    loss_spec: LossSpec,
    stage1_config: GDConfig = GDConfig(),
    stage2_config: GDConfig | None = None,
    *,
    batch_size: int,
    horizon: int,
    layout: ParamLayout | None = None,
    init_params: ModelParams | None = None,
    seed: int | None = None,
) -> tuple[IdentificationReport, IdentificationReport]:
    """Stage 1 fits every parameter on unloaded data; stage 2 fits the payload on loaded data."""
    if not unloaded_sources or not loaded_sources:
        raise ValueError("both unloaded and loaded sources are required")
    layout = layout or ParamLayout.default(model)
    init = init_params or ModelParams.nominal(layout)
    stage2_config = stage2_config or stage1_config
    s1 = gd_identify(
        model, init, FragmentSampler(unloaded_sources, batch_size, horizon), loss_spec,
        stage1_config.with_mask(stage1_config.mask_for(layout)), stage_label="stage1", seed=seed,
    )
    s2 = gd_identify(
        model, s1.final_params, FragmentSampler(loaded_sources, batch_size, horizon), loss_spec,
        stage2_config.with_mask(payload_mask(layout)), stage_label="stage2", seed=seed,
    )
    return s1, s2


def one_stage_identify(
    model: RobotModel,
    loaded_sources: Sequence[Trajectory],
    loss_spec: LossSpec,
    config: GDConfig = GDConfig(),
    *,
    batch_size: int,
    horizon: int,
    layout: ParamLayout | None = None,
    seed: int | None = None,
) -> IdentificationReport:
    """Ablation baseline: every parameter at once, from nominal, on loaded data only."""
    layout = layout or ParamLayout.default(model)
    return gd_identify(
        model, ModelParams.nominal(layout), FragmentSampler(loaded_sources, batch_size, horizon), loss_spec,
        config.with_mask(config.mask_for(layout)), stage_label="one-stage", seed=seed,
    )
