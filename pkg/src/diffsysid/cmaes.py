"""(mu/mu_w, lambda)-CMA-ES baseline over the same loss as gradient descent."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, NonPhysicalError
from .gradients import loss_value
from .identify import FragmentSampler, IdentificationReport, payload_mask
from .model import ModelParams, RobotModel
from .objective import LossSpec

REJECTED_LOSS = 1e12
DEFAULT_SIGMA = {"mass": 1.0, "com": 0.02, "damping": 0.1, "friction": 0.1}


@dataclass(frozen=True)
class CmaConfig:
    population_size: int = 10
    iterations: int = 2000
    initial_sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    seed: int = 0
    active_mask: np.ndarray | None = None  # None: payload mass and CoM
    tolfun: float = 1e-12  # stop when recent best losses span less than this
    tolx: float = 1e-10  # stop when every search std (in sigma units) is below this
    snapshot_every: int = 10

    def __post_init__(self):
        sig = {**DEFAULT_SIGMA, **self.initial_sigma}
        if set(sig) != set(DEFAULT_SIGMA):
            raise ValueError(f"unknown parameter classes: {sorted(set(sig) - set(DEFAULT_SIGMA))}")
        if any(s <= 0 for s in sig.values()):
            raise ValueError("initial_sigma entries must be positive")
        object.__setattr__(self, "initial_sigma", sig)
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.active_mask is not None:
            object.__setattr__(self, "active_mask", np.asarray(self.active_mask, dtype=bool))

    def with_seed(self, seed: int) -> "CmaConfig":
        return CmaConfig(
            self.population_size, self.iterations, dict(self.initial_sigma), seed,
            self.active_mask, self.tolfun, self.tolx, self.snapshot_every,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "CmaConfig":
        d = dict(d)
        d.pop("active_mask", None)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "iterations": self.iterations,
            "initial_sigma": dict(self.initial_sigma),
            "seed": self.seed,
            "tolfun": self.tolfun,
            "tolx": self.tolx,
            "snapshot_every": self.snapshot_every,
        }


@dataclass
class CmaResult:
    x: np.ndarray  # best point found
    f: float
    iterations: int
    evaluations: int
    initial_f: float  # loss at x0
    best_history: list[float]  # best-so-far loss after each generation
    best_x_history: list[np.ndarray]  # best-so-far point after each generation
    mean_history: list[np.ndarray]  # distribution mean after each generation
    stop_reason: str


def cma_minimize(
    f: Callable[[np.ndarray], float],
    x0,
    sigma,
    *,
    population_size: int = 10,
    iterations: int = 2000,
    seed: int = 0,
    tolfun: float = 1e-12,
    tolx: float = 1e-10,
) -> CmaResult:
    """Minimize ``f`` from ``x0`` with per-coordinate initial std ``sigma``.

    Search runs in coordinates scaled by ``sigma``, so the internal step
    size starts at 1. Weights, learning rates and damping follow the
    usual defaults (log-rank weights on the best half, cumulative step
    size adaptation, rank-one plus rank-mu covariance update).
    """
    x0 = np.asarray(x0, dtype=float)
    scale = np.broadcast_to(np.asarray(sigma, dtype=float), x0.shape).copy()
    n = x0.size
    lam = population_size
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)

    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    rng = np.random.default_rng(seed)
    mean = np.zeros(n)
    step = 1.0
    C = np.eye(n)
    B = np.eye(n)
    D = np.ones(n)
    pc = np.zeros(n)
    ps = np.zeros(n)
    eigen_at = 0
    evals = 0

    best_x = x0.copy()
    best_f = initial_f = float(f(x0))
    evals += 1
    best_history: list[float] = []
    best_x_history: list[np.ndarray] = []
    mean_history: list[np.ndarray] = []
    recent: list[float] = []
    window = 10 + int(math.ceil(30 * n / lam))
    stop = "iterations"
    g = 0
    for g in range(1, iterations + 1):
        z = rng.standard_normal((lam, n))
        y = (z * D) @ B.T
        cand = mean + step * y
        fit = np.array([float(f(x0 + scale * c)) for c in cand])
        evals += lam
        order = np.argsort(fit, kind="stable")
        if fit[order[0]] < best_f:
            best_f = float(fit[order[0]])
            best_x = x0 + scale * cand[order[0]]

        y_sel = y[order[:mu]]
        y_w = w @ y_sel
        mean = mean + step * y_w

        c_inv_sqrt = B @ np.diag(1 / D) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (c_inv_sqrt @ y_w)
        hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * g)) / chi_n < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        rank_mu = (y_sel * w[:, None]).T @ y_sel
        C = (1 - c1 - cmu) * C + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C) + cmu * rank_mu
        step *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))

        if evals - eigen_at > lam / (c1 + cmu) / n / 10:
            eigen_at = evals
            C = np.triu(C) + np.triu(C, 1).T
            ev, B = np.linalg.eigh(C)
            D = np.sqrt(np.maximum(ev, 1e-300))

        best_history.append(best_f)
        best_x_history.append(best_x)
        mean_history.append(x0 + scale * mean)
        recent.append(float(fit[order[0]]))
        if len(recent) >= window and max(recent[-window:]) - min(recent[-window:]) < tolfun:
            stop = "tolfun"
            break
        if step * math.sqrt(float(np.max(np.diag(C)))) < tolx:
            stop = "tolx"
            break
        if not np.isfinite(step) or step > 1e12:
            stop = "diverged"
            break
    return CmaResult(best_x, best_f, g, evals, initial_f, best_history, best_x_history, mean_history, stop)


def cma_identify(
    model: RobotModel,
    init_params: ModelParams,
    sampler,
    loss_spec: LossSpec,
    config: CmaConfig = CmaConfig(),
) -> IdentificationReport:
    """CMA-ES over the active coordinates using plain rollouts of the total loss.

    Candidates whose rollout diverges or whose masses go non-physical
    score ``REJECTED_LOSS``. The report's history is the best-so-far loss
    per generation; snapshots hold the best-so-far parameters.
    """
    started = time.perf_counter()
    layout = init_params.layout
    fragments = sampler.sample() if isinstance(sampler, FragmentSampler) else list(sampler)
    active = payload_mask(layout) if config.active_mask is None else config.active_mask
    if active.shape != (layout.dim,) or not active.any():
        raise ValueError("active_mask must select at least one coordinate of the layout")
    base = init_params.flatten()
    sigma = np.array([config.initial_sigma[c] for c in layout.class_of()])[active]

    def full(x):
        theta = base.copy()
        theta[active] = x
        return theta

    def objective(x):
        try:
            return loss_value(model, ModelParams.unflatten(layout, full(x)), fragments, loss_spec)
        except (DivergenceError, NonPhysicalError):
            return REJECTED_LOSS

    res = cma_minimize(
        objective, base[active], sigma,
        population_size=config.population_size, iterations=config.iterations, seed=config.seed,
        tolfun=config.tolfun, tolx=config.tolx,
    )
    history = [{"iteration": 0, "loss": res.initial_f, "theta": base.copy()}]
    for g, (f_best, x_best) in enumerate(zip(res.best_history, res.best_x_history), start=1):
        entry = {"iteration": g, "loss": f_best}
        if g % config.snapshot_every == 0 or g == res.iterations:
            entry["theta"] = full(x_best)
        history.append(entry)
    final = ModelParams.unflatten(layout, full(res.x))
    return IdentificationReport(
        history=history,
        final_params=final,
        stage_label="cma-es",
        wall_time=time.perf_counter() - started,
        converged=res.stop_reason in ("tolfun", "tolx"),
        seed=config.seed,
        extra={"iterations_run": res.iterations, "evaluations": res.evaluations, "stop_reason": res.stop_reason},
    )
