"""Scenario configuration files (JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cmaes import CmaConfig
from .errors import ConfigError
from .identify import GDConfig
from .model import ParamLayout, RobotModel, load_model
from .objective import LossSpec
from .trajectory import PRESETS, NoiseSpec, PerturbationSetting, full_layout

PROFILES = ("multi-sine", "hold-and-lean", "squat-wave")


@dataclass(frozen=True)
class Excitation:
    profile: str = "multi-sine"
    duration: float = 10.0
    unloaded_variants: tuple[int, ...] = (0, 1, 2)
    loaded_variants: tuple[int, ...] = (3, 4, 5)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"excitation.profile must be one of {PROFILES}, got {self.profile!r}")
        if self.duration <= 0:
            raise ConfigError("excitation.duration must be positive")


@dataclass(frozen=True)
class StanceSpec:
    """Contact windows (seconds) for the free foot, and the pose the motion is centred on."""

    windows: tuple[tuple[float, float], ...] = ()
    pose: tuple[float, ...] | None = None

    def schedule(self, n_states: int, dt: float) -> np.ndarray:
        t = np.arange(n_states) * dt
        out = np.zeros(n_states, dtype=bool)
        for lo, hi in self.windows:
            out |= (t >= lo) & (t <= hi)
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model_path: Path
    perturbation: PerturbationSetting
    noise: NoiseSpec = NoiseSpec()
    excitation: Excitation = Excitation()
    stance: StanceSpec = StanceSpec()
    batch_size: int = 3
    horizon: int = 150
    layout_links: tuple[str, ...] | None = None  # None: payload links; "all": every movable link
    loss: LossSpec = LossSpec()
    gd: GDConfig = GDConfig()
    gd_stage2: GDConfig | None = None
    cma: CmaConfig = CmaConfig()
    seed: int = 0
    output_dir: Path | None = None
    source: Path | None = field(default=None, compare=False)

    def model(self) -> RobotModel:
        if not self.model_path.is_file():
            raise ConfigError(f"model file not found: {self.model_path}")
        return load_model(self.model_path)

    def layout(self, model: RobotModel) -> ParamLayout:
        if self.layout_links is None:
            return ParamLayout.default(model)
        if self.layout_links == ("all",):
            return full_layout(model)
        layout = ParamLayout(tuple(self.layout_links), tuple(j.name for j in model.joints))
        try:
            layout.check(model)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"layout: {exc}") from exc
        return layout

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace

        return replace(self, seed=seed, noise=NoiseSpec(self.noise.encoder_std, self.noise.encoder_bias_range, seed),
                       cma=self.cma.with_seed(seed))


def _section(d: dict, key: str, cls, path):
    try:
        return cls.from_dict(d[key]) if key in d else cls()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid {key!r} section: {exc}") from exc


def parse_config(document: dict, *, base_dir: Path = Path("."), source: Path | None = None) -> ScenarioConfig:
    where = source or "<config>"
    known = {
        "name", "model_path", "perturbation", "noise", "excitation", "stance", "sampler", "layout_links",
        "loss", "gd", "gd_stage2", "cma", "seed", "output_dir",
    }
    unknown = set(document) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    model_path = Path(document.get("model_path", "../models/planar_humanoid.json"))
    if not model_path.is_absolute():
        model_path = (base_dir / model_path).resolve()
    if not model_path.is_file():
        raise ConfigError(f"{where}: model file not found: {model_path}")

    pert = document.get("perturbation", "setting1")
    if isinstance(pert, str):
        if pert not in PRESETS:
            raise ConfigError(f"{where}: unknown perturbation preset {pert!r} (known: {sorted(PRESETS)})")
        perturbation = PRESETS[pert]
    else:
        try:
            perturbation = PerturbationSetting.from_dict(pert)
        except TypeError as exc:
            raise ConfigError(f"{where}: invalid perturbation: {exc}") from exc

    seed = int(document.get("seed", 0))
    try:
        noise = NoiseSpec(**{"seed": seed, **document.get("noise", {})})
        exc_doc = dict(document.get("excitation", {}))
        for key in ("unloaded_variants", "loaded_variants"):
            if key in exc_doc:
                exc_doc[key] = tuple(int(v) for v in exc_doc[key])
        excitation = Excitation(**exc_doc)
        st = document.get("stance", {})
        stance = StanceSpec(
            tuple((float(a), float(b)) for a, b in st.get("windows", [])),
            None if st.get("pose") is None else tuple(float(v) for v in st["pose"]),
        )
        sampler = document.get("sampler", {})
        batch_size = int(sampler.get("batch_size", 3))
        horizon = int(sampler.get("horizon", 150))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if batch_size < 1 or horizon < 1:
        raise ConfigError(f"{where}: sampler batch_size and horizon must be >= 1")

    layout_links = document.get("layout_links")
    if isinstance(layout_links, str):
        layout_links = (layout_links,)
    elif layout_links is not None:
        layout_links = tuple(layout_links)

    cma_doc = dict(document.get("cma", {}))
    cma_doc.setdefault("seed", seed)
    try:
        cma = CmaConfig.from_dict(cma_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: invalid 'cma' section: {exc}") from exc

    out = document.get("output_dir")
    return ScenarioConfig(
        name=str(document.get("name", source.stem if source else "scenario")),
        model_path=model_path,
        perturbation=perturbation,
        noise=noise,
        excitation=excitation,
        stance=stance,
        batch_size=batch_size,
        horizon=horizon,
        layout_links=layout_links,
        loss=_section(document, "loss", LossSpec, where),
        gd=_section(document, "gd", GDConfig, where),
        gd_stage2=_section(document, "gd_stage2", GDConfig, where) if "gd_stage2" in document else None,
        cma=cma,
        seed=seed,
        output_dir=None if out is None else Path(out),
        source=source,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(document, base_dir=path.resolve().parent, source=path)
