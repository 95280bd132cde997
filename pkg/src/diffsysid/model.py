"""Planar kinematic tree, identifiable parameter vector and forward kinematics.

Conventions: the world frame is (x forward, z up), angles are
counter-clockwise positive and a link's child-joint anchor sits at
``(0, length)`` in the link frame. The root link is welded to the world
at the origin with zero orientation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, NonPhysicalError, ParseError, TopologyError

TAGS = ("fixed-foot", "lower-body", "upper-body", "free-foot")
PAYLOAD_LINKS = ("torso", "left_hand", "right_hand")

DEFAULT_MODEL_PATH = Path(__file__).resolve().parents[2] / "models" / "planar_humanoid.json"


@dataclass(frozen=True)
class LinkSpec:
    name: str
    parent: int | None
    joint_anchor: tuple[float, float]
    length: float
    nominal_mass: float
    nominal_com: tuple[float, float]
    nominal_inertia: float
    tag: str


@dataclass(frozen=True)
class JointSpec:
    name: str
    child_link: int
    nominal_damping: float
    nominal_friction: float
    kp: float
    kd: float
    torque_limit: float
    angle_limits: tuple[float, float]
    home: float = 0.0


@dataclass(frozen=True)
class State:
    """Joint angles and velocities of the welded-root tree."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        qdot = np.array(self.qdot, dtype=float)
        if q.shape != qdot.shape or q.ndim != 1:
            raise DimensionError(f"q {q.shape} and qdot {qdot.shape} must be equal 1-d shapes")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("state entries must be finite")
        q.flags.writeable = False
        qdot.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)


@dataclass(frozen=True)
class RobotModel:
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    gravity: tuple[float, float] = (0.0, -9.81)
    dt_sim: float = 0.002
    substeps: int = 10
    friction_velocity: float = 0.05
    limit_stiffness: float = 500.0

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def control_dt(self) -> float:
        return self.dt_sim * self.substeps

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise KeyError(f"no link named {name!r}")

    def joint_index(self, name: str) -> int:
        for k, joint in enumerate(self.joints):
            if joint.name == name:
                return k
        raise KeyError(f"no joint named {name!r}")

    # Flat arrays consumed by the kernels. All are read-only.

    @cached_property
    def parent(self) -> np.ndarray:
        return _frozen([-1 if l.parent is None else l.parent for l in self.links], np.int64)

    @cached_property
    def link_of_joint(self) -> np.ndarray:
        return _frozen([j.child_link for j in self.joints], np.int64)

    @cached_property
    def joint_of_link(self) -> np.ndarray:
        out = np.full(self.n_links, -1, dtype=np.int64)
        out[self.link_of_joint] = np.arange(self.n_joints)
        out.flags.writeable = False
        return out

    @cached_property
    def anchors(self) -> np.ndarray:
        return _frozen([l.joint_anchor for l in self.links])

    @cached_property
    def lengths(self) -> np.ndarray:
        return _frozen([l.length for l in self.links])

    @cached_property
    def upper_mask(self) -> np.ndarray:
        return _frozen([l.tag == "upper-body" for l in self.links], bool)

    @cached_property
    def ancestor(self) -> np.ndarray:
        """``ancestor[i, l]`` is true when link ``l`` is link ``i`` or one of its ancestors."""
        a = np.zeros((self.n_links, self.n_links), dtype=bool)
        for i in range(self.n_links):
            l = i
            while l >= 0:
                a[i, l] = True
                l = self.parent[l]
        a.flags.writeable = False
        return a

    @cached_property
    def joint_pairs(self) -> np.ndarray:
        """Rows ``(j, k, deeper_link)`` for joints sharing a root-to-leaf path."""
        rows = []
        for j in range(self.n_joints):
            lj = self.link_of_joint[j]
            for k in range(j, self.n_joints):
                lk = self.link_of_joint[k]
                if self.ancestor[lk, lj]:
                    rows.append((j, k, lk))
                elif self.ancestor[lj, lk]:
                    rows.append((j, k, lj))
        return _frozen(rows, np.int64).reshape(-1, 3)

    @cached_property
    def kp(self) -> np.ndarray:
        return _frozen([j.kp for j in self.joints])

    @cached_property
    def kd(self) -> np.ndarray:
        return _frozen([j.kd for j in self.joints])

    @cached_property
    def torque_limit(self) -> np.ndarray:
        return _frozen([j.torque_limit for j in self.joints])

    @cached_property
    def angle_limits(self) -> np.ndarray:
        return _frozen([j.angle_limits for j in self.joints])

    @cached_property
    def home(self) -> np.ndarray:
        return _frozen([j.home for j in self.joints])

    def chain_to(self, link: int) -> list[int]:
        """Joint indices on the path from the root to ``link``, root first."""
        out = []
        l = link
        while self.parent[l] >= 0:
            out.append(int(self.joint_of_link[l]))
            l = self.parent[l]
        return out[::-1]

    @cached_property
    def free_foot(self) -> int:
        for i, l in enumerate(self.links):
            if l.tag == "free-foot":
                return i
        raise TopologyError("model has no free-foot link")


def _frozen(values, dtype=float) -> np.ndarray:
    a = np.array(values, dtype=dtype)
    a.flags.writeable = False
    return a


# -- document parsing -------------------------------------------------------


def _resolve_link(ref, names: list[str], what: str) -> int | None:
    if ref is None:
        return None
    if isinstance(ref, bool):
        raise ParseError(f"{what}: invalid link reference {ref!r}")
    if isinstance(ref, int):
        if not 0 <= ref < len(names):
            raise TopologyError(f"{what}: link index {ref} out of range")
        return ref
    if isinstance(ref, str):
        if ref not in names:
            raise TopologyError(f"{what}: unknown link {ref!r}")
        return names.index(ref)
    raise ParseError(f"{what}: invalid link reference {ref!r}")


def _vec2(value, what: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what}: expected a 2-vector, got {value!r}") from exc
    return (x, y)


def build_model(document: dict | str) -> RobotModel:
    """Validate a model description and return an immutable :class:`RobotModel`.

    ``document`` is a parsed JSON tree or a JSON string.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"model document is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ParseError("model document must be a JSON object")
    for key in ("links", "joints"):
        if not isinstance(document.get(key), list):
            raise ParseError(f"model document needs a list under {key!r}")

    raw_links = document["links"]
    try:
        names = [str(l["name"]) for l in raw_links]
    except (KeyError, TypeError) as exc:
        raise ParseError("every link needs a name") from exc
    if len(set(names)) != len(names):
        raise TopologyError("duplicate link names")

    links = []
    for i, raw in enumerate(raw_links):
        try:
            link = LinkSpec(
                name=names[i],
                parent=_resolve_link(raw.get("parent"), names, names[i]),
                joint_anchor=_vec2(raw.get("joint_anchor", (0.0, 0.0)), f"{names[i]}.joint_anchor"),
                length=float(raw["length"]),
                nominal_mass=float(raw["nominal_mass"]),
                nominal_com=_vec2(raw["nominal_com"], f"{names[i]}.nominal_com"),
                nominal_inertia=float(raw["nominal_inertia"]),
                tag=str(raw["tag"]),
            )
        except KeyError as exc:
            raise ParseError(f"link {names[i]!r} is missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ParseError(f"link {names[i]!r}: {exc}") from exc
        if link.tag not in TAGS:
            raise ParseError(f"link {link.name!r}: unknown tag {link.tag!r}")
        if not link.nominal_mass > 0:
            raise ValueError(f"link {link.name!r}: nominal_mass must be positive")
        if not link.nominal_inertia > 0:
            raise ValueError(f"link {link.name!r}: nominal_inertia must be positive")
        if not link.length >= 0:
            raise ValueError(f"link {link.name!r}: length must be non-negative")
        links.append(link)

    roots = [i for i, l in enumerate(links) if l.parent is None]
    feet = [i for i, l in enumerate(links) if l.tag == "fixed-foot"]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root link, found {len(roots)}")
    if len(feet) != 1:
        raise TopologyError(f"expected exactly one fixed-foot link, found {len(feet)}")
    if roots[0] != feet[0] or roots[0] != 0:
        raise TopologyError("the fixed-foot link must be the root and come first")
    for i, l in enumerate(links):
        if l.parent is not None and l.parent >= i:
            raise TopologyError(f"link {l.name!r} precedes its parent (non-topological order or cycle)")
    if not any(l.tag == "upper-body" for l in links):
        raise TopologyError("the upper-body link set must be non-empty")

    joints = []
    children = []
    for raw in document["joints"]:
        try:
            name = str(raw["name"])
            child = _resolve_link(raw["child_link"], names, name)
            lo, hi = _vec2(raw["angle_limits"], f"{name}.angle_limits")
            joint = JointSpec(
                name=name,
                child_link=child,
                nominal_damping=float(raw["nominal_damping"]),
                nominal_friction=float(raw["nominal_friction"]),
                kp=float(raw["kp"]),
                kd=float(raw["kd"]),
                torque_limit=float(raw["torque_limit"]),
                angle_limits=(lo, hi),
                home=float(raw.get("home", 0.0)),
            )
        except KeyError as exc:
            raise ParseError(f"joint entry is missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ParseError(f"joint entry: {exc}") from exc
        if not (joint.kp > 0 and joint.kd >= 0 and joint.torque_limit > 0):
            raise ValueError(f"joint {joint.name!r}: need kp > 0, kd >= 0, torque_limit > 0")
        if not (joint.nominal_damping >= 0 and joint.nominal_friction >= 0):
            raise ValueError(f"joint {joint.name!r}: damping and friction must be non-negative")
        if not lo < hi:
            raise ValueError(f"joint {joint.name!r}: angle_limits must satisfy low < high")
        joints.append(joint)
        children.append(child)

    if sorted(children) != list(range(1, len(links))):
        raise TopologyError("every non-root link needs exactly one joint, the root none")

    gravity = _vec2(document.get("gravity", (0.0, -9.81)), "gravity")
    dt_sim = float(document.get("dt_sim", 0.002))
    substeps = document.get("substeps", 10)
    if not dt_sim > 0:
        raise ValueError("dt_sim must be positive")
    if not isinstance(substeps, int) or substeps < 1:
        raise ValueError("substeps must be an integer >= 1")
    return RobotModel(
        links=tuple(links),
        joints=tuple(joints),
        gravity=gravity,
        dt_sim=dt_sim,
        substeps=substeps,
        friction_velocity=float(document.get("friction_velocity", 0.05)),
        limit_stiffness=float(document.get("limit_stiffness", 500.0)),
    )


def load_model(path: str | Path) -> RobotModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from exc
    return build_model(text)


def default_model() -> RobotModel:
    return load_model(DEFAULT_MODEL_PATH)


# -- identifiable parameters ------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Which links and joints carry identifiable parameters, and their flat order.

    Flat order: link mass deltas, then CoM deltas (x, z per link), then
    damping scales, then friction scales.
    """

    links: tuple[str, ...]
    joints: tuple[str, ...]

    @classmethod
    def default(cls, model: RobotModel) -> "ParamLayout":
        return cls(PAYLOAD_LINKS, tuple(j.name for j in model.joints))

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def dim(self) -> int:
        return 3 * self.n_links + 2 * self.n_joints

    @cached_property
    def names(self) -> tuple[str, ...]:
        out = [f"mass[{l}]" for l in self.links]
        for l in self.links:
            out += [f"com_x[{l}]", f"com_z[{l}]"]
        out += [f"damping[{j}]" for j in self.joints]
        out += [f"friction[{j}]" for j in self.joints]
        return tuple(out)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def slices(self) -> dict[str, slice]:
        nl, nj = self.n_links, self.n_joints
        return {
            "mass": slice(0, nl),
            "com": slice(nl, 3 * nl),
            "damping": slice(3 * nl, 3 * nl + nj),
            "friction": slice(3 * nl + nj, 3 * nl + 2 * nj),
        }

    def class_of(self) -> np.ndarray:
        """Parameter class label per flat index."""
        out = np.empty(self.dim, dtype=object)
        for cls, sl in self.slices().items():
            out[sl] = cls
        return out

    def mask(self, *, links: Iterable[str] | None = None, classes: Iterable[str] | None = None) -> np.ndarray:
        """Boolean active mask selecting parameter classes, optionally restricted to links."""
        classes = set(classes or ("mass", "com", "damping", "friction"))
        link_set = None if links is None else set(links)
        out = np.zeros(self.dim, dtype=bool)
        for i, name in enumerate(self.names):
            cls, _, owner = name.partition("[")
            owner = owner[:-1]
            cls = {"com_x": "com", "com_z": "com"}.get(cls, cls)
            if cls not in classes:
                continue
            if link_set is not None and cls in ("mass", "com") and owner not in link_set:
                continue
            if link_set is not None and cls in ("damping", "friction"):
                continue
            out[i] = True
        return out

    def check(self, model: RobotModel) -> None:
        for l in self.links:
            i = model.link_index(l)
            if model.links[i].tag == "fixed-foot":
                raise ValueError(f"the welded root link {l!r} cannot be identified")
        for j in self.joints:
            model.joint_index(j)


@dataclass(frozen=True)
class ModelParams:
    """Identifiable parameter values: mass/CoM deltas and damping/friction scales.

    Entries may be plain arrays or :class:`~diffsysid.dual.Dual` values.
    """

    layout: ParamLayout
    mass_delta: np.ndarray
    com_delta: np.ndarray
    damping_scale: np.ndarray
    friction_scale: np.ndarray

    @classmethod
    def nominal(cls, layout: ParamLayout) -> "ModelParams":
        return cls(
            layout,
            np.zeros(layout.n_links),
            np.zeros((layout.n_links, 2)),
            np.ones(layout.n_joints),
            np.ones(layout.n_joints),
        )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [
                np.asarray(self.mass_delta, dtype=float).ravel(),
                np.asarray(self.com_delta, dtype=float).ravel(),
                np.asarray(self.damping_scale, dtype=float).ravel(),
                np.asarray(self.friction_scale, dtype=float).ravel(),
            ]
        )

    @classmethod
    def unflatten(cls, layout: ParamLayout, flat) -> "ModelParams":
        """Inverse of :meth:`flatten`. ``flat`` may be an array or a 1-d Dual."""
        if len(flat) != layout.dim:
            raise DimensionError(f"expected {layout.dim} entries, got {len(flat)}")
        s = layout.slices()
        return cls(
            layout,
            flat[s["mass"]],
            flat[s["com"]].reshape((layout.n_links, 2)),
            flat[s["damping"]],
            flat[s["friction"]],
        )

    def replace_flat(self, flat) -> "ModelParams":
        return ModelParams.unflatten(self.layout, flat)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.layout.names, map(float, self.flatten())))

    @classmethod
    def from_dict(cls, layout: ParamLayout, values: dict[str, float]) -> "ModelParams":
        """Nominal parameters overridden by named entries (see :attr:`ParamLayout.names`)."""
        flat = ModelParams.nominal(layout).flatten()
        for name, v in values.items():
            flat[layout.index(name)] = float(v)
        return cls.unflatten(layout, flat)


@dataclass(frozen=True)
class EffectiveModel:
    """A :class:`RobotModel` with identified parameters folded in.

    ``mass``, ``com``, ``damping`` and ``friction`` are plain arrays, or
    Dual arrays when built from lifted parameters.
    """

    model: RobotModel
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    damping: np.ndarray
    friction: np.ndarray

    @classmethod
    def nominal(cls, model: RobotModel) -> "EffectiveModel":
        return cls(
            model,
            _frozen([l.nominal_mass for l in model.links]),
            _frozen([l.nominal_com for l in model.links]),
            _frozen([l.nominal_inertia for l in model.links]),
            _frozen([j.nominal_damping for j in model.joints]),
            _frozen([j.nominal_friction for j in model.joints]),
        )


def _selection(model: RobotModel, layout: ParamLayout) -> tuple[np.ndarray, np.ndarray]:
    link_sel = np.zeros((model.n_links, layout.n_links))
    for c, name in enumerate(layout.links):
        link_sel[model.link_index(name), c] = 1.0
    joint_sel = np.zeros((model.n_joints, layout.n_joints))
    for c, name in enumerate(layout.joints):
        joint_sel[model.joint_index(name), c] = 1.0
    return link_sel, joint_sel


def apply_params(model: RobotModel, params: ModelParams) -> EffectiveModel:
    """Fold ``params`` into the nominal model.

    Mass and CoM are nominal plus delta; damping and friction are nominal
    times scale. Links and joints outside the layout keep nominal values.
    """
    layout = params.layout
    if (
        np.shape(params.mass_delta) != (layout.n_links,)
        or np.shape(params.com_delta) != (layout.n_links, 2)
        or np.shape(params.damping_scale) != (layout.n_joints,)
        or np.shape(params.friction_scale) != (layout.n_joints,)
    ):
        raise DimensionError("parameter arrays do not match their layout")
    nominal = EffectiveModel.nominal(model)
    if layout.n_links == 0 and layout.n_joints == 0:
        return nominal
    link_sel, joint_sel = _selection(model, layout)
    from .dual import Dual  # local import keeps model importable on its own

    duals = [v for v in (params.mass_delta, params.com_delta, params.damping_scale, params.friction_scale) if isinstance(v, Dual)]
    if not duals:
        mass = nominal.mass.copy()
        com = nominal.com.copy()
        damping = nominal.damping.copy()
        friction = nominal.friction.copy()
        for c, name in enumerate(layout.links):
            i = model.link_index(name)
            mass[i] = nominal.mass[i] + params.mass_delta[c]
            com[i] = nominal.com[i] + params.com_delta[c]
        for c, name in enumerate(layout.joints):
            k = model.joint_index(name)
            damping[k] = nominal.damping[k] * params.damping_scale[c]
            friction[k] = nominal.friction[k] * params.friction_scale[c]
        bad = np.flatnonzero(~(mass > 0))
        if bad.size:
            raise NonPhysicalError(f"effective mass of {model.links[bad[0]].name!r} is {mass[bad[0]]:.4g} kg")
        return EffectiveModel(model, _frozen(mass), _frozen(com), nominal.inertia, _frozen(damping), _frozen(friction))

    # Dual path: the same algebra written as linear maps so partials flow through.
    d = duals[0].d
    mass = nominal.mass + link_sel @ Dual.wrap(params.mass_delta, d)
    com = nominal.com + (link_sel @ Dual.wrap(params.com_delta, d).reshape((layout.n_links, 2)))
    unselected_j = 1.0 - joint_sel.sum(axis=1)
    damp_scale = joint_sel @ Dual.wrap(params.damping_scale, d) + unselected_j
    fric_scale = joint_sel @ Dual.wrap(params.friction_scale, d) + unselected_j
    if np.any(~(mass.value > 0)):
        i = int(np.flatnonzero(~(mass.value > 0))[0])
        raise NonPhysicalError(f"effective mass of {model.links[i].name!r} is {mass.value[i]:.4g} kg")
    return EffectiveModel(model, mass, com, nominal.inertia, nominal.damping * damp_scale, nominal.friction * fric_scale)


# -- kinematics --------------------------------------------------------------


@dataclass(frozen=True)
class Kinematics:
    origins: np.ndarray  # (..., L, 2) link frame origins
    angles: np.ndarray  # (..., L) absolute link orientations
    coms: np.ndarray  # (..., L, 2) world CoM positions
    tips: np.ndarray  # (..., L, 2) child-joint anchors, origin + R(angle) (0, length)


def forward_kinematics(eff: EffectiveModel | RobotModel, q) -> Kinematics:
    """Body poses and world CoM positions for joint angles ``q`` of shape ``(..., J)``."""
    if isinstance(eff, RobotModel):
        eff = EffectiveModel.nominal(eff)
    model = eff.model
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (model.n_joints,):
        raise DimensionError(f"q must end in dimension {model.n_joints}, got {q.shape}")
    from ._kernels import fk_batch

    flat = np.ascontiguousarray(q.reshape(-1, model.n_joints))
    com = np.ascontiguousarray(np.asarray(_value(eff.com), dtype=float))
    origins, angles, coms = fk_batch(flat, model.parent, model.joint_of_link, model.anchors, com)
    lead = q.shape[:-1]
    angles = angles.reshape(lead + (model.n_links,))
    origins = origins.reshape(lead + (model.n_links, 2))
    coms = coms.reshape(lead + (model.n_links, 2))
    tip = np.stack([-np.sin(angles), np.cos(angles)], axis=-1) * model.lengths[:, None]
    return Kinematics(origins, angles, coms, origins + tip)


def _value(x):
    return getattr(x, "value", x)
