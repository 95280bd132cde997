"""System identification of planar rigid-body robots through a differentiable simulator."""

from .cmaes import CmaConfig, cma_identify, cma_minimize
from .config import ScenarioConfig, load_config
from .dynamics import RolloutConfig, mass_matrix, rollout, step
from .footqp import foot_height_qp, process_trajectory
from .gradients import evaluate, fd_gradient, grad_rollout_loss
from .identify import (
    FragmentSampler,
    GDConfig,
    IdentificationReport,
    gd_identify,
    one_stage_identify,
    two_stage_identify,
)
from .model import (
    EffectiveModel,
    ModelParams,
    ParamLayout,
    RobotModel,
    State,
    apply_params,
    build_model,
    default_model,
    forward_kinematics,
    load_model,
)
from .objective import LossSpec, box_penalty, total_loss, tracking_loss
from .trajectory import (
    PRESETS,
    PerturbationSetting,
    Trajectory,
    excitation_actions,
    generate_real,
    load_trajectory,
    save_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "CmaConfig", "cma_identify", "cma_minimize",
    "ScenarioConfig", "load_config",
    "RolloutConfig", "mass_matrix", "rollout", "step",
    "foot_height_qp", "process_trajectory",
    "evaluate", "fd_gradient", "grad_rollout_loss",
    "FragmentSampler", "GDConfig", "IdentificationReport", "gd_identify", "one_stage_identify", "two_stage_identify",
    "EffectiveModel", "ModelParams", "ParamLayout", "RobotModel", "State", "apply_params", "build_model",
    "default_model", "forward_kinematics", "load_model",
    "LossSpec", "box_penalty", "total_loss", "tracking_loss",
    "PRESETS", "PerturbationSetting", "Trajectory", "excitation_actions", "generate_real", "load_trajectory",
    "save_trajectory",
]
