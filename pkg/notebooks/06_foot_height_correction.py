# %% [markdown]
# # Foot-height correction of stance samples
#
# While the free foot is planted, its height must be zero, but encoder
# bias and noise put it slightly above or below the ground. Each stance
# sample is replaced by the nearest configuration (smallest joint
# change) that puts the foot back on the ground.

# %%
from pathlib import Path

import numpy as np

from diffsysid.cli import generate_scenario
from diffsysid.config import load_config
from diffsysid.footqp import foot_height, foot_height_qp, process_trajectory

cfg = load_config(Path("..") / "scenarios" / "stance_demo.json")
model = cfg.model()
raw = generate_scenario(cfg)["loaded_0"]
stance = np.flatnonzero(raw.stance)
before = np.array([foot_height(model, raw.q[k]) for k in stance])
print(f"{stance.size} stance samples, raw foot height {before.min()*1e3:+.2f} .. {before.max()*1e3:+.2f} mm")

# %%
fixed = process_trajectory(model, raw)
after = np.array([foot_height(model, fixed.q[k]) for k in stance])
change = np.linalg.norm(fixed.q[stance] - raw.q[stance], axis=1)
print(f"corrected foot height max {np.abs(after).max():.1e} m; joint change {change.mean():.4f} rad on average")
print("upper-body joints untouched:", np.array_equal(fixed.q[:, 5:], raw.q[:, 5:]))

# %% [markdown]
# A single correction in detail: the change is a multiple of the foot
# height gradient, the optimality condition of the minimum-norm problem.

# %%
res = foot_height_qp(model, raw.q[stance[0]])
print("iterations", res.iterations, " multiplier", round(res.multiplier, 5), " stationarity", res.stationarity)
