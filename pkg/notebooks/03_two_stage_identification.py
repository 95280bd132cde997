# %% [markdown]
# # Two-stage identification on Setting 1
#
# Stage 1 calibrates the base model on unloaded trajectories; stage 2
# fits only payload mass and CoM on loaded trajectories. Runs the
# shipped `scenarios/setting1.json` (about one minute).

# %%
from pathlib import Path

from diffsysid.cli import generate_scenario, run_identification
from diffsysid.config import load_config
from diffsysid.trajectory import project_params

cfg = load_config(Path("..") / "scenarios" / "setting1.json")
trajs = generate_scenario(cfg)
unloaded = [t for k, t in sorted(trajs.items()) if not t.loaded]
loaded = [t for k, t in sorted(trajs.items()) if t.loaded]
print({k: len(t) for k, t in trajs.items()})

# %%
stage1, stage2 = run_identification(cfg, "two-stage", unloaded, loaded, seed=0)
for s in (stage1, stage2):
    print(f"{s.stage_label}: loss {s.initial_loss:.3e} -> {s.final_loss:.3e} in {s.wall_time:.1f} s")

# %%
model = cfg.model()
truth = project_params(cfg.perturbation.truth(model, loaded=True), cfg.layout(model)).as_dict()
est = stage2.final_params.as_dict()
for name in ("mass[torso]", "mass[left_hand]", "mass[right_hand]", "com_x[torso]", "com_z[torso]"):
    print(f"{name:<18} truth {truth[name]:+.4f}  estimate {est[name]:+.4f}")

# %% [markdown]
# Loss curve of stage 2 (every 100th iteration).

# %%
for h in stage2.history[::100]:
    print(f"{h['iteration']:5d}  {h['loss']:.4e}")
