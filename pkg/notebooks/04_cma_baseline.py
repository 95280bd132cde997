# %% [markdown]
# # Derivative-free baseline: CMA-ES
#
# CMA-ES searches the payload mass and CoM entries from nominal using
# plain rollouts. First on a sphere function, then on Setting 1 and
# Setting 3 with several seeds (a few minutes in total).

# %%
import numpy as np

from diffsysid import cma_minimize

for seed in range(5):
    res = cma_minimize(lambda x: float(x @ x), np.ones(6), 0.5, seed=seed, iterations=500)
    print(f"seed {seed}: f {res.f:.2e} after {res.iterations} generations ({res.stop_reason})")

# %%
from pathlib import Path

from diffsysid.cli import generate_scenario, run_identification
from diffsysid.config import load_config
from diffsysid.report import RunRecord, comparison_table

records = []
for name in ("setting1", "setting3"):
    cfg = load_config(Path("..") / "scenarios" / f"{name}.json")
    trajs = generate_scenario(cfg)
    unloaded = [t for k, t in sorted(trajs.items()) if not t.loaded]
    loaded = [t for k, t in sorted(trajs.items()) if t.loaded]
    truth = cfg.perturbation.truth(cfg.model(), loaded=True).as_dict()
    for seed in range(3):
        (rep,) = run_identification(cfg, "cma-es", unloaded, loaded, seed)
        records.append(RunRecord(name, "cma-es", seed, [rep.to_dict(include_wall_time=False)],
                                 {k: v for k, v in truth.items() if k in rep.final_params.layout.names}))
        print(f"{name} seed {seed}: {rep.extra['evaluations']} rollouts, {rep.wall_time:.0f} s")

# %%
print(comparison_table(records))
