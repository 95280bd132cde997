# %% [markdown]
# # Exact parameter gradients
#
# The loss of a fragment rollout is differentiated in forward mode with
# respect to every identifiable parameter. Here the result is compared
# with central finite differences on one fragment.

# %%
import numpy as np

from diffsysid import LossSpec, ModelParams, ParamLayout, PRESETS, default_model, evaluate, excitation_actions, fd_gradient, generate_real

model = default_model()
layout = ParamLayout.default(model)
data = generate_real(model, PRESETS["setting1"], excitation_actions(model, 4.0, variant=3), loaded=True)
fragment = data.fragment(40, 50)
spec = LossSpec(alpha_upper=2.0, regularization_enabled=False)

# %% [markdown]
# At nominal parameters the simulated robot lacks the 6 kg payload, so
# the loss is large and the mass gradients are negative (add mass).

# %%
params = ModelParams.nominal(layout)
res = evaluate(model, params, [fragment], spec)
fd = fd_gradient(model, params, [fragment], spec)
print(f"loss {res.loss_value:.4f}")
print(f"{'parameter':<24}{'forward mode':>16}{'finite diff':>16}")
for name, g, f in list(zip(layout.names, res.gradient, fd))[:9]:
    print(f"{name:<24}{g:>16.6e}{f:>16.6e}")
big = np.abs(fd) > 1e-8
print("max relative error:", (np.abs(res.gradient - fd)[big] / np.abs(fd[big])).max())

# %% [markdown]
# At the ground truth the loss and gradient vanish.

# %%
from diffsysid.trajectory import full_layout, project_params

truth = project_params(ModelParams.from_dict(full_layout(model), data.ground_truth()), layout)
at_truth = evaluate(model, truth, [fragment], spec)
print(at_truth.loss_value, np.abs(at_truth.gradient).max())
