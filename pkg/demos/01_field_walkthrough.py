# %% [markdown]
# # Walking a field by hand
#
# A 10x10 crop field sits inside a one-cell headland ring. The robot starts
# on the headland, moves up and down crop rows, and may only change rows
# on the headland. Deep scouting inspects the current cell for five
# timesteps and ends with a spray decision.

# %%
from __future__ import annotations

import numpy as np

from hamppo.action_tree import HierAction, LowAction
from hamppo.field_env import FieldEnv
from hamppo.scenario import ScenarioConfig, battery_budget, generate

scenario = ScenarioConfig(dims=(10, 10), infection_range=(0.2, 0.3), randomness="low", initiation="corners")
print("budget:", battery_budget(scenario))
print(generate(scenario, seed=3).to_text())

# %% [markdown]
# The noisy survey is what the robot sees before it visits a cell.
# Visited cells switch to their exact level encoding (level / 3).

# %%
env = FieldEnv(scenario)
state, obs = env.reset(seed=3)
np.set_printoptions(precision=2, suppress=True, linewidth=120)
print("start:", state.position)
print(obs.belief)

# %% [markdown]
# Step into the first crop row, then walk up it. On each infected cell we
# deep-scout and spray; on healthy cells we keep walking.

# %%
env.step(HierAction.scout(LowAction.RIGHT))
total = 0.0
while not env.state.done:
    i, j = env.state.position
    if i == 1:
        break
    out = env.step(HierAction.scout(LowAction.UP), spray_prob_hint=1.0)
    total += out.reward
    if env.state.health[env.state.position] > 0:
        out = env.step(HierAction.deep_scout(True))
        total += out.reward
        print(f"sprayed {env.state.position}: reward {out.reward:.3f}")
print(f"return {total:.3f}, battery left {env.state.battery_remaining}")

# %% [markdown]
# Every step is recorded with its reward breakdown and can be exported as
# JSON lines with `hamppo export-traj`.
