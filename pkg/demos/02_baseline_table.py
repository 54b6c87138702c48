# %% [markdown]
# # Baselines across the scenario grid
#
# Two infection ranges, two randomness levels and two initiation patterns
# give eight scenarios. Each baseline runs on five seeds per scenario.

# %%
from __future__ import annotations

from hamppo.baselines import LawnmowerCarpet, LawnmowerReactive, RandomPolicy
from hamppo.evaluation import sweep
from hamppo.scenario import ScenarioConfig

grid = [ScenarioConfig(infection_range=r, randomness=m, initiation=i)
        for r in ((0.2, 0.3), (0.3, 0.4)) for m in ("low", "high") for i in ("corners", "center")]
policies = {"carpet": LawnmowerCarpet(), "reactive": LawnmowerReactive(), "random": RandomPolicy()}
report = sweep(policies, grid, seeds=5)

# %%
print(f"{'scenario':<40} {'policy':<10} {'yield %':>8} {'$/acre':>8}")
for row in report.aggregate():
    print(f"{row['scenario_id']:<40} {row['policy']:<10} {row['yield_pct_mean']:8.1f} "
          f"{row['pesticide_cost_mean']:8.2f}")

# %% [markdown]
# Carpet spraying runs out of battery after roughly a third of the field.
# The reactive baseline walks further because it only stops on cells that
# look infected, which is why it recovers more yield for less pesticide.
