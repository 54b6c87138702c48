# %% [markdown]
# # Training on a small field
#
# A 6x6 field keeps the run short enough for a laptop. The same code path
# trains the 10x10 policy; only the step count changes.

# %%
from __future__ import annotations

import sys

from hamppo.baselines import LawnmowerCarpet, LawnmowerReactive, RandomPolicy
from hamppo.evaluation import sweep
from hamppo.ppo import NetworkPolicy, TrainConfig, train
from hamppo.scenario import ScenarioConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
scenario = ScenarioConfig(dims=(6, 6), infection_range=(0.2, 0.3))


def progress(record):
    if record["update"] % 10 == 0:
        print(f"update {record['update']:4d}  steps {record['steps']:7d}  "
              f"mean return {record['mean_reward'] or float('nan'):7.2f}  entropy {record['entropy']:.3f}")


result = train([scenario], TrainConfig(total_steps=steps, seed=0), on_update=progress)

# %% [markdown]
# Evaluate the trained policy next to the baselines on held-out seeds.

# %%
policies = {"ham-ppo": NetworkPolicy(result.params), "carpet": LawnmowerCarpet(),
            "reactive": LawnmowerReactive(), "random": RandomPolicy()}
report = sweep(policies, [scenario], seeds=range(100, 120))
for row in report.aggregate():
    print(f"{row['policy']:<10} yield {row['yield_pct_mean']:5.1f}%  cost ${row['pesticide_cost_mean']:.2f}/acre")
