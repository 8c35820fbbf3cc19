"""
Comparing block orderings
=========================

The ablation runner trains every ordering once per seed on the same task and
tabulates the held-out token accuracy. This demo uses a short schedule so it
finishes in a few minutes; the acceptance suite runs the full version.
"""

import sys

from maskattn.model import PRESETS, ModelConfig
from maskattn.training.ablation import run_ablation
from maskattn.training.tasks import SyntheticTask
from maskattn.training.trainer import TrainConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100

for name in ("C1", "C2", "C3", "C4", "C5"):
    print(f"{name}: {PRESETS[name].description}")

task = SyntheticTask("local", vocab_size=12, min_len=10, max_len=20, rule="max", seed=0)
table = run_ablation(["C2", "C5"], task, seeds=[0, 1, 2],
                     model_config=ModelConfig(vocab_size=12),
                     train_config=TrainConfig(steps=steps, peak_lr=4e-3, eval_size=64))
print(table.to_csv())
