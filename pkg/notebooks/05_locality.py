"""
How local is the attention?
===========================

The locality statistic is the share of attention mass that falls within w
positions of the query, averaged over positions and sentences. Identity
attention scores 1. Uniform attention over 5 tokens with w = 1 scores 0.52:
the windows hold 2, 3, 3, 3 and 2 of the 5 keys.
"""

import sys

import numpy as np

from maskattn.analysis import AttnRecord, capture_attention, locality_report, locality_statistic
from maskattn.model import ModelConfig, Seq2SeqModel
from maskattn.training.tasks import SyntheticTask
from maskattn.training.trainer import TrainConfig, train

uniform = AttnRecord(lengths=[5], mean=[{(1, "SAN"): np.full((5, 5), 0.2)}])
print("uniform, T=5, w=1:", locality_statistic(uniform, 1, 1, "SAN"))

# a briefly trained C5 model; raise the step count for a sharper contrast
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
task = SyntheticTask("local", vocab_size=12, min_len=10, max_len=20, rule="max", seed=0)
model = Seq2SeqModel(ModelConfig(vocab_size=12, ordering="C5"), seed=0)
train(model, task, TrainConfig(steps=steps, peak_lr=4e-3, eval_size=32), seed=0)

record = capture_attention(model, [s for s, _ in task.samples(128, "test")], dataset_id="local-test")
print(locality_report(record, windows=(1, 2, 4)).to_csv())
