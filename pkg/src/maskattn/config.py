"""
Experiment configuration files.

A config is a plain-text ``key = value`` file. Recognized keys:

model     vocab_size, d_model, heads, enc_layers, dec_layers, ordering,
          max_rel, dropout, max_len, ffn_mult, tie_embeddings
task      task (copy | reverse | local), min_len, max_len_task, window, rule
training  steps, batch_size, peak_lr, warmup, smoothing, clip_norm, eval_size
run       seeds (comma separated), out_dir

Unknown keys are errors. The environment variable MASKATTN_OUT_DIR, when set,
overrides `out_dir`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .kvfile import dump_kv, parse_kv
from .model import ModelConfig
from .training.tasks import SyntheticTask
from .training.trainer import TrainConfig

OUT_DIR_ENV = "MASKATTN_OUT_DIR"

TASK_KEYS = {"task": "variant", "min_len": "min_len", "max_len_task": "max_len", "window": "window", "rule": "rule"}
TRAIN_KEYS = ("steps", "batch_size", "peak_lr", "warmup", "smoothing", "clip_norm", "eval_size")


def _typed(default, raw, key):
    if isinstance(default, bool):
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.lower() == "none" else float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: SyntheticTask = field(default_factory=SyntheticTask)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "runs/default"

    @classmethod
    def from_text(cls, text, source="<config>"):
        raw = parse_kv(text, source)
        model_defaults = ModelConfig()
        model_kw, task_kw, train_kw = {}, {}, {}
        seeds, out_dir = [0, 1, 2], "runs/default"
        for key, value in raw.items():
            if key in {f.name for f in fields(ModelConfig)}:
                model_kw[key] = value
            elif key in TASK_KEYS:
                attr = TASK_KEYS[key]
                task_kw[attr] = _typed(getattr(SyntheticTask, attr), value, key)
            elif key in TRAIN_KEYS:
                train_kw[key] = _typed(getattr(TrainConfig, key), value, key)
            elif key == "seeds":
                try:
                    seeds = [int(s) for s in value.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError(f"seeds: expected comma-separated integers, got {value!r}") from None
                if not seeds:
                    raise ConfigError("seeds: at least one seed is required")
            elif key == "out_dir":
                out_dir = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            model = ModelConfig.from_dict(model_kw) if model_kw else model_defaults
            task = SyntheticTask(vocab_size=model.vocab_size, **task_kw)
            train = TrainConfig(**train_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if task.max_len > model.max_len:
            raise ConfigError(f"task max_len_task {task.max_len} exceeds model max_len {model.max_len}")
        return cls(model, task, train, seeds, os.environ.get(OUT_DIR_ENV, out_dir))

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), str(path))

    def to_text(self):
        items = dict(self.model.to_dict())
        for key, attr in TASK_KEYS.items():
            items[key] = getattr(self.task, attr)
        for key in TRAIN_KEYS:
            items[key] = getattr(self.train, key)
        items["seeds"] = self.seeds
        items["out_dir"] = self.out_dir
        return dump_kv(items)

    def task_for(self, seed):
        return replace(self.task, seed=seed)
