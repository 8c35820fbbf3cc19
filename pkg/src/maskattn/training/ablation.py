"""Ordering / mask ablations over several seeds."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from ..errors import ConfigError
from ..model import PRESETS, BlockOrdering, ModelConfig, Seq2SeqModel
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class AblationRow:
    name: str
    description: str
    param_count: int = 0
    scores: dict = field(default_factory=dict)   # seed -> eval metric
    failures: dict = field(default_factory=dict)  # seed -> error message

    @property
    def values(self):
        return [self.scores[s] for s in sorted(self.scores)]

    @property
    def mean(self):
        return statistics.fmean(self.values) if self.values else float("nan")

    @property
    def std(self):
        return statistics.pstdev(self.values) if len(self.values) > 1 else (0.0 if self.values else float("nan"))

    @property
    def status(self):
        if not self.failures:
            return "ok"
        return "failed" if not self.scores else "partial"


@dataclass
class AblationTable:
    rows: list
    seeds: list
    metric: str = "token_accuracy"
    reports: dict = field(default_factory=dict)  # (name, seed) -> TrainingReport
    models: dict = field(default_factory=dict)   # (name, seed) -> Seq2SeqModel, when kept

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ordering", "method", "params", "metric", "mean", "std", "status"]
                   + [f"seed_{s}" for s in self.seeds])
        for r in self.rows:
            per_seed = [repr(r.scores[s]) if s in r.scores else "failed" for s in self.seeds]
            w.writerow([r.name, r.description, r.param_count, self.metric,
                        repr(r.mean), repr(r.std), r.status] + per_seed)
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "metric": self.metric,
            "seeds": self.seeds,
            "rows": [{"ordering": r.name, "method": r.description, "params": r.param_count,
                      "mean": r.mean, "std": r.std, "status": r.status,
                      "scores": {str(k): v for k, v in r.scores.items()},
                      "failures": {str(k): v for k, v in r.failures.items()}} for r in self.rows],
        }, indent=2) + "\n"


def _one_run(args):
    model_cfg, task, train_cfg, seed, keep = args
    model = Seq2SeqModel(model_cfg, seed=seed)
    report = train(model, task, train_cfg, seed=seed)
    return report, (model if keep else None)


def run_ablation(orderings, task, seeds, model_config=None, train_config=None,
                 metric="token_accuracy", workers=1, keep_models=False):
    """Train every ordering on `task` once per seed and tabulate `metric`.

    A run that raises is recorded as failed for that seed; the table is still
    produced. Runs are independent, so `workers > 1` executes them in separate
    processes with identical results.
    """
    orderings = [o if isinstance(o, BlockOrdering) else BlockOrdering.parse(o) for o in orderings]
    if len(orderings) < 2:
        raise ConfigError("an ablation needs at least two orderings")
    if len(seeds) < 3:
        raise ConfigError("an ablation needs at least three seeds")
    base = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    jobs = []
    for o in orderings:
        cfg = replace(base, ordering=o.name if o.name in PRESETS else o.description)
        for s in seeds:
            jobs.append((o, s, (cfg, task, train_config, s, keep_models)))

    def collect(results):
        for (o, s, _), res in zip(jobs, results):
            yield o, s, res

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_one_run, job) for _, _, job in jobs]
            results = []
            for f in futures:
                try:
                    results.append(f.result())
                except Exception as exc:  # noqa: BLE001 - recorded per run
                    results.append(exc)
    else:
        results = []
        for o, s, job in jobs:
            try:
                results.append(_one_run(job))
            except Exception as exc:  # noqa: BLE001 - recorded per run
                results.append(exc)

    rows = {o.name: AblationRow(o.name, o.description) for o in orderings}
    table = AblationTable(list(rows.values()), list(seeds), metric)
    for o, s, res in collect(results):
        row = rows[o.name]
        if isinstance(res, Exception):
            log.warning("run %s seed %s failed: %s", o.name, s, res)
            row.failures[s] = f"{type(res).__name__}: {res}"
            continue
        report, model = res
        row.param_count = report.param_count
        row.scores[s] = float(getattr(report, metric))
        table.reports[(o.name, s)] = report
        if model is not None:
            table.models[(o.name, s)] = model
    return table
