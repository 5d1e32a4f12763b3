"""Experiment harness: iteration sweeps, window and regularizer sweeps, and the
module ablation grid.

Every sweep expands into independent jobs, one per (label, axis value, seed).
Jobs run serially or on a process pool; results are sorted before they are
returned, so the worker count never changes the output.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .losses import RegWeights
from .pipeline import FrameResult, PipelineConfig, Scene, configure, run_sequence
from .synth import Dataset

N_VALUES = (1, 3, 5, 10, 20, 40)
LAMBDA1_VALUES = (0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0)
LAMBDA2_VALUES = (0.0, 0.1, 1.0, 10.0, 100.0, 1000.0)
ABLATION_K = (1, 3, 5, 10)

FULL = "full"
BASELINE = "baseline"

# row name -> toggles, in table order
ABLATION_ROWS: dict[str, dict[str, bool]] = {
    "baseline": dict(carry_state=False, optimize_base=False, use_kcn=False, use_reg=False),
    "temporal": dict(carry_state=True, optimize_base=True, use_kcn=False, use_reg=False),
    "kcn": dict(carry_state=True, optimize_base=False, use_kcn=True, use_reg=False),
    "kcn_reg": dict(carry_state=True, optimize_base=False, use_kcn=True, use_reg=True),
    "all": dict(carry_state=True, optimize_base=True, use_kcn=True, use_reg=True),
}

FRAME_FIELDS = ("dice", "loss_first", "loss_last", "joint_err_meas", "joint_err_corr", "ms")


class SweepError(RuntimeError):
    pass


def baseline_config(cfg: PipelineConfig) -> PipelineConfig:
    """Image-wise optimisation: no carried state, fixed base, no network, no regularizer."""
    return configure(cfg, **ABLATION_ROWS["baseline"])


@dataclass
class RunRecord:
    """Per-frame columns of one sequence run."""

    label: str
    value: float
    seed: int
    columns: dict[str, np.ndarray]

    @property
    def frames(self) -> int:
        return len(self.columns["dice"])

    @classmethod
    def from_results(cls, label: str, value, seed: int, results: Sequence[FrameResult]):
        def col(get):
            return np.array([np.nan if get(r) is None else get(r) for r in results],
                            dtype=np.float64)

        columns = {
            "dice": col(lambda r: r.dice),
            "loss_first": col(lambda r: r.loss_trace[0] if r.loss_trace else None),
            "loss_last": col(lambda r: r.loss_trace[-1] if r.loss_trace else None),
            "joint_err_meas": col(lambda r: r.joint_err_meas),
            "joint_err_corr": col(lambda r: r.joint_err_corr),
            "ms": col(lambda r: r.ms),
        }
        return cls(label, value, seed, columns)

    def mean_dice(self) -> float:
        return float(np.mean(self.columns["dice"]))

    def sd_dice(self) -> float:
        return float(np.std(self.columns["dice"]))

    def mean_ms(self) -> float:
        return float(np.mean(self.columns["ms"]))


@dataclass
class SweepResult:
    """Runs of one table. ``labels`` fixes the row order of emitted tables."""

    name: str
    axis: str
    labels: tuple[str, ...]
    records: list[RunRecord] = field(default_factory=list)

    def sort(self) -> SweepResult:
        order = {lab: i for i, lab in enumerate(self.labels)}
        self.records.sort(key=lambda r: (order.get(r.label, len(order)), r.label, r.value, r.seed))
        return self

    def values(self, label: str | None = None) -> list:
        return sorted({r.value for r in self.records if label is None or r.label == label})

    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.records})

    def select(self, label: str, value) -> list[RunRecord]:
        return [r for r in self.records if r.label == label and r.value == value]

    def get(self, label: str, value, seed: int) -> RunRecord:
        for r in self.records:
            if r.label == label and r.value == value and r.seed == seed:
                return r
        raise KeyError(f"{self.name}: no run for {label} at {self.axis}={value}, seed {seed}")

    def cell(self, label: str, value) -> dict:
        """Seed-averaged mean Dice; sd pools all frames of all seeds."""
        runs = self.select(label, value)
        if not runs:
            raise KeyError(f"{self.name}: no runs for {label} at {self.axis}={value}")
        pooled = np.concatenate([r.columns["dice"] for r in runs])
        return {
            "mean_dice": float(np.mean([r.mean_dice() for r in runs])),
            "sd_dice": float(np.std(pooled)),
            "mean_ms": float(np.mean([r.mean_ms() for r in runs])),
            "seeds": [r.seed for r in runs],
        }


@dataclass(frozen=True)
class Job:
    label: str
    value: float
    seed: int
    cfg: PipelineConfig


# seed -> (dataset, scene)
Bench = Mapping[int, "tuple[Dataset, Scene]"]


def _execute(job: Job, dataset: Dataset, scene: Scene, record_time: bool) -> RunRecord:
    try:
        results = run_sequence(dataset, job.cfg, scene, record_time=record_time)
    except Exception as exc:
        raise SweepError(f"run {job.label} failed at value={job.value}, seed={job.seed}: "
                         f"{type(exc).__name__}: {exc}") from exc
    return RunRecord.from_results(job.label, job.value, job.seed, results)


def run_jobs(jobs: Sequence[Job], bench: Bench, workers: int = 1,
             record_time: bool = True) -> list[RunRecord]:
    missing = sorted({j.seed for j in jobs} - set(bench))
    if missing:
        raise SweepError(f"no dataset for seeds {missing}")
    if workers <= 1 or len(jobs) <= 1:
        return [_execute(j, *bench[j.seed], record_time) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_execute, j, *bench[j.seed], record_time) for j in jobs]
        return [f.result() for f in futures]


def _unique(values) -> list:
    out = sorted(set(values))
    if not out:
        raise ValueError("sweep needs at least one axis value")
    return out


def sweep(name: str, axis: str, values, make_cfg: Callable[[object], PipelineConfig],
          bench: Bench, seeds: Sequence[int], workers: int = 1, record_time: bool = True,
          label: str = FULL) -> SweepResult:
    """One labelled run per (value, seed) with ``make_cfg(value)``."""
    jobs = [Job(label, v, s, make_cfg(v)) for v in _unique(values) for s in sorted(set(seeds))]
    res = SweepResult(name, axis, (label,), run_jobs(jobs, bench, workers, record_time))
    return res.sort()


def sweep_k(bench: Bench, cfg: PipelineConfig, k_values, seeds: Sequence[int],
            workers: int = 1, record_time: bool = True, baseline: bool = True) -> SweepResult:
    """Iterations per frame for the full method and, optionally, the image-wise baseline."""
    ks = _unique(int(k) for k in k_values)
    seeds = sorted(set(seeds))
    jobs = [Job(FULL, k, s, configure(cfg, k=k)) for k in ks for s in seeds]
    labels: tuple[str, ...] = (FULL,)
    if baseline:
        base = baseline_config(cfg)
        jobs += [Job(BASELINE, k, s, configure(base, k=k)) for k in ks for s in seeds]
        labels = (FULL, BASELINE)
    return SweepResult("sweep_k", "k", labels, run_jobs(jobs, bench, workers, record_time)).sort()


def sweep_n(bench: Bench, cfg: PipelineConfig, seeds, n_values=N_VALUES, **kw) -> SweepResult:
    return sweep("sweep_n", "n", (int(n) for n in n_values),
                 lambda n: configure(cfg, n=n), bench, seeds, **kw)


def sweep_lambda1(bench: Bench, cfg: PipelineConfig, seeds, values=LAMBDA1_VALUES,
                  lambda2: float = 1.0, **kw) -> SweepResult:
    return sweep("sweep_lambda1", "lambda1", (float(v) for v in values),
                 lambda v: configure(cfg, use_reg=True, reg=RegWeights(v, lambda2)),
                 bench, seeds, **kw)


def sweep_lambda2(bench: Bench, cfg: PipelineConfig, seeds, values=LAMBDA2_VALUES,
                  lambda1: float = 10.0, **kw) -> SweepResult:
    return sweep("sweep_lambda2", "lambda2", (float(v) for v in values),
                 lambda v: configure(cfg, use_reg=True, reg=RegWeights(lambda1, v)),
                 bench, seeds, **kw)


def ablate(bench: Bench, cfg: PipelineConfig, seeds: Sequence[int], k_values=ABLATION_K,
           workers: int = 1, record_time: bool = True) -> SweepResult:
    """Five module rows by iteration count."""
    ks = _unique(int(k) for k in k_values)
    seeds = sorted(set(seeds))
    jobs = [Job(row, k, s, configure(cfg, k=k, **toggles))
            for row, toggles in ABLATION_ROWS.items() for k in ks for s in seeds]
    records = run_jobs(jobs, bench, workers, record_time)
    return SweepResult("ablation", "k", tuple(ABLATION_ROWS), records).sort()
