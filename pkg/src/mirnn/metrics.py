"""Accuracy metrics and the noise-robustness experiment.

Metrics are pure functions of (predictions, exact values); they never touch
training state.  The headline score is R-squared, one minus the ratio of
residual to total sum of squares: 1 is exact, 0 matches a constant mean
predictor, negative is worse than the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import intervals as iv
from . import network as net
from . import trainer as tr
from .errors import ConfigError, DegenerateTargetError

__all__ = [
    "r_squared",
    "relative_error",
    "TimeSlice",
    "mse_over_time",
    "block_transition_ratios",
    "per_block_mse",
    "MetricsReport",
    "grid_report",
    "NoiseExperimentConfig",
    "noise_experiment",
]


def r_squared(predictions, exact) -> float:
    """1 - RSS/TSS; may be negative for a model worse than the mean."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    e = np.asarray(exact, dtype=np.float64).ravel()
    if p.shape != e.shape or p.size < 2:
        raise ConfigError("r_squared needs two equal-length series of >= 2 values")
    tss = float(np.sum((e - e.mean()) ** 2))
    if tss == 0.0:
        raise DegenerateTargetError("exact values are all identical (zero TSS)")
    rss = float(np.sum((p - e) ** 2))
    return 1.0 - rss / tss


def relative_error(predictions, exact) -> float:
    """Global L2 ratio ||pred - exact|| / ||exact|| over the evaluation slice."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    e = np.asarray(exact, dtype=np.float64).ravel()
    if p.shape != e.shape:
        raise ConfigError("relative_error needs equal-length series")
    norm = float(np.linalg.norm(e))
    if norm == 0.0:
        raise DegenerateTargetError("exact values have zero norm")
    return float(np.linalg.norm(p - e)) / norm


@dataclass
class TimeSlice:
    t_lo: float
    t_hi: float
    mse: object          # float, or None as the gap marker for empty slices
    block: int
    sub_interval: str


def mse_over_time(grid_eval: tr.GridEvaluation, width: float):
    """MSE aggregated per time slice of the given width.

    Slices are labeled with the block whose prediction metrics use there
    (the later owner) and that block's sub-interval class at the slice
    midpoint, so block transitions are visible in the series.
    """
    if width <= 0:
        raise ConfigError("slice width must be positive")
    part = grid_eval.partition
    t = np.asarray(grid_eval.coords[net.TIME_COORD])
    t0, t1 = part.t_start, part.t_end
    n_slices = max(1, math.ceil((t1 - t0) / width - 1e-12))
    slices = []
    for k in range(n_slices):
        lo = t0 + k * width
        hi = min(t0 + (k + 1) * width, t1)
        sel = (t >= lo) & (t < hi) if k < n_slices - 1 else (t >= lo) & (t <= hi)
        mid = 0.5 * (lo + hi)
        block = max(iv.owning_blocks(part, min(mid, t1)))
        cls = iv.classify(part, block, min(mid, t1)).value
        if not np.any(sel):
            slices.append(TimeSlice(lo, hi, None, block, cls))
            continue
        errs = []
        for f in grid_eval.selected:
            d = grid_eval.selected[f][sel] - grid_eval.exact[f][sel]
            errs.append(d * d)
        slices.append(TimeSlice(lo, hi, float(np.mean(np.concatenate(errs))),
                                block, cls))
    return slices


def block_transition_ratios(slices, partition: iv.TimePartition):
    """MSE ratio (slice after / slice before) across each block hand-off.

    The hand-off happens where the later block takes over, i.e. at each
    mutual interval's start.  Gap slices are skipped.
    """
    ratios = []
    for pair in range(1, partition.n_blocks):
        boundary = partition.mutual_interval(pair)[0]
        idx = None
        for k, s in enumerate(slices):
            if s.t_lo <= boundary < s.t_hi or (k == len(slices) - 1
                                               and boundary >= s.t_lo):
                idx = k
                break
        if idx is None or idx == 0:
            continue
        before = next((slices[k].mse for k in range(idx - 1, -1, -1)
                       if slices[k].mse is not None), None)
        after = next((slices[k].mse for k in range(idx, len(slices))
                      if slices[k].mse is not None), None)
        if before is None or after is None or before == 0.0:
            continue
        ratios.append(after / before)
    return ratios


def per_block_mse(grid_eval: tr.GridEvaluation):
    """Each block's own-prediction MSE over its full interval (all fields)."""
    out = {}
    for b, preds in grid_eval.per_block.items():
        errs = []
        for f, p in preds.items():
            sel = ~np.isnan(p)
            d = p[sel] - grid_eval.exact[f][sel]
            errs.append(d * d)
        all_err = np.concatenate(errs)
        out[b] = float(np.mean(all_err)) if all_err.size else float("nan")
    return out


@dataclass
class MetricsReport:
    """Headline numbers for one evaluated model."""

    r2: float
    r2_per_field: dict
    mse: float
    relative_err: float
    per_block: dict
    n_grid_points: int
    metadata: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "r2": self.r2,
            "r2_per_field": self.r2_per_field,
            "mse": self.mse,
            "relative_error": self.relative_err,
            "per_block_mse": {str(k): v for k, v in self.per_block.items()},
            "n_grid_points": self.n_grid_points,
            "metadata": self.metadata,
        }


def grid_report(grid_eval: tr.GridEvaluation, metadata=None) -> MetricsReport:
    pred, exact = grid_eval.flat()
    per_field = {f: r_squared(grid_eval.selected[f], grid_eval.exact[f])
                 for f in grid_eval.selected}
    return MetricsReport(
        r2=r_squared(pred, exact),
        r2_per_field=per_field,
        mse=float(np.mean((pred - exact) ** 2)),
        relative_err=relative_error(pred, exact),
        per_block=per_block_mse(grid_eval),
        n_grid_points=grid_eval.n_points,
        metadata=dict(metadata or {}),
    )


# ---------------------------------------------------------------------------
# Noise robustness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseExperimentConfig:
    """Zero-mean Gaussian noise on the earlier block's predictions inside the
    mutual loss term, resampled every epoch from its own stream."""

    stds: tuple = (1.0, 0.1, 0.01)
    spacing: float = 0.02
    time_spacing: float = 0.02

    def __post_init__(self):
        for s in self.stds:
            if s < 0:
                raise ConfigError(f"noise std {s} must be >= 0")


@dataclass
class NoiseRow:
    std: float
    block: int
    mse: float
    log10_mse: float


def noise_experiment(problem, partition, policy, schedule,
                     train_config: tr.TrainConfig,
                     noise_config: NoiseExperimentConfig = None,
                     hidden=(30, 30, 30, 30), log_every=0):
    """Train a noiseless baseline plus one run per noise level.

    Returns (rows, per_std_reports): per-block own-prediction MSE after
    training, log-scaled as in the robustness figure; std 0.0 is the
    baseline row set.
    """
    noise_config = noise_config or NoiseExperimentConfig()
    if partition.n_blocks < 2:
        raise ConfigError("noise experiment needs at least 2 blocks")
    rows = []
    reports = {}
    for std in (0.0,) + tuple(noise_config.stds):
        cfg_run = tr.TrainConfig(
            epochs=train_config.epochs, lr=train_config.lr,
            beta1=train_config.beta1, beta2=train_config.beta2,
            eps=train_config.eps, seed=train_config.seed,
            sampling=train_config.sampling,
            noise_std=std, noise_seed=train_config.noise_seed)
        result = tr.train(problem, partition, policy, schedule, cfg_run,
                          hidden=hidden, log_every=log_every)
        grid = tr.evaluate_grid(result.model, problem, noise_config.spacing,
                                noise_config.time_spacing)
        block_mse = per_block_mse(grid)
        for b in sorted(block_mse):
            m = block_mse[b]
            rows.append(NoiseRow(std, b, m, math.log10(m) if m > 0 else -math.inf))
        reports[std] = grid_report(grid, metadata={"noise_std": std})
    return rows, reports
