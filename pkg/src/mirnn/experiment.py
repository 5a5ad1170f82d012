"""Experiment configs, run orchestration, and result files.

A run is described by one JSON config document; every modeling default
(partition, conditioning policy, forget factors, sampling counts, loss
switches, term weights) is overridable there.  Commands:

* ``train``  - train, evaluate on the grid, write report + CSVs + checkpoint.
* ``eval``   - re-evaluate an existing checkpoint at a chosen grid spacing.
* ``sweep``  - iterate the block-count/overlap-length grid (table 1) or the
  conditioning-moment/forget-factor grid (table 2), emitting an R^2 matrix.
* ``noise``  - the mutual-term noise-robustness experiment.

Artifacts land under the config's ``run_dir``: ``report.json``, ``loss.csv``,
``grid.csv``, ``mse_time.csv``, ``slices.csv`` (1-D problems),
``sweep_table{1,2}.csv``, ``noise.csv``, ``checkpoint.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import intervals as iv
from . import loss as ls
from . import metrics as mx
from . import network as net
from . import physics as ph
from . import trainer as tr
from .errors import ConfigError, MissingArtifactError

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "cmd_train",
    "cmd_eval",
    "cmd_sweep",
    "cmd_noise",
    "run_experiment",
]

_TOP_KEYS = {
    "problem", "partition", "policy", "forget_factors", "train", "hidden",
    "mutual_loss", "weights", "eval", "noise", "sweep", "run_dir",
}

TABLE1_BLOCKS = (2, 3, 4)
TABLE1_MUTUAL = (0.0, 0.01, 0.5, 1.0)
TABLE2_FF_COLUMNS = (
    (1.0, 0.5, 1.0), (1.0, 0.5, 0.5), (0.5, 0.5, 0.5),
    (1.0, 0.1, 0.0), (1.0, 0.0, 0.1), (1.0, 1.0, 1.0),
)


@dataclass
class EvalSettings:
    spacing: float = 0.01
    time_spacing: float = None
    slice_times: tuple = (1.50, 2.51, 4.0)
    slice_x: float = 0.88
    mse_slice_width: float = 0.1


@dataclass
class SweepSettings:
    epochs: int = None       # falls back to train.epochs
    spacing: float = None    # falls back to eval.spacing
    seed: int = None


@dataclass
class ExperimentConfig:
    raw: dict
    config_hash: str
    problem: ph.PdeProblem
    partition: iv.TimePartition
    policy: iv.ConditioningPolicy
    schedule: net.ForgetFactorSchedule
    train: tr.TrainConfig
    hidden: tuple
    mutual_cfg: ls.MutualLossConfig
    weights: ls.LossWeights
    eval: EvalSettings
    noise: mx.NoiseExperimentConfig
    sweep: SweepSettings
    run_dir: str


def _hash_config(doc) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_rule(value, problems, where):
    if value == "ta":
        return iv.TA
    if value == "preceding_end":
        return iv.PRECEDING_END
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return iv.Fixed(float(value))
    if isinstance(value, dict) and set(value) == {"fixed"}:
        return iv.Fixed(float(value["fixed"]))
    problems.append(f"{where}: expected 'ta', 'preceding_end', a number, or "
                    f"{{'fixed': t}}, got {value!r}")
    return iv.TA


def parse_config(doc: dict) -> ExperimentConfig:
    """Build a validated ExperimentConfig; reports every offending field."""
    problems = []
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        problems.append(f"unknown top-level keys: {sorted(unknown)}")

    prob_doc = doc.get("problem", {})
    problem = None
    try:
        problem = ph.problem_by_name(prob_doc.get("name", ""),
                                     prob_doc.get("constants"))
    except (ConfigError, TypeError) as e:
        problems.append(f"problem: {e}")

    part_doc = doc.get("partition", {})
    partition = None
    try:
        near = float(part_doc.get("near_width", 0.05))
        if "intervals" in part_doc:
            partition = iv.explicit_partition(part_doc["intervals"], near)
        elif problem is not None:
            partition = iv.build_partition(
                problem.t_start, problem.t_end,
                int(part_doc.get("n_blocks", 1)),
                float(part_doc.get("mutual_length", 0.0)), near)
    except Exception as e:
        problems.append(f"partition: {e}")

    pol_doc = doc.get("policy", "preceding_end")
    if isinstance(pol_doc, str) or isinstance(pol_doc, (int, float)):
        rule = _parse_rule(pol_doc, problems, "policy")
        policy = iv.ConditioningPolicy(rule, rule, rule)
    elif isinstance(pol_doc, (list, tuple)) and len(pol_doc) == 3:
        rules = [_parse_rule(v, problems, f"policy[{i}]")
                 for i, v in enumerate(pol_doc)]
        policy = iv.ConditioningPolicy(*rules)
    elif isinstance(pol_doc, dict):
        policy = iv.ConditioningPolicy(
            _parse_rule(pol_doc.get("mutual", "ta"), problems, "policy.mutual"),
            _parse_rule(pol_doc.get("near", "ta"), problems, "policy.near"),
            _parse_rule(pol_doc.get("remaining", "ta"), problems,
                        "policy.remaining"))
    else:
        problems.append(f"policy: unrecognized form {pol_doc!r}")
        policy = iv.ConditioningPolicy.temporal_alignment()

    schedule = net.ForgetFactorSchedule()
    try:
        ff = doc.get("forget_factors", [0.5, 0.5, 0.5])
        schedule = net.ForgetFactorSchedule(*[float(v) for v in ff])
    except Exception as e:
        problems.append(f"forget_factors: {e}")

    train_doc = dict(doc.get("train", {}))
    samp_doc = train_doc.pop("sampling", {})
    sampling = ph.SamplingSpec()
    try:
        sampling = ph.SamplingSpec(**samp_doc)
    except Exception as e:
        problems.append(f"train.sampling: {e}")
    train_cfg = None
    try:
        train_cfg = tr.TrainConfig(sampling=sampling,
                                   run_dir=doc.get("run_dir"), **train_doc)
    except ConfigError as e:
        problems.extend(f"train: {p}" for p in e.problems)
    except TypeError as e:
        problems.append(f"train: {e}")

    hidden = tuple(doc.get("hidden", (30, 30, 30, 30)))
    mutual_cfg = ls.MutualLossConfig()
    try:
        mutual_cfg = ls.MutualLossConfig(**doc.get("mutual_loss", {}))
    except TypeError as e:
        problems.append(f"mutual_loss: {e}")
    weights = ls.LossWeights()
    try:
        weights = ls.LossWeights(**doc.get("weights", {}))
    except (TypeError, ConfigError) as e:
        problems.append(f"weights: {e}")
    eval_cfg = EvalSettings()
    try:
        eval_cfg = EvalSettings(**doc.get("eval", {}))
    except TypeError as e:
        problems.append(f"eval: {e}")
    noise_cfg = mx.NoiseExperimentConfig()
    try:
        nd = dict(doc.get("noise", {}))
        if "stds" in nd:
            nd["stds"] = tuple(nd["stds"])
        noise_cfg = mx.NoiseExperimentConfig(**nd)
    except (TypeError, ConfigError) as e:
        problems.append(f"noise: {e}")
    sweep_cfg = SweepSettings()
    try:
        sweep_cfg = SweepSettings(**doc.get("sweep", {}))
    except TypeError as e:
        problems.append(f"sweep: {e}")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        raw=doc, config_hash=_hash_config(doc), problem=problem,
        partition=partition, policy=policy, schedule=schedule,
        train=train_cfg, hidden=hidden, mutual_cfg=mutual_cfg,
        weights=weights, eval=eval_cfg, noise=noise_cfg, sweep=sweep_cfg,
        run_dir=doc.get("run_dir", "runs/default"))


def load_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise MissingArtifactError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError([f"config is not valid JSON: {e}"])
    return parse_config(doc)


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def write_loss_csv(path, history: tr.TrainHistory):
    if not history.records:
        _write_csv(path, ["epoch"], [])
        return
    labels = [k for k, _ in history.records[0].labeled()]
    rows = [[e] + [f"{v:.17g}" for _, v in rec.labeled()]
            for e, rec in enumerate(history.records)]
    _write_csv(path, ["epoch"] + labels, rows)


def write_grid_csv(path, grid: tr.GridEvaluation):
    coord_names = list(grid.coords.keys())
    fields = list(grid.selected.keys())
    blocks = sorted(grid.per_block.keys())
    header = coord_names[:]
    for f in fields:
        header += [f"{f}_block{b}" for b in blocks]
        header += [f"{f}_pred", f"{f}_exact", f"{f}_abs_err"]
    cols = [grid.coords[c] for c in coord_names]
    for f in fields:
        cols += [grid.per_block[b][f] for b in blocks]
        cols += [grid.selected[f], grid.exact[f],
                 np.abs(grid.selected[f] - grid.exact[f])]
    data = np.column_stack(cols)
    rows = ([f"{v:.10g}" for v in row] for row in data)
    _write_csv(path, header, rows)


def write_mse_time_csv(path, slices):
    rows = [[f"{s.t_lo:.10g}", f"{s.t_hi:.10g}",
             "" if s.mse is None else f"{s.mse:.10e}", s.block, s.sub_interval]
            for s in slices]
    _write_csv(path, ["t_lo", "t_hi", "mse", "block", "sub_interval"], rows)


def write_slices_csv(path, model, problem, slice_times, slice_x, n=401):
    """Fixed-time and fixed-x profile exports for 1-D problems."""
    dom = problem.domain
    rows = []
    fields = list(model.spec.fields)
    blocks = range(1, model.partition.n_blocks + 1)
    xs = np.linspace(dom.lo, dom.hi, n)
    for t_val in slice_times:
        coords = {"x": xs, net.TIME_COORD: np.full(n, float(t_val))}
        preds = net.predict_batch(model, coords)
        exact = problem.exact(coords)
        for i in range(n):
            row = [f"t={t_val:g}", f"{xs[i]:.10g}", f"{t_val:.10g}"]
            for f in fields:
                row += [("" if b not in preds or np.isnan(preds[b][f][i])
                         else f"{preds[b][f][i]:.10g}") for b in blocks]
                row.append(f"{np.asarray(exact[f]).ravel()[i]:.10g}")
            rows.append(row)
    ts = np.linspace(model.partition.t_start, model.partition.t_end, n)
    coords = {"x": np.full(n, float(slice_x)), net.TIME_COORD: ts}
    preds = net.predict_batch(model, coords)
    exact = problem.exact(coords)
    for i in range(n):
        row = [f"x={slice_x:g}", f"{slice_x:.10g}", f"{ts[i]:.10g}"]
        for f in fields:
            row += [("" if b not in preds or np.isnan(preds[b][f][i])
                     else f"{preds[b][f][i]:.10g}") for b in blocks]
            row.append(f"{np.asarray(exact[f]).ravel()[i]:.10g}")
        rows.append(row)
    header = ["slice", "x", "t"]
    for f in fields:
        header += [f"{f}_block{b}" for b in blocks] + [f"{f}_exact"]
    _write_csv(path, header, rows)


def write_report(path, report: mx.MetricsReport):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _evaluate_and_write(cfg, model, history, run_dir, wall, extra_meta=None):
    grid = tr.evaluate_grid(model, cfg.problem, cfg.eval.spacing,
                            cfg.eval.time_spacing)
    meta = {
        "config_hash": cfg.config_hash,
        "problem": cfg.problem.name,
        "seed": cfg.train.seed,
        "wall_clock_s": wall,
        "epochs": len(history) if history is not None else None,
    }
    meta.update(extra_meta or {})
    report = mx.grid_report(grid, metadata=meta)
    paths = {"report": os.path.join(run_dir, "report.json"),
             "grid": os.path.join(run_dir, "grid.csv"),
             "mse_time": os.path.join(run_dir, "mse_time.csv")}
    write_report(paths["report"], report)
    write_grid_csv(paths["grid"], grid)
    write_mse_time_csv(paths["mse_time"],
                       mx.mse_over_time(grid, cfg.eval.mse_slice_width))
    if len(cfg.problem.coords) == 2:  # 1-D space: profile exports
        paths["slices"] = os.path.join(run_dir, "slices.csv")
        write_slices_csv(paths["slices"], model, cfg.problem,
                         cfg.eval.slice_times, cfg.eval.slice_x)
    if history is not None:
        paths["loss"] = os.path.join(run_dir, "loss.csv")
        write_loss_csv(paths["loss"], history)
    return report, paths


def cmd_train(cfg: ExperimentConfig, seed=None, log_every=0):
    run_dir = cfg.run_dir
    os.makedirs(run_dir, exist_ok=True)
    train_cfg = cfg.train
    if seed is not None:
        train_cfg = tr.TrainConfig(
            epochs=train_cfg.epochs, lr=train_cfg.lr, beta1=train_cfg.beta1,
            beta2=train_cfg.beta2, eps=train_cfg.eps, seed=seed,
            sampling=train_cfg.sampling,
            checkpoint_interval=train_cfg.checkpoint_interval,
            run_dir=run_dir, noise_std=train_cfg.noise_std,
            noise_seed=train_cfg.noise_seed)
    tic = time.perf_counter()
    result = tr.train(cfg.problem, cfg.partition, cfg.policy, cfg.schedule,
                      train_cfg, hidden=cfg.hidden, mutual_cfg=cfg.mutual_cfg,
                      weights=cfg.weights, log_every=log_every)
    wall = time.perf_counter() - tic
    if not train_cfg.run_dir:
        net.save_checkpoint(os.path.join(run_dir, "checkpoint.json"),
                            result.model.params, cfg.schedule)
    report, paths = _evaluate_and_write(cfg, result.model, result.history,
                                        run_dir, wall)
    print(f"train: {len(result.history)} epochs in {wall:.1f}s, "
          f"R2={report.r2:.5f}, artifacts in {run_dir}")
    return report, paths


def cmd_eval(cfg: ExperimentConfig, checkpoint, spacing, time_spacing=None):
    if not os.path.exists(checkpoint):
        raise MissingArtifactError(f"checkpoint not found: {checkpoint}")
    doc = net.load_checkpoint(checkpoint)
    params, schedule = net.params_from_doc(doc)
    model = net.Model(params, cfg.partition, cfg.policy, schedule)
    run_dir = cfg.run_dir
    os.makedirs(run_dir, exist_ok=True)
    eval_cfg = EvalSettings(spacing=float(spacing),
                            time_spacing=time_spacing,
                            slice_times=cfg.eval.slice_times,
                            slice_x=cfg.eval.slice_x,
                            mse_slice_width=cfg.eval.mse_slice_width)
    cfg_local = ExperimentConfig(**{**cfg.__dict__, "eval": eval_cfg})
    report, paths = _evaluate_and_write(cfg_local, model, None, run_dir, 0.0,
                                        extra_meta={"checkpoint": checkpoint})
    print(f"eval: R2={report.r2:.5f}, artifacts in {run_dir}")
    return report, paths


def _sweep_train_config(cfg: ExperimentConfig, seed):
    return tr.TrainConfig(
        epochs=cfg.sweep.epochs or cfg.train.epochs, lr=cfg.train.lr,
        beta1=cfg.train.beta1, beta2=cfg.train.beta2, eps=cfg.train.eps,
        seed=seed if seed is not None else cfg.train.seed,
        sampling=cfg.train.sampling)


def cmd_sweep(cfg: ExperimentConfig, table: int):
    """R^2 matrices over the block/overlap grid (1) or the conditioning/FF
    grid (2); one training run per cell."""
    run_dir = cfg.run_dir
    os.makedirs(run_dir, exist_ok=True)
    spacing = cfg.sweep.spacing or cfg.eval.spacing
    problem = cfg.problem
    seed = cfg.sweep.seed
    rows = []
    if table == 1:
        header = ["blocks"] + ["none" if m == 0 else str(m) for m in TABLE1_MUTUAL]
        # Full hidden-state transfer in every sub-interval, conditioning on
        # the preceding block's end: the regime the block-count/overlap grid
        # is defined for.  With zero factors the shared-weight blocks would
        # collapse into one global network and the overlap would not matter.
        schedule = net.ForgetFactorSchedule(1.0, 1.0, 1.0)
        policy = iv.ConditioningPolicy.preceding_end()
        for n_blocks in TABLE1_BLOCKS:
            row = [n_blocks]
            for m in TABLE1_MUTUAL:
                part = iv.build_partition(problem.t_start, problem.t_end,
                                          n_blocks, m, cfg.partition.near_width)
                res = tr.train(problem, part, policy, schedule,
                               _sweep_train_config(cfg, seed),
                               hidden=cfg.hidden, mutual_cfg=cfg.mutual_cfg,
                               weights=cfg.weights)
                grid = tr.evaluate_grid(res.model, problem, spacing,
                                        cfg.eval.time_spacing)
                r2 = mx.grid_report(grid).r2
                row.append(f"{r2:.4f}")
                print(f"sweep1 blocks={n_blocks} mutual={m}: R2={r2:.4f}")
            rows.append(row)
        path = os.path.join(run_dir, "sweep_table1.csv")
    elif table == 2:
        part = cfg.partition
        if part.n_blocks != 2:
            raise ConfigError(["sweep table 2 expects a 2-block partition"])
        end1 = part.ends[0]
        row_policies = [
            ("[TA, TA, TA]", (iv.TA, iv.TA, iv.TA)),
            ("[TA, TA, end]", (iv.TA, iv.TA, iv.Fixed(end1))),
            ("[end, end, end]", (iv.Fixed(end1),) * 3),
            ("[TA, end, TA]", (iv.TA, iv.Fixed(end1), iv.TA)),
            ("[end, end, TA]", (iv.Fixed(end1), iv.Fixed(end1), iv.TA)),
            ("[TA, past, past]", (iv.TA, iv.Fixed(end1 + 0.15),
                                  iv.Fixed(end1 + 0.15))),
            ("[TA, 0, 0]", (iv.TA, iv.Fixed(part.t_start),
                            iv.Fixed(part.t_start))),
        ]
        header = ["conditioning"] + [str(list(ffs)) for ffs in TABLE2_FF_COLUMNS]
        for label, rules in row_policies:
            row = [label]
            policy = iv.ConditioningPolicy(*rules)
            for ffs in TABLE2_FF_COLUMNS:
                schedule = net.ForgetFactorSchedule(*ffs)
                res = tr.train(problem, part, policy, schedule,
                               _sweep_train_config(cfg, seed),
                               hidden=cfg.hidden, mutual_cfg=cfg.mutual_cfg,
                               weights=cfg.weights)
                grid = tr.evaluate_grid(res.model, problem, spacing,
                                        cfg.eval.time_spacing)
                r2 = mx.grid_report(grid).r2
                row.append(f"{r2:.4f}")
                print(f"sweep2 {label} ff={list(ffs)}: R2={r2:.4f}")
            rows.append(row)
        path = os.path.join(run_dir, "sweep_table2.csv")
    else:
        raise ConfigError([f"sweep table must be 1 or 2, got {table}"])
    _write_csv(path, header, rows)
    print(f"sweep: wrote {path}")
    return path


def cmd_noise(cfg: ExperimentConfig):
    run_dir = cfg.run_dir
    os.makedirs(run_dir, exist_ok=True)
    rows, reports = mx.noise_experiment(
        cfg.problem, cfg.partition, cfg.policy, cfg.schedule, cfg.train,
        cfg.noise, hidden=cfg.hidden)
    path = os.path.join(run_dir, "noise.csv")
    _write_csv(path, ["std", "block", "mse", "log10_mse"],
               [[f"{r.std:g}", r.block, f"{r.mse:.10e}", f"{r.log10_mse:.6f}"]
                for r in rows])
    summary = {f"{std:g}": rep.as_dict() for std, rep in reports.items()}
    tmp = os.path.join(run_dir, "noise_report.json")
    with open(tmp + ".tmp", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    os.replace(tmp + ".tmp", tmp)
    print(f"noise: wrote {path}")
    return rows, reports


def run_experiment(config_path, command, **kwargs):
    """Dispatch one pipeline; raises typed errors the CLI maps to exit codes."""
    cfg = load_config(config_path)
    if command == "train":
        return cmd_train(cfg, seed=kwargs.get("seed"),
                         log_every=kwargs.get("log_every", 0))
    if command == "eval":
        if kwargs.get("checkpoint") is None:
            raise ConfigError(["eval needs --checkpoint"])
        return cmd_eval(cfg, kwargs["checkpoint"],
                        kwargs.get("spacing") or cfg.eval.spacing,
                        kwargs.get("time_spacing"))
    if command == "sweep":
        return cmd_sweep(cfg, int(kwargs.get("table", 1)))
    if command == "noise":
        return cmd_noise(cfg)
    raise ConfigError([f"unknown command {command!r}"])
