"""Adam training loop, checkpointing, and grid evaluation.

Each epoch resamples every collocation branch with an epoch-derived seed
(``default_rng([seed, stream, epoch])``), takes one full-batch gradient of
the compiled objective, and applies a standard bias-corrected Adam update.
Epoch-derived seeds make runs bitwise reproducible and let a resumed run
replay the exact sampling stream of the uninterrupted one.

Checkpoints are JSON documents (shortest-round-trip float serialization is
bit-exact for finite doubles): the model document from :mod:`mirnn.network`
extended with the Adam moments, step counter and epoch index.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import intervals as iv
from . import loss as ls
from . import network as net
from . import physics as ph
from .errors import ConfigError, DivergenceError, MissingArtifactError, ShapeError

__all__ = [
    "TrainConfig",
    "epoch_rngs",
    "AdamState",
    "TrainHistory",
    "TrainResult",
    "adam_init",
    "adam_step",
    "train",
    "resume",
    "save_train_checkpoint",
    "load_train_checkpoint",
    "GridEvaluation",
    "evaluate_grid",
]

_SAMPLE_STREAM = 101
_NOISE_STREAM = 202


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    sampling: ph.SamplingSpec = field(default_factory=ph.SamplingSpec)
    checkpoint_interval: int = 0
    run_dir: str = None
    noise_std: float = 0.0
    noise_seed: int = None

    def __post_init__(self):
        problems = []
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                problems.append(f"{name} must be in (0, 1), got {v}")
        if not self.eps > 0:
            problems.append(f"eps must be > 0, got {self.eps}")
        if self.noise_std < 0:
            problems.append(f"noise_std must be >= 0, got {self.noise_std}")
        if problems:
            raise ConfigError(problems)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(arrays) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in arrays.items()},
                     v={k: np.zeros_like(v) for k, v in arrays.items()},
                     step=0)


def adam_step(arrays, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, in place; returns (arrays, state)."""
    for name, a in arrays.items():
        g = grads.get(name)
        if g is None or g.shape != a.shape:
            raise ShapeError(f"gradient for {name!r} missing or misshaped")
        finite = np.isfinite(g)
        if not finite.all():
            idx = int(np.argmin(finite.ravel()))
            raise DivergenceError(
                f"non-finite gradient for parameter {name!r} at flat index {idx}")
    state.step += 1
    t = state.step
    b1c = 1.0 - config.beta1 ** t
    b2c = 1.0 - config.beta2 ** t
    for name, a in arrays.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        a -= config.lr * (m / b1c) / (np.sqrt(v / b2c) + config.eps)
    return arrays, state


@dataclass
class TrainHistory:
    """Per-epoch loss records; wall-clock kept apart so the records themselves
    are seed-deterministic and can be compared bitwise across runs."""

    records: list = field(default_factory=list)
    wall: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def totals(self):
        return np.array([r.total for r in self.records])


@dataclass
class TrainResult:
    model: net.Model
    history: TrainHistory
    loss_graph: ls.LossGraph


def epoch_rngs(config: TrainConfig, epoch: int):
    """The per-epoch sampling and noise streams; derived, not sequential,
    so resumed runs and replay-style audits see identical draws."""
    sample = np.random.default_rng([config.seed, _SAMPLE_STREAM, epoch])
    nseed = config.noise_seed if config.noise_seed is not None else config.seed + 1
    noise = np.random.default_rng([nseed, _NOISE_STREAM, epoch])
    return sample, noise


def _checkpoint_path(run_dir):
    return os.path.join(run_dir, "checkpoint.json")


def save_train_checkpoint(path, params, schedule, state: AdamState, epoch: int):
    extra = {
        "epoch": epoch,
        "adam": {
            "step": state.step,
            "m": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                  for k, v in state.m.items()},
            "v": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                  for k, v in state.v.items()},
        },
    }
    tmp = path + ".tmp"
    doc = net.params_to_doc(params, schedule)
    doc.update(extra)
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_train_checkpoint(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"checkpoint not found: {path}")
    doc = net.load_checkpoint(path)
    params, schedule = net.params_from_doc(doc)
    if "adam" not in doc:
        raise ConfigError(f"{path} is a model checkpoint without training state")
    unpack = lambda d: {k: np.asarray(e["data"]).reshape(e["shape"])
                        for k, e in d.items()}
    state = AdamState(m=unpack(doc["adam"]["m"]), v=unpack(doc["adam"]["v"]),
                      step=doc["adam"]["step"])
    return params, schedule, state, doc["epoch"]


def train(problem, partition, policy, schedule, config: TrainConfig,
          hidden=(30, 30, 30, 30), mutual_cfg=None, weights=None,
          log_every=0, _warm=None) -> TrainResult:
    """Train shared block weights on one problem; deterministic per seed."""
    if not np.isclose(partition.t_start, problem.t_start) or \
            not np.isclose(partition.t_end, problem.t_end):
        raise ConfigError(
            f"partition [{partition.t_start}, {partition.t_end}] does not cover "
            f"the problem time range [{problem.t_start}, {problem.t_end}]")
    spec = net.LayerSpec(problem.coords, problem.fields, hidden)
    if _warm is None:
        params = net.init_params(spec, config.seed)
        state = adam_init(params.arrays)
        start_epoch = 0
    else:
        params, state, start_epoch = _warm
        if params.spec != spec:
            raise ConfigError("checkpoint layer spec does not match the problem")
    graph = ls.build_loss_graph(spec, problem, partition, policy, schedule,
                                config.sampling, mutual_cfg, weights)
    history = TrainHistory()
    run_dir = config.run_dir
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
    ckpt = _checkpoint_path(run_dir) if run_dir else None

    for epoch in range(start_epoch, config.epochs):
        tic = time.perf_counter()
        sample_rng, noise_rng = epoch_rngs(config, epoch)
        bindings = graph.bind(sample_rng, noise_std=config.noise_std,
                              noise_rng=noise_rng)
        breakdown, grads = graph.value_and_grad(bindings, params.arrays)
        if not np.isfinite(breakdown.total):
            raise DivergenceError(
                f"loss became non-finite at epoch {epoch}"
                + (f"; last good checkpoint: {ckpt}" if ckpt else ""))
        adam_step(params.arrays, grads, state, config)
        history.records.append(breakdown)
        history.wall.append(time.perf_counter() - tic)
        done = epoch + 1
        if ckpt and config.checkpoint_interval and \
                done % config.checkpoint_interval == 0:
            save_train_checkpoint(ckpt, params, schedule, state, done)
        if log_every and done % log_every == 0:
            print(f"epoch {done}/{config.epochs}  total={breakdown.total:.6e}")
    if ckpt:
        save_train_checkpoint(ckpt, params, schedule, state, config.epochs)
    model = net.Model(params, partition, policy, schedule)
    return TrainResult(model, history, graph)


def resume(checkpoint_path, problem, partition, policy, config: TrainConfig,
           hidden=(30, 30, 30, 30), mutual_cfg=None, weights=None,
           log_every=0) -> TrainResult:
    """Continue an interrupted run; replays the run it would have been."""
    params, schedule, state, epoch = load_train_checkpoint(checkpoint_path)
    return train(problem, partition, policy, schedule, config, hidden=hidden,
                 mutual_cfg=mutual_cfg, weights=weights, log_every=log_every,
                 _warm=(params, state, epoch))


# ---------------------------------------------------------------------------
# Grid evaluation
# ---------------------------------------------------------------------------

@dataclass
class GridEvaluation:
    """Predictions and exact values over a space-time mesh.

    ``per_block`` holds each block's own prediction (NaN outside its
    interval); ``selected`` resolves mutual regions to the later block so
    metrics see a single-valued field, while both stay available for
    overlap-agreement diagnostics.
    """

    coords: dict
    per_block: dict
    selected: dict
    exact: dict
    partition: iv.TimePartition
    spacing: float
    time_spacing: float

    @property
    def n_points(self):
        return np.asarray(self.coords[net.TIME_COORD]).size

    def flat(self, fields=None):
        fields = fields or list(self.selected)
        pred = np.concatenate([self.selected[f] for f in fields])
        exact = np.concatenate([self.exact[f] for f in fields])
        return pred, exact

    def mutual_gap(self, pair: int):
        """Max |earlier - later| over the pair's overlap, per field."""
        lo, hi = self.partition.mutual_interval(pair)
        t = self.coords[net.TIME_COORD]
        sel = (t >= lo) & (t <= hi)
        out = {}
        for f in self.selected:
            a = self.per_block[pair][f][sel]
            b = self.per_block[pair + 1][f][sel]
            out[f] = float(np.max(np.abs(a - b))) if a.size else 0.0
        return out


def _axis(lo, hi, spacing):
    n = int(round((hi - lo) / spacing)) + 1
    return np.linspace(lo, hi, n)


def evaluate_grid(model: net.Model, problem, spacing, time_spacing=None,
                  chunk=20000) -> GridEvaluation:
    """Mesh the space-time domain and route every point through the model.

    ``spacing`` applies to every spatial axis (and to time unless
    ``time_spacing`` overrides it).  Points outside an irregular domain are
    dropped.  Uses the batching-invariant kernel in chunks, so results do
    not depend on chunking.
    """
    if spacing <= 0 or (time_spacing is not None and time_spacing <= 0):
        raise ConfigError("grid spacings must be positive")
    time_spacing = time_spacing if time_spacing is not None else spacing
    box = problem.domain.bounding_box()
    axes = [_axis(lo, hi, spacing) for lo, hi in box.values()]
    names = list(box.keys())
    mesh = np.meshgrid(*axes, indexing="ij")
    spatial = {c: m.ravel() for c, m in zip(names, mesh)}
    keep = problem.domain.contains(spatial)
    spatial = {c: v[keep] for c, v in spatial.items()}
    times = _axis(problem.t_start, problem.t_end, time_spacing)

    n_s = spatial[names[0]].size
    coords = {c: np.tile(v, times.size) for c, v in spatial.items()}
    coords[net.TIME_COORD] = np.repeat(times, n_s)
    n = coords[net.TIME_COORD].size

    per_block = {}
    part = model.partition
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        piece = {c: v[sl] for c, v in coords.items()}
        preds = net.predict_batch(model, piece)
        for b, fields in preds.items():
            dest = per_block.setdefault(
                b, {f: np.full(n, np.nan) for f in model.spec.fields})
            for f, v in fields.items():
                dest[f][sl] = v
    t = coords[net.TIME_COORD]
    selected = {f: np.full(n, np.nan) for f in model.spec.fields}
    for b in range(1, part.n_blocks + 1):
        if b not in per_block:
            continue
        lo, hi = part.interval(b)
        own = (t >= lo) & (t <= hi)
        for f in model.spec.fields:
            selected[f][own] = per_block[b][f][own]
    exact = {f: np.asarray(v, dtype=np.float64)
             for f, v in problem.exact(coords).items()}
    return GridEvaluation(coords, per_block, selected, exact, part,
                          spacing, time_spacing)
