"""The recurrent block: a tanh MLP with shared weights and hidden-state coupling.

One parameter set serves every block.  A block maps PDE coordinates to field
values through four tanh layers; when a hidden state from the preceding block
is present, each layer ``l`` computes

    a_l = tanh(W_l a_{l-1} + ff * U_l h_l + b_l)

where ``h_l`` is the preceding block's layer-``l`` activation at the
conditioning coordinates, ``U_l`` a learned coupling map and ``ff`` the forget
factor for the querying sub-interval class.  Conditioning makes predictions
single-valued: the chain of preceding blocks is evaluated at policy-chosen
moments (same spatial point, chosen time), so a query ``(x, t)`` always sees
the same hidden state regardless of what else is being evaluated.

Graph builders return expressions from :mod:`mirnn.expr`; gradients flow
through the whole conditioning chain into the shared weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from . import intervals as iv
from .errors import ConfigError, PartitionError, ShapeError

__all__ = [
    "LayerSpec",
    "BlockParams",
    "HiddenState",
    "ForgetFactorSchedule",
    "BlockEval",
    "Model",
    "init_params",
    "block_graph",
    "chain_graph",
    "evaluation_plan",
    "block_forward",
    "conditional_hidden",
    "unroll",
    "predict_batch",
    "params_to_doc",
    "params_from_doc",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1
TIME_COORD = "t"


@dataclass(frozen=True)
class LayerSpec:
    """Widths and naming of one block (shared by all blocks of a model)."""

    coords: tuple
    fields: tuple
    hidden: tuple = (30, 30, 30, 30)

    def __post_init__(self):
        if not self.coords or not self.fields or not self.hidden:
            raise ConfigError("coords, fields and hidden layer list must be non-empty")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError(f"zero-width hidden layer in {self.hidden}")
        if TIME_COORD not in self.coords:
            raise ConfigError(f"coords must include the time coordinate {TIME_COORD!r}")
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def param_shapes(self):
        """Canonical parameter name -> shape mapping (insertion order matters)."""
        h = self.hidden
        shapes = {}
        for c in self.coords:
            shapes[f"w0:{c}"] = (1, h[0])
        shapes["b0"] = (h[0],)
        for l in range(1, len(h)):
            shapes[f"w{l}"] = (h[l - 1], h[l])
            shapes[f"b{l}"] = (h[l],)
        for f in self.fields:
            shapes[f"wout:{f}"] = (h[-1], 1)
            shapes[f"bout:{f}"] = (1,)
        for l in range(len(h)):
            shapes[f"u{l}"] = (h[l], h[l])
        return shapes


@dataclass
class BlockParams:
    """The single shared weight set (feed-forward path plus coupling maps)."""

    spec: LayerSpec
    arrays: dict
    seed: int

    def __post_init__(self):
        expected = self.spec.param_shapes()
        if set(expected) != set(self.arrays):
            raise ShapeError("parameter names do not match the layer spec")
        for name, shape in expected.items():
            if tuple(self.arrays[name].shape) != shape:
                raise ShapeError(
                    f"{name}: expected shape {shape}, got {self.arrays[name].shape}"
                )
            if not np.all(np.isfinite(self.arrays[name])):
                raise ShapeError(f"non-finite entries in parameter {name}")

    def copy(self):
        return BlockParams(self.spec, {k: v.copy() for k, v in self.arrays.items()},
                           self.seed)

    def n_parameters(self):
        return sum(v.size for v in self.arrays.values())


@dataclass
class HiddenState:
    """Per-layer activation vectors of a block plus where they were produced."""

    layers: list
    conditioning: dict


@dataclass(frozen=True)
class ForgetFactorSchedule:
    """Hidden-state scaling per sub-interval class, each in [0, 1]."""

    mutual: float = 0.5
    near: float = 0.5
    remaining: float = 0.5

    def __post_init__(self):
        for name in ("mutual", "near", "remaining"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"forget factor {name}={v} outside [0, 1]")

    def value_for(self, cls: iv.SubIntervalClass) -> float:
        return {
            iv.SubIntervalClass.MUTUAL: self.mutual,
            iv.SubIntervalClass.NEAR: self.near,
            iv.SubIntervalClass.REMAINING: self.remaining,
        }[cls]

    def as_list(self):
        return [self.mutual, self.near, self.remaining]


def init_params(spec: LayerSpec, seed: int) -> BlockParams:
    """Fan-based uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in spec.param_shapes().items():
        if name.startswith("b"):
            arrays[name] = np.zeros(shape)
            continue
        if name.startswith("w0:"):
            fan_in, fan_out = len(spec.coords), shape[1]
        elif name.startswith("wout:"):
            fan_in, fan_out = shape[0], len(spec.fields)
        else:
            fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return BlockParams(spec, arrays, seed)


# ---------------------------------------------------------------------------
# Graph builders
# ---------------------------------------------------------------------------

def block_graph(spec: LayerSpec, coord_exprs: dict, hidden_in=None, ff: float = 0.0):
    """Expressions for one block's fields and layer activations.

    ``hidden_in`` is a list of layer-activation expressions from the
    preceding block (or None for an uncoupled pass).  With ``ff == 0`` the
    coupling terms are dropped entirely, so the graph is identical to the
    uncoupled one.
    """
    missing = [c for c in spec.coords if c not in coord_exprs]
    if missing:
        raise ShapeError(f"missing coordinate expressions: {missing}")
    couple = hidden_in is not None and ff != 0.0
    if couple and len(hidden_in) != len(spec.hidden):
        raise ShapeError(
            f"hidden state has {len(hidden_in)} layers, block has {len(spec.hidden)}"
        )
    acts = []
    prev = None
    for l in range(len(spec.hidden)):
        if l == 0:
            terms = [E.matmul(coord_exprs[c], E.par(f"w0:{c}")) for c in spec.coords]
        else:
            terms = [E.matmul(prev, E.par(f"w{l}"))]
        if couple:
            terms.append(E.scale(E.matmul(hidden_in[l], E.par(f"u{l}")), ff))
        terms.append(E.par(f"b{l}"))
        prev = E.tanh(E.add(*terms))
        acts.append(prev)
    fields = {
        f: E.add(E.matmul(prev, E.par(f"wout:{f}")), E.par(f"bout:{f}"))
        for f in spec.fields
    }
    return fields, acts


@dataclass(frozen=True)
class BlockEval:
    """One link of an evaluation chain.

    ``time`` is the conditioning time for this block, or None for temporal
    alignment (the block runs at the query time).  ``ff_in`` scales the
    hidden state this block receives (None for block 1, which takes none).
    """

    block: int
    time: object
    ff_in: object


def evaluation_plan(partition: iv.TimePartition, policy: iv.ConditioningPolicy,
                    schedule: ForgetFactorSchedule, block: int, window):
    """Chain of `BlockEval` links, block 1 first and the query block last.

    ``window`` is the time window the query covers; it must sit inside a
    single sub-interval class (individual points use ``(t, t)``).  The rule
    for each link comes from the class of the time at which that link runs.
    """
    lo, hi = window
    b_lo, b_hi = partition.interval(block)
    if not (b_lo <= lo and hi <= b_hi):
        raise PartitionError(
            f"window [{lo}, {hi}] not inside block {block} interval [{b_lo}, {b_hi}]"
        )
    plan = []
    blk, tspec, win = block, None, window
    while True:
        if blk == 1:
            plan.append(BlockEval(1, tspec, None))
            break
        cls = iv.classify_window(partition, blk, win[0], win[1])
        plan.append(BlockEval(blk, tspec, schedule.value_for(cls)))
        rule = policy.rule_for(cls)
        if isinstance(rule, iv.TemporalAlignment):
            pass  # child runs at the same time: same tspec, same window
        elif isinstance(rule, iv.Fixed):
            tspec, win = rule.time, (rule.time, rule.time)
        elif isinstance(rule, iv.PrecedingEnd):
            c = partition.ends[blk - 2]
            tspec, win = c, (c, c)
        else:
            raise PartitionError(f"unknown conditioning rule {rule!r}")
        blk -= 1
    plan.reverse()
    return plan


def chain_graph(spec: LayerSpec, plan, coord_exprs: dict):
    """Field expressions for the query block, hidden chain included.

    For every link, the block runs at the query's spatial coordinates and at
    the link's conditioning time (the query time itself under temporal
    alignment).  Gradients flow through the whole chain.
    """
    hidden = None
    fields = acts = None
    for link in plan:
        if link.time is None:
            t_expr = coord_exprs[TIME_COORD]
        else:
            t_expr = E.const(np.array([[float(link.time)]]))
        coords = dict(coord_exprs)
        coords[TIME_COORD] = t_expr
        fields, acts = block_graph(spec, coords, hidden, link.ff_in or 0.0)
        hidden = acts
    return fields, acts


# ---------------------------------------------------------------------------
# Numeric surface
# ---------------------------------------------------------------------------

def _as_column(v):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, None]
    return a


def block_forward(params: BlockParams, coords: dict, hidden_in=None, ff: float = 0.0):
    """Evaluate one block at bound coordinates; returns (fields, HiddenState)."""
    spec = params.spec
    coord_exprs = {c: E.inp(f"q:{c}") for c in spec.coords}
    hidden_exprs = None
    bindings = {f"q:{c}": _as_column(coords[c]) for c in spec.coords}
    if hidden_in is not None:
        hidden_exprs = [E.inp(f"h:{l}") for l in range(len(spec.hidden))]
        for l, h in enumerate(hidden_in.layers):
            bindings[f"h:{l}"] = np.asarray(h, dtype=np.float64)
    fields, acts = block_graph(spec, coord_exprs, hidden_exprs, ff)
    roots = [fields[f] for f in spec.fields] + list(acts)
    values = E.Program(roots).run(bindings, params.arrays)
    out = dict(zip(spec.fields, values[: len(spec.fields)]))
    state = HiddenState(values[len(spec.fields):], dict(coords))
    return out, state


def conditional_hidden(params: BlockParams, partition: iv.TimePartition,
                       schedule: ForgetFactorSchedule, spatial: dict, chain_times):
    """Hidden state produced by running blocks ``1..len(chain_times)`` in turn.

    ``chain_times[k]`` is the conditioning time for block ``k + 1``; each
    block runs at the query's spatial coordinates and its chain time, feeding
    its activations (scaled by the forget factor of the class its time falls
    in) into the next block.  An empty chain is valid for block 1 queries and
    yields None.
    """
    chain_times = list(chain_times)
    if not chain_times:
        return None
    if len(chain_times) >= partition.n_blocks:
        raise PartitionError(
            f"chain of {len(chain_times)} conditioning times for a "
            f"{partition.n_blocks}-block partition"
        )
    state = None
    for k, t_k in enumerate(chain_times, start=1):
        if k == 1:
            ff = 0.0
        else:
            cls = iv.classify_window(partition, k, t_k, t_k)
            ff = schedule.value_for(cls)
        coords = dict(spatial)
        coords[TIME_COORD] = t_k
        _, state = block_forward(params, coords, state, ff)
    return state


@dataclass
class Model:
    """A trained (or initialized) model: shared weights plus time structure."""

    params: BlockParams
    partition: iv.TimePartition
    policy: iv.ConditioningPolicy
    schedule: ForgetFactorSchedule
    _graph_cache: dict = field(default_factory=dict, repr=False)

    @property
    def spec(self):
        return self.params.spec

    def prediction_program(self, block: int, window):
        """Compiled stable-kernel program for one (block, class window) group."""
        plan = evaluation_plan(self.partition, self.policy, self.schedule,
                               block, window)
        key = (block, tuple((l.block, l.time, l.ff_in) for l in plan))
        if key not in self._graph_cache:
            coord_exprs = {c: E.inp(f"q:{c}") for c in self.spec.coords}
            fields, _ = chain_graph(self.spec, plan, coord_exprs)
            prog = E.compile_program(*[fields[f] for f in self.spec.fields])
            self._graph_cache[key] = prog
        return self._graph_cache[key]


def unroll(model: Model, query: dict):
    """Predictions at one query point, one entry per owning block.

    The query time must lie inside at least one block interval.  In a mutual
    region both owners predict; the result maps block index to field values.
    Uses the batching-invariant kernel, so repeated evaluation of the same
    point is bitwise reproducible in any context.
    """
    t = float(np.asarray(query[TIME_COORD]).reshape(()))
    owners = iv.owning_blocks(model.partition, t)
    bindings = {f"q:{c}": _as_column(query[c]) for c in model.spec.coords}
    out = {}
    for b in owners:
        prog = model.prediction_program(b, (t, t))
        values = prog.run(bindings, model.params.arrays)
        out[b] = {f: float(np.asarray(v).reshape(())) for f, v in
                  zip(model.spec.fields, values)}
    return out


def predict_batch(model: Model, coords: dict):
    """Vectorized predictions over arbitrary query points.

    Returns ``{block: {field: (N,) array}}`` with NaN where a block does not
    own the point.  Points are grouped by (owning block, sub-interval class)
    internally; per-point results are bitwise independent of the grouping
    thanks to the stable kernel.
    """
    spec = model.spec
    part = model.partition
    t = np.asarray(coords[TIME_COORD], dtype=np.float64).ravel()
    n = t.size
    cols = {c: _as_column(coords[c]) for c in spec.coords}
    if any(v.shape[0] not in (1, n) for v in cols.values()):
        raise ShapeError("coordinate arrays must share a common length")
    out = {}
    for b in range(1, part.n_blocks + 1):
        lo, hi = part.interval(b)
        own = (t >= lo) & (t <= hi)
        if not np.any(own):
            continue
        preds = {f: np.full(n, np.nan) for f in spec.fields}
        windows = list(iv.class_windows(part, b).items())
        unassigned = own.copy()
        for j, (_cls, (w_lo, w_hi)) in enumerate(windows):
            # Classes own their upper endpoints (same convention as classify):
            # earlier windows take everything up to their upper end, the last
            # window takes whatever is left.
            if j == len(windows) - 1:
                in_cls = unassigned
            else:
                in_cls = unassigned & (t <= w_hi)
            idx = np.where(in_cls)[0]
            if idx.size == 0:
                continue
            unassigned = unassigned & ~in_cls
            prog = model.prediction_program(b, (w_lo, w_hi))
            bindings = {}
            for c in spec.coords:
                col = cols[c]
                bindings[f"q:{c}"] = col if col.shape[0] == 1 else col[idx]
            values = prog.run(bindings, model.params.arrays)
            for f, v in zip(spec.fields, values):
                preds[f][idx] = v.ravel()
        out[b] = preds
    return out


# ---------------------------------------------------------------------------
# Checkpoint persistence (bit-exact via shortest-round-trip float repr)
# ---------------------------------------------------------------------------

def params_to_doc(params: BlockParams, schedule: ForgetFactorSchedule):
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_spec": {
            "coords": list(params.spec.coords),
            "fields": list(params.spec.fields),
            "hidden": list(params.spec.hidden),
        },
        "seed": params.seed,
        "ff_schedule": schedule.as_list(),
        "params": {
            name: {"shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in params.arrays.items()
        },
    }


def params_from_doc(doc):
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format version {doc.get('format_version')!r}"
        )
    ls = doc["layer_spec"]
    spec = LayerSpec(tuple(ls["coords"]), tuple(ls["fields"]), tuple(ls["hidden"]))
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    params = BlockParams(spec, arrays, doc["seed"])
    schedule = ForgetFactorSchedule(*doc["ff_schedule"])
    return params, schedule


def save_checkpoint(path, params, schedule, extra=None):
    doc = params_to_doc(params, schedule)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
