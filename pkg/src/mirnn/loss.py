"""Assembly of the training objective.

Total = initial-condition term + per-block (PDE + boundary) terms + per-pair
mutual terms.  Every term is a mean of squares built as an expression graph,
so one reverse sweep yields the parameter gradient of the whole objective;
PDE residuals use exact graph derivatives throughout (no finite differences
anywhere in the objective).

The mutual term ties consecutive blocks together: both evaluate the shared
overlap window and the mean squared gap between their predictions is
penalized.  It carries two optional companions (boundary and residual
penalties over the same window, off by default) and a detach switch that
freezes the earlier block's prediction into a fixed target.

``build_loss_graph`` compiles the whole objective once per run; the trainer
rebinds freshly sampled points every epoch through the branch metadata.
Components are reported after their (default 1.0) weights, and the total is
their sum in one fixed accumulation order, so ``total == sum(components)``
holds bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as E
from . import intervals as iv
from . import network as net
from . import physics as ph
from .errors import ConfigError, DomainError, PartitionError

__all__ = [
    "MutualLossConfig",
    "LossWeights",
    "LossBreakdown",
    "Branch",
    "LossGraph",
    "build_loss_graph",
    "initial_condition_loss",
    "block_loss",
    "mutual_block_loss",
    "total_loss",
]

TIME = net.TIME_COORD


@dataclass(frozen=True)
class MutualLossConfig:
    """Switches for the mutual term: the optional companions default off and
    gradients flow into both blocks' predictions unless detached."""

    include_bc: bool = False
    include_pde: bool = False
    detach_previous: bool = False


@dataclass(frozen=True)
class LossWeights:
    """Per-term coefficients; the baseline objective is unweighted."""

    ic: float = 1.0
    pde: float = 1.0
    bc: float = 1.0
    mutual: float = 1.0
    mutual_bc: float = 1.0
    mutual_pde: float = 1.0

    def __post_init__(self):
        for name in ("ic", "pde", "bc", "mutual", "mutual_bc", "mutual_pde"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


@dataclass
class LossBreakdown:
    """Per-term values of one objective evaluation (weights applied)."""

    ic: float
    pde: tuple
    bc: tuple
    mutual: tuple
    mutual_bc: tuple
    mutual_pde: tuple
    total: float

    def labeled(self):
        out = [("ic", self.ic)]
        out += [(f"pde_{b + 1}", v) for b, v in enumerate(self.pde)]
        out += [(f"bc_{b + 1}", v) for b, v in enumerate(self.bc)]
        out += [(f"mutual_{i + 1}_{i + 2}", v) for i, v in enumerate(self.mutual)]
        out += [(f"mutual_bc_{i + 1}_{i + 2}", v) for i, v in enumerate(self.mutual_bc)]
        out += [(f"mutual_pde_{i + 1}_{i + 2}", v) for i, v in enumerate(self.mutual_pde)]
        out.append(("total", self.total))
        return out


@dataclass(frozen=True)
class Branch:
    """Sampling recipe for one group of collocation inputs."""

    prefix: str
    kind: str            # interior | boundary | initial | mutual | periodic
    block: int           # evaluating block (later block for mutual pairs)
    window: tuple
    count: int
    pair: tuple = None
    with_targets: bool = False
    noise_fields: tuple = ()


def _allocate(total, widths, floor=2):
    """Split ``total`` into len(widths) counts proportional to widths.

    Deterministic largest-remainder rounding with a per-slot floor; the floor
    keeps tiny windows (a 0.01 s overlap inside a 2.5 s block) populated.
    """
    k = len(widths)
    if k == 0:
        return []
    total = max(total, floor * k)
    spread = total - floor * k
    wsum = float(sum(widths))
    raw = [spread * w / wsum for w in widths]
    counts = [floor + int(r) for r in raw]
    leftovers = sorted(
        range(k), key=lambda i: (raw[i] - int(raw[i]), -i), reverse=True
    )
    short = total - sum(counts)
    for i in range(short):
        counts[leftovers[i % k]] += 1
    return counts


def _mse_terms(preds, targets, fields):
    return E.add(*[E.mean(E.square(E.sub(preds[f], targets[f]))) for f in fields])


def _residual_mean_sq(problem, fields, prefix):
    leaf_names = {c: f"{prefix}:{c}" for c in problem.coords}
    bundles = {
        f: E.FieldDerivatives(value=fields[f], coords=leaf_names)
        for f in problem.fields
    }
    res = problem.residuals(bundles)
    return E.add(*[E.mean(E.square(r)) for r in res.values()])


class LossGraph:
    """Compiled objective plus the sampling metadata to rebind it each epoch."""

    def __init__(self, spec, problem, partition, policy, schedule,
                 sampling, mutual_cfg, weights):
        self.spec = spec
        self.problem = problem
        self.partition = partition
        self.policy = policy
        self.schedule = schedule
        self.sampling = sampling
        self.mutual_cfg = mutual_cfg
        self.weights = weights
        self.branches = []
        self._component_exprs = {}
        self._build()
        comps = list(self._component_exprs.values())
        self.total = E.sum_of(*comps)
        self.program = E.compile_program(self.total, *comps)

    # -- graph construction -------------------------------------------------

    def _coord_exprs(self, prefix):
        return {c: E.inp(f"{prefix}:{c}") for c in self.spec.coords}

    def _prediction(self, block, window, prefix):
        plan = net.evaluation_plan(self.partition, self.policy, self.schedule,
                                   block, window)
        coord_exprs = self._coord_exprs(prefix)
        fields, _ = net.chain_graph(self.spec, plan, coord_exprs)
        return fields

    def _build(self):
        part, problem = self.partition, self.problem
        w = self.weights
        t0 = problem.t_start

        # Initial condition: first block, starting-time slice.
        ic_prefix = "ic"
        self.branches.append(Branch(ic_prefix, "initial", 1, (t0, t0),
                                    self.sampling.initial, with_targets=True))
        preds = self._prediction(1, (t0, t0), ic_prefix)
        targets = {f: E.inp(f"{ic_prefix}:target:{f}") for f in problem.fields}
        self._component_exprs["ic"] = E.scale(
            _mse_terms(preds, targets, problem.fields), w.ic)

        # Per-block PDE and boundary terms, split by sub-interval class so
        # each group has a single conditioning chain.
        block_windows = []
        for b in range(1, part.n_blocks + 1):
            for cls, win in iv.class_windows(part, b).items():
                block_windows.append((b, cls, win))
        widths = [win[1] - win[0] for _, _, win in block_windows]
        n_int = _allocate(self.sampling.interior, widths)
        n_bnd = _allocate(self.sampling.boundary, widths)

        pde_parts = {b: [] for b in range(1, part.n_blocks + 1)}
        bc_parts = {b: [] for b in range(1, part.n_blocks + 1)}
        for (b, cls, win), ni, nb in zip(block_windows, n_int, n_bnd):
            pi = f"pde{b}:{cls.value}"
            self.branches.append(Branch(pi, "interior", b, win, ni))
            preds = self._prediction(b, win, pi)
            pde_parts[b].append((ni, _residual_mean_sq(problem, preds, pi)))

            bi = f"bc{b}:{cls.value}"
            if problem.bc_kind == "periodic":
                self.branches.append(Branch(bi, "periodic", b, win, nb))
                pa = self._prediction(b, win, f"{bi}:a")
                pb = self._prediction(b, win, f"{bi}:b")
                bc_parts[b].append((nb, _mse_terms(pa, pb, problem.fields)))
            else:
                self.branches.append(Branch(bi, "boundary", b, win, nb,
                                            with_targets=True))
                preds = self._prediction(b, win, bi)
                targets = {f: E.inp(f"{bi}:target:{f}") for f in problem.fields}
                bc_parts[b].append((nb, _mse_terms(preds, targets, problem.fields)))

        for b in range(1, part.n_blocks + 1):
            for label, parts, weight in (("pde", pde_parts[b], w.pde),
                                         ("bc", bc_parts[b], w.bc)):
                n_total = sum(n for n, _ in parts)
                pooled = E.add(*[E.scale(term, n / n_total) for n, term in parts])
                self._component_exprs[f"{label}_{b}"] = E.scale(pooled, weight)

        # Mutual terms: one per consecutive pair with a positive-width overlap.
        for i in range(1, part.n_blocks):
            lo, hi = part.mutual_interval(i)
            if not hi > lo:
                continue
            prefix = f"mut{i}"
            noise_fields = tuple(f"{prefix}:noise:{f}" for f in problem.fields)
            self.branches.append(Branch(prefix, "mutual", i + 1, (lo, hi),
                                        self.sampling.mutual, pair=(i, i + 1),
                                        noise_fields=noise_fields))
            early = self._prediction(i, (lo, hi), prefix)
            late = self._prediction(i + 1, (lo, hi), prefix)
            terms = []
            for f in problem.fields:
                lhs = early[f]
                if self.mutual_cfg.detach_previous:
                    lhs = E.stop_gradient(lhs)
                lhs = E.add(lhs, E.inp(f"{prefix}:noise:{f}"))
                terms.append(E.mean(E.square(E.sub(lhs, late[f]))))
            self._component_exprs[f"mutual_{i}_{i + 1}"] = E.scale(
                E.add(*terms), w.mutual)

            if self.mutual_cfg.include_pde:
                self._component_exprs[f"mutual_pde_{i}_{i + 1}"] = E.scale(
                    _residual_mean_sq(problem, late, prefix), w.mutual_pde)
            if self.mutual_cfg.include_bc:
                bi = f"mutbc{i}"
                if problem.bc_kind == "periodic":
                    self.branches.append(Branch(bi, "periodic", i + 1, (lo, hi),
                                                self.sampling.mutual, pair=(i, i + 1)))
                    pa = self._prediction(i + 1, (lo, hi), f"{bi}:a")
                    pb = self._prediction(i + 1, (lo, hi), f"{bi}:b")
                    comp = _mse_terms(pa, pb, problem.fields)
                else:
                    self.branches.append(Branch(bi, "boundary", i + 1, (lo, hi),
                                                self.sampling.mutual,
                                                pair=(i, i + 1), with_targets=True))
                    preds = self._prediction(i + 1, (lo, hi), bi)
                    targets = {f: E.inp(f"{bi}:target:{f}") for f in problem.fields}
                    comp = _mse_terms(preds, targets, problem.fields)
                self._component_exprs[f"mutual_bc_{i}_{i + 1}"] = E.scale(
                    comp, w.mutual_bc)

    # -- per-epoch binding ----------------------------------------------------

    def bind(self, rng, noise_std=0.0, noise_rng=None):
        """Sample every branch and return the full input binding dict."""
        problem = self.problem
        bindings = {}
        for br in self.branches:
            if br.kind == "periodic":
                a, b = problem.domain.sample_periodic_pairs(br.count, rng)
                t = rng.uniform(br.window[0], br.window[1], size=br.count)
                bindings[f"{br.prefix}:a:{TIME}"] = t[:, None]
                bindings[f"{br.prefix}:b:{TIME}"] = t[:, None]
                for c in problem.domain.coords:
                    bindings[f"{br.prefix}:a:{c}"] = np.asarray(a[c])[:, None]
                    bindings[f"{br.prefix}:b:{c}"] = np.asarray(b[c])[:, None]
                continue
            region = {"interior": "interior", "mutual": "interior",
                      "boundary": "boundary", "initial": "initial"}[br.kind]
            pts = ph.sample_points(problem.domain, br.count, region,
                                   br.window, rng)
            for c in problem.coords:
                bindings[f"{br.prefix}:{c}"] = np.asarray(pts[c])[:, None]
            if br.with_targets:
                exact = problem.exact(pts)
                for f in problem.fields:
                    bindings[f"{br.prefix}:target:{f}"] = np.asarray(exact[f])[:, None]
            for name in br.noise_fields:
                if noise_std > 0.0:
                    bindings[name] = noise_rng.normal(0.0, noise_std,
                                                      size=(br.count, 1))
                else:
                    bindings[name] = np.zeros((br.count, 1))
        return bindings

    # -- evaluation -----------------------------------------------------------

    @property
    def component_labels(self):
        return list(self._component_exprs.keys())

    def breakdown(self, values):
        """Arrange program outputs ``[total, *components]`` into a LossBreakdown."""
        named = dict(zip(self.component_labels, (float(v) for v in values[1:])))
        n = self.partition.n_blocks
        return LossBreakdown(
            ic=named["ic"],
            pde=tuple(named[f"pde_{b}"] for b in range(1, n + 1)),
            bc=tuple(named[f"bc_{b}"] for b in range(1, n + 1)),
            mutual=tuple(v for k, v in named.items()
                         if k.startswith("mutual_") and k.count("_") == 2
                         and not k.startswith(("mutual_bc", "mutual_pde"))),
            mutual_bc=tuple(v for k, v in named.items()
                            if k.startswith("mutual_bc_")),
            mutual_pde=tuple(v for k, v in named.items()
                             if k.startswith("mutual_pde_")),
            total=float(values[0]),
        )

    def evaluate(self, bindings, params, kernel="blas", check_finite=False):
        values = self.program.run(bindings, params, kernel=kernel,
                                  check_finite=check_finite)
        return self.breakdown(values)

    def value_and_grad(self, bindings, params, kernel="blas"):
        values, grads = self.program.value_and_grad(bindings, params,
                                                    kernel=kernel)
        return self.breakdown(values), grads


def build_loss_graph(spec, problem, partition, policy, schedule,
                     sampling=None, mutual_cfg=None, weights=None):
    return LossGraph(spec, problem, partition, policy, schedule,
                     sampling or ph.SamplingSpec(),
                     mutual_cfg or MutualLossConfig(),
                     weights or LossWeights())


# ---------------------------------------------------------------------------
# Point-set convenience surface (used by tests and ad-hoc analysis)
# ---------------------------------------------------------------------------

def _bind_points(prefix, coords, pts):
    return {f"{prefix}:{c}": np.asarray(pts[c], dtype=np.float64).ravel()[:, None]
            for c in coords}


def _group_by_class(partition, block, t):
    """Index groups per class window, same boundary convention as classify."""
    t = np.asarray(t, dtype=np.float64).ravel()
    lo, hi = partition.interval(block)
    if np.any((t < lo) | (t > hi)):
        raise DomainError(f"point times outside block {block} interval [{lo}, {hi}]")
    windows = list(iv.class_windows(partition, block).items())
    groups = []
    unassigned = np.ones(t.size, dtype=bool)
    for j, (cls, win) in enumerate(windows):
        sel = unassigned if j == len(windows) - 1 else unassigned & (t <= win[1])
        idx = np.where(sel)[0]
        unassigned = unassigned & ~sel
        if idx.size:
            groups.append((cls, win, idx))
    return groups


def initial_condition_loss(model, problem, points):
    """MSE between block-1 predictions and exact values on the starting slice."""
    t = np.asarray(points[TIME], dtype=np.float64).ravel()
    if t.size == 0:
        raise ConfigError("initial-condition loss needs at least one point")
    if np.any(t != problem.t_start):
        raise DomainError(f"initial points must sit at t = {problem.t_start}")
    prefix = "ic"
    plan = net.evaluation_plan(model.partition, model.policy, model.schedule,
                               1, (problem.t_start, problem.t_start))
    fields, _ = net.chain_graph(model.spec, plan,
                                {c: E.inp(f"{prefix}:{c}") for c in model.spec.coords})
    targets = {f: E.inp(f"{prefix}:target:{f}") for f in problem.fields}
    expr = _mse_terms(fields, targets, problem.fields)
    bindings = _bind_points(prefix, problem.coords, points)
    exact = problem.exact(points)
    for f in problem.fields:
        bindings[f"{prefix}:target:{f}"] = np.asarray(exact[f]).ravel()[:, None]
    return float(E.eval_expr(expr, bindings, model.params.arrays))


def block_loss(model, problem, block, interior_points, boundary_points=None):
    """(PDE residual MSE, boundary MSE) for one block's own point sets."""
    part = model.partition

    def pooled(points, make_term, bind_targets):
        t = np.asarray(points[TIME], dtype=np.float64).ravel()
        total = t.size
        acc = 0.0
        for gi, (cls, win, idx) in enumerate(_group_by_class(part, block, t)):
            prefix = f"grp{block}:{cls.value}:{gi}"
            plan = net.evaluation_plan(part, model.policy, model.schedule,
                                       block, win)
            fields, _ = net.chain_graph(
                model.spec, plan,
                {c: E.inp(f"{prefix}:{c}") for c in model.spec.coords})
            sub = {c: np.asarray(points[c]).ravel()[idx] for c in problem.coords}
            bindings = _bind_points(prefix, problem.coords, sub)
            expr = make_term(prefix, fields)
            if bind_targets:
                exact = problem.exact(sub)
                for f in problem.fields:
                    bindings[f"{prefix}:target:{f}"] = (
                        np.asarray(exact[f]).ravel()[:, None])
            acc += idx.size / total * float(
                E.eval_expr(expr, bindings, model.params.arrays))
        return acc

    pde = pooled(interior_points,
                 lambda p, fields: _residual_mean_sq(problem, fields, p), False)
    if boundary_points is None or np.asarray(boundary_points[TIME]).size == 0:
        bc = 0.0
    else:
        bc = pooled(
            boundary_points,
            lambda p, fields: _mse_terms(
                fields, {f: E.inp(f"{p}:target:{f}") for f in problem.fields},
                problem.fields),
            True)
    return pde, bc


def mutual_block_loss(model, pair, points, config=None, noise=None,
                      boundary_points=None, problem=None):
    """Mutual-term value(s) for one block pair over its overlap window.

    Returns ``{"primary": ...}`` plus ``"pde"``/``"bc"`` when the optional
    components are enabled (those need ``problem``).
    """
    config = config or MutualLossConfig()
    part = model.partition
    i, j = pair
    if j != i + 1:
        raise PartitionError(f"mutual pairs are consecutive blocks, got {pair}")
    lo, hi = part.mutual_interval(i)
    if not hi > lo:
        raise PartitionError(
            f"blocks {pair} share no mutual interval (zero overlap); "
            "the mutual term is absent, not zero")
    t = np.asarray(points[TIME], dtype=np.float64).ravel()
    if np.any((t < lo) | (t > hi)):
        raise DomainError(f"mutual points must lie in [{lo}, {hi}]")
    prefix = f"mut{i}"
    coords = {c: E.inp(f"{prefix}:{c}") for c in model.spec.coords}
    early, _ = net.chain_graph(
        model.spec,
        net.evaluation_plan(part, model.policy, model.schedule, i, (lo, hi)),
        coords)
    late, _ = net.chain_graph(
        model.spec,
        net.evaluation_plan(part, model.policy, model.schedule, j, (lo, hi)),
        coords)
    fields = model.spec.fields
    terms = []
    for f in fields:
        lhs = early[f]
        if config.detach_previous:
            lhs = E.stop_gradient(lhs)
        if noise is not None:
            lhs = E.add(lhs, E.inp(f"{prefix}:noise:{f}"))
        terms.append(E.mean(E.square(E.sub(lhs, late[f]))))
    bindings = _bind_points(prefix, model.spec.coords, points)
    if noise is not None:
        for f in fields:
            bindings[f"{prefix}:noise:{f}"] = (
                np.asarray(noise[f], dtype=np.float64).ravel()[:, None])
    out = {"primary": float(E.eval_expr(E.add(*terms), bindings,
                                        model.params.arrays))}
    if config.include_pde:
        if problem is None:
            raise ConfigError("optional mutual PDE component needs the problem")
        out["pde"] = float(E.eval_expr(_residual_mean_sq(problem, late, prefix),
                                       bindings, model.params.arrays))
    if config.include_bc:
        if problem is None or boundary_points is None:
            raise ConfigError(
                "optional mutual BC component needs the problem and boundary points")
        bt = np.asarray(boundary_points[TIME]).ravel()
        if np.any((bt < lo) | (bt > hi)):
            raise DomainError(f"mutual boundary points must lie in [{lo}, {hi}]")
        bprefix = f"mutbc{i}"
        bcoords = {c: E.inp(f"{bprefix}:{c}") for c in model.spec.coords}
        pred, _ = net.chain_graph(
            model.spec,
            net.evaluation_plan(part, model.policy, model.schedule, j, (lo, hi)),
            bcoords)
        targets = {f: E.inp(f"{bprefix}:target:{f}") for f in fields}
        bbind = _bind_points(bprefix, model.spec.coords, boundary_points)
        exact = problem.exact(boundary_points)
        for f in fields:
            bbind[f"{bprefix}:target:{f}"] = np.asarray(exact[f]).ravel()[:, None]
        out["bc"] = float(E.eval_expr(_mse_terms(pred, targets, fields),
                                      bbind, model.params.arrays))
    return out


def total_loss(model, problem, point_sets, config=None, weights=None):
    """Breakdown over explicit point sets (slow path; the trainer compiles).

    ``point_sets`` maps: ``initial`` -> points, ``interior``/``boundary`` ->
    {block: points}, ``mutual`` -> {pair_index: points}.
    """
    config = config or MutualLossConfig()
    w = weights or LossWeights()
    part = model.partition
    ic = w.ic * initial_condition_loss(model, problem, point_sets["initial"])
    pde, bc = [], []
    for b in range(1, part.n_blocks + 1):
        p, c = block_loss(model, problem, b, point_sets["interior"][b],
                          point_sets.get("boundary", {}).get(b))
        pde.append(w.pde * p)
        bc.append(w.bc * c)
    mutual, mutual_bc, mutual_pde = [], [], []
    for i in range(1, part.n_blocks):
        lo, hi = part.mutual_interval(i)
        if not hi > lo:
            continue
        vals = mutual_block_loss(model, (i, i + 1),
                                 point_sets["mutual"][i], config,
                                 problem=problem)
        mutual.append(w.mutual * vals["primary"])
        if "bc" in vals:
            mutual_bc.append(w.mutual_bc * vals["bc"])
        if "pde" in vals:
            mutual_pde.append(w.mutual_pde * vals["pde"])
    total = ic + sum(pde) + sum(bc) + sum(mutual) + sum(mutual_bc) + sum(mutual_pde)
    return LossBreakdown(ic, tuple(pde), tuple(bc), tuple(mutual),
                         tuple(mutual_bc), tuple(mutual_pde), total)
