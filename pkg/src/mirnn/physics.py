"""Benchmark PDE problems: residuals, domains, exact solutions, sampling.

Each problem bundles a residual builder (operating on
:class:`~mirnn.expr.FieldDerivatives`, so the same residual pipeline serves
both network outputs and closed-form reference solutions), a spatial domain
with interior/boundary samplers, initial/boundary data, and the closed-form
exact solution both as plain numpy functions and as expression graphs.

Routing the exact solution through the residual pipeline is the standing
oracle: for every problem, residuals of the exact solution must vanish to
rounding level at random interior points before any training is trusted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as E
from .errors import ConfigError, DomainError

__all__ = [
    "Interval1D",
    "StarDomain2D",
    "Square2D",
    "SamplingSpec",
    "PdeProblem",
    "burgers_problem",
    "heat_problem",
    "taylor_green_problem",
    "problem_by_name",
    "sample_points",
    "exact_residual_max",
]

TIME_COORD = "t"


# ---------------------------------------------------------------------------
# Spatial domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval1D:
    """A line segment; boundary is the two endpoints."""

    lo: float
    hi: float
    coords: tuple = ("x",)

    def contains(self, pts):
        x = np.asarray(pts["x"])
        return (x >= self.lo) & (x <= self.hi)

    def bounding_box(self):
        return {"x": (self.lo, self.hi)}

    def sample_interior(self, n, rng):
        return {"x": rng.uniform(self.lo, self.hi, size=n)}

    def sample_boundary(self, n, rng):
        return {"x": rng.choice([self.lo, self.hi], size=n)}

    def boundary_gap(self, pts):
        x = np.asarray(pts["x"])
        return np.minimum(np.abs(x - self.lo), np.abs(x - self.hi))


@dataclass(frozen=True)
class StarDomain2D:
    """Star-shaped region bounded by the radial curve r(phi) = s*(r0 + a*cos(k*phi)).

    The default (centered at (pi/2, pi/2), r0=1, a=0.3, k=5) fits inside
    (0, pi)^2 without rescaling; ``scale`` is exposed for other boxes.
    """

    center: tuple = (math.pi / 2.0, math.pi / 2.0)
    base_radius: float = 1.0
    bump: float = 0.3
    lobes: int = 5
    scale: float = 1.0
    coords: tuple = ("x", "y")

    def radius(self, phi):
        return self.scale * (self.base_radius + self.bump * np.cos(self.lobes * phi))

    def contains(self, pts):
        dx = np.asarray(pts["x"]) - self.center[0]
        dy = np.asarray(pts["y"]) - self.center[1]
        rho = np.hypot(dx, dy)
        phi = np.arctan2(dy, dx)
        return rho <= self.radius(phi)

    def bounding_box(self):
        r_max = self.scale * (self.base_radius + abs(self.bump))
        return {
            "x": (self.center[0] - r_max, self.center[0] + r_max),
            "y": (self.center[1] - r_max, self.center[1] + r_max),
        }

    def sample_interior(self, n, rng):
        box = self.bounding_box()
        xs = np.empty(0)
        ys = np.empty(0)
        attempts = 0
        drawn = 0
        while xs.size < n:
            m = max(4 * n, 128)
            cx = rng.uniform(*box["x"], size=m)
            cy = rng.uniform(*box["y"], size=m)
            keep = self.contains({"x": cx, "y": cy})
            xs = np.concatenate([xs, cx[keep]])
            ys = np.concatenate([ys, cy[keep]])
            drawn += m
            attempts += 1
            if attempts >= 3 and xs.size < 0.01 * drawn:
                raise DomainError(
                    f"rejection acceptance rate {xs.size / drawn:.4f} below 1%: "
                    "degenerate domain"
                )
        return {"x": xs[:n], "y": ys[:n]}

    def sample_boundary(self, n, rng):
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
        r = self.radius(phi)
        return {
            "x": self.center[0] + r * np.cos(phi),
            "y": self.center[1] + r * np.sin(phi),
        }

    def boundary_gap(self, pts):
        dx = np.asarray(pts["x"]) - self.center[0]
        dy = np.asarray(pts["y"]) - self.center[1]
        rho = np.hypot(dx, dy)
        phi = np.arctan2(dy, dx)
        return np.abs(rho - self.radius(phi))


@dataclass(frozen=True)
class Square2D:
    """Axis-aligned square; boundary is its four edges."""

    lo: float = 0.0
    hi: float = 2.0 * math.pi
    coords: tuple = ("x", "y")

    def contains(self, pts):
        x = np.asarray(pts["x"])
        y = np.asarray(pts["y"])
        return (x >= self.lo) & (x <= self.hi) & (y >= self.lo) & (y <= self.hi)

    def bounding_box(self):
        return {"x": (self.lo, self.hi), "y": (self.lo, self.hi)}

    def sample_interior(self, n, rng):
        return {
            "x": rng.uniform(self.lo, self.hi, size=n),
            "y": rng.uniform(self.lo, self.hi, size=n),
        }

    def sample_boundary(self, n, rng):
        edge = rng.integers(0, 4, size=n)
        along = rng.uniform(self.lo, self.hi, size=n)
        x = np.where(edge == 0, self.lo, np.where(edge == 1, self.hi, along))
        y = np.where(edge == 2, self.lo, np.where(edge == 3, self.hi, along))
        return {"x": x, "y": y}

    def sample_periodic_pairs(self, n, rng):
        """Matching opposite-edge point pairs for periodic boundary losses."""
        half = n // 2
        along_y = rng.uniform(self.lo, self.hi, size=half)
        along_x = rng.uniform(self.lo, self.hi, size=n - half)
        a = {
            "x": np.concatenate([np.full(half, self.lo), along_x]),
            "y": np.concatenate([along_y, np.full(n - half, self.lo)]),
        }
        b = {
            "x": np.concatenate([np.full(half, self.hi), along_x]),
            "y": np.concatenate([along_y, np.full(n - half, self.hi)]),
        }
        return a, b

    def boundary_gap(self, pts):
        x = np.asarray(pts["x"])
        y = np.asarray(pts["y"])
        return np.minimum.reduce([
            np.abs(x - self.lo), np.abs(x - self.hi),
            np.abs(y - self.lo), np.abs(y - self.hi),
        ])


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingSpec:
    """Collocation counts per training epoch (totals, split across blocks)."""

    interior: int = 10000
    boundary: int = 400
    initial: int = 400
    mutual: int = 400

    def __post_init__(self):
        for name in ("interior", "boundary", "initial", "mutual"):
            if getattr(self, name) < 1:
                raise ConfigError(f"sampling count {name} must be >= 1")


def sample_points(domain, n, region, time_interval, rng):
    """Deterministic point sets for one loss term.

    ``region`` is one of ``interior``, ``boundary`` or ``initial``; the time
    coordinate is uniform over ``time_interval`` (pinned to its start for the
    initial slice).  Returns a dict of flat coordinate arrays including "t".
    """
    lo, hi = time_interval
    if region == "interior":
        pts = domain.sample_interior(n, rng)
        pts[TIME_COORD] = rng.uniform(lo, hi, size=n)
    elif region == "boundary":
        pts = domain.sample_boundary(n, rng)
        pts[TIME_COORD] = rng.uniform(lo, hi, size=n)
    elif region == "initial":
        pts = domain.sample_interior(n, rng)
        pts[TIME_COORD] = np.full(n, lo)
    else:
        raise ConfigError(f"unknown sampling region {region!r}")
    return pts


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdeProblem:
    """One benchmark: residual definition, geometry, data, exact solution."""

    name: str
    coords: tuple
    fields: tuple
    constants: dict
    domain: object
    t_end: float
    residuals: object          # dict[field -> FieldDerivatives] -> dict[name -> Expr]
    exact: object              # dict[coord -> array] -> dict[field -> array]
    exact_graph: object        # dict[coord -> Expr] -> dict[field -> Expr]
    bc_kind: str = "dirichlet_exact"
    t_start: float = 0.0

    def time_interval(self):
        return (self.t_start, self.t_end)


def burgers_problem(mu=0.01, x_lo=0.0, x_hi=4.0, t_end=5.0):
    """Viscous 1-D transport with quadratic self-advection.

    Exact reference: u = 2*mu*pi*sin(pi x)*g / (2 + cos(pi x)*g) with
    g = exp(-mu*pi^2*(t-5)); u vanishes at integer x, so the domain edges
    carry homogeneous Dirichlet data.
    """
    if mu <= 0:
        raise ConfigError(f"viscosity mu={mu} must be positive")
    pi = math.pi

    def residuals(f):
        u = f["u"]
        return {"pde": u.d("t") + u.value * u.d("x") - mu * u.d2("x")}

    def exact(pts):
        x = np.asarray(pts["x"], dtype=np.float64)
        t = np.asarray(pts[TIME_COORD], dtype=np.float64)
        g = np.exp(-mu * pi * pi * (t - 5.0))
        return {"u": 2.0 * mu * pi * np.sin(pi * x) * g / (2.0 + np.cos(pi * x) * g)}

    def exact_graph(c):
        x, t = c["x"], c[TIME_COORD]
        g = E.exp(E.scale(E.add(t, E.const(-5.0)), -mu * pi * pi))
        num = E.scale(E.mul(E.sin(E.scale(x, pi)), g), 2.0 * mu * pi)
        den = E.add(E.const(2.0), E.mul(E.cos(E.scale(x, pi)), g))
        return {"u": E.mul(num, E.recip(den))}

    return PdeProblem(
        name="burgers",
        coords=("x", TIME_COORD),
        fields=("u",),
        constants={"mu": mu},
        domain=Interval1D(x_lo, x_hi),
        t_end=t_end,
        residuals=residuals,
        exact=exact,
        exact_graph=exact_graph,
    )


def heat_problem(t_end=0.5, center=(math.pi / 2.0, math.pi / 2.0),
                 base_radius=1.0, bump=0.3, lobes=5, scale=1.0):
    """Unsteady diffusion on an irregular 2-D domain.

    Residual r = u_t + (u_xx + u_yy)/2; the reference solution
    u = e^t sin(x) sin(y) satisfies it identically.  Dirichlet data on the
    star-shaped boundary comes from the reference solution; the boundary
    curve parameters are configurable.
    """
    domain = StarDomain2D(center=tuple(center), base_radius=base_radius,
                          bump=bump, lobes=lobes, scale=scale)

    def residuals(f):
        u = f["u"]
        return {"pde": u.d("t") + 0.5 * (u.d2("x") + u.d2("y"))}

    def exact(pts):
        x = np.asarray(pts["x"], dtype=np.float64)
        y = np.asarray(pts["y"], dtype=np.float64)
        t = np.asarray(pts[TIME_COORD], dtype=np.float64)
        return {"u": np.exp(t) * np.sin(x) * np.sin(y)}

    def exact_graph(c):
        return {"u": E.mul(E.exp(c[TIME_COORD]), E.mul(E.sin(c["x"]), E.sin(c["y"])))}

    return PdeProblem(
        name="heat",
        coords=("x", "y", TIME_COORD),
        fields=("u",),
        constants={},
        domain=domain,
        t_end=t_end,
        residuals=residuals,
        exact=exact,
        exact_graph=exact_graph,
    )


def taylor_green_problem(nu, rho=1.0, t_end=2.0, bc_kind="dirichlet_exact"):
    """Decaying periodic vortex flow: incompressible momentum + continuity.

    Reference solution u = sin(x)cos(y)e^{-2 nu t}, v = -cos(x)sin(y)e^{-2 nu t},
    p = rho/4 (cos 2x + cos 2y) e^{-4 nu t}; its residuals cancel identically
    (verified by the residual-of-exact oracle before any run).
    """
    if nu <= 0:
        raise ConfigError(f"kinematic viscosity nu={nu} must be positive")
    if rho <= 0:
        raise ConfigError(f"density rho={rho} must be positive")

    def residuals(f):
        u, v, p = f["u"], f["v"], f["p"]
        adv_u = u.value * u.d("x") + v.value * u.d("y")
        adv_v = u.value * v.d("x") + v.value * v.d("y")
        return {
            "continuity": u.d("x") + v.d("y"),
            "momentum_x": u.d("t") + adv_u + (1.0 / rho) * p.d("x")
            - nu * (u.d2("x") + u.d2("y")),
            "momentum_y": v.d("t") + adv_v + (1.0 / rho) * p.d("y")
            - nu * (v.d2("x") + v.d2("y")),
        }

    def exact(pts):
        x = np.asarray(pts["x"], dtype=np.float64)
        y = np.asarray(pts["y"], dtype=np.float64)
        t = np.asarray(pts[TIME_COORD], dtype=np.float64)
        g = np.exp(-2.0 * nu * t)
        return {
            "u": np.sin(x) * np.cos(y) * g,
            "v": -np.cos(x) * np.sin(y) * g,
            "p": 0.25 * rho * (np.cos(2.0 * x) + np.cos(2.0 * y)) * g * g,
        }

    def exact_graph(c):
        x, y, t = c["x"], c["y"], c[TIME_COORD]
        g = E.exp(E.scale(t, -2.0 * nu))
        g2 = E.exp(E.scale(t, -4.0 * nu))
        return {
            "u": E.mul(E.mul(E.sin(x), E.cos(y)), g),
            "v": E.scale(E.mul(E.mul(E.cos(x), E.sin(y)), g), -1.0),
            "p": E.scale(
                E.mul(E.add(E.cos(E.scale(x, 2.0)), E.cos(E.scale(y, 2.0))), g2),
                0.25 * rho,
            ),
        }

    return PdeProblem(
        name="taylor_green",
        coords=("x", "y", TIME_COORD),
        fields=("u", "v", "p"),
        constants={"nu": nu, "rho": rho},
        domain=Square2D(0.0, 2.0 * math.pi),
        t_end=t_end,
        residuals=residuals,
        exact=exact,
        exact_graph=exact_graph,
        bc_kind=bc_kind,
    )


def problem_by_name(name, constants=None):
    constants = dict(constants or {})
    if name == "burgers":
        return burgers_problem(**constants)
    if name == "heat":
        return heat_problem(**constants)
    if name == "taylor_green":
        return taylor_green_problem(**constants)
    raise ConfigError(f"unknown problem {name!r}")


# ---------------------------------------------------------------------------
# The residual-of-exact oracle
# ---------------------------------------------------------------------------

def exact_residual_max(problem: PdeProblem, n_points=1000, seed=0):
    """Max |residual| of the closed-form exact solution at random interior points.

    The exact solution is built as expression graphs and routed through the
    same derivative/residual pipeline the training loss uses, validating the
    problem definition and the differentiation engine together.
    """
    rng = np.random.default_rng(seed)
    pts = sample_points(problem.domain, n_points, "interior",
                        problem.time_interval(), rng)
    coord_exprs = {c: E.inp(c) for c in problem.coords}
    fields = problem.exact_graph(coord_exprs)
    bundles = {
        f: E.FieldDerivatives(value=fields[f], coords=problem.coords)
        for f in problem.fields
    }
    res = problem.residuals(bundles)
    bindings = {c: np.asarray(pts[c], dtype=np.float64)[:, None] for c in problem.coords}
    values = E.Program(tuple(res.values())).run(bindings, {})
    return max(float(np.max(np.abs(v))) for v in values)
