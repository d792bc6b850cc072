"""Benchmark experiment definitions: manufactured solutions, derived data
(source, boundary flux, interface flux jump) and interface geometry for the
straight-line, circular and ring-arc cases plus the interface-proximity
robustness sweep.

All data functions are derived symbolically from the stated exact solutions
and compiled to vectorized numpy callables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sym

from .assemble import ProblemData, SidedExact
from .bspline import (
    GeometryMap,
    SplineSpace2D,
    identity_map,
    make_open_knot_vector,
    polar_annulus_map,
)
from .geometry import ImplicitInterface, circle_interface, line_interface

CIRCLE_CENTER = (1.0 / math.sqrt(5.0), 1.0 / math.sqrt(3.0))
CIRCLE_RADIUS = 1.0 / math.sqrt(10.0)
LINE_CENTER = (1.0 + 1.0 / math.pi, 1.0)
LINE_ANGLE = math.pi / 6.0
ARC_SLOPE = 2.0 * math.pi * math.tan(math.pi / 8.0)

EXPERIMENT_TAGS = ("line", "circle", "arc", "robustness")


@dataclass(frozen=True)
class Experiment:
    tag: str
    a0: float
    a1: float
    domain: tuple  # (s_lo, s_hi, t_lo, t_hi)
    iface: ImplicitInterface
    data: ProblemData
    delta: float | None = None

    def make_space(self, n: int) -> SplineSpace2D:
        s_lo, s_hi, t_lo, t_hi = self.domain
        return SplineSpace2D(
            make_open_knot_vector(s_lo, s_hi, n, 2),
            make_open_knot_vector(t_lo, t_hi, n, 2),
        )


def _lambdify(args, expr):
    fn = sym.lambdify(args, expr, modules="numpy")

    def wrapped(*vals):
        out = fn(*vals)
        shape = np.broadcast(*[np.asarray(v) for v in vals]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    return wrapped


def _sided_problem(x, y, u_pos, u_neg, a_pos, a_neg, lap_pos, lap_neg,
                   grad_frame, q_expr, gmap: GeometryMap,
                   simplify: bool = True) -> tuple[ProblemData, SidedExact]:
    """Compile sided data functions from symbolic solutions.

    lap_* are the physical Laplacians, grad_frame maps a symbolic u to its
    cartesian physical gradient components, q_expr is the flux jump on the
    interface.
    """
    gp = grad_frame(u_pos)
    gn = grad_frame(u_neg)
    exact = SidedExact(
        u_pos=_lambdify((x, y), u_pos),
        u_neg=_lambdify((x, y), u_neg),
        grad_pos=_pair(_lambdify((x, y), gp[0]), _lambdify((x, y), gp[1])),
        grad_neg=_pair(_lambdify((x, y), gn[0]), _lambdify((x, y), gn[1])),
    )
    post = sym.simplify if simplify else (lambda e: e)
    f_pos = _lambdify((x, y), post(-a_pos * lap_pos))
    f_neg = _lambdify((x, y), post(-a_neg * lap_neg))

    def f(s, t, pos):
        return np.where(pos, f_pos(s, t), f_neg(s, t))

    def g(s, t, nx, ny, pos):
        gx, gy = exact.grad(s, t, pos)
        a = np.where(pos, a_pos, a_neg)
        return a * (gx * nx + gy * ny)

    q = _lambdify((x, y), q_expr)
    data = ProblemData(a_pos=a_pos, a_neg=a_neg, f=f, g=g, q=q, exact=exact, gmap=gmap)
    return data, exact


def _pair(fx, fy):
    def g(s, t):
        return fx(s, t), fy(s, t)

    return g


def circle_experiment(a0: float, a1: float) -> Experiment:
    """Circular inclusion in the unit square; the solution is quadratic-like
    inside and has an added decaying harmonic outside. The positive level-set
    side (where the one-sided distance lives) is the outside."""
    if a0 == a1:
        raise ValueError("circle experiment needs a0 != a1")
    cx, cy = CIRCLE_CENTER
    r0 = CIRCLE_RADIUS
    x, y = sym.symbols("x y", real=True)
    X, Y = x - cx, y - cy
    harm = X**2 - Y**2          # r^2 cos(2 theta)
    rho2 = X**2 + Y**2
    c_in = 2 * a1 / ((a1 - a0) * r0**4)
    c_out = (a1 + a0) / ((a1 - a0) * r0**4)
    u_in = c_in * harm
    u_out = c_out * harm + harm / rho2**2   # + r^-2 cos(2 theta)

    lap = lambda u: sym.diff(u, x, 2) + sym.diff(u, y, 2)
    grad_frame = lambda u: (sym.diff(u, x), sym.diff(u, y))
    # outward normal of the positive (outer) side points toward the center
    nsx, nsy = -X / sym.sqrt(rho2), -Y / sym.sqrt(rho2)
    q_expr = (a1 * (sym.diff(u_out, x) * nsx + sym.diff(u_out, y) * nsy)
              - a0 * (sym.diff(u_in, x) * nsx + sym.diff(u_in, y) * nsy))

    iface = circle_interface((cx, cy), r0, positive="outside")
    data, _ = _sided_problem(x, y, u_out, u_in, a1, a0, lap(u_out), lap(u_in),
                             grad_frame, q_expr, identity_map())
    return Experiment("circle", a0, a1, (0.0, 1.0, 0.0, 1.0), iface, data)


def line_experiment(a0: float, a1: float) -> Experiment:
    """Straight-line interface through the unit square with a fractional
    corner singularity centered outside the domain; positive side above."""
    cx, cy = LINE_CENTER
    x, y = sym.symbols("x y", real=True)
    r = sym.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    # angle measured from the interface ray, continuous on the whole square
    w = sym.atan2(cy - y, cx - x) - LINE_ANGLE
    smooth = sym.sin(x * y)
    u_above = r ** sym.Rational(4, 3) * (sym.cos(sym.Rational(4, 3) * w)
                                         + (a0 / a1) * sym.sin(sym.Rational(4, 3) * w)) + smooth
    u_below = r ** sym.Rational(4, 3) * (sym.cos(sym.Rational(4, 3) * w)
                                         + sym.sin(sym.Rational(4, 3) * w)) + smooth

    lap = lambda u: sym.diff(u, x, 2) + sym.diff(u, y, 2)
    grad_frame = lambda u: (sym.diff(u, x), sym.diff(u, y))
    normal = (-math.sin(LINE_ANGLE), math.cos(LINE_ANGLE))  # toward the upper side
    nsx, nsy = -normal[0], -normal[1]
    q_expr = (a0 * (sym.diff(u_above, x) * nsx + sym.diff(u_above, y) * nsy)
              - a1 * (sym.diff(u_below, x) * nsx + sym.diff(u_below, y) * nsy))

    iface = line_interface((cx, cy), normal)
    data, _ = _sided_problem(x, y, u_above, u_below, a0, a1,
                             lap(u_above), lap(u_below), grad_frame, q_expr,
                             identity_map(), simplify=False)
    return Experiment("line", a0, a1, (0.0, 1.0, 0.0, 1.0), iface, data)


def arc_experiment(a0: float, a1: float) -> Experiment:
    """Ring domain with an arc interface that is a straight line in the
    parameter rectangle [1,2] x [0,2pi]; solved through the exact polar map."""
    k = ARC_SLOPE
    theta0 = math.atan(k)
    s, t = sym.symbols("s t", positive=True)
    bdry = (s - 2) * (s - 1) * t * (t - 2 * sym.pi)
    rc = math.cos(theta0) * s + math.sin(theta0) * t    # r cos(theta - theta0)
    rs = math.cos(theta0) * t - math.sin(theta0) * s    # r sin(theta - theta0)
    u_above = bdry * (rc + (a0 / a1) * rs)
    u_below = bdry * (rc + rs)

    lap = lambda u: (sym.diff(u, s, 2) + sym.diff(u, s) / s
                     + sym.diff(u, t, 2) / s**2)

    def grad_frame(u):
        ur, ut = sym.diff(u, s), sym.diff(u, t) / s
        return (ur * sym.cos(t) - ut * sym.sin(t),
                ur * sym.sin(t) + ut * sym.cos(t))

    # physical unit normal of the parameter line t = k s, outward from above
    L = sym.sqrt(k**2 + 1 / s**2)
    q_expr = (a0 * (sym.diff(u_above, s) * k - sym.diff(u_above, t) / s**2)
              - a1 * (sym.diff(u_below, s) * k - sym.diff(u_below, t) / s**2)) / L

    norm = math.hypot(k, 1.0)
    iface = line_interface((0.0, 0.0), (-k / norm, 1.0 / norm), name="arc-line")
    data, _ = _sided_problem(s, t, u_above, u_below, a0, a1,
                             lap(u_above), lap(u_below), grad_frame, q_expr,
                             polar_annulus_map())
    return Experiment("arc", a0, a1, (1.0, 2.0, 0.0, 2.0 * math.pi), iface, data)


def robustness_experiment(delta: float, a0: float, a1: float) -> Experiment:
    """Horizontal interface t = delta inside the bottom element row; only the
    operator is needed (conditioning study), so no manufactured data."""
    if not 0 < delta:
        raise ValueError("delta must be positive")
    iface = line_interface((0.0, delta), (0.0, 1.0), name=f"line_t={delta:g}")
    data = ProblemData(a_pos=a0, a_neg=a1, gmap=identity_map())
    return Experiment("robustness", a0, a1, (0.0, 1.0, 0.0, 1.0), iface, data,
                      delta=delta)


def define_experiment(tag: str, a0: float, a1: float, delta: float | None = None) -> Experiment:
    if tag == "circle":
        return circle_experiment(a0, a1)
    if tag == "line":
        return line_experiment(a0, a1)
    if tag == "arc":
        return arc_experiment(a0, a1)
    if tag == "robustness":
        return robustness_experiment(0.025 if delta is None else delta, a0, a1)
    raise ValueError(f"unknown experiment {tag!r}; expected one of {EXPERIMENT_TAGS}")
