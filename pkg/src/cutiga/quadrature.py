"""Per-element quadrature rules shared by assembly, projection and error
evaluation: tensor Gauss on uncut elements, cached cut-cell partitions and
split boundary-edge rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .geometry import LABEL_CUT, LABEL_POS, CutCellPartition, cut_cell_partition


@dataclass(frozen=True)
class QuadOptions:
    gauss: int = 3
    depth: int = 5


@dataclass
class RuleCache:
    """Memoizes element rules for one (space, interface, classification)."""

    space: object
    iface: object
    cls: object
    opts: QuadOptions = field(default_factory=QuadOptions)
    _parts: dict = field(default_factory=dict, repr=False)
    _rules: dict = field(default_factory=dict, repr=False)

    def partition(self, elem) -> CutCellPartition:
        if elem not in self._parts:
            self._parts[elem] = cut_cell_partition(
                self.space, elem, self.iface, depth=self.opts.depth,
                gauss_order=self.opts.gauss,
            )
        return self._parts[elem]

    def element_rule(self, elem):
        """(points (P,2), weights, side (+1/-1)) in parameter measure."""
        if elem in self._rules:
            return self._rules[elem]
        ei, ej = elem
        label = self.cls.labels[ei, ej]
        if label == LABEL_CUT:
            part = self.partition(elem)
            rule = (part.points, part.weights, part.side.astype(np.int8))
        else:
            pts, wts = _tensor_gauss(self.space.element_box(ei, ej), self.opts.gauss)
            sgn = 1 if label == LABEL_POS else -1
            rule = (pts, wts, np.full(wts.size, sgn, dtype=np.int8))
        self._rules[elem] = rule
        return rule

    def interface_rule(self, elem):
        """(points, arc-length weights, normals) of the element's polyline."""
        part = self.partition(elem)
        return part.iface_points, part.iface_weights, part.iface_normals

    def boundary_rules(self):
        """One rule per boundary edge piece: (elem, pts, w, n_param, side)."""
        return list(_boundary_rules(self.space, self.iface, self.opts.gauss))


def _tensor_gauss(box, order):
    x, w = leggauss(order)
    s0, s1, t0, t1 = box
    xs = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * x
    xt = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x
    P = np.column_stack([np.repeat(xs, order), np.tile(xt, order)])
    W = np.repeat(0.5 * (s1 - s0) * w, order) * np.tile(0.5 * (t1 - t0) * w, order)
    return P, W


def _segment_roots(iface, p0, p1, samples=33):
    """Interface crossings of the segment p0-p1, as parameters in (0, 1)."""
    lam = np.linspace(0.0, 1.0, samples)
    xs = p0[0] + lam * (p1[0] - p0[0])
    ys = p0[1] + lam * (p1[1] - p0[1])
    v = np.asarray(iface.phi(xs, ys), float)
    out = []
    for i in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
        a, b = lam[i], lam[i + 1]
        va = v[i]
        for _ in range(60):
            m = 0.5 * (a + b)
            vm = float(iface.phi(np.array([p0[0] + m * (p1[0] - p0[0])]),
                                 np.array([p0[1] + m * (p1[1] - p0[1])]))[0])
            if abs(vm) < 1e-14 or b - a < 1e-15:
                break
            if np.sign(vm) == np.sign(va):
                a, va = m, vm
            else:
                b = m
        out.append(0.5 * (a + b))
    return sorted(out)


def _boundary_rules(space, iface, order):
    gp, gw = leggauss(order)
    ns, nt = space.n_elements
    s_lo, s_hi = space.kv_s.domain
    t_lo, t_hi = space.kv_t.domain
    edges = []
    for ei in range(ns):
        box = space.element_box(ei, 0)
        edges.append(((ei, 0), (box[0], t_lo), (box[1], t_lo), (0.0, -1.0)))
        box = space.element_box(ei, nt - 1)
        edges.append(((ei, nt - 1), (box[0], t_hi), (box[1], t_hi), (0.0, 1.0)))
    for ej in range(nt):
        box = space.element_box(0, ej)
        edges.append(((0, ej), (s_lo, box[2]), (s_lo, box[3]), (-1.0, 0.0)))
        box = space.element_box(ns - 1, ej)
        edges.append(((ns - 1, ej), (s_hi, box[2]), (s_hi, box[3]), (1.0, 0.0)))
    for elem, p0, p1, n_param in edges:
        cuts = _segment_roots(iface, p0, p1)
        breaks = [0.0] + cuts + [1.0]
        p0 = np.asarray(p0)
        p1 = np.asarray(p1)
        for a, b in zip(breaks[:-1], breaks[1:]):
            if b - a < 1e-14:
                continue
            lam = 0.5 * (a + b) + 0.5 * (b - a) * gp
            pts = p0[None, :] + lam[:, None] * (p1 - p0)[None, :]
            w = 0.5 * (b - a) * gw * np.hypot(*(p1 - p0))
            mid = p0 + 0.5 * (a + b) * (p1 - p0)
            side = 1 if float(iface.phi(np.array([mid[0]]), np.array([mid[1]]))[0]) > 0 else -1
            yield elem, pts, w, np.asarray(n_param), side
