"""Quadrature on elements and element pairs.

Product-domain rules for weakly singular kernels use Duffy-type
regularizing transformations in a canonical frame where the shared entity
of the two elements sits at the origin (and along the first parametric
axis for a shared edge):

* identical elements: 8 subdomains (sign quadrant of y - x times the two
  simplices of |y - x|),
* common edge: 6 subdomains,
* common vertex: 4 subdomains,
* disjoint: plain tensor Gauss rule.

Every transformed rule carries its Jacobian in the weights, so that the
weights of each rule sum to one (the measure of [0, 1]^4).
"""
from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .mesh import Adjacency, AdjacencyCase
from .subdivision import frame_axes

log = logging.getLogger(__name__)

Q_MAX = 36


@dataclass(frozen=True)
class GaussRule:
    order: int
    points: np.ndarray
    weights: np.ndarray

    def tensor2(self):
        u, v = np.meshgrid(self.points, self.points, indexing="ij")
        w = np.outer(self.weights, self.weights)
        return np.stack([u.ravel(), v.ravel()], axis=1), w.ravel()


@lru_cache(maxsize=None)
def _gauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return GaussRule(q, 0.5 * (x + 1.0), 0.5 * w)


def gauss_rule(q: int, q_max: int = Q_MAX) -> GaussRule:
    """q-point Gauss-Legendre rule on [0, 1]."""
    if not 1 <= q <= q_max:
        raise ValueError(f"quadrature order {q} outside [1, {q_max}]")
    return _gauss(int(q))


@dataclass(frozen=True)
class ProductQuadratureRule:
    case: Adjacency
    order: int
    uv_x: np.ndarray
    uv_y: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


def _grid(q, dim):
    g = _gauss(q)
    pts = np.stack(np.meshgrid(*([g.points] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    w = np.ones(len(pts))
    for ws in np.meshgrid(*([g.weights] * dim), indexing="ij"):
        w = w * ws.ravel()
    return pts, w


def _shift_pair(a, s, sign):
    lo = (1.0 - a) * s
    hi = lo + a
    return (lo, hi) if sign > 0 else (hi, lo)


def _identical(q):
    pts, w = _grid(q, 4)
    xi, eta, s1, s2 = pts.T
    X, Y, W = [], [], []
    for swap in (False, True):
        a1, a2 = (xi, xi * eta) if not swap else (xi * eta, xi)
        for sg1 in (1, -1):
            x1, y1 = _shift_pair(a1, s1, sg1)
            for sg2 in (1, -1):
                x2, y2 = _shift_pair(a2, s2, sg2)
                X.append(np.stack([x1, x2], 1))
                Y.append(np.stack([y1, y2], 1))
                W.append(w * xi * (1 - a1) * (1 - a2))
    return np.concatenate(X), np.concatenate(Y), np.concatenate(W)


def _common_edge(q):
    pts, w = _grid(q, 4)
    xi, e1, e2, s = pts.T
    X, Y, W = [], [], []
    for which in range(3):
        if which == 0:
            a, x2, y2 = xi, xi * e1, xi * e2
        elif which == 1:
            a, x2, y2 = xi * e1, xi, xi * e2
        else:
            a, x2, y2 = xi * e1, xi * e2, xi
        for sg in (1, -1):
            x1, y1 = _shift_pair(a, s, sg)
            X.append(np.stack([x1, x2], 1))
            Y.append(np.stack([y1, y2], 1))
            W.append(w * xi ** 2 * (1 - a))
    return np.concatenate(X), np.concatenate(Y), np.concatenate(W)


def _common_vertex(q):
    pts, w = _grid(q, 4)
    xi = pts[:, 0]
    eta = pts[:, 1:]
    X, Y, W = [], [], []
    for top in range(4):
        z = np.empty((len(pts), 4))
        rest = [k for k in range(4) if k != top]
        z[:, top] = xi
        z[:, rest] = xi[:, None] * eta
        X.append(z[:, :2])
        Y.append(z[:, 2:])
        W.append(w * xi ** 3)
    return np.concatenate(X), np.concatenate(Y), np.concatenate(W)


def _disjoint(q):
    pts, w = _grid(q, 4)
    return pts[:, :2], pts[:, 2:], w


_BUILDERS = {
    Adjacency.IDENTICAL: _identical,
    Adjacency.COMMON_EDGE: _common_edge,
    Adjacency.COMMON_VERTEX: _common_vertex,
    Adjacency.DISJOINT: _disjoint,
}


@lru_cache(maxsize=256)
def canonical_rule(kind: Adjacency, q: int) -> ProductQuadratureRule:
    """Rule in the canonical frame of ``kind``; cached per (kind, q)."""
    gauss_rule(q)
    X, Y, W = _BUILDERS[kind](q)
    for arr in (X, Y, W):
        arr.setflags(write=False)
    return ProductQuadratureRule(kind, q, X, Y, W)


def to_native(frame, st):
    """Map canonical-frame points to the element's own parametrization."""
    o, E = frame_axes(*frame)
    return o + st @ E.T


def product_rule(case, q: int) -> ProductQuadratureRule:
    """Regularized 4D rule for an element pair, in native coordinates."""
    if isinstance(case, Adjacency):
        case = AdjacencyCase(case)
    for frame in (case.frame_x, case.frame_y):
        o, u = frame
        if not (0 <= o < 4 and u in ((o + 1) % 4, (o + 3) % 4)):
            raise ValueError(f"inconsistent frame {frame} for {case.kind.name}")
    rule = canonical_rule(case.kind, q)
    if case.kind is Adjacency.DISJOINT:
        return rule
    return ProductQuadratureRule(case.kind, q, to_native(case.frame_x, rule.uv_x),
                                 to_native(case.frame_y, rule.uv_y), rule.weights)


# --------------------------------------------------------------------------
# adaptive order selection

class OrderHistogram:
    """Counts of selected quadrature orders plus a non-convergence tally.

    Updates are guarded by a lock so worker threads may share one instance;
    :meth:`merge` folds in per-worker tallies.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.counts = Counter()
        self.nonconverged = 0

    def record(self, q, converged=True, n=1):
        with self._lock:
            self.counts[int(q)] += int(n)
            if not converged:
                self.nonconverged += int(n)

    def record_many(self, orders, converged):
        orders = np.asarray(orders)
        converged = np.asarray(converged, dtype=bool)
        vals, cnt = np.unique(orders, return_counts=True)
        with self._lock:
            for q, c in zip(vals.tolist(), cnt.tolist()):
                self.counts[q] += c
            self.nonconverged += int(np.count_nonzero(~converged))

    def merge(self, other: "OrderHistogram"):
        with self._lock:
            self.counts.update(other.counts)
            self.nonconverged += other.nonconverged

    def reset(self):
        with self._lock:
            self.counts.clear()
            self.nonconverged = 0

    @property
    def total(self):
        return sum(self.counts.values())

    def as_dict(self):
        return dict(sorted(self.counts.items()))


_GLOBAL = OrderHistogram()


def order_histogram() -> dict:
    """Counts per selected order, accumulated by default-histogram calls."""
    return _GLOBAL.as_dict()


def global_histogram() -> OrderHistogram:
    return _GLOBAL


@dataclass
class AdaptiveResult:
    value: np.ndarray
    order_used: int
    converged: bool


@dataclass(frozen=True)
class QuadratureSettings:
    tol: float = 1e-7
    q_min: int = 2
    q_max: int = Q_MAX

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("quadrature tolerance must be positive")
        if not 1 <= self.q_min < self.q_max <= Q_MAX:
            raise ValueError("need 1 <= q_min < q_max <= %d" % Q_MAX)


def adaptive_integrate(case, integrand: Callable[[ProductQuadratureRule], np.ndarray],
                       tol: float = 1e-7, q_min: int = 2, q_max: int = Q_MAX,
                       histogram: OrderHistogram | None = None) -> AdaptiveResult:
    """Raise the order until two consecutive values agree to ``tol`` (max-norm).

    ``integrand`` receives a :class:`ProductQuadratureRule` for the pair and
    returns the (block) value.  Orders ``q_min, q_min + 1, ...`` are tried;
    the first comparison is between ``q_min`` and ``q_min + 1``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    hist = _GLOBAL if histogram is None else histogram
    prev = np.asarray(integrand(product_rule(case, q_min)))
    for q in range(q_min + 1, q_max + 1):
        cur = np.asarray(integrand(product_rule(case, q)))
        if np.max(np.abs(cur - prev), initial=0.0) < tol:
            hist.record(q)
            return AdaptiveResult(cur, q, True)
        prev = cur
    hist.record(q_max, converged=False)
    log.debug("adaptive quadrature did not converge by q=%d", q_max)
    return AdaptiveResult(prev, q_max, False)


def write_histogram(hist, path):
    """Two-column ``q count`` text file."""
    counts = hist.as_dict() if isinstance(hist, OrderHistogram) else dict(sorted(hist.items()))
    with open(path, "w") as fh:
        fh.write("# q count\n")
        for q, c in counts.items():
            fh.write(f"{q} {c}\n")
