"""Gauss–Legendre quadrature helpers.

All rules here are vectorized: integrands receive arrays of nodes and must
return arrays of the same leading shape.
"""

import logging
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import QuadratureError

logger = logging.getLogger(__name__)

SEGMENT_NODES: int = 32
SEGMENT_TOL: float = 1e-10
MAX_PANELS: int = 1 << 12
MAX_BISECTIONS: int = 40


@lru_cache(maxsize=16)
def legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    a: np.ndarray,
    b: np.ndarray,
    n: int = SEGMENT_NODES,
) -> np.ndarray:
    """Integrate f over each interval [a_i, b_i] with one n-point panel.

    ``f`` is called once with a (m, n) array of nodes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    nodes, weights = legendre_rule(n)
    width = b - a
    points = a[..., None] + width[..., None] * nodes
    values = np.asarray(f(points), dtype=float)
    return width * (values @ weights)


def composite_gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    n: int = SEGMENT_NODES,
    tol: float = SEGMENT_TOL,
) -> np.ndarray:
    """Composite rule over [a, b], doubling panels until successive sums agree.

    ``f`` maps a 1-D array of k nodes to an array of shape (k,) or (k, m); the
    result has shape () or (m,). Convergence is declared when successive
    estimates differ by less than ``tol`` in every component.
    """
    nodes, weights = legendre_rule(n)

    def estimate(panels: int) -> np.ndarray:
        edges = np.linspace(a, b, panels + 1)
        width = np.diff(edges)
        points = (edges[:-1, None] + width[:, None] * nodes).ravel()
        values = np.asarray(f(points), dtype=float)
        values = values.reshape((panels, n) + values.shape[1:])
        return np.einsum("pn...,n,p->...", values, weights, width)

    panels = 1
    previous = estimate(panels)
    while panels < MAX_PANELS:
        panels *= 2
        current = estimate(panels)
        gap = float(np.max(np.abs(current - previous)))
        if gap < tol:
            return current
        previous = current
    raise QuadratureError(f"composite rule on [{a:.6g}, {b:.6g}] did not converge", gap)


def adaptive_cumulative(
    f: Callable[[np.ndarray], np.ndarray],
    edges: np.ndarray,
    tol: float,
    n: int = 16,
) -> np.ndarray:
    """Integrals of f over consecutive intervals of ``edges``, adaptively refined.

    Each interval is bisected until the one-panel and two-panel estimates agree
    within its share of ``tol`` (proportional to its length). Returns the
    per-interval integrals; callers take cumulative sums.
    """
    edges = np.asarray(edges, dtype=float)
    span = float(edges[-1] - edges[0])
    if span <= 0:
        return np.zeros(max(len(edges) - 1, 0))

    totals = np.zeros(len(edges) - 1)
    owner = np.arange(len(edges) - 1)
    lo = edges[:-1].copy()
    hi = edges[1:].copy()
    worst = np.inf

    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        coarse = gauss_legendre(f, lo, hi, n)
        fine = gauss_legendre(f, lo, mid, n) + gauss_legendre(f, mid, hi, n)
        gap = np.abs(fine - coarse)
        allowed = np.maximum(tol * (hi - lo) / span, 64 * np.finfo(float).eps * np.abs(fine))
        done = gap <= allowed
        np.add.at(totals, owner[done], fine[done])
        if done.all():
            return totals
        worst = float(gap[~done].max())
        keep = ~done
        lo, mid_k, hi = lo[keep], mid[keep], hi[keep]
        owner = np.concatenate([owner[keep], owner[keep]])
        lo, hi = np.concatenate([lo, mid_k]), np.concatenate([mid_k, hi])
        logger.debug("refining %d quadrature intervals", len(lo))

    raise QuadratureError("adaptive refinement exhausted", worst)
