"""Quadrature rules on reference cells."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Rule:
    points: np.ndarray  # (nq, d) reference coordinates
    weights: np.ndarray  # (nq,), sum = reference measure


@lru_cache(maxsize=None)
def gauss_line(n: int) -> Rule:
    """Gauss-Legendre rule with ``n`` points on ``[0, 1]`` (exact to degree ``2n - 1``)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return Rule(0.5 * (x + 1.0)[:, None], 0.5 * w)


@lru_cache(maxsize=None)
def triangle(degree: int = 2) -> Rule:
    """Symmetric rules on the reference triangle ``{(s, t): s, t >= 0, s + t <= 1}`` (area 1/2)."""
    if degree <= 2:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 6)
    elif degree <= 4:
        a, b = 0.445948490915965, 0.091576213509771
        wa, wb = 0.223381589678011, 0.109951743655322
        bary = np.array([
            [a, a, 1 - 2 * a], [a, 1 - 2 * a, a], [1 - 2 * a, a, a],
            [b, b, 1 - 2 * b], [b, 1 - 2 * b, b], [1 - 2 * b, b, b],
        ])
        w = 0.5 * np.array([wa, wa, wa, wb, wb, wb])
    else:
        raise ValueError("triangle rules implemented up to degree 4")
    return Rule(bary[:, 1:], w)


@lru_cache(maxsize=None)
def tetrahedron(degree: int = 2) -> Rule:
    """Four-point degree-2 rule on the reference tetrahedron (volume 1/6)."""
    if degree > 2:
        raise ValueError("tetrahedron rule implemented up to degree 2")
    a, b = 0.5854101966249685, 0.1381966011250105
    bary = np.full((4, 4), b)
    np.fill_diagonal(bary, a)
    return Rule(bary[:, 1:], np.full(4, 1 / 24))


@lru_cache(maxsize=None)
def prism(tri_degree: int = 2, line_points: int = 2) -> Rule:
    """Tensor product of a triangle rule and a Gauss line rule."""
    t, g = triangle(tri_degree), gauss_line(line_points)
    pts = np.array([[p[0], p[1], z[0]] for z in g.points for p in t.points])
    w = np.array([wz * wt for wz in g.weights for wt in t.weights])
    return Rule(pts, w)
