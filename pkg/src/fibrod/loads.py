"""Body-force fields given by component expressions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fibrod.expr import HOM_VARIABLES, ROD_VARIABLES, Expression, evaluate
from fibrod.tensors import EvaluationPoints


@dataclass(frozen=True)
class LoadField:
    """Three component expressions ``(f1, f2, f3)``.

    In ``rod`` mode the variables are ``x1 x2 x3`` and the region
    indicators; ``hom`` mode adds the cell coordinates ``y1 y2``.
    """

    components: tuple[Expression, Expression, Expression]
    mode: str = "rod"
    scale: float = 1.0

    @classmethod
    def parse(cls, f1: str | float, f2: str | float, f3: str | float, mode: str = "rod") -> "LoadField":
        if mode not in ("rod", "hom"):
            raise ValueError(f"unknown load mode {mode!r}")
        allowed = ROD_VARIABLES if mode == "rod" else HOM_VARIABLES
        comps = tuple(Expression.parse(c, allowed) for c in (f1, f2, f3))
        return cls(comps, mode)

    @classmethod
    def zero(cls, mode: str = "rod") -> "LoadField":
        return cls.parse(0, 0, 0, mode)

    @property
    def is_zero(self) -> bool:
        return self.scale == 0.0 or all(c.is_constant and float(evaluate(c.tree, {})) == 0.0 for c in self.components)

    @property
    def depends_on_y(self) -> bool:
        return any({"y1", "y2"} & c.variables for c in self.components)

    def scaled(self, s: float) -> "LoadField":
        return LoadField(self.components, self.mode, self.scale * s)

    def evaluate(self, pts: EvaluationPoints) -> np.ndarray:
        """Load vectors at the points, shape ``(n, 3)``."""
        n = len(pts)
        env = pts.variables()
        out = np.empty((n, 3))
        for k, comp in enumerate(self.components):
            out[:, k] = comp(env, n)
        if self.scale != 1.0:
            out *= self.scale
        return out

    def component(self, k: int, pts: EvaluationPoints) -> np.ndarray:
        out = self.components[k](pts.variables(), len(pts))
        return out * self.scale if self.scale != 1.0 else out

    def __str__(self) -> str:
        text = ", ".join(c.source for c in self.components)
        return f"({text})" if self.scale == 1.0 else f"{self.scale!r}*({text})"


def sum_loads(a: LoadField, b: LoadField) -> LoadField:
    """Componentwise sum (used by superposition checks)."""
    if a.mode != b.mode:
        raise ValueError("cannot add loads of different modes")
    comps = []
    for ca, cb in zip(a.components, b.components):
        comps.append(f"({a.scale!r})*({ca.source}) + ({b.scale!r})*({cb.source})")
    return LoadField.parse(*comps, mode=a.mode)
