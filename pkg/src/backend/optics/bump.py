"""
Plateau Bumps

Smooth compactly supported cutoffs built from the exponential step
S(x) = e(x) / (e(x) + e(1 - x)), e(x) = exp(-1/x) for x > 0. A plateau bump
equals 1 for |z| <= plateau and 0 for |z| >= plateau + transition. The first
two derivatives of S come from sympy in closed form.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np
import sympy

_EDGE = 1e-3


@lru_cache(maxsize=1)
def _step_functions() -> Tuple[Callable, Callable, Callable]:
    x = sympy.Symbol("x", positive=True)
    e0 = sympy.exp(-1 / x)
    e1 = sympy.exp(-1 / (1 - x))
    step = e0 / (e0 + e1)
    d1 = sympy.diff(step, x)
    d2 = sympy.diff(step, x, 2)
    return tuple(sympy.lambdify(x, expr, "numpy") for expr in (step, d1, d2))


def smooth_step(x: np.ndarray, derivative: int = 0) -> np.ndarray:
    """S and its first two derivatives; exactly 0 below 0 and exactly 1 (or 0) above 1"""
    x = np.asarray(x, dtype=float)
    fns = _step_functions()
    inside = (x > 0) & (x < 1)
    xc = np.clip(x, _EDGE, 1 - _EDGE)
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        raw = np.nan_to_num(np.asarray(fns[derivative](xc), dtype=float) * np.ones_like(xc))
    if derivative == 0:
        return np.where(inside, raw, np.where(x >= 1, 1.0, 0.0))
    return np.where(inside, raw, 0.0)


@dataclass(frozen=True)
class PlateauBump:
    """Radial cutoff chi(|z|) with chi = 1 on the plateau"""
    plateau: float
    transition: float

    def __post_init__(self):
        if self.plateau < 0 or self.transition <= 0:
            raise ValueError(f"Bump needs plateau >= 0 and transition > 0, got "
                             f"{self.plateau}, {self.transition}")

    @property
    def support_radius(self) -> float:
        return self.plateau + self.transition

    def radial(self, rho: np.ndarray, derivative: int = 0) -> np.ndarray:
        """d^k chi / d rho^k at radius rho"""
        arg = (self.support_radius - np.asarray(rho, dtype=float)) / self.transition
        return smooth_step(arg, derivative) * (-1.0 / self.transition) ** derivative

    def value(self, z: np.ndarray) -> np.ndarray:
        return self.radial(np.linalg.norm(z, axis=-1))

    def derivatives(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(value, gradient (..., n), Hessian (..., n, n)) at offsets z (..., n)"""
        z = np.asarray(z, dtype=float)
        n = z.shape[-1]
        rho = np.linalg.norm(z, axis=-1)
        safe = np.where(rho > 0, rho, 1.0)
        unit = np.where((rho > 0)[..., None], z / safe[..., None], 0.0)
        c0 = self.radial(rho)
        c1 = self.radial(rho, 1)
        c2 = self.radial(rho, 2)
        grad = c1[..., None] * unit
        outer = unit[..., :, None] * unit[..., None, :]
        ratio = np.where(rho > 0, c1 / safe, 0.0)
        hess = c2[..., None, None] * outer + ratio[..., None, None] * (np.eye(n) - outer)
        return c0, grad, hess

    def in_time(self, t: np.ndarray, center: float) -> np.ndarray:
        """One-dimensional profile chi(|t - center|)"""
        return self.radial(np.abs(np.asarray(t, dtype=float) - center))

    def support_mask(self, coords: np.ndarray, center: Sequence[float]) -> np.ndarray:
        rho = np.linalg.norm(coords - np.asarray(center, dtype=float), axis=-1)
        return rho < self.support_radius
