"""
Independent Oracles

Reference solutions that do not use the time-stepping scheme: direct
quadrature of the 1D Duhamel/d'Alembert formula for q = 0, and manufactured
solutions built symbolically with sympy.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import sympy

from ..grid.fields import ScalarField
from ..grid.grids import SpatialGrid


def dalembert_oracle_1d(source: Callable[[np.ndarray, np.ndarray], np.ndarray], t: float,
                        grid: SpatialGrid, points: int = 200) -> ScalarField:
    """
    u(t,x) = 1/2 int_0^t int_{x-(t-tau)}^{x+(t-tau)} f(tau,y) dy dtau
    by tensor Gauss-Legendre quadrature, vectorised over the grid nodes.
    """
    if grid.dimension != 1:
        raise ValueError(f"d'Alembert oracle needs a 1D grid, got n={grid.dimension}")
    x = grid.axes()[0]
    if t <= 0:
        return ScalarField.zeros(grid)
    nodes, weights = np.polynomial.legendre.leggauss(points)
    taus = 0.5 * t * (nodes + 1.0)
    tau_w = 0.5 * t * weights
    total = np.zeros(x.shape, dtype=complex)
    for tau, wt in zip(taus, tau_w):
        half = t - tau
        y = x[:, None] + half * nodes[None, :]
        inner = half * np.asarray(source(np.full_like(y, tau), y), dtype=complex) @ weights
        total += wt * inner
    return ScalarField(grid, 0.5 * total)


@dataclass
class ManufacturedSolution:
    """u*(t,x) = sin^2(omega0 t) phi(x) and f := (d_t^2 - Delta + q) u*"""
    exact: Callable[[float, np.ndarray], np.ndarray]
    source: Callable[[float, np.ndarray], np.ndarray]
    expression: sympy.Expr
    forcing: sympy.Expr


def manufactured_solution(dimension: int, omega0: float, q_value: float, width: float,
                          center: Optional[Sequence[float]] = None) -> ManufacturedSolution:
    """Gaussian profile phi centred at center with standard deviation width"""
    t = sympy.Symbol("t", real=True)
    xs = sympy.symbols(f"x0:{dimension}", real=True)
    center = list(center) if center is not None else [0.0] * dimension
    r2 = sum((xi - ci) ** 2 for xi, ci in zip(xs, center))
    phi = sympy.exp(-r2 / (2 * sympy.Float(width) ** 2))
    u = sympy.sin(sympy.Float(omega0) * t) ** 2 * phi
    f = sympy.diff(u, t, 2) - sum(sympy.diff(u, xi, 2) for xi in xs) + sympy.Float(q_value) * u
    u_fn = sympy.lambdify((t,) + tuple(xs), u, "numpy")
    f_fn = sympy.lambdify((t,) + tuple(xs), f, "numpy")

    def exact(time: float, coords: np.ndarray) -> np.ndarray:
        parts = [coords[..., k] for k in range(dimension)]
        return np.broadcast_to(u_fn(time, *parts), coords.shape[:-1]).astype(complex)

    def source(time: float, coords: np.ndarray) -> np.ndarray:
        parts = [coords[..., k] for k in range(dimension)]
        return np.broadcast_to(f_fn(time, *parts), coords.shape[:-1]).astype(complex)

    return ManufacturedSolution(exact, source, u, f)


def relative_l2_error(approx: np.ndarray, exact: np.ndarray) -> float:
    scale = np.linalg.norm(exact)
    if scale == 0:
        return float(np.linalg.norm(approx))
    return float(np.linalg.norm(approx - exact) / scale)


def observed_order(errors: Sequence[float], spacings: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(spacing)"""
    slope, _ = np.polyfit(np.log(np.asarray(spacings)), np.log(np.asarray(errors)), 1)
    return float(slope)
