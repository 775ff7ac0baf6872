"""
Linear Algebra Helpers

Conjugate gradients with iteration accounting, power iteration in a caller
supplied inner product, and powers of Hermitian positive matrices.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

logger = logging.getLogger(__name__)


@dataclass
class CGResult:
    """Outcome of one conjugate-gradient solve"""
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
                       rtol: float = 1e-8, maxiter: Optional[int] = None,
                       x0: Optional[np.ndarray] = None) -> CGResult:
    """
    Solve A x = rhs for Hermitian positive definite A given as a matvec.

    residual is the relative residual |A x - rhs| / |rhs| recomputed at the
    end, independent of scipy's internal estimate.
    """
    rhs = np.asarray(rhs, dtype=complex).reshape(-1)
    n = rhs.size
    if not np.any(rhs):
        return CGResult(np.zeros(n, dtype=complex), 0, 0.0, True)
    op = LinearOperator((n, n), matvec=lambda v: np.asarray(matvec(v), dtype=complex).reshape(-1),
                        dtype=complex)
    count = [0]

    def on_iteration(_):
        count[0] += 1

    x, info = cg(op, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, callback=on_iteration)
    residual = float(np.linalg.norm(op.matvec(x) - rhs) / np.linalg.norm(rhs))
    converged = info == 0
    if not converged:
        logger.warning(f"CG stopped after {count[0]} iterations, relative residual {residual:.3e}")
    return CGResult(x, count[0], residual, converged)


@dataclass
class PowerIterationResult:
    """Largest eigenvalue estimate of a Hermitian positive semi-definite operator"""
    value: float
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list)


def power_iteration(apply: Callable[[np.ndarray], np.ndarray], start: np.ndarray,
                    inner: Callable[[np.ndarray, np.ndarray], complex],
                    iters: int = 50, tol: float = 1e-6) -> PowerIterationResult:
    """
    Rayleigh quotients <v, A v> / <v, v> along the power sequence.

    Converges when two successive quotients agree to tol relative. An
    operator that annihilates the start vector returns 0, converged.
    """
    v = np.asarray(start, dtype=complex)
    v = v / np.sqrt(inner(v, v).real)
    history: List[float] = []
    for k in range(1, iters + 1):
        w = apply(v)
        value = float(inner(w, v).real)
        w_norm = np.sqrt(max(inner(w, w).real, 0.0))
        history.append(value)
        if w_norm == 0.0:
            return PowerIterationResult(0.0, k, True, history)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-1]):
            return PowerIterationResult(value, k, True, history)
        v = w / w_norm
    logger.warning(f"Power iteration did not converge in {iters} iterations")
    return PowerIterationResult(history[-1], iters, False, history)


def hermitian_power(matrix: np.ndarray, power: float, floor: float = 1e-300) -> np.ndarray:
    """matrix ** power for Hermitian positive definite matrix via eigh"""
    sym = 0.5 * (matrix + matrix.conj().T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() <= 0:
        raise np.linalg.LinAlgError(f"Matrix is not positive definite (min eigenvalue {vals.min():.3e})")
    return (vecs * np.maximum(vals, floor) ** power) @ vecs.conj().T


def hermitian_defect(matrix: np.ndarray) -> float:
    """|A - A^H| / |A| in the Frobenius norm"""
    scale = np.linalg.norm(matrix)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(matrix - matrix.conj().T) / scale)
