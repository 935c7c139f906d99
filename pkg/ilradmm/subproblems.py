"""
x-subproblem solvers
====================================
Solvers for the strongly convex x-update

    ``argmin_x f(x) + <p, A x> + (alpha / 2) ||A x + B y - c||^2``.

For a quadratic loss ``f(x) = ||Psi x - b||^2 / 2`` this is the linear system

    ``(Psi^T Psi + alpha A^T A) x = Psi^T b - A^T p + alpha A^T (c - B y)``.

..
    Copyright 2022, The ilradmm developers.

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse.linalg

from ilradmm.operators import Convolution2D, Difference2D
from ilradmm.problem import ProblemSpec, QuadraticLoss

DENSE_SOLVE_MAX_DIM = 2048
CG_MAX_ITER = 5000
CG_MAX_RESTARTS = 2
CG_ROUNDOFF_RTOL = 1e-14


class LinearSolveError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual norm {residual}).")


def subproblem_gradient(problem: ProblemSpec, x: np.ndarray, y: np.ndarray, p: np.ndarray, alpha: float) -> np.ndarray:
    """
    Returns ``grad f(x) + A^T p + alpha A^T (A x + B y - c)``.
    """
    residual = problem.constraints.residual(x, y)
    return problem.loss.gradient(x) + problem.A.adjoint_apply(p + alpha * residual)


def subproblem_residual(problem: ProblemSpec, x: np.ndarray, y: np.ndarray, p: np.ndarray, alpha: float) -> float:
    return float(np.linalg.norm(subproblem_gradient(problem, x, y, p, alpha)))


class XSubproblemSolver(ABC):
    """
    Base class of the x-update solvers. A solver instance belongs to one run and may cache
    factorizations keyed by ``alpha``.

    .. seealso::
        :class:`DenseCholeskySolver`,
        :class:`ConjugateGradientSolver`,
        :class:`SmoothMinimizeSolver`
    """

    def __init__(self, tol: float = 1e-10):
        self.tol: float = tol

    @abstractmethod
    def solve(self, problem: ProblemSpec, x0: np.ndarray, y: np.ndarray, p: np.ndarray, alpha: float) -> np.ndarray:
        raise NotImplementedError()

    @staticmethod
    def quadratic_rhs(problem: ProblemSpec, y: np.ndarray, p: np.ndarray, alpha: float) -> np.ndarray:
        loss: QuadraticLoss = problem.loss
        target = problem.c - problem.B.apply(y)
        return loss.operator.adjoint_apply(loss.data) + problem.A.adjoint_apply(alpha * target - p)


class DenseCholeskySolver(XSubproblemSolver):
    """
    Cholesky factorization of the dense system matrix, refactorized only when ``alpha`` changes,
    followed by one step of iterative refinement.
    """

    def __init__(self, tol: float = 1e-10):
        XSubproblemSolver.__init__(self, tol=tol)
        self._gram_loss: Optional[np.ndarray] = None
        self._gram_a: Optional[np.ndarray] = None
        self._factor: Optional[Tuple[np.ndarray, bool]] = None
        self._factor_alpha: Optional[float] = None
        self._system: Optional[np.ndarray] = None

    def _factorize(self, problem: ProblemSpec, alpha: float):
        if self._gram_loss is None:
            self._gram_loss = problem.loss.hessian_dense()
            a = problem.A.to_dense()
            self._gram_a = a.T @ a
        if self._factor_alpha != alpha:
            self._system = self._gram_loss + alpha * self._gram_a
            try:
                self._factor = scipy.linalg.cho_factor(self._system)
            except np.linalg.LinAlgError as e:
                raise LinearSolveError(f"Cholesky factorization failed at alpha={alpha}: {e}", float('nan')) from e
            self._factor_alpha = alpha

    def solve(self, problem, x0, y, p, alpha):
        self._factorize(problem, alpha)
        rhs = self.quadratic_rhs(problem, y, p, alpha)
        x = scipy.linalg.cho_solve(self._factor, rhs)
        x = x + scipy.linalg.cho_solve(self._factor, rhs - self._system @ x)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("Cholesky solve returned non-finite values", float('nan'))
        return x


class ConjugateGradientSolver(XSubproblemSolver):
    """
    Matrix-free conjugate gradient, warm-started at the previous x.
    When ``Psi`` is a periodic convolution and ``A`` a 2-D difference on the same grid, the system is
    preconditioned by its periodic approximation, which the DFT diagonalizes.

    CG stops on the absolute residual ``tol (1 + ||x0||)``. The true residual is recomputed afterwards and CG
    restarts from its last iterate while it is above the target.
    """

    def __init__(self, tol: float = 1e-10, max_iter: int = CG_MAX_ITER, use_preconditioner: bool = True,
                 max_restarts: int = CG_MAX_RESTARTS):
        XSubproblemSolver.__init__(self, tol=tol)
        self.max_iter: int = max_iter
        self.use_preconditioner: bool = use_preconditioner
        self.max_restarts: int = max_restarts
        self.last_n_iter: int = 0
        self.last_residual: float = float('nan')

    def solve(self, problem, x0, y, p, alpha):
        loss: QuadraticLoss = problem.loss
        n = problem.A.in_dim

        def matvec(v):
            v = np.ravel(v)
            return loss.operator.gram_apply(v) + alpha * problem.A.gram_apply(v)

        system = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
        rhs = self.quadratic_rhs(problem, y, p, alpha)
        preconditioner = self._fft_preconditioner(problem, alpha) if self.use_preconditioner else None
        target = self.tol * (1.0 + float(np.linalg.norm(x0)))

        n_iter = [0]

        def count(_):
            n_iter[0] += 1

        x = x0
        for _ in range(self.max_restarts + 1):
            x, info = scipy.sparse.linalg.cg(
                system, rhs, x0=x, rtol=CG_ROUNDOFF_RTOL, atol=target, maxiter=self.max_iter, M=preconditioner,
                callback=count)
            if not np.all(np.isfinite(x)):
                break
            self.last_residual = float(np.linalg.norm(rhs - matvec(x)))
            if info != 0 or self.last_residual <= target:
                break
        self.last_n_iter = n_iter[0]
        if info != 0 or not np.all(np.isfinite(x)):
            residual = float(np.linalg.norm(rhs - matvec(x))) if np.all(np.isfinite(x)) else float('nan')
            raise LinearSolveError(f"Conjugate gradient stopped with info={info} after {n_iter[0]} iterations", residual)
        return x

    @staticmethod
    def _fft_preconditioner(problem: ProblemSpec, alpha: float) -> Optional[scipy.sparse.linalg.LinearOperator]:
        psi = problem.loss.operator
        a = problem.A
        if not (isinstance(psi, Convolution2D) and isinstance(a, Difference2D)):
            return None
        if (psi.height, psi.width) != (a.height, a.width):
            return None
        h, w = psi.height, psi.width
        rows = 4.0 * np.sin(np.pi * np.arange(h) / h) ** 2
        cols = 4.0 * np.sin(np.pi * np.arange(w // 2 + 1) / w) ** 2
        kernel_power = np.abs(np.fft.rfft2(psi.padded_kernel)) ** 2
        symbol = kernel_power + alpha * np.add.outer(rows, cols)
        symbol = np.maximum(symbol, np.finfo(float).eps * max(1.0, float(np.max(symbol))))

        def apply_inverse(v):
            img = np.ravel(v).reshape(h, w)
            return np.fft.irfft2(np.fft.rfft2(img) / symbol, s=(h, w)).ravel()

        return scipy.sparse.linalg.LinearOperator((h * w, h * w), matvec=apply_inverse, dtype=float)


class SmoothMinimizeSolver(XSubproblemSolver):
    """
    Quasi-Newton (L-BFGS-B) minimization for non-quadratic losses.
    The result is not guaranteed to meet ``tol``; the solver run records the achieved residual.
    """

    def __init__(self, tol: float = 1e-10, max_iter: int = 10000):
        XSubproblemSolver.__init__(self, tol=tol)
        self.max_iter: int = max_iter

    def solve(self, problem, x0, y, p, alpha):
        def fun(x):
            residual = problem.constraints.residual(x, y)
            value = problem.loss.value(x) + float(p @ problem.A.apply(x)) + 0.5 * alpha * float(residual @ residual)
            return value, subproblem_gradient(problem, x, y, p, alpha)

        result = scipy.optimize.minimize(
            fun, x0, jac=True, method='L-BFGS-B',
            options={'gtol': self.tol, 'ftol': 0.0, 'maxiter': self.max_iter})
        if not np.all(np.isfinite(result.x)):
            raise LinearSolveError(f"L-BFGS-B returned non-finite values: {result.message}", float('nan'))
        return result.x


def default_x_solver(problem: ProblemSpec, tol: float = 1e-10) -> XSubproblemSolver:
    if not isinstance(problem.loss, QuadraticLoss):
        return SmoothMinimizeSolver(tol=tol)
    structured = isinstance(problem.loss.operator, Convolution2D) or isinstance(problem.A, Difference2D)
    if problem.A.in_dim <= DENSE_SOLVE_MAX_DIM and not structured:
        return DenseCholeskySolver(tol=tol)
    return ConjugateGradientSolver(tol=tol)
