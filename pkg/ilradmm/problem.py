"""
Problem data model
====================================
The constrained composite model ``min f(x) + sum_i g(h(y_i))  s.t.  A x + B y = c`` and the
iterate state shared by ILR-ADMM and the baselines.

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
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from ilradmm.operators import (ConstraintSystem, DimensionMismatchError,
                               LinearOperator, operator_norm)
from ilradmm.penalties import (ConcaveOuter, InnerConvex, WeightVector,
                               penalty_value)


class SmoothLoss(ABC):
    """
    Smooth loss ``f`` with an L_f-Lipschitz gradient.
    ``delta`` is the strong convexity constant of ``f(x) + ||A x||^2 / 2`` when known.
    """

    def __init__(self, dim: int, delta: Optional[float] = None):
        if int(dim) <= 0:
            raise ValueError(f"Loss dimension must be positive, got {dim}.")
        if delta is not None and delta <= 0:
            raise ValueError(f"delta must be > 0 when given, got {delta}.")
        self.dim: int = int(dim)
        self.delta: Optional[float] = delta

    @abstractmethod
    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError()

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    @property
    @abstractmethod
    def lipschitz(self) -> float:
        raise NotImplementedError()

    def hessian_dense(self) -> Optional[np.ndarray]:
        """
        Returns the (constant) Hessian as a dense matrix when the loss is quadratic, else None.
        """
        return None


class QuadraticLoss(SmoothLoss):
    """
    ``f(x) = ||Psi x - b||^2 / 2``.
    """

    def __init__(self, operator: LinearOperator, data: np.ndarray, delta: Optional[float] = None):
        data = np.array(data, dtype=float)
        if data.shape != (operator.out_dim,):
            raise DimensionMismatchError("QuadraticLoss data", operator.out_dim, data.shape)
        SmoothLoss.__init__(self, dim=operator.in_dim, delta=delta)
        data.setflags(write=False)
        self.operator: LinearOperator = operator
        self.data: np.ndarray = data
        self._lipschitz: Optional[float] = None

    def value(self, x):
        residual = self.operator.apply(x) - self.data
        return 0.5 * float(residual @ residual)

    def gradient(self, x):
        return self.operator.adjoint_apply(self.operator.apply(x) - self.data)

    @property
    def lipschitz(self) -> float:
        if self._lipschitz is None:
            self._lipschitz = operator_norm(self.operator) ** 2
        return self._lipschitz

    def hessian_dense(self) -> Optional[np.ndarray]:
        psi = self.operator.to_dense()
        return psi.T @ psi

    def minimizer(self) -> np.ndarray:
        """
        Least-squares minimizer of ``f`` alone.
        """
        return np.linalg.lstsq(self.operator.to_dense(), self.data, rcond=None)[0]


class CallableLoss(SmoothLoss):
    """
    Loss given by value and gradient callables, with a user-supplied Lipschitz constant.
    """

    def __init__(
            self,
            dim: int,
            value_fn: Callable[[np.ndarray], float],
            gradient_fn: Callable[[np.ndarray], np.ndarray],
            lipschitz: float,
            delta: Optional[float] = None
    ):
        if lipschitz < 0:
            raise ValueError(f"Lipschitz constant must be >= 0, got {lipschitz}.")
        SmoothLoss.__init__(self, dim=dim, delta=delta)
        self._value_fn = value_fn
        self._gradient_fn = gradient_fn
        self._lipschitz = float(lipschitz)

    def value(self, x):
        return float(self._value_fn(x))

    def gradient(self, x):
        return np.asarray(self._gradient_fn(x), dtype=float)

    @property
    def lipschitz(self) -> float:
        return self._lipschitz


@dataclass(frozen=True)
class ProblemSpec:
    loss: SmoothLoss
    constraints: ConstraintSystem
    outer: ConcaveOuter
    inner: InnerConvex

    def __post_init__(self):
        if self.loss.dim != self.constraints.A.in_dim:
            raise DimensionMismatchError("loss dimension vs A.in_dim", self.constraints.A.in_dim, self.loss.dim)

    @property
    def A(self) -> LinearOperator:
        return self.constraints.A

    @property
    def B(self) -> LinearOperator:
        return self.constraints.B

    @property
    def c(self) -> np.ndarray:
        return self.constraints.c

    def penalty(self, y: np.ndarray) -> float:
        return penalty_value(self.outer, self.inner, y)

    def objective(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.loss.value(x) + self.penalty(y)


@dataclass(frozen=True)
class SolverState:
    """
    Iterate ``d^k = (x^k, y^k, p^k)`` with the live parameters and the weights ``W^k`` computed at ``y^k``.
    ``weights`` is None for algorithms that cannot evaluate them at ``y^k``.
    """
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    alpha: float
    r: float
    k: int = 0
    weights: Optional[WeightVector] = None

    def with_updates(self, **changes) -> 'SolverState':
        return replace(self, **changes)

    def check_dims(self, problem: ProblemSpec) -> 'SolverState':
        if self.x.shape != (problem.A.in_dim,):
            raise DimensionMismatchError("state x", problem.A.in_dim, self.x.shape)
        if self.y.shape != (problem.B.in_dim,):
            raise DimensionMismatchError("state y", problem.B.in_dim, self.y.shape)
        if self.p.shape != (problem.A.out_dim,):
            raise DimensionMismatchError("state p", problem.A.out_dim, self.p.shape)
        return self

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.p)))
