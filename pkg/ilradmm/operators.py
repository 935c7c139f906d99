"""
Linear operators
====================================
Matrix-free linear operators with their adjoints and spectral constants.

Shipped kinds:

- ``dense``: an explicit matrix,
- ``difference-1d``: forward differences ``x[i+1] - x[i]``,
- ``difference-2d``: forward differences on a row-major ``height x width`` grid, all horizontal
  differences first, then all vertical ones,
- ``convolution-2d``: convolution with periodic (circular) boundaries, diagonalized by the 2-D DFT,
- ``scaled-identity``: ``beta * I``.

Structured kinds know their singular values in closed form, so norms and the smallest positive
singular value are exact at any size. Dense operators use a dense decomposition.

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
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

POWER_ITERATION_TOL = 1e-8
POWER_ITERATION_MAX_ITER = 10000
RANK_CUTOFF = 1e-10
DENSE_SPECTRUM_MAX_DIM = 4096


class DimensionMismatchError(ValueError):
    def __init__(self, what: str, expected: int, actual: Any):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected dimension {expected}, got {actual}.")


class PowerIterationError(RuntimeError):
    def __init__(self, n_iter: int, estimate: float, change: float):
        self.n_iter = n_iter
        self.estimate = estimate
        self.change = change
        super().__init__(
            f"Power iteration did not converge in {n_iter} iterations "
            f"(last estimate {estimate}, last relative change {change}).")


class LinearOperator(ABC):
    """
    Base class for a linear map from R^in_dim to R^out_dim.
    Operators are immutable once built. Subclasses implement :func:`_apply` and :func:`_adjoint_apply`
    on vectors whose dimension was already checked.

    .. seealso::
        :func:`operator_norm`,
        :func:`smallest_positive_singular_value`,
        :func:`build_operator`
    """
    kind: str = None

    def __init__(self, in_dim: int, out_dim: int):
        if int(in_dim) <= 0 or int(out_dim) <= 0:
            raise ValueError(f"{type(self).__name__} dimensions must be positive, got in_dim={in_dim}, out_dim={out_dim}.")
        self.in_dim: int = int(in_dim)
        self.out_dim: int = int(out_dim)
        self._singular_values: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.out_dim, self.in_dim

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._as_vector(x, self.in_dim, "apply")
        return self._apply(x)

    def adjoint_apply(self, p: np.ndarray) -> np.ndarray:
        p = self._as_vector(p, self.out_dim, "adjoint_apply")
        return self._adjoint_apply(p)

    def gram_apply(self, x: np.ndarray) -> np.ndarray:
        """
        Returns Op^T Op x.
        """
        return self.adjoint_apply(self.apply(x))

    @abstractmethod
    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    @abstractmethod
    def _adjoint_apply(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def to_dense(self) -> np.ndarray:
        """
        Materialize the operator column by column.
        """
        out = np.empty((self.out_dim, self.in_dim))
        e = np.zeros(self.in_dim)
        for j in range(self.in_dim):
            e[j] = 1.0
            out[:, j] = self._apply(e)
            e[j] = 0.0
        return out

    def singular_values(self) -> np.ndarray:
        """
        Returns the min(in_dim, out_dim) singular values, sorted in descending order.
        """
        if self._singular_values is None:
            sv = np.sort(np.abs(np.asarray(self._compute_singular_values(), dtype=float)))[::-1]
            sv = sv[:min(self.in_dim, self.out_dim)]
            sv.setflags(write=False)
            self._singular_values = sv
        return self._singular_values

    def _compute_singular_values(self) -> np.ndarray:
        return scipy.linalg.svdvals(self.to_dense())

    def has_cheap_spectrum(self) -> bool:
        """
        True when :func:`singular_values` is affordable, either from a closed form or a desk-scale decomposition.
        """
        return True

    @staticmethod
    def _as_vector(v: np.ndarray, dim: int, what: str) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] != dim:
            raise DimensionMismatchError(what, dim, v.shape[0] if v.ndim == 1 else v.shape)
        return v

    def __repr__(self):
        return f"{type(self).__name__}(in_dim={self.in_dim}, out_dim={self.out_dim})"


class DenseOperator(LinearOperator):
    kind = 'dense'

    def __init__(self, matrix: np.ndarray):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"Dense operator needs a 2-D matrix, got shape {matrix.shape}.")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("Dense operator matrix has non-finite entries.")
        LinearOperator.__init__(self, in_dim=matrix.shape[1], out_dim=matrix.shape[0])
        matrix.setflags(write=False)
        self.matrix: np.ndarray = matrix

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint_apply(self, p):
        return self.matrix.T @ p

    def to_dense(self) -> np.ndarray:
        return np.array(self.matrix)

    def has_cheap_spectrum(self) -> bool:
        return max(self.in_dim, self.out_dim) <= DENSE_SPECTRUM_MAX_DIM


def _path_laplacian_eigenvalues(n: int) -> np.ndarray:
    # Eigenvalues of D^T D for the (n-1) x n forward difference D.
    k = np.arange(n)
    return 4.0 * np.sin(np.pi * k / (2.0 * n)) ** 2


class Difference1D(LinearOperator):
    kind = 'difference-1d'

    def __init__(self, n: int):
        if int(n) < 2:
            raise ValueError(f"difference-1d needs n >= 2, got {n}.")
        LinearOperator.__init__(self, in_dim=n, out_dim=int(n) - 1)
        self.n: int = int(n)

    def _apply(self, x):
        return np.diff(x)

    def _adjoint_apply(self, p):
        out = np.zeros(self.n)
        out[:-1] -= p
        out[1:] += p
        return out

    def _compute_singular_values(self):
        return np.sqrt(_path_laplacian_eigenvalues(self.n))


class Difference2D(LinearOperator):
    """
    Forward differences on a ``height x width`` image stored row-major.
    The output stacks the ``height * (width - 1)`` horizontal differences, then the
    ``(height - 1) * width`` vertical ones, each block row-major.
    """
    kind = 'difference-2d'

    def __init__(self, height: int, width: int):
        height, width = int(height), int(width)
        if height <= 0 or width <= 0:
            raise ValueError(f"difference-2d needs a positive grid shape, got {height}x{width}.")
        n_horizontal = height * (width - 1)
        n_vertical = (height - 1) * width
        LinearOperator.__init__(self, in_dim=height * width, out_dim=n_horizontal + n_vertical)
        self.height: int = height
        self.width: int = width
        self.n_horizontal: int = n_horizontal

    def _apply(self, x):
        img = x.reshape(self.height, self.width)
        return np.concatenate([np.diff(img, axis=1).ravel(), np.diff(img, axis=0).ravel()])

    def _adjoint_apply(self, p):
        ph = p[:self.n_horizontal].reshape(self.height, self.width - 1)
        pv = p[self.n_horizontal:].reshape(self.height - 1, self.width)
        out = np.zeros((self.height, self.width))
        out[:, :-1] -= ph
        out[:, 1:] += ph
        out[:-1, :] -= pv
        out[1:, :] += pv
        return out.ravel()

    def _compute_singular_values(self):
        # D^T D is the Kronecker sum of the two path Laplacians.
        lam_rows = _path_laplacian_eigenvalues(self.height)
        lam_cols = _path_laplacian_eigenvalues(self.width)
        return np.sqrt(np.add.outer(lam_rows, lam_cols).ravel())


class Convolution2D(LinearOperator):
    """
    2-D convolution of a ``height x width`` image with an odd-sized kernel, periodic boundaries.
    The kernel center sits at index ``(kh // 2, kw // 2)``.
    """
    kind = 'convolution-2d'
    boundary = 'periodic'

    def __init__(self, kernel: np.ndarray, height: int, width: int):
        kernel = np.array(kernel, dtype=float)
        if kernel.ndim != 2:
            raise ValueError(f"convolution-2d needs a 2-D kernel, got shape {kernel.shape}.")
        kh, kw = kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"convolution-2d needs an odd-sized kernel, got {kh}x{kw}.")
        height, width = int(height), int(width)
        if height <= 0 or width <= 0:
            raise ValueError(f"convolution-2d needs a positive image shape, got {height}x{width}.")
        if kh > height or kw > width:
            raise ValueError(f"Kernel {kh}x{kw} is larger than the {height}x{width} image.")
        LinearOperator.__init__(self, in_dim=height * width, out_dim=height * width)
        kernel.setflags(write=False)
        self.kernel: np.ndarray = kernel
        self.height: int = height
        self.width: int = width

        padded = np.zeros((height, width))
        padded[:kh, :kw] = kernel
        padded = np.roll(padded, shift=(-(kh // 2), -(kw // 2)), axis=(0, 1))
        padded.setflags(write=False)
        self.padded_kernel = padded
        self._rfft_kernel = np.fft.rfft2(padded)

    def transfer_function(self) -> np.ndarray:
        """
        Returns the full 2-D DFT of the periodized kernel, shape ``(height, width)``.
        """
        return np.fft.fft2(self.padded_kernel)

    def _apply(self, x):
        img = x.reshape(self.height, self.width)
        out = np.fft.irfft2(np.fft.rfft2(img) * self._rfft_kernel, s=(self.height, self.width))
        return out.ravel()

    def _adjoint_apply(self, p):
        img = p.reshape(self.height, self.width)
        out = np.fft.irfft2(np.fft.rfft2(img) * np.conj(self._rfft_kernel), s=(self.height, self.width))
        return out.ravel()

    def _compute_singular_values(self):
        return np.abs(self.transfer_function()).ravel()


class ScaledIdentity(LinearOperator):
    kind = 'scaled-identity'

    def __init__(self, n: int, scale: float = 1.0):
        LinearOperator.__init__(self, in_dim=n, out_dim=n)
        if not np.isfinite(scale):
            raise ValueError(f"scaled-identity needs a finite scale, got {scale}.")
        self.scale: float = float(scale)

    def _apply(self, x):
        return self.scale * x

    def _adjoint_apply(self, p):
        return self.scale * p

    def to_dense(self) -> np.ndarray:
        return self.scale * np.eye(self.in_dim)

    def _compute_singular_values(self):
        return np.full(self.in_dim, abs(self.scale))


@dataclass(frozen=True)
class ConstraintSystem:
    """
    The linear constraint ``A x + B y = c``.
    """
    A: LinearOperator
    B: LinearOperator
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 1:
            raise ValueError(f"Constraint right-hand side must be a vector, got shape {c.shape}.")
        if self.A.out_dim != len(c):
            raise DimensionMismatchError("A.out_dim vs len(c)", len(c), self.A.out_dim)
        if self.B.out_dim != len(c):
            raise DimensionMismatchError("B.out_dim vs len(c)", len(c), self.B.out_dim)
        c.setflags(write=False)
        object.__setattr__(self, 'c', c)

    @property
    def x_dim(self) -> int:
        return self.A.in_dim

    @property
    def y_dim(self) -> int:
        return self.B.in_dim

    def residual(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        Returns A x + B y - c.
        """
        return self.A.apply(x) + self.B.apply(y) - self.c


def apply(op: LinearOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def adjoint_apply(op: LinearOperator, p: np.ndarray) -> np.ndarray:
    return op.adjoint_apply(p)


def power_iteration_norm(
        op: LinearOperator,
        tol: float = POWER_ITERATION_TOL,
        max_iter: int = POWER_ITERATION_MAX_ITER,
        seed: int = 0
) -> float:
    """
    Estimate the spectral norm by power iteration on Op^T Op from a seeded random start.

    :param op: operator
    :param tol: stop when the estimate changes by less than ``tol`` relative
    :param max_iter: iteration cap
    :param seed: seed of the random start vector
    :return: the norm estimate
    :raises PowerIterationError: when the cap is hit first
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    change = np.inf
    for _ in range(max_iter):
        u = op.apply(v)
        new_estimate = float(np.linalg.norm(u))
        w = op.adjoint_apply(u)
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            return new_estimate
        v = w / w_norm
        change = abs(new_estimate - estimate) / max(new_estimate, np.finfo(float).tiny)
        estimate = new_estimate
        if change <= tol:
            return estimate
    raise PowerIterationError(max_iter, estimate, change)


def operator_norm(op: LinearOperator, tol: float = POWER_ITERATION_TOL, max_iter: int = POWER_ITERATION_MAX_ITER) -> float:
    """
    Returns the spectral norm of ``op``, exact when the spectrum is available, else by power iteration.
    """
    if tol <= 0:
        raise ValueError(f"operator_norm needs tol > 0, got {tol}.")
    if op.has_cheap_spectrum():
        return float(op.singular_values()[0])
    return power_iteration_norm(op, tol=tol, max_iter=max_iter)


def smallest_positive_singular_value(op: LinearOperator) -> float:
    """
    Returns the smallest singular value above ``RANK_CUTOFF * largest``.

    :raises ValueError: for the zero operator
    """
    sv = op.singular_values()
    if sv.size == 0 or sv[0] == 0.0:
        raise ValueError(f"{op!r} is the zero operator: it has no positive singular value.")
    return float(np.min(sv[sv > RANK_CUTOFF * sv[0]]))


def numerical_rank(matrix: np.ndarray) -> int:
    sv = scipy.linalg.svdvals(np.atleast_2d(np.asarray(matrix, dtype=float)))
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > RANK_CUTOFF * sv[0]))


def build_operator(descriptor: Mapping[str, Any]) -> LinearOperator:
    """
    Build an operator from a descriptor such as ``{'kind': 'difference-2d', 'shape': (3, 3)}``.

    Accepted keys per kind: ``matrix`` (dense), ``n`` (difference-1d), ``shape`` or ``height``/``width``
    (difference-2d, convolution-2d), ``kernel`` and ``boundary`` (convolution-2d, periodic only),
    ``n`` and ``scale`` (scaled-identity).
    """
    kind = descriptor.get('kind')
    if kind == DenseOperator.kind:
        return DenseOperator(descriptor['matrix'])
    if kind == Difference1D.kind:
        return Difference1D(descriptor['n'])
    if kind == Difference2D.kind:
        return Difference2D(*_grid_shape(descriptor))
    if kind == Convolution2D.kind:
        boundary = descriptor.get('boundary', Convolution2D.boundary)
        if boundary != Convolution2D.boundary:
            raise ValueError(f"convolution-2d only supports `{Convolution2D.boundary}` boundaries, got `{boundary}`.")
        return Convolution2D(descriptor['kernel'], *_grid_shape(descriptor))
    if kind == ScaledIdentity.kind:
        return ScaledIdentity(descriptor['n'], descriptor.get('scale', 1.0))
    raise ValueError(
        f"Unknown operator kind `{kind}`. Supported kinds: "
        f"{[DenseOperator.kind, Difference1D.kind, Difference2D.kind, Convolution2D.kind, ScaledIdentity.kind]}.")


def _grid_shape(descriptor: Mapping[str, Any]) -> Tuple[int, int]:
    if 'shape' in descriptor:
        height, width = descriptor['shape']
    else:
        height, width = descriptor['height'], descriptor['width']
    return int(height), int(width)
