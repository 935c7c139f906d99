"""
Composite penalties
====================================
The separable penalty ``sum_i g(h(y_i))`` with ``g`` concave and differentiable on ``[0, inf)``
(the outer function, carrying the scale sigma) and ``h`` convex and proximable (the inner function).

Reweighting replaces ``g(h(y_i))`` by its tangent ``g'(h(y_i^k)) h(y_i)``, whose proximal map is a
weighted prox of ``h``. The exact scalar prox of the full composite is also provided for the direct
ADMM baseline.

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
from typing import Dict, Optional, Tuple, Type, Union

import numpy as np
from scipy.optimize import brentq

ArrayOrScalar = Union[float, np.ndarray]

WEIGHT_FLOOR = 1e-300
BISECTION_MAX_ITER = 200
SQUARE_PROX_GRID = 256


class PenaltyDomainError(ValueError):
    pass


class ProxSolveError(RuntimeError):
    def __init__(self, message: str, bracket: Tuple[np.ndarray, np.ndarray]):
        self.bracket = bracket
        super().__init__(f"{message} Last bracket: lo={bracket[0]}, hi={bracket[1]}.")


class ConcaveOuter(ABC):
    """
    Concave, increasing, differentiable outer function ``sigma * g~(s)`` on ``s >= 0``.
    Subclasses implement the unscaled ``g~`` and its first two derivatives, vectorized.
    Shipped kinds also have ``g~''' > 0``, which makes the scalar prox solvable by bracketing.

    .. seealso::
        :func:`outer_value`,
        :func:`outer_derivative`,
        :func:`compute_weights`,
        :func:`scalar_prox_composite`
    """
    kind: str = None
    is_coercive: bool = False

    def __init__(self, scale: float = 1.0, lipschitz: Optional[float] = None):
        if not np.isfinite(scale) or scale < 0:
            raise ValueError(f"Penalty scale must be finite and >= 0, got {scale}.")
        if lipschitz is not None and lipschitz < 0:
            raise ValueError(f"Lipschitz constant must be >= 0, got {lipschitz}.")
        self.scale: float = float(scale)
        self._user_lipschitz: Optional[float] = lipschitz

    def value(self, s: ArrayOrScalar) -> ArrayOrScalar:
        s = self._check_domain(s)
        return self.scale * self._value(s)

    def derivative(self, s: ArrayOrScalar) -> ArrayOrScalar:
        s = self._check_domain(s)
        return self.scale * self._derivative(s)

    def second_derivative(self, s: ArrayOrScalar) -> ArrayOrScalar:
        s = self._check_domain(s)
        return self.scale * self._second_derivative(s)

    def derivative_extended(self, s: ArrayOrScalar) -> ArrayOrScalar:
        """
        Like :func:`derivative`, but returns ``+inf`` where the derivative is unbounded instead of raising.
        """
        return self.derivative(s)

    def lipschitz_constant(self) -> Optional[float]:
        """
        Lipschitz constant of the scaled derivative on ``[0, inf)``, or None when unknown.
        """
        return self._user_lipschitz

    @property
    def is_linear(self) -> bool:
        return False

    @abstractmethod
    def _value(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    @abstractmethod
    def _derivative(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    @abstractmethod
    def _second_derivative(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def _check_domain(self, s: ArrayOrScalar) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(np.isnan(s)):
            raise PenaltyDomainError(f"{self!r} is defined on s >= 0, got {s[(s < 0) | np.isnan(s)]!r}.")
        return s

    def params(self) -> Dict[str, float]:
        return {}

    def __repr__(self):
        params = ", ".join(f"{k}={v}" for k, v in self.params().items())
        return f"{type(self).__name__}({params}{', ' if params else ''}scale={self.scale})"


class PowerOuter(ConcaveOuter):
    """
    ``(s + epsilon)^q`` with ``0 < q <= 1`` and ``epsilon >= 0``.
    """
    kind = 'power'
    is_coercive = True

    def __init__(self, q: float, epsilon: float = 0.0, scale: float = 1.0):
        if not 0.0 < q <= 1.0:
            raise ValueError(f"Power penalty needs 0 < q <= 1, got q={q}.")
        if epsilon < 0:
            raise ValueError(f"Power penalty needs epsilon >= 0, got epsilon={epsilon}.")
        ConcaveOuter.__init__(self, scale=scale)
        self.q: float = float(q)
        self.epsilon: float = float(epsilon)

    @property
    def is_linear(self) -> bool:
        return self.q == 1.0

    def params(self) -> Dict[str, float]:
        return {'q': self.q, 'epsilon': self.epsilon}

    def lipschitz_constant(self) -> Optional[float]:
        if self.q == 1.0:
            return 0.0
        if self.epsilon == 0.0:
            return None
        return self.scale * self.q * (1.0 - self.q) * self.epsilon ** (self.q - 2.0)

    def _value(self, s):
        return (s + self.epsilon) ** self.q

    def _derivative(self, s):
        if self.q == 1.0:
            return np.ones_like(s)
        if self.epsilon == 0.0 and np.any(s == 0.0):
            raise PenaltyDomainError(
                f"{self!r} is not differentiable at s = 0: set epsilon > 0 to use it in reweighting.")
        return self.q * (s + self.epsilon) ** (self.q - 1.0)

    def derivative_extended(self, s):
        s = self._check_domain(s)
        if self.q == 1.0:
            return self.scale * np.ones_like(s)
        with np.errstate(divide='ignore'):
            return self.scale * self.q * (s + self.epsilon) ** (self.q - 1.0)

    def _second_derivative(self, s):
        if self.q == 1.0:
            return np.zeros_like(s)
        with np.errstate(divide='ignore'):
            return self.q * (self.q - 1.0) * (s + self.epsilon) ** (self.q - 2.0)


class LogOuter(ConcaveOuter):
    """
    ``log(1 + s / epsilon)``.
    """
    kind = 'log'
    is_coercive = True

    def __init__(self, epsilon: float, scale: float = 1.0, lipschitz: Optional[float] = None):
        if epsilon <= 0:
            raise ValueError(f"Log penalty needs epsilon > 0, got epsilon={epsilon}.")
        ConcaveOuter.__init__(self, scale=scale, lipschitz=lipschitz)
        self.epsilon: float = float(epsilon)

    def params(self) -> Dict[str, float]:
        return {'epsilon': self.epsilon}

    def _value(self, s):
        return np.log1p(s / self.epsilon)

    def _derivative(self, s):
        return 1.0 / (s + self.epsilon)

    def _second_derivative(self, s):
        return -1.0 / (s + self.epsilon) ** 2


class _ShapedOuter(ConcaveOuter):
    def __init__(self, gamma: float, scale: float = 1.0, lipschitz: Optional[float] = None):
        if gamma <= 0:
            raise ValueError(f"{type(self).__name__} needs gamma > 0, got gamma={gamma}.")
        ConcaveOuter.__init__(self, scale=scale, lipschitz=lipschitz)
        self.gamma: float = float(gamma)

    def params(self) -> Dict[str, float]:
        return {'gamma': self.gamma}


class EtpOuter(_ShapedOuter):
    """
    Exponential-type penalty ``(1 - exp(-gamma s)) / (1 - exp(-gamma))``.
    """
    kind = 'etp'

    def _value(self, s):
        return -np.expm1(-self.gamma * s) / -np.expm1(-self.gamma)

    def _derivative(self, s):
        return self.gamma * np.exp(-self.gamma * s) / -np.expm1(-self.gamma)

    def _second_derivative(self, s):
        return -self.gamma ** 2 * np.exp(-self.gamma * s) / -np.expm1(-self.gamma)


class GemanOuter(_ShapedOuter):
    """
    Geman penalty ``s / (s + gamma)``.
    """
    kind = 'geman'

    def _value(self, s):
        return s / (s + self.gamma)

    def _derivative(self, s):
        return self.gamma / (s + self.gamma) ** 2

    def _second_derivative(self, s):
        return -2.0 * self.gamma / (s + self.gamma) ** 3


class LaplaceOuter(_ShapedOuter):
    """
    Laplace penalty ``1 - exp(-s / gamma)``.
    """
    kind = 'laplace'

    def _value(self, s):
        return -np.expm1(-s / self.gamma)

    def _derivative(self, s):
        return np.exp(-s / self.gamma) / self.gamma

    def _second_derivative(self, s):
        return -np.exp(-s / self.gamma) / self.gamma ** 2


OUTER_KINDS: Dict[str, Type[ConcaveOuter]] = {
    cls.kind: cls for cls in (PowerOuter, LogOuter, EtpOuter, GemanOuter, LaplaceOuter)
}


def build_outer(kind: str, **params) -> ConcaveOuter:
    """
    e.g. ``build_outer('power', q=0.5, epsilon=1e-7, scale=1e-4)``
    """
    if kind not in OUTER_KINDS:
        raise ValueError(f"Unknown outer penalty kind `{kind}`. Supported kinds: {list(OUTER_KINDS)}.")
    return OUTER_KINDS[kind](**params)


class InnerConvex(ABC):
    """
    Nonnegative convex inner function with ``h(0) = 0`` and a closed-form weighted prox.
    """
    kind: str = None

    @abstractmethod
    def value(self, t: ArrayOrScalar) -> ArrayOrScalar:
        raise NotImplementedError()

    @abstractmethod
    def prox(self, v: ArrayOrScalar, lam: ArrayOrScalar) -> ArrayOrScalar:
        """
        Returns ``argmin_t lam h(t) + (t - v)^2 / 2``, entrywise.
        """
        raise NotImplementedError()

    @abstractmethod
    def subdifferential_distance(self, u: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
        """
        Entrywise distance from ``u`` to the set ``w * dh(y)``.
        """
        raise NotImplementedError()

    def __repr__(self):
        return f"{type(self).__name__}()"


class AbsInner(InnerConvex):
    kind = 'abs'

    def value(self, t):
        return np.abs(t)

    def prox(self, v, lam):
        return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)

    def subdifferential_distance(self, u, y, w):
        at_zero = np.maximum(np.abs(u) - w, 0.0)
        off_zero = np.abs(u - w * np.sign(y))
        return np.where(y == 0.0, at_zero, off_zero)


class SquareInner(InnerConvex):
    kind = 'square'

    def value(self, t):
        return np.square(t)

    def prox(self, v, lam):
        return v / (1.0 + 2.0 * lam)

    def subdifferential_distance(self, u, y, w):
        return np.abs(u - 2.0 * w * y)


INNER_KINDS: Dict[str, Type[InnerConvex]] = {cls.kind: cls for cls in (AbsInner, SquareInner)}


def build_inner(kind: str) -> InnerConvex:
    if kind not in INNER_KINDS:
        raise ValueError(f"Unknown inner function kind `{kind}`. Supported kinds: {list(INNER_KINDS)}.")
    return INNER_KINDS[kind]()


@dataclass(frozen=True)
class WeightVector:
    """
    Reweighting weights ``w_i = sigma g'(h(y_i))``.
    ``n_clamped`` counts the entries whose derivative underflowed and were raised to the floor.
    """
    w: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 1:
            raise ValueError(f"Weights must be a vector, got shape {w.shape}.")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("Weights must be finite and strictly positive.")
        w.setflags(write=False)
        object.__setattr__(self, 'w', w)

    @property
    def min(self) -> float:
        return float(np.min(self.w)) if self.w.size else float('nan')

    @property
    def max(self) -> float:
        return float(np.max(self.w)) if self.w.size else float('nan')

    def __len__(self):
        return len(self.w)


def outer_value(g: ConcaveOuter, s: ArrayOrScalar) -> ArrayOrScalar:
    return g.value(s)


def outer_derivative(g: ConcaveOuter, s: ArrayOrScalar) -> ArrayOrScalar:
    return g.derivative(s)


def penalty_value(g: ConcaveOuter, h: InnerConvex, y: np.ndarray) -> float:
    """
    Returns ``sum_i sigma g~(h(y_i))``.
    """
    return float(np.sum(g.value(h.value(np.asarray(y, dtype=float)))))


def compute_weights(g: ConcaveOuter, h: InnerConvex, y: np.ndarray) -> WeightVector:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("Cannot compute weights of a non-finite vector.")
    w = np.atleast_1d(g.derivative(h.value(y)))
    underflow = ~(w >= WEIGHT_FLOOR)
    n_clamped = int(np.sum(underflow))
    if n_clamped:
        w = np.where(underflow, WEIGHT_FLOOR, w)
    return WeightVector(w=w, n_clamped=n_clamped)


def prox_weighted_inner(h: InnerConvex, w: ArrayOrScalar, r: float, v: ArrayOrScalar) -> ArrayOrScalar:
    """
    Returns ``argmin_t (w / r) h(t) + (t - v)^2 / 2``, entrywise.

    :raises ValueError: when ``r <= 0`` or any ``w < 0``
    """
    if not r > 0:
        raise ValueError(f"Prox parameter r must be > 0, got r={r}.")
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("Prox weights must be >= 0.")
    out = h.prox(np.asarray(v, dtype=float), w / r)
    return float(out) if np.ndim(out) == 0 else out


def prox_composite(g: ConcaveOuter, h: InnerConvex, alpha: float, z: ArrayOrScalar) -> np.ndarray:
    """
    Entrywise global minimizer of ``t -> sigma g~(h(t)) + (alpha / 2) (t - z)^2``.
    Ties between the candidates go to the smaller ``|t|``.

    :param g: outer function
    :param h: inner function
    :param alpha: quadratic weight, > 0
    :param z: points
    :return: minimizers, same shape as ``z``
    """
    if not alpha > 0:
        raise ValueError(f"Prox parameter alpha must be > 0, got alpha={alpha}.")
    z = np.asarray(z, dtype=float)
    if g.scale == 0.0:
        return np.array(z)
    if g.is_linear and isinstance(h, AbsInner):
        return h.prox(z, g.scale / alpha)
    if isinstance(h, AbsInner):
        return np.sign(z) * _prox_abs_magnitude(g, alpha, np.abs(z))
    flat = np.array([_prox_generic_scalar(g, h, alpha, float(zi)) for zi in z.ravel()])
    return flat.reshape(z.shape)


def scalar_prox_composite(g: ConcaveOuter, h: InnerConvex, alpha: float, z: float) -> float:
    return float(prox_composite(g, h, alpha, np.array([z]))[0])


def _prox_abs_magnitude(g: ConcaveOuter, alpha: float, a: np.ndarray) -> np.ndarray:
    """
    Minimize ``phi(t) = sigma g~(t) + alpha/2 (t - a)^2`` over ``t in [0, a]`` for each entry of ``a >= 0``.

    ``psi = phi'`` is convex on [0, a] because ``g~''' > 0``, and ``psi(a) > 0``. So ``phi`` has at most
    one interior local minimizer, right of the minimizer ``t_c`` of ``psi``.
    """
    out = np.zeros_like(a)
    active = a > 0
    if not np.any(active):
        return out
    a_act = a[active]

    def psi(t):
        return g.derivative_extended(t) + alpha * (t - a_act)

    def dpsi(t):
        return g.second_derivative(t) + alpha

    def phi(t):
        return g.value(t) + 0.5 * alpha * (t - a_act) ** 2

    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        # t_c: psi decreasing where dpsi < 0.
        lo = np.zeros_like(a_act)
        hi = np.array(a_act)
        dpsi0 = dpsi(np.zeros_like(a_act))
        decreasing = dpsi0 < 0
        lo, hi = _bisect(dpsi, lo, hi, decreasing)
        t_c = np.where(decreasing, hi, 0.0)

        # psi(0) may be +inf when g'(0) is unbounded; that only happens on the decreasing branch.
        psi_at_tc = psi(t_c)
        has_root = psi_at_tc < 0
        lo, hi = _bisect(psi, t_c, np.array(a_act), has_root)
        root = 0.5 * (lo + hi)

        phi_root = phi(root)
        phi_zero = g.value(np.zeros_like(a_act)) + 0.5 * alpha * a_act ** 2
        take_root = has_root & (phi_root < phi_zero)
        t_star = np.where(take_root, root, 0.0)

    if not np.all(np.isfinite(t_star)) or not np.all(np.isfinite(np.where(has_root, phi_root, 0.0))):
        bad = ~np.isfinite(t_star) | (has_root & ~np.isfinite(phi_root))
        raise ProxSolveError("Composite prox produced non-finite values.", (lo[bad], hi[bad]))
    out[active] = t_star
    return out


def _bisect(fn, lo: np.ndarray, hi: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized bisection of an increasing-through-zero ``fn`` on ``[lo, hi]``, restricted to ``mask``.
    Entries outside ``mask`` are returned untouched.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if not np.any(mask):
        return lo, hi
    for _ in range(BISECTION_MAX_ITER):
        width = hi - lo
        open_ = mask & (width > 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(hi)))
        if not np.any(open_):
            return lo, hi
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if np.any(open_ & np.isnan(f_mid)):
            bad = open_ & np.isnan(f_mid)
            raise ProxSolveError("Bisection hit a NaN.", (lo[bad], hi[bad]))
        go_right = open_ & (f_mid < 0)
        go_left = open_ & ~(f_mid < 0)
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_left, mid, hi)
    width = hi - lo
    unfinished = mask & (width > 1e-12 * np.maximum(1.0, np.abs(hi)))
    if np.any(unfinished):
        raise ProxSolveError(
            f"Bisection did not converge in {BISECTION_MAX_ITER} iterations.", (lo[unfinished], hi[unfinished]))
    return lo, hi


def _prox_generic_scalar(g: ConcaveOuter, h: InnerConvex, alpha: float, z: float) -> float:
    """
    Candidate enumeration for any inner function even in ``t`` and increasing in ``|t|``:
    the minimizer lies between 0 and z, stationary points are bracketed on a grid and refined by brentq.
    """
    if z == 0.0:
        return 0.0
    a = abs(z)

    def phi(t):
        return float(g.value(h.value(t))) + 0.5 * alpha * (t - a) ** 2

    def psi(t):
        return float(g.derivative_extended(h.value(t)) * _inner_derivative(h, t)) + alpha * (t - a)

    grid = np.linspace(0.0, a, SQUARE_PROX_GRID + 1)
    with np.errstate(divide='ignore', invalid='ignore'):
        # psi(0) can be 0 * inf; its sign is read just right of 0.
        values = np.array([psi(max(t, 1e-12 * a)) for t in grid])
    candidates = [0.0]
    for i in range(SQUARE_PROX_GRID):
        left, right = values[i], values[i + 1]
        if np.isfinite(left) and np.isfinite(right) and left < 0 <= right:
            try:
                candidates.append(brentq(psi, max(grid[i], 1e-12 * a), grid[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500))
            except (RuntimeError, ValueError) as e:
                raise ProxSolveError(f"brentq failed: {e}", (np.array([grid[i]]), np.array([grid[i + 1]]))) from e
    best = min(candidates, key=lambda t: (phi(t), abs(t)))
    return float(np.sign(z) * best)


def _inner_derivative(h: InnerConvex, t: float) -> float:
    if isinstance(h, SquareInner):
        return 2.0 * t
    if isinstance(h, AbsInner):
        return float(np.sign(t))
    raise ValueError(f"No derivative known for inner function {h!r}.")
