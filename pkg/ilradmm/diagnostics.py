"""
Convergence diagnostics
====================================
Numerical checks of the convergence guarantees of ILR-ADMM on actual runs:

- the augmented Lagrangian ``L_alpha`` and its sufficient decrease once ``alpha`` stops growing,
- the dual movement bound ``||p^{k+1} - p^k|| <= (L_f / theta) ||x^{k+1} - x^k||`` and the dual bound
  ``||p^k|| <= ||grad f(x^k)|| / theta``, when ``Im(B) + {c}`` lies in ``Im(A)``,
- the relative-error ratio ``dist(0, dL_alpha(d^{k+1})) / ||z^{k+1} - z^k||``, tracked as a running max,
- the KKT residual of a point,
- a brute-force grid oracle used to cross-check every proximal map.

A check returns a :class:`DiagnosticReport` whose status is ``pass``, ``fail`` or ``unchecked``. The
last one means a precondition of the bound could not be verified, which is never reported as a failure.

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
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from ilradmm.operators import (DENSE_SPECTRUM_MAX_DIM, numerical_rank,
                               operator_norm, smallest_positive_singular_value)
from ilradmm.penalties import WeightVector, compute_weights
from ilradmm.problem import ProblemSpec, SolverState
from ilradmm.trace import IterateTrace

PASS = 'pass'
FAIL = 'fail'
UNCHECKED = 'unchecked'

DESCENT_RTOL = 1e-10
DESCENT_ATOL = 1e-8
BOUND_RTOL = 1e-8
BOUND_ATOL = 1e-12
X_RESIDUAL_TOL = 1e-8

Point = Union[SolverState, Tuple[np.ndarray, np.ndarray, np.ndarray]]


class OracleError(ValueError):
    def __init__(self, point: float, value: float):
        self.point = point
        self.value = value
        super().__init__(f"Objective is not finite at t={point} (value {value}).")


@dataclass
class Violation:
    index: int
    iter: int
    conditions: List[str]
    values: Dict[str, float] = field(default_factory=dict)


@dataclass
class DiagnosticReport:
    name: str
    status: str
    violations: List[Violation] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def failed(self) -> bool:
        return self.status == FAIL

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_text(self) -> str:
        """
        Serialize as ``key: value`` lines, one line per violation.
        """
        lines = [f"check: {self.name}", f"status: {self.status}", f"violations: {len(self.violations)}"]
        for k, v in self.details.items():
            lines.append(f"{k}: {v}")
        for v in self.violations:
            values = ", ".join(f"{k}={val:.12g}" for k, val in v.values.items())
            lines.append(f"violation: index={v.index}, iter={v.iter}, conditions={'+'.join(v.conditions)}, {values}")
        return "\n".join(lines)


def _status_from(violations: List[Violation]) -> str:
    return PASS if len(violations) == 0 else FAIL


@dataclass
class DiagnosticsConstants:
    """
    Constants of the convergence analysis for one problem and parameter choice.

    ``nu`` and ``parameters_admissible`` are None when ``delta`` is unavailable. ``sigma0`` is only stored.
    """
    theta: float
    eta: float
    lipschitz: float
    b_norm: float
    alpha: float
    r: float
    delta: Optional[float] = None
    nu: Optional[float] = None
    parameters_admissible: Optional[bool] = None
    range_condition: Optional[bool] = None
    p0_in_range: Optional[bool] = None
    sigma0: Optional[float] = None
    penalty_coercive: bool = False

    @property
    def delta_available(self) -> bool:
        return self.delta is not None

    @property
    def dual_bound_checkable(self) -> bool:
        return bool(self.range_condition) and bool(self.p0_in_range)

    def nu_for(self, alpha: float, r: float) -> Optional[float]:
        if self.delta is None:
            return None
        return min(self.delta / 2.0 - self.eta / alpha, (r - alpha * self.b_norm ** 2) / 2.0)

    def parameters_admissible_for(self, alpha: float, r: float) -> Optional[bool]:
        if self.delta is None:
            return None
        return bool(alpha > max(1.0, 2.0 * self.eta / self.delta) and r > alpha * self.b_norm ** 2)


def _as_triplet(d: Point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(d, SolverState):
        return d.x, d.y, d.p
    x, y, p = d
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(p, dtype=float)


def lagrangian_value(d: Point, problem: ProblemSpec, alpha: float) -> float:
    """
    Returns ``f(x) + sum_i g(h(y_i)) + <p, A x + B y - c> + (alpha / 2) ||A x + B y - c||^2``.
    """
    x, y, p = _as_triplet(d)
    residual = problem.constraints.residual(x, y)
    return (problem.loss.value(x) + problem.penalty(y)
            + float(p @ residual) + 0.5 * alpha * float(residual @ residual))


def kkt_residual(d: Point, problem: ProblemSpec, weights: Optional[WeightVector] = None) -> float:
    """
    Max of the three criticality residuals: ``dist(-B^T p, W dh(y))``, ``||grad f(x) + A^T p||``
    and ``||A x + B y - c||``. Weights default to ``W`` computed at ``y``.
    """
    x, y, p = _as_triplet(d)
    if weights is None:
        weights = compute_weights(problem.outer, problem.inner, y)
    try:
        y_part = problem.inner.subdifferential_distance(-problem.B.adjoint_apply(p), y, weights.w)
    except NotImplementedError as e:
        raise ValueError(f"No subdifferential distance for inner function {problem.inner!r}.") from e
    x_part = problem.loss.gradient(x) + problem.A.adjoint_apply(p)
    feasibility = problem.constraints.residual(x, y)
    return float(max(np.linalg.norm(y_part), np.linalg.norm(x_part), np.linalg.norm(feasibility)))


def relative_error_members(
        previous: SolverState,
        current: SolverState,
        problem: ProblemSpec
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    The y, x and p blocks of the explicit element of ``dL_alpha(d^{k+1})`` given by the ILR-ADMM optimality
    conditions. ``alpha`` and ``r`` are those of ``previous``, which drove the step. Both states need weights.
    """
    alpha, r = previous.alpha, previous.r
    A, B = problem.A, problem.B
    previous_residual = problem.constraints.residual(previous.x, previous.y)
    current_residual = problem.constraints.residual(current.x, current.y)
    y_subgradient = (r * (previous.y - current.y)
                     - B.adjoint_apply(alpha * previous_residual + previous.p))
    y_member = (current.weights.w / previous.weights.w) * y_subgradient \
        + B.adjoint_apply(current.p + alpha * current_residual)
    x_member = A.adjoint_apply(current.p - previous.p)
    p_member = (current.p - previous.p) / alpha
    return y_member, x_member, p_member


def relative_error_ratio(
        previous: SolverState,
        current: SolverState,
        problem: ProblemSpec
) -> float:
    """
    Norm of :func:`relative_error_members` divided by ``||z^{k+1} - z^k||``.

    :return: the ratio, 0 at a fixed point, NaN when weights are missing
    """
    if previous.weights is None or current.weights is None:
        return float('nan')
    step = np.sqrt(np.sum((current.x - previous.x) ** 2) + np.sum((current.y - previous.y) ** 2))
    if step == 0.0:
        return 0.0
    member_norm = np.sqrt(sum(float(np.sum(member ** 2)) for member in relative_error_members(previous, current, problem)))
    return float(member_norm / step)


def estimate_delta(problem: ProblemSpec) -> Optional[float]:
    """
    Smallest eigenvalue of ``hess f + A^T A`` by dense decomposition, when the loss is quadratic
    and the problem is desk-sized. Returns None otherwise.
    """
    if problem.A.in_dim > DENSE_SPECTRUM_MAX_DIM or problem.A.out_dim > DENSE_SPECTRUM_MAX_DIM:
        return None
    hessian = problem.loss.hessian_dense()
    if hessian is None:
        return None
    a = problem.A.to_dense()
    return float(np.linalg.eigvalsh(hessian + a.T @ a)[0])


def range_condition(problem: ProblemSpec) -> Optional[bool]:
    """
    Rank test for ``Im(B) + {c}`` inside ``Im(A)``. None when the operators are too large to materialize.
    """
    A, B = problem.A, problem.B
    if A.out_dim > DENSE_SPECTRUM_MAX_DIM or A.in_dim + B.in_dim + 1 > DENSE_SPECTRUM_MAX_DIM:
        return None
    a = A.to_dense()
    stacked = np.hstack([a, B.to_dense(), problem.c.reshape(-1, 1)])
    return numerical_rank(a) == numerical_rank(stacked)


def in_range_of_a(problem: ProblemSpec, p: Optional[np.ndarray]) -> Optional[bool]:
    if p is None or not np.any(p):
        return True
    A = problem.A
    if A.out_dim > DENSE_SPECTRUM_MAX_DIM or A.in_dim + 1 > DENSE_SPECTRUM_MAX_DIM:
        return None
    a = A.to_dense()
    return numerical_rank(a) == numerical_rank(np.hstack([a, np.reshape(p, (-1, 1))]))


def constants_for(
        problem: ProblemSpec,
        config: Any,
        p0: Optional[np.ndarray] = None,
        delta: Optional[float] = None,
        sigma0: Optional[float] = None
) -> DiagnosticsConstants:
    """
    Compute ``theta``, ``eta = L_f^2 / theta^2``, ``||B||``, ``delta`` (given, stored on the loss, or estimated)
    and ``nu`` at the saturated parameters ``alpha_max`` and ``r = alpha_max ||B||^2 + r_margin`` of ``config``.

    :param problem: problem
    :param config: any object with ``alpha_max`` and ``r_margin`` attributes
    :param p0: initial multiplier, to test ``p0 in Im(A)``; None means zero
    :param delta: strong convexity constant overriding the loss' one
    :param sigma0: stored as given
    """
    theta = smallest_positive_singular_value(problem.A)
    lipschitz = problem.loss.lipschitz
    b_norm = operator_norm(problem.B)
    alpha = float(config.alpha_max)
    r = alpha * b_norm ** 2 + float(config.r_margin)
    if delta is None:
        delta = problem.loss.delta if problem.loss.delta is not None else estimate_delta(problem)
    constants = DiagnosticsConstants(
        theta=theta,
        eta=lipschitz ** 2 / theta ** 2,
        lipschitz=lipschitz,
        b_norm=b_norm,
        alpha=alpha,
        r=r,
        delta=delta,
        range_condition=range_condition(problem),
        p0_in_range=in_range_of_a(problem, p0),
        sigma0=sigma0,
        penalty_coercive=problem.outer.is_coercive,
    )
    constants.nu = constants.nu_for(alpha, r)
    constants.parameters_admissible = constants.parameters_admissible_for(alpha, r)
    return constants


def check_descent(
        trace: IterateTrace,
        constants: Optional[DiagnosticsConstants] = None,
        rtol: float = DESCENT_RTOL,
        atol: float = DESCENT_ATOL
) -> DiagnosticReport:
    """
    Over every pair of consecutive iterates sharing the same ``alpha``, flag increases of ``L_alpha``
    (``monotone``) and, when ``nu`` is computable and positive, misses of
    ``L(d^k) - L(d^{k+1}) >= nu ||z^{k+1} - z^k||^2 - atol`` (``sufficient_decrease``).
    The initial point only takes part when it satisfies ``grad f(x^0) = -A^T p^0``.
    """
    if len(trace) == 0:
        return DiagnosticReport('descent', UNCHECKED, details={'reason': 'empty trace'})
    violations: List[Violation] = []
    n_pairs = 0

    if trace.initial_dual_consistent and np.isfinite(trace.initial_lagrangian):
        previous: Optional[Tuple[float, float]] = (trace.initial_alpha, trace.initial_lagrangian)
    else:
        previous = None

    for index, row in enumerate(trace.rows):
        if previous is not None and previous[0] == row.alpha:
            n_pairs += 1
            previous_value = previous[1]
            decrease = previous_value - row.lagrangian
            conditions = []
            if row.lagrangian > previous_value + rtol * (1.0 + abs(previous_value)):
                conditions.append('monotone')
            nu = constants.nu_for(row.alpha, row.r) if constants is not None else None
            if nu is not None and nu > 0 and decrease < nu * row.step_z ** 2 - atol:
                conditions.append('sufficient_decrease')
            if conditions:
                violations.append(Violation(index, row.iter, conditions, {
                    'lagrangian_before': previous_value,
                    'lagrangian_after': row.lagrangian,
                    'step_z': row.step_z,
                }))
        previous = (row.alpha, row.lagrangian)

    status = _status_from(violations) if n_pairs > 0 else UNCHECKED
    return DiagnosticReport('descent', status, violations, {'n_pairs': n_pairs})


def check_dual_bound(
        trace: IterateTrace,
        constants: DiagnosticsConstants,
        rtol: float = BOUND_RTOL,
        atol: float = BOUND_ATOL
) -> DiagnosticReport:
    """
    Flag any step with ``||dp|| > sqrt(eta) ||dx|| (1 + rtol) + atol`` (``dual_step``) and any iterate with
    ``||p|| > ||grad f(x)|| / theta (1 + rtol) + atol`` (``dual_norm``). Unchecked when the range
    condition or ``p0 in Im(A)`` could not be verified.
    """
    if not constants.dual_bound_checkable:
        return DiagnosticReport('dual_bound', UNCHECKED, details={
            'range_condition': constants.range_condition,
            'p0_in_range': constants.p0_in_range,
        })
    sqrt_eta = np.sqrt(constants.eta)
    violations: List[Violation] = []
    for index, row in enumerate(trace.rows):
        conditions = []
        step_bound = sqrt_eta * row.step_x * (1.0 + rtol) + atol
        if (index > 0 or trace.initial_dual_consistent) and row.dual_step > step_bound:
            conditions.append('dual_step')
        norm_bound = row.grad_norm / constants.theta * (1.0 + rtol) + atol
        if np.isfinite(row.dual_norm) and row.dual_norm > norm_bound:
            conditions.append('dual_norm')
        if conditions:
            violations.append(Violation(index, row.iter, conditions, {
                'dual_step': row.dual_step, 'dual_step_bound': step_bound,
                'dual_norm': row.dual_norm, 'dual_norm_bound': norm_bound,
            }))
    return DiagnosticReport('dual_bound', _status_from(violations), violations, {'sqrt_eta': float(sqrt_eta)})


def check_x_residual(trace: IterateTrace, tol: float = X_RESIDUAL_TOL) -> DiagnosticReport:
    """
    Flag iterations whose x-subproblem gradient residual exceeds ``tol (1 + ||x^{k+1}||)``.
    Iterations without a recorded residual are skipped.
    """
    violations = []
    n_checked = 0
    for index, row in enumerate(trace.rows):
        if not np.isfinite(row.x_residual):
            continue
        n_checked += 1
        bound = tol * (1.0 + row.x_norm)
        if row.x_residual > bound:
            violations.append(Violation(index, row.iter, ['x_residual'], {'x_residual': row.x_residual, 'bound': bound}))
    status = _status_from(violations) if n_checked else UNCHECKED
    return DiagnosticReport('x_residual', status, violations, {'n_checked': n_checked})


def check_relative_error(trace: IterateTrace) -> DiagnosticReport:
    ratios = trace.column('ratio')
    ratios = ratios[~np.isnan(ratios)]
    if ratios.size == 0:
        return DiagnosticReport('relative_error', UNCHECKED, details={'reason': 'no ratio recorded'})
    violations = [
        Violation(i, trace.rows[i].iter, ['finite_ratio'], {'ratio': float(trace.rows[i].ratio)})
        for i in range(len(trace)) if np.isinf(trace.rows[i].ratio)
    ]
    return DiagnosticReport('relative_error', _status_from(violations), violations, {'tau_hat': trace.tau_hat})


def check_criticality(
        trace: IterateTrace,
        primal_tol: float = 1e-6,
        kkt_tol: float = 1e-5,
        step_tol: Optional[float] = None
) -> DiagnosticReport:
    """
    Check the last iterate: primal residual, KKT residual and, when given, the last step norm.
    The total step length is reported as the finite-length proxy.
    """
    if len(trace) == 0:
        return DiagnosticReport('criticality', UNCHECKED, details={'reason': 'empty trace'})
    last = trace.last()
    conditions = []
    if not last.primal_residual <= primal_tol:
        conditions.append('primal_residual')
    if not last.kkt <= kkt_tol:
        conditions.append('kkt')
    if step_tol is not None and not last.step_z <= step_tol:
        conditions.append('step')
    total = trace.total_step_length()
    if not np.isfinite(total):
        conditions.append('finite_length')
    violations = [Violation(len(trace) - 1, last.iter, conditions, {
        'primal_residual': last.primal_residual, 'kkt': last.kkt, 'step_z': last.step_z,
    })] if conditions else []
    return DiagnosticReport('criticality', _status_from(violations), violations, {
        'total_step_length': total, 'status': trace.status.value,
    })


def grid_prox_oracle(
        objective: Callable[[Any], Any],
        interval: Tuple[float, float],
        step: float
) -> float:
    """
    Brute-force argmin of a scalar function: evaluate on the grid ``lo + step * i`` covering ``interval``,
    then refine around the best grid point by golden-section search. The refined point is kept only if it
    is strictly better. Grid points within ``1e-9 * step`` of 0 are snapped to exactly 0.

    ``objective`` may be vectorized; it is called pointwise otherwise.

    :raises OracleError: at the first grid point where the objective is not finite
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError(f"Oracle interval must be finite and ordered, got {interval}.")
    if not step > 0:
        raise ValueError(f"Oracle step must be > 0, got {step}.")

    n = int(np.floor((hi - lo) / step + 1e-9))
    grid = lo + step * np.arange(n + 1)
    grid[np.abs(grid) < step * 1e-9] = 0.0

    values = _evaluate(objective, grid)
    not_finite = ~np.isfinite(values)
    if np.any(not_finite):
        i = int(np.argmax(not_finite))
        raise OracleError(float(grid[i]), float(values[i]))

    best = int(np.argmin(values))
    t_best, v_best = float(grid[best]), float(values[best])
    if 0 < best < len(grid) - 1 and values[best] < values[best - 1] and values[best] < values[best + 1]:
        try:
            result = minimize_scalar(
                lambda t: float(_evaluate(objective, np.array([t]))[0]),
                bracket=(grid[best - 1], t_best, grid[best + 1]),
                method='golden', options={'xtol': 1e-12})
            if grid[best - 1] <= result.x <= grid[best + 1] and result.fun < v_best:
                t_best = float(result.x)
        except (ValueError, RuntimeError):
            pass
    return t_best


def _evaluate(objective: Callable, points: np.ndarray) -> np.ndarray:
    try:
        values = np.asarray(objective(points), dtype=float)
        if values.shape == points.shape:
            return values
    except (TypeError, ValueError):
        pass
    return np.array([float(objective(float(t))) for t in points])
