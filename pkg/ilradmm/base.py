"""
ADMM base classes
====================================
Shared machinery of ILR-ADMM and its baselines: the run configuration, the x- and p-updates
(identical for the three algorithms), the increasing-``alpha`` schedule, the run loop with its
per-iteration trace, iteration callbacks, and the :class:`SolverFlow` that logs a run.

Subclasses of :class:`BaseADMM` only implement the y-update.

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
import logging
import time
import weakref
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, fields
from itertools import count
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ilradmm.config import ConfigDict, ConfigError
from ilradmm.diagnostics import (kkt_residual, lagrangian_value,
                                 relative_error_ratio)
from ilradmm.logging.logging import (LOGGER_STRING_IO, IlrAdmmLogger,
                                     get_run_logger)
from ilradmm.operators import operator_norm
from ilradmm.penalties import PenaltyDomainError, WeightVector, compute_weights
from ilradmm.problem import ProblemSpec, SolverState
from ilradmm.subproblems import (XSubproblemSolver, default_x_solver,
                                 subproblem_residual)
from ilradmm.trace import IterateRow, IterateTrace, RunStatus

_RUN_IDS = count()


class DivergenceError(RuntimeError):
    def __init__(self, message: str, trace: IterateTrace):
        self.trace = trace
        super().__init__(message)


@dataclass
class SolverConfig:
    """
    Parameters of a run.

    :param alpha0: initial penalty parameter
    :param rho: growth factor of ``alpha`` per iteration
    :param alpha_max: cap of ``alpha``
    :param r_margin: ``r = alpha ||B||^2 + r_margin``
    :param max_iter: iteration cap
    :param primal_tol: stop when ``||A x + B y - c|| <= primal_tol`` ...
    :param step_tol: ... and ``||z^{k+1} - z^k|| <= step_tol``
    :param seed: seed for randomized parts of a run
    :param x_tol: tolerance of the x-subproblem solver
    :param x_residual_every: record the x-subproblem residual every n-th iteration, 0 to never
    :param log_every: log a progress line every n-th iteration
    """
    alpha0: float = 1.0
    rho: float = 1.05
    alpha_max: float = 1e3
    r_margin: float = 1e-6
    max_iter: int = 200
    primal_tol: float = 1e-6
    step_tol: float = 1e-8
    seed: int = 0
    x_tol: float = 1e-10
    x_residual_every: int = 1
    log_every: int = 10

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be > 0, got {self.alpha0}.")
        if not self.rho >= 1:
            raise ValueError(f"rho must be >= 1, got {self.rho}.")
        if not self.alpha_max >= self.alpha0:
            raise ValueError(f"alpha_max must be >= alpha0, got alpha_max={self.alpha_max} < alpha0={self.alpha0}.")
        if not self.r_margin > 0:
            raise ValueError(f"r_margin must be > 0 so that r > alpha ||B||^2, got {self.r_margin}.")
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise ValueError(f"max_iter must be a non-negative integer, got {self.max_iter}.")
        if self.primal_tol < 0 or self.step_tol < 0:
            raise ValueError("Stopping tolerances must be >= 0.")
        if not self.x_tol > 0:
            raise ValueError(f"x_tol must be > 0, got {self.x_tol}.")
        if self.x_residual_every < 0 or self.log_every < 0:
            raise ValueError("x_residual_every and log_every must be >= 0.")
        self.max_iter = int(self.max_iter)

    @classmethod
    def from_config(cls, config: ConfigDict, **overrides) -> 'SolverConfig':
        """
        Build from the ``solver`` section of a :class:`~ilradmm.config.ConfigDict` (plus ``baseline`` keys
        for subclasses declaring them), then apply ``overrides``.
        """
        names = {f.name for f in fields(cls)}
        values = {}
        for name in ('solver', 'baseline'):
            values.update({k: v for k, v in config.section(name).items() if k in names and v is not None})
        values.update(overrides)
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid {cls.__name__}: {e}") from e

    def to_flat_dict(self) -> dict:
        return asdict(self)

    def r_for(self, alpha: float, b_norm: float) -> float:
        return alpha * b_norm ** 2 + self.r_margin


class SolverFlow:
    """
    News feed of a solver run: start, progress, warnings, errors and final status all go through here.
    """

    def __init__(self, logger: IlrAdmmLogger, owns_logger: bool = False):
        self.logger: IlrAdmmLogger = logger
        self.owns_logger: bool = owns_logger
        self.history: List[str] = []

    def log(self, message: str, level: int = logging.INFO):
        self.logger.log(level, message, stacklevel=3)

    def log_start(self, algorithm: str, problem: ProblemSpec, config: SolverConfig):
        self.log(f"{algorithm} started: dim(x)={problem.A.in_dim}, dim(y)={problem.B.in_dim}, "
                 f"penalty={problem.outer!r} o {problem.inner!r}.")
        self.log(f"Config: {config.to_flat_dict()}", level=logging.DEBUG)
        self.log_status(RunStatus.RUNNING)

    def log_iteration(self, row: IterateRow, max_iter: int):
        self.log(f"Iteration {row.iter}/{max_iter}: L={row.lagrangian:.6g}, primal={row.primal_residual:.3e}, "
                 f"step={row.step_z:.3e}, kkt={row.kkt:.3e}, alpha={row.alpha:.4g}.", level=logging.DEBUG)

    def log_status(self, status: RunStatus):
        self.log(f"Status: {status.value}")

    def log_end(self, trace: IterateTrace):
        self.log(f"Finished after {len(trace)} iterations in {trace.elapsed:.3f}s.")
        self.log_status(trace.status)

    def log_warning(self, message: str):
        self.log(message, level=logging.WARNING)

    def log_error(self, exception: Exception):
        self.log(f"The following {type(exception).__name__} occurred: {exception}", level=logging.ERROR)
        if exception.__traceback__ is not None:
            self.logger.debug("Traceback:", exc_info=exception)

    def close(self) -> List[str]:
        """
        Keep the run's short log lines in ``history`` and release the logger when the flow created it.
        """
        if self.owns_logger:
            self.history = self.logger.release()
        elif self.logger.name in LOGGER_STRING_IO:
            self.history = self.logger.get_short_scoped_logs()
        return self.history


class BaseCallback(ABC):
    """
    Called after every iteration with the new state and its trace row, before the row is stored.
    A callback may fill optional row fields. Returning True stops the run.
    """

    @abstractmethod
    def call(self, solver: 'BaseADMM', state: SolverState, row: IterateRow) -> bool:
        raise NotImplementedError()


class StepNormStoppingCallback(BaseCallback):
    """
    Stop once the step norm stayed under ``tol`` for ``patience`` iterations in a row, whatever the residual.
    """

    def __init__(self, tol: float, patience: int = 1):
        self.tol = tol
        self.patience = patience
        self._streak = 0

    def call(self, solver, state, row):
        self._streak = self._streak + 1 if row.step_z <= self.tol else 0
        return self._streak >= self.patience


class IterateRecorderCallback(BaseCallback):
    """
    Keep a copy of every ``(x, y, p)``. Meant for small problems.
    """

    def __init__(self):
        self.iterates: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def call(self, solver, state, row):
        self.iterates.append((state.x.copy(), state.y.copy(), state.p.copy()))
        return False


def x_update(
        state: SolverState,
        problem: ProblemSpec,
        y: Optional[np.ndarray] = None,
        solver: Optional[XSubproblemSolver] = None,
        tol: float = 1e-10
) -> np.ndarray:
    """
    Solve ``argmin_x f(x) + <p^k, A x> + (alpha / 2) ||A x + B y^{k+1} - c||^2``, warm-started at ``x^k``.

    :param y: the new ``y^{k+1}``; defaults to ``state.y`` for a state already holding it
    :param solver: x-subproblem solver, chosen from the problem structure when None
    """
    y = state.y if y is None else y
    solver = solver if solver is not None else default_x_solver(problem, tol=tol)
    return solver.solve(problem, state.x, y, state.p, state.alpha)


def p_update(
        state: SolverState,
        problem: ProblemSpec,
        x: Optional[np.ndarray] = None,
        y: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Returns ``p^k + alpha (A x^{k+1} + B y^{k+1} - c)``; ``x`` and ``y`` default to the state's.
    """
    x = state.x if x is None else x
    y = state.y if y is None else y
    return state.p + state.alpha * problem.constraints.residual(x, y)


def alpha_schedule(alpha: float, r: float, config: SolverConfig, b_norm: float = 1.0) -> Tuple[float, float]:
    """
    Returns ``(min(rho alpha, alpha_max), alpha' ||B||^2 + r_margin)``.
    """
    next_alpha = min(config.rho * alpha, config.alpha_max)
    return next_alpha, config.r_for(next_alpha, b_norm)


def weights_at(problem: ProblemSpec, y: np.ndarray, required: bool = True) -> Optional[WeightVector]:
    """
    Returns ``W`` at ``y``, or None when it is undefined there and not ``required``.
    """
    try:
        return compute_weights(problem.outer, problem.inner, y)
    except PenaltyDomainError:
        if required:
            raise
        return None


_STEP_RESOURCES: Dict[Tuple[int, float], Tuple[weakref.ref, XSubproblemSolver, float]] = {}


def step_resources(problem: ProblemSpec, x_tol: float = 1e-10) -> Tuple[XSubproblemSolver, float]:
    """
    Returns the x-subproblem solver and ``||B||`` shared by the one-step functions for ``problem``.
    They are built on the first call and dropped once ``problem`` is garbage collected.
    """
    key = (id(problem), x_tol)
    entry = _STEP_RESOURCES.get(key)
    if entry is not None and entry[0]() is problem:
        return entry[1], entry[2]

    def drop(_, key=key):
        _STEP_RESOURCES.pop(key, None)

    x_solver = default_x_solver(problem, tol=x_tol)
    b_norm = operator_norm(problem.B)
    _STEP_RESOURCES[key] = (weakref.ref(problem, drop), x_solver, b_norm)
    return x_solver, b_norm


def admm_step(
        state: SolverState,
        problem: ProblemSpec,
        config: SolverConfig,
        update_y: Callable[[SolverState], np.ndarray],
        x_solver: Optional[XSubproblemSolver] = None,
        b_norm: Optional[float] = None,
        requires_weights: bool = True
) -> SolverState:
    """
    One ADMM step around the given y-update: y, then x, then p, then the weights at the new y and the
    next ``(alpha, r)``. The x-solver and ``||B||`` come from :func:`step_resources` when omitted.
    """
    if x_solver is None or b_norm is None:
        cached_solver, cached_b_norm = step_resources(problem, config.x_tol)
        x_solver = cached_solver if x_solver is None else x_solver
        b_norm = cached_b_norm if b_norm is None else b_norm
    y = update_y(state)
    x = x_update(state, problem, y=y, solver=x_solver)
    p = p_update(state, problem, x=x, y=y)
    next_alpha, next_r = alpha_schedule(state.alpha, state.r, config, b_norm)
    return SolverState(x=x, y=y, p=p, alpha=next_alpha, r=next_r, k=state.k + 1,
                       weights=weights_at(problem, y, requires_weights))


class BaseADMM(ABC):
    """
    Two-block ADMM on ``min f(x) + sum_i g(h(y_i)) s.t. A x + B y = c`` with the y-update left to subclasses.
    One step runs the y-update, then the x-update, then the multiplier update, then refreshes the
    weights at the new y and advances the ``alpha`` schedule.

    A solver instance owns its x-subproblem solver cache and is not meant to be shared between threads.

    .. seealso::
        :class:`~ilradmm.solver.ILRADMM`,
        :class:`~ilradmm.baselines.DirectADMM`,
        :class:`~ilradmm.baselines.InLoopADMM`
    """
    algorithm: str = None
    requires_weights: bool = True
    tracks_relative_error: bool = False

    def __init__(
            self,
            problem: ProblemSpec,
            config: SolverConfig = None,
            x_solver: Optional[XSubproblemSolver] = None,
            callbacks: Optional[List[BaseCallback]] = None,
            logger: Optional[IlrAdmmLogger] = None
    ):
        self.problem: ProblemSpec = problem
        self.config: SolverConfig = config if config is not None else SolverConfig()
        self.x_solver: XSubproblemSolver = x_solver if x_solver is not None else default_x_solver(
            problem, tol=self.config.x_tol)
        self.callbacks: List[BaseCallback] = list(callbacks or [])
        self.b_norm: float = operator_norm(problem.B)
        self.logger: Optional[IlrAdmmLogger] = logger
        self.flow: Optional[SolverFlow] = None

    @abstractmethod
    def update_y(self, state: SolverState) -> np.ndarray:
        raise NotImplementedError()

    def weights_at(self, y: np.ndarray) -> Optional[WeightVector]:
        return weights_at(self.problem, y, self.requires_weights)

    def initial_state(
            self,
            x0: Optional[np.ndarray] = None,
            y0: Optional[np.ndarray] = None,
            p0: Optional[np.ndarray] = None
    ) -> SolverState:
        """
        Zeros unless given. ``alpha`` and ``r`` start at ``alpha0`` and ``alpha0 ||B||^2 + r_margin``.
        """
        problem = self.problem
        x = np.zeros(problem.A.in_dim) if x0 is None else np.array(x0, dtype=float)
        y = np.zeros(problem.B.in_dim) if y0 is None else np.array(y0, dtype=float)
        p = np.zeros(problem.A.out_dim) if p0 is None else np.array(p0, dtype=float)
        alpha = self.config.alpha0
        state = SolverState(x=x, y=y, p=p, alpha=alpha, r=self.config.r_for(alpha, self.b_norm), k=0,
                            weights=self.weights_at(y))
        return state.check_dims(problem)

    def step(self, state: SolverState) -> SolverState:
        return admm_step(state, self.problem, self.config, self.update_y, x_solver=self.x_solver, b_norm=self.b_norm,
                         requires_weights=self.requires_weights)

    def run(self, state: Optional[SolverState] = None) -> Tuple[SolverState, IterateTrace]:
        """
        Iterate until ``max_iter``, until both stopping tolerances hold, or until a callback asks to stop.
        Each run logs to a fresh scoped logger, unless one was given, whose lines are kept in ``self.flow.history``
        once the run ends.

        :raises DivergenceError: on a non-finite iterate, with the trace so far attached
        """
        state = self.initial_state() if state is None else state.check_dims(self.problem)
        trace = IterateTrace(algorithm=self.algorithm)
        trace.initial_alpha = state.alpha
        trace.initial_lagrangian = lagrangian_value(state, self.problem, state.alpha)
        trace.initial_dual_consistent = self.is_dual_consistent(state)
        self.flow = self._open_flow()
        try:
            return self._run(state, trace)
        finally:
            self.flow.close()

    def _open_flow(self) -> SolverFlow:
        if self.logger is not None:
            return SolverFlow(self.logger)
        return SolverFlow(get_run_logger(f"{self.algorithm}.run_{next(_RUN_IDS)}"), owns_logger=True)

    def _run(self, state: SolverState, trace: IterateTrace) -> Tuple[SolverState, IterateTrace]:
        config = self.config
        self.flow.log_start(self.algorithm, self.problem, config)

        start = time.perf_counter()
        clamp_warned = False
        try:
            while state.k < config.max_iter:
                next_state = self._step_with_context(state)
                row = self.make_row(state, next_state)
                if not next_state.is_finite() or not row.is_finite():
                    trace.append(row)
                    trace.status = RunStatus.DIVERGED
                    trace.elapsed = time.perf_counter() - start
                    raise DivergenceError(f"{self.algorithm} produced a non-finite iterate at iteration {row.iter}.", trace)

                stop = False
                for callback in self.callbacks:
                    stop = callback.call(self, next_state, row) or stop
                trace.append(row)

                if row.n_clamped and not clamp_warned:
                    self.flow.log_warning(f"{row.n_clamped} weights underflowed and were clamped at iteration {row.iter}.")
                    clamp_warned = True
                if config.log_every and row.iter % config.log_every == 0:
                    self.flow.log_iteration(row, config.max_iter)

                state = next_state
                if row.primal_residual <= config.primal_tol and row.step_z <= config.step_tol:
                    trace.status = RunStatus.CONVERGED
                    break
                if stop:
                    trace.status = RunStatus.CONVERGED
                    break
            else:
                trace.status = RunStatus.MAX_ITER
        except DivergenceError as e:
            self.flow.log_error(e)
            self.flow.log_end(trace)
            raise
        except Exception as e:
            trace.status = RunStatus.FAILED
            trace.elapsed = time.perf_counter() - start
            self.flow.log_error(e)
            self.flow.log_end(trace)
            raise

        trace.elapsed = time.perf_counter() - start
        self.flow.log_end(trace)
        return state, trace

    def _step_with_context(self, state: SolverState) -> SolverState:
        try:
            return self.step(state)
        except Exception as e:
            e.iteration = state.k + 1
            raise

    def is_dual_consistent(self, state: SolverState, rtol: float = 1e-8) -> bool:
        """
        True when ``grad f(x) = -A^T p`` at ``state``, the relation every later iterate satisfies.
        """
        gap = self.problem.loss.gradient(state.x) + self.problem.A.adjoint_apply(state.p)
        scale = 1.0 + np.linalg.norm(self.problem.loss.gradient(state.x))
        return bool(np.linalg.norm(gap) <= rtol * scale)

    def make_row(self, previous: SolverState, current: SolverState) -> IterateRow:
        problem = self.problem
        residual = problem.constraints.residual(current.x, current.y)
        weights = current.weights
        k = current.k
        every = self.config.x_residual_every
        if every and (k % every == 0 or k == 1):
            x_residual = subproblem_residual(problem, current.x, current.y, previous.p, previous.alpha)
        else:
            x_residual = float('nan')
        return IterateRow(
            iter=k,
            alpha=previous.alpha,
            r=previous.r,
            lagrangian=lagrangian_value(current, problem, previous.alpha),
            primal_residual=float(np.linalg.norm(residual)),
            step_x=float(np.linalg.norm(current.x - previous.x)),
            step_y=float(np.linalg.norm(current.y - previous.y)),
            dual_step=float(np.linalg.norm(current.p - previous.p)),
            kkt=kkt_residual(current, problem, weights) if weights is not None else float('nan'),
            weight_min=weights.min if weights is not None else float('nan'),
            weight_max=weights.max if weights is not None else float('nan'),
            x_residual=x_residual,
            x_norm=float(np.linalg.norm(current.x)),
            ratio=relative_error_ratio(previous, current, problem) if self.tracks_relative_error else float('nan'),
            dual_norm=float(np.linalg.norm(current.p)),
            grad_norm=float(np.linalg.norm(problem.loss.gradient(current.x))),
            iterate_norm=float(np.hypot(np.linalg.norm(current.x), np.linalg.norm(current.y))),
            n_clamped=weights.n_clamped if weights is not None else 0,
        )
