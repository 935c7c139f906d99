"""
Baseline ADMM variants
====================================
The two comparison algorithms for ILR-ADMM:

- :class:`DirectADMM` solves the nonconvex y-subproblem exactly, entry by entry, with the global scalar prox
  of the composite penalty. It needs ``B = beta I`` so that the subproblem separates.
- :class:`InLoopADMM` approximates the same subproblem by a fixed number of proximal reweighted iterations,
  each recomputing the weights at the current inner iterate.

Both share the x-update, multiplier update, schedule and trace of :class:`~ilradmm.base.BaseADMM`, so their
traces compare column for column with ILR-ADMM's.

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
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Type

import numpy as np

from ilradmm.base import BaseADMM, BaseCallback, SolverConfig, admm_step
from ilradmm.operators import ScaledIdentity
from ilradmm.penalties import (AbsInner, PowerOuter, compute_weights,
                               prox_composite, prox_weighted_inner)
from ilradmm.problem import ProblemSpec, SolverState
from ilradmm.solver import ILRADMM, linearized_point
from ilradmm.trace import IterateTrace


@dataclass
class BaselineConfig(SolverConfig):
    """
    :class:`~ilradmm.base.SolverConfig` plus ``inner_iters``, the length of the in-loop inner iteration.
    """
    inner_iters: int = 10

    def __post_init__(self):
        SolverConfig.__post_init__(self)
        if int(self.inner_iters) != self.inner_iters or self.inner_iters < 1:
            raise ValueError(f"inner_iters must be an integer >= 1, got {self.inner_iters}.")
        self.inner_iters = int(self.inner_iters)


def check_direct_problem(problem: ProblemSpec):
    if not isinstance(problem.outer, PowerOuter) or not isinstance(problem.inner, AbsInner):
        raise ValueError(
            f"Direct ADMM needs a power outer function over h = |.|, got {problem.outer!r} o {problem.inner!r}.")
    if not isinstance(problem.B, ScaledIdentity) or problem.B.scale == 0.0:
        raise ValueError(f"Direct ADMM needs B = beta I with beta != 0, got {problem.B!r}.")


def direct_shifted_point(state: SolverState, problem: ProblemSpec) -> np.ndarray:
    """
    Returns ``(c - A x - p / alpha) / beta``.
    """
    beta = problem.B.scale
    return (problem.c - problem.A.apply(state.x) - state.p / state.alpha) / beta


def direct_y_update(state: SolverState, problem: ProblemSpec) -> np.ndarray:
    beta = problem.B.scale
    return prox_composite(problem.outer, problem.inner, state.alpha * beta ** 2, direct_shifted_point(state, problem))


def inloop_inner_loop(state: SolverState, problem: ProblemSpec, inner_iters: int) -> Tuple[np.ndarray, List[float]]:
    """
    Run ``inner_iters`` proximal reweighted iterations on the linearized y-subproblem, starting at ``y^k``.

    :return: the last inner iterate and the inner objective after each inner iteration
    """
    u = linearized_point(state, problem)
    weights = state.weights if state.weights is not None else compute_weights(problem.outer, problem.inner, state.y)
    objectives = []
    v = state.y
    for j in range(inner_iters):
        if j > 0:
            weights = compute_weights(problem.outer, problem.inner, v)
        v = prox_weighted_inner(problem.inner, weights.w, state.r, u)
        objectives.append(problem.penalty(v) + 0.5 * state.r * float(np.sum((v - u) ** 2)))
    return v, objectives


class DirectADMM(BaseADMM):
    """
    ADMM with the exact nonconvex y-subproblem

        ``argmin_y sum_i g(|y_i|) + <p, B y> + (alpha / 2) ||A x + B y - c||^2``

    which, for ``B = beta I``, is the scalar prox of ``g(|.|)`` with weight ``alpha beta^2`` at
    ``z = (c - A x - p / alpha) / beta``.
    """
    algorithm = 'direct'
    requires_weights = False

    def __init__(self, problem: ProblemSpec, config: SolverConfig = None, **kwargs):
        check_direct_problem(problem)
        BaseADMM.__init__(self, problem, config, **kwargs)

    def shifted_point(self, state: SolverState) -> np.ndarray:
        return direct_shifted_point(state, self.problem)

    def update_y(self, state: SolverState) -> np.ndarray:
        return direct_y_update(state, self.problem)


class InLoopADMM(BaseADMM):
    """
    ADMM whose y-subproblem, linearized like ILR-ADMM's, is minimized by ``inner_iters`` proximal
    reweighted iterations instead of one. With one inner iteration it coincides with ILR-ADMM.
    """
    algorithm = 'inloop'

    def __init__(self, problem: ProblemSpec, config: BaselineConfig = None, **kwargs):
        BaseADMM.__init__(self, problem, config if config is not None else BaselineConfig(), **kwargs)
        self.inner_iters: int = getattr(self.config, 'inner_iters', BaselineConfig.inner_iters)

    def inner_objective(self, state: SolverState, v: np.ndarray) -> float:
        """
        ``sum_i g(h(v_i)) + (r / 2) ||v - u||^2`` with ``u`` the linearized point.
        """
        u = linearized_point(state, self.problem)
        return self.problem.penalty(v) + 0.5 * state.r * float(np.sum((v - u) ** 2))

    def inner_loop(self, state: SolverState, inner_iters: Optional[int] = None) -> Tuple[np.ndarray, List[float]]:
        """
        :return: the last inner iterate and the inner objective after each inner iteration
        """
        return inloop_inner_loop(state, self.problem, self.inner_iters if inner_iters is None else inner_iters)

    def update_y(self, state: SolverState) -> np.ndarray:
        v, _ = self.inner_loop(state)
        return v


def direct_admm_step(state: SolverState, problem: ProblemSpec, config: Optional[SolverConfig] = None) -> SolverState:
    check_direct_problem(problem)
    config = config if config is not None else SolverConfig()
    return admm_step(state, problem, config, lambda s: direct_y_update(s, problem),
                     requires_weights=DirectADMM.requires_weights)


def inloop_admm_step(state: SolverState, problem: ProblemSpec, config: Optional[BaselineConfig] = None) -> SolverState:
    config = config if config is not None else BaselineConfig()
    inner_iters = getattr(config, 'inner_iters', BaselineConfig.inner_iters)
    return admm_step(state, problem, config, lambda s: inloop_inner_loop(s, problem, inner_iters)[0])


ALGORITHMS: Dict[str, Type[BaseADMM]] = {
    ILRADMM.algorithm: ILRADMM,
    DirectADMM.algorithm: DirectADMM,
    InLoopADMM.algorithm: InLoopADMM,
}


def make_solver(
        kind: str,
        problem: ProblemSpec,
        config: Optional[SolverConfig] = None,
        callbacks: Optional[List[BaseCallback]] = None
) -> BaseADMM:
    if kind not in ALGORITHMS:
        raise ValueError(f"Unknown algorithm `{kind}`. Supported algorithms: {list(ALGORITHMS)}.")
    return ALGORITHMS[kind](problem, config, callbacks=callbacks)


def run_baseline(
        kind: str,
        problem: ProblemSpec,
        config: Optional[BaselineConfig] = None,
        state: Optional[SolverState] = None,
        callbacks: Optional[List[BaseCallback]] = None
) -> Tuple[SolverState, IterateTrace]:
    """
    Run the ``direct`` or ``inloop`` baseline. The trace has the same columns as ILR-ADMM's.
    """
    if kind not in (DirectADMM.algorithm, InLoopADMM.algorithm):
        raise ValueError(f"Unknown baseline `{kind}`. Supported baselines: direct, inloop.")
    solver = make_solver(kind, problem, config, callbacks)
    return solver.run(state)
