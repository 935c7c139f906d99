"""
Dense instances
====================================
Seeded small dense problems ``min 1/2 ||Psi x - b||^2 + sum_i sigma (|y_i| + eps)^q  s.t.  A x - y = 0``
with a full-row-rank ``A`` of prescribed singular values and a strongly convex quadratic loss.
They are what the convergence diagnostics are checked on.

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
import inspect
from dataclasses import dataclass

import numpy as np
from scipy.stats import ortho_group

from ilradmm.base import BaseADMM
from ilradmm.config import ConfigDict, ConfigError
from ilradmm.operators import ConstraintSystem, DenseOperator, ScaledIdentity
from ilradmm.penalties import AbsInner, PowerOuter
from ilradmm.problem import ProblemSpec, QuadraticLoss, SolverState

INITS = ('minimizer', 'zeros')


@dataclass(frozen=True)
class DenseInstance:
    """
    A problem with its starting point. With ``init='minimizer'``, ``x0`` minimizes the loss,
    ``y0 = A x0`` and ``p0 = 0``, so the start satisfies ``grad f(x0) = -A^T p0``.
    """
    problem: ProblemSpec
    x0: np.ndarray
    y0: np.ndarray
    p0: np.ndarray
    seed: int

    def initial_state(self, solver: BaseADMM) -> SolverState:
        return solver.initial_state(self.x0, self.y0, self.p0)


def _random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.ones((1, 1))
    return ortho_group.rvs(dim, random_state=rng)


def make_dense_instance(
        m: int = 20,
        n: int = 20,
        seed: int = 0,
        q: float = 0.5,
        epsilon: float = 1e-7,
        sigma: float = 0.1,
        a_min_sv: float = 1.0,
        a_max_sv: float = 1.25,
        loss_min_sv: float = 0.8,
        loss_max_sv: float = 1.0,
        delta: float = None,
        init: str = 'minimizer'
) -> DenseInstance:
    """
    Build a seeded instance with ``m`` constraints and ``n`` unknowns.

    :param m: rows of ``A``, also the dimension of ``y``; ``m <= n`` so that ``A`` has full row rank
    :param n: dimension of ``x``
    :param seed: seed of every random draw
    :param q: exponent of the power penalty
    :param epsilon: smoothing of the power penalty
    :param sigma: scale of the penalty
    :param a_min_sv: smallest singular value of ``A``, which is ``theta``
    :param a_max_sv: largest singular value of ``A``
    :param loss_min_sv: smallest singular value of ``Psi``; ``delta = loss_min_sv^2``
    :param loss_max_sv: largest singular value of ``Psi``; ``L_f = loss_max_sv^2``
    :param delta: strong convexity constant handed to the loss, computed when None
    :param init: ``minimizer`` or ``zeros``
    :return: the instance
    """
    if not 0 < m <= n:
        raise ValueError(f"Need 0 < m <= n for a full-row-rank A, got m={m}, n={n}.")
    if not 0 < a_min_sv <= a_max_sv:
        raise ValueError(f"Need 0 < a_min_sv <= a_max_sv, got {a_min_sv}, {a_max_sv}.")
    if not 0 < loss_min_sv <= loss_max_sv:
        raise ValueError(f"Need 0 < loss_min_sv <= loss_max_sv, got {loss_min_sv}, {loss_max_sv}.")
    if init not in INITS:
        raise ValueError(f"Unknown init `{init}`, expected one of {INITS}.")

    rng = np.random.default_rng(seed)
    a_sv = np.sort(rng.uniform(a_min_sv, a_max_sv, size=m))[::-1]
    a_sv[0], a_sv[-1] = a_max_sv, a_min_sv
    u = _random_orthogonal(m, rng)
    v = _random_orthogonal(n, rng)
    a_matrix = u @ np.diag(a_sv) @ v[:m, :]

    loss_sv = rng.uniform(loss_min_sv, loss_max_sv, size=n)
    loss_sv[0], loss_sv[-1] = loss_max_sv, loss_min_sv
    psi = _random_orthogonal(n, rng) @ np.diag(loss_sv)
    x_true = rng.normal(size=n)
    data = psi @ x_true + 0.1 * rng.normal(size=n)

    loss = QuadraticLoss(DenseOperator(psi), data, delta=loss_min_sv ** 2 if delta is None else delta)
    constraints = ConstraintSystem(DenseOperator(a_matrix), ScaledIdentity(m, -1.0), np.zeros(m))
    problem = ProblemSpec(loss, constraints, PowerOuter(q, epsilon, scale=sigma), AbsInner())

    if init == 'minimizer':
        x0 = loss.minimizer()
        y0 = a_matrix @ x0
    else:
        x0 = np.zeros(n)
        y0 = np.zeros(m)
    return DenseInstance(problem=problem, x0=x0, y0=y0, p0=np.zeros(m), seed=seed)


def instance_from_config(config: ConfigDict) -> DenseInstance:
    """
    Build an instance from the ``problem`` section of a config, seeded by ``solver__seed``.
    """
    names = set(inspect.signature(make_dense_instance).parameters)
    params = {k: v for k, v in config.section('problem').items() if k in names and v is not None}
    seed = config.section('solver').get('seed')
    if seed is not None:
        params['seed'] = seed
    try:
        return make_dense_instance(**params)
    except ValueError as e:
        raise ConfigError(f"Invalid problem section: {e}") from e
