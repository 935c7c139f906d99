"""
Deblurring
====================================
Total-variation-style restoration of a blurred and noisy gray image:

    min_u  1/2 ||f0 - Psi u||^2 + sigma_reg sum_i (|(T u)_i| + eps)^q

written as ``A = T`` (horizontal and vertical differences), ``B = -I``, ``c = 0`` with ``y = T u`` in gradient
space. Runs any of the three algorithms, records the SNR of every iterate, and writes the restored image
and the trace.

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
import os
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ilradmm.base import BaseCallback
from ilradmm.baselines import ALGORITHMS, BaselineConfig, make_solver
from ilradmm.config import ConfigDict, ConfigError
from ilradmm.logging.logging import get_run_logger
from ilradmm.operators import (ConstraintSystem, Convolution2D, Difference2D,
                               ScaledIdentity)
from ilradmm.penalties import AbsInner, PowerOuter
from ilradmm.problem import ProblemSpec, QuadraticLoss
from ilradmm.subproblems import XSubproblemSolver
from ilradmm.trace import CSV_COLUMNS, IterateTrace
from ilradmm.experiments.images import (ImageBuffer, add_noise, gaussian_kernel,
                                        load_pgm, phantom_image, save_pgm, snr)

DEFAULT_PHANTOM = '64x64'
PHANTOM_SEED = 0
DEFAULT_QS = (0.2, 0.4, 0.6, 0.8)
CSV_FLOAT_FORMAT = '%.12g'


def _default_solver_config() -> BaselineConfig:
    return BaselineConfig(x_residual_every=10)


@dataclass
class ExperimentConfig:
    """
    Everything a deblurring run depends on. The run is a pure function of this config.

    :param input: PGM file of the original image; a phantom is generated when None
    :param phantom: phantom size as ``WxH``
    :param kernel_size: odd side of the Gaussian blur kernel
    :param kernel_width: width parameter of the Gaussian blur kernel
    :param noise_std: standard deviation of the added Gaussian noise
    :param q: exponent of the penalty, in (0, 1]
    :param epsilon: smoothing of the penalty
    :param sigma_reg: scale of the penalty
    :param tikhonov_start: weight ``mu`` of the smoothed start ``argmin_x ||T x - f0||^2 / 2 + (mu / 2) ||D x||^2``;
        0 starts at the degraded image
    :param algo: ``ilr``, ``direct`` or ``inloop``
    :param solver: solver parameters, including ``seed`` and the in-loop ``inner_iters``
    :param repeats: number of noise realizations, seeds ``seed .. seed + repeats - 1``
    :param n_jobs: joblib workers for the repeats
    :param trace: CSV trace path
    :param out: restored PGM path
    :param report: CSV path of the algorithm comparison
    :param qs: exponents of the q sweep
    """
    input: Optional[str] = None
    phantom: Optional[str] = None
    kernel_size: int = 9
    kernel_width: float = 2.0
    noise_std: float = 0.01
    q: float = 0.5
    epsilon: float = 1e-7
    sigma_reg: float = 1e-4
    tikhonov_start: float = 3e-3
    algo: str = 'ilr'
    solver: BaselineConfig = field(default_factory=_default_solver_config)
    repeats: int = 1
    n_jobs: int = 1
    trace: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    qs: Tuple[float, ...] = DEFAULT_QS

    def __post_init__(self):
        if self.input is not None and self.phantom is not None:
            raise ConfigError("Give either an input image or a phantom size, not both.")
        if not 0 < self.q <= 1:
            raise ConfigError(f"q must be in (0, 1], got {self.q}.")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}.")
        if self.sigma_reg < 0:
            raise ConfigError(f"sigma_reg must be >= 0, got {self.sigma_reg}.")
        if not self.tikhonov_start >= 0:
            raise ConfigError(f"tikhonov_start must be >= 0, got {self.tikhonov_start}.")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}.")
        if int(self.kernel_size) != self.kernel_size or self.kernel_size <= 0 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}.")
        if not self.kernel_width > 0:
            raise ConfigError(f"kernel_width must be > 0, got {self.kernel_width}.")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"Unknown algorithm `{self.algo}`. Supported algorithms: {list(ALGORITHMS)}.")
        if self.epsilon == 0 and self.q < 1 and self.algo != 'direct':
            raise ConfigError(f"epsilon = 0 with q < 1 leaves the weights undefined at zero gradients; "
                              f"use epsilon > 0 or algo=direct, got algo={self.algo}.")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ConfigError(f"repeats must be a positive integer, got {self.repeats}.")
        if isinstance(self.qs, str):
            self.qs = parse_qs(self.qs)
        elif isinstance(self.qs, (int, float)):
            self.qs = (self.qs,)
        self.qs = tuple(float(q) for q in self.qs)
        if any(not 0 < q <= 1 for q in self.qs):
            raise ConfigError(f"Every swept q must be in (0, 1], got {self.qs}.")
        self.phantom_size()

    @property
    def seed(self) -> int:
        return self.solver.seed

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        return replace(self, solver=replace(self.solver, seed=seed))

    def phantom_size(self) -> Tuple[int, int]:
        """
        Returns ``(width, height)`` of the phantom.
        """
        spec = self.phantom or DEFAULT_PHANTOM
        width, sep, height = spec.lower().partition('x')
        if not sep or not width.strip().isdigit() or not height.strip().isdigit():
            raise ConfigError(f"Phantom size must read `WxH`, got `{spec}`.")
        return int(width), int(height)

    @classmethod
    def from_config(cls, config: ConfigDict, **overrides) -> 'ExperimentConfig':
        """
        Build from the ``experiment``, ``problem``, ``solver`` and ``baseline`` sections. Keys of the
        ``problem`` section other than ``q`` and ``epsilon`` describe dense instances and are ignored here.
        """
        solver_defaults = {} if 'x_residual_every' in config.section('solver') else {'x_residual_every': 10}
        values = {k: v for k, v in config.section('experiment').items() if v is not None}
        values.update({k: v for k, v in config.section('problem').items() if k in ('q', 'epsilon') and v is not None})
        values['solver'] = BaselineConfig.from_config(config, **solver_defaults)
        values.update(overrides)
        return cls(**values)

    def to_flat_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != 'solver'}
        out.update(self.solver.to_flat_dict())
        return out


def parse_qs(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(q) for q in text.replace(' ', '').split(',') if q != '')
    except ValueError as e:
        raise ConfigError(f"qs must be a comma-separated list of numbers, got `{text}`.") from e


class SnrCallback(BaseCallback):
    """
    Fill the ``snr`` column with the SNR of ``x^{k+1}`` against the original image.
    """

    def __init__(self, original: ImageBuffer):
        self.original = original

    def call(self, solver, state, row) -> bool:
        restored = ImageBuffer.from_flat(state.x, self.original.width, self.original.height)
        row.snr = snr(self.original, restored)
        return False


@dataclass
class DeblurResult:
    algorithm: str
    seed: int
    original: ImageBuffer
    degraded: ImageBuffer
    restored: ImageBuffer
    trace: IterateTrace
    snr_degraded: float
    snr_restored: float

    @property
    def snr_gain(self) -> float:
        return self.snr_restored - self.snr_degraded

    def summary(self) -> dict:
        return {
            'algorithm': self.algorithm,
            'seed': self.seed,
            'iterations': len(self.trace),
            'status': self.trace.status.value,
            'snr_degraded': self.snr_degraded,
            'snr_restored': self.snr_restored,
            'snr_gain': self.snr_gain,
            'elapsed': self.trace.elapsed,
        }


def load_original(config: ExperimentConfig) -> ImageBuffer:
    if config.input is not None:
        return load_pgm(config.input)
    width, height = config.phantom_size()
    return phantom_image(width, height, seed=PHANTOM_SEED)


def degrade(original: ImageBuffer, config: ExperimentConfig) -> Tuple[Convolution2D, ImageBuffer]:
    """
    Blur with the periodic Gaussian kernel, add seeded noise, clamp to [0, 1].

    :return: the blur operator and the degraded image
    """
    kernel = gaussian_kernel(config.kernel_size, config.kernel_width)
    blur = Convolution2D(kernel, original.height, original.width)
    blurred = ImageBuffer.from_flat(blur.apply(original.flat), original.width, original.height)
    return blur, add_noise(blurred, config.noise_std, config.seed)


def build_deblur_problem(
        degraded: ImageBuffer,
        blur: Convolution2D,
        q: float,
        epsilon: float,
        sigma_reg: float
) -> ProblemSpec:
    height, width = degraded.shape
    differences = Difference2D(height, width)
    loss = QuadraticLoss(blur, degraded.flat)
    constraints = ConstraintSystem(differences, ScaledIdentity(differences.out_dim, -1.0), np.zeros(differences.out_dim))
    return ProblemSpec(loss, constraints, PowerOuter(q, epsilon, scale=sigma_reg), AbsInner())


def initial_estimate(problem: ProblemSpec, x_solver: XSubproblemSolver, mu: float) -> np.ndarray:
    """
    Returns ``argmin_x ||T x - f0||^2 / 2 + (mu / 2) ||D x||^2``, which is the x-subproblem at ``y = 0``, ``p = 0``
    and ``alpha = mu``. Returns a copy of ``f0`` when ``mu = 0``.
    """
    f0 = problem.loss.data
    if mu == 0:
        return np.array(f0)
    return x_solver.solve(problem, f0, np.zeros(problem.B.in_dim), np.zeros(problem.A.out_dim), mu)


def solve_deblur(
        config: ExperimentConfig,
        original: ImageBuffer,
        degraded: ImageBuffer,
        blur: Convolution2D,
        algo: Optional[str] = None
) -> DeblurResult:
    """
    Restore ``degraded`` with ``algo`` (``config.algo`` when None), starting from the smoothed estimate ``x^0``
    of :func:`initial_estimate`, ``y^0 = D x^0`` and ``p^0 = 0``.
    """
    algo = algo or config.algo
    problem = build_deblur_problem(degraded, blur, config.q, config.epsilon, config.sigma_reg)
    solver = make_solver(algo, problem, config.solver, callbacks=[SnrCallback(original)])
    x0 = initial_estimate(problem, solver.x_solver, config.tikhonov_start)
    state = solver.initial_state(x0, problem.A.apply(x0), None)
    state, trace = solver.run(state)
    restored = ImageBuffer.from_flat(state.x, original.width, original.height)
    return DeblurResult(
        algorithm=algo,
        seed=config.seed,
        original=original,
        degraded=degraded,
        restored=restored,
        trace=trace,
        snr_degraded=snr(original, degraded),
        snr_restored=snr(original, restored),
    )


def run_deblur(config: ExperimentConfig, original: Optional[ImageBuffer] = None) -> DeblurResult:
    """
    Degrade the original image, restore it, and write ``config.out`` and ``config.trace`` when set.

    :param original: the image to degrade; loaded or generated from ``config`` when None
    """
    logger = get_run_logger('experiments.deblur')
    original = load_original(config) if original is None else original
    blur, degraded = degrade(original, config)
    logger.info(f"Deblurring a {original.width}x{original.height} image with {config.algo}, seed {config.seed}.")
    result = solve_deblur(config, original, degraded, blur)
    logger.info(f"SNR {result.snr_degraded:.3f} dB -> {result.snr_restored:.3f} dB "
                f"after {len(result.trace)} iterations ({result.trace.status.value}).")
    if config.out is not None:
        save_pgm(result.restored.clamped(), config.out)
    if config.trace is not None:
        emit_csv(result.trace, config.trace)
    return result


def suffixed_path(path: Optional[str], suffix: str) -> Optional[str]:
    if path is None:
        return None
    root, ext = os.path.splitext(path)
    return f"{root}_{suffix}{ext}"


def run_deblur_repeats(config: ExperimentConfig) -> List[DeblurResult]:
    """
    Run seeds ``seed .. seed + repeats - 1`` on the same original image, in parallel threads.
    With several repeats, outputs go to per-seed files and the SNR trace averaged over the repeats
    goes to ``<trace>_snr_mean.csv``.
    """
    original = load_original(config)
    if config.repeats == 1:
        return [run_deblur(config, original)]

    configs = [
        replace(config.with_seed(seed),
                trace=suffixed_path(config.trace, f"seed{seed}"),
                out=suffixed_path(config.out, f"seed{seed}"))
        for seed in range(config.seed, config.seed + config.repeats)
    ]
    if config.n_jobs != 1:
        results = Parallel(backend='threading', n_jobs=config.n_jobs)(
            delayed(run_deblur)(c, original) for c in configs
        )
    else:
        results = [run_deblur(c, original) for c in configs]

    if config.trace is not None:
        write_csv(mean_snr_trace(results), suffixed_path(config.trace, 'snr_mean'))
    return results


def mean_snr_trace(results: Sequence[DeblurResult]) -> pd.DataFrame:
    """
    SNR per iteration averaged over runs, with the number of runs that reached each iteration.
    """
    frames = [r.trace.to_dataframe(columns=('iter', 'snr')) for r in results]
    if not frames:
        return pd.DataFrame(columns=['iter', 'snr_mean', 'n_runs'])
    stacked = pd.concat(frames, ignore_index=True)
    grouped = stacked.groupby('iter', sort=True)['snr']
    return pd.DataFrame({
        'iter': grouped.mean().index.astype(int),
        'snr_mean': grouped.mean().values,
        'n_runs': grouped.count().values,
    })


def compare_algorithms(
        config: ExperimentConfig,
        algorithms: Sequence[str] = tuple(ALGORITHMS),
        original: Optional[ImageBuffer] = None
) -> pd.DataFrame:
    """
    Restore one degraded image with each algorithm and report final SNR, iterations and wall clock.
    The report is written to ``config.report`` and each trace to ``<trace>_<algo>.csv`` when set.
    """
    logger = get_run_logger('experiments.compare')
    original = load_original(config) if original is None else original
    blur, degraded = degrade(original, config)
    records = []
    for algo in algorithms:
        result = solve_deblur(config, original, degraded, blur, algo=algo)
        records.append(result.summary())
        logger.info(f"{algo}: SNR {result.snr_restored:.3f} dB in {len(result.trace)} iterations.")
        if config.trace is not None:
            emit_csv(result.trace, suffixed_path(config.trace, algo))
    report = pd.DataFrame(records)
    if config.report is not None:
        write_csv(report, config.report)
    return report


def sweep_q(
        config: ExperimentConfig,
        qs: Optional[Sequence[float]] = None,
        original: Optional[ImageBuffer] = None
) -> pd.DataFrame:
    """
    SNR traces of ``config.algo`` for each exponent ``q`` on the same degraded image.

    :return: long-format frame with columns ``q``, ``iter`` and ``snr``; each trace goes to ``<trace>_q<q>.csv`` when set
    """
    qs = config.qs if qs is None else tuple(qs)
    original = load_original(config) if original is None else original
    blur, degraded = degrade(original, config)
    frames = []
    for q in qs:
        result = solve_deblur(replace(config, q=q), original, degraded, blur)
        df = result.trace.to_dataframe(columns=('iter', 'snr'))
        df.insert(0, 'q', q)
        frames.append(df)
        if config.trace is not None:
            emit_csv(result.trace, suffixed_path(config.trace, f"q{q:g}"))
    if not frames:
        return pd.DataFrame(columns=['q', 'iter', 'snr'])
    sweep = pd.concat(frames, ignore_index=True)
    if config.report is not None:
        write_csv(sweep, config.report)
    return sweep


def write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def emit_csv(trace: IterateTrace, path: str) -> None:
    """
    Write the twelve trace columns, one row per iteration, 12 significant digits, LF line endings.
    Missing values are written as empty fields.
    """
    write_csv(trace.to_dataframe(columns=CSV_COLUMNS), path)


def read_trace_csv(path: str, algorithm: str = 'ilr') -> IterateTrace:
    df = pd.read_csv(path)
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"Trace file {path} lacks columns {missing}.")
    return IterateTrace.from_dataframe(df, algorithm=algorithm)
