"""
Command line
====================================
``ilradmm solve | deblur | compare | sweep | verify``. Every subcommand accepts ``--config`` pointing to a
flat ``key = value`` file; flags given on the command line override the file.

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
import argparse
import sys
from typing import List, Optional

from ilradmm.baselines import ALGORITHMS, BaselineConfig, make_solver
from ilradmm.config import ConfigDict, ConfigError, read_config_file
from ilradmm.diagnostics import (check_criticality, check_descent,
                                 check_relative_error, check_x_residual,
                                 constants_for)
from ilradmm.logging.logging import get_run_logger
from ilradmm.experiments.deblur import (ExperimentConfig, compare_algorithms,
                                        emit_csv, run_deblur_repeats,
                                        sweep_q)
from ilradmm.experiments.images import PGMParseError
from ilradmm.experiments.instances import instance_from_config
from ilradmm.experiments.verify import all_passed, run_verify

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

# argparse destinations that are not config keys.
_NON_CONFIG_DESTS = ('command', 'config', 'quick', 'handler')


def _add_solver_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--config', default=None, help="Flat `key = value` config file. Flags override it.")
    parser.add_argument('--algo', choices=list(ALGORITHMS), default=None)
    parser.add_argument('--inner-iters', type=int, default=None, help="Inner iterations of the in-loop baseline.")
    parser.add_argument('--alpha0', type=float, default=None)
    parser.add_argument('--rho', type=float, default=None)
    parser.add_argument('--alpha-max', type=float, default=None)
    parser.add_argument('--r-margin', type=float, default=None, help="r = alpha ||B||^2 + r_margin.")
    parser.add_argument('--max-iter', type=int, default=None)
    parser.add_argument('--tol', type=float, default=None, help="Stopping tolerance on the primal residual.")
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--trace', default=None, help="CSV trace path.")


def _add_image_flags(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group()
    source.add_argument('--input', default=None, help="Original image, binary or ASCII PGM.")
    source.add_argument('--phantom', default=None, help="Generate a WxH phantom instead of reading an image.")
    parser.add_argument('--kernel-size', type=int, default=None)
    parser.add_argument('--kernel-width', type=float, default=None)
    parser.add_argument('--noise-std', type=float, default=None)
    parser.add_argument('--q', type=float, default=None)
    parser.add_argument('--epsilon', type=float, default=None)
    parser.add_argument('--sigma-reg', type=float, default=None, help="Scale of the penalty.")
    parser.add_argument('--tikhonov-start', type=float, default=None,
                        help="Weight of the smoothed start image, 0 to start at the degraded image.")
    parser.add_argument('--n-jobs', type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ilradmm', description="Iteratively linearized reweighted ADMM.")
    subparsers = parser.add_subparsers(dest='command', required=True)

    solve = subparsers.add_parser('solve', help="Solve a seeded dense instance described by a config file.")
    _add_solver_flags(solve)
    solve.set_defaults(handler=cmd_solve)

    deblur = subparsers.add_parser('deblur', help="Deblur an image or a phantom.")
    _add_solver_flags(deblur)
    _add_image_flags(deblur)
    deblur.add_argument('--repeats', type=int, default=None, help="Noise realizations, seeds seed..seed+N-1.")
    deblur.add_argument('--out', default=None, help="Restored PGM path.")
    deblur.set_defaults(handler=cmd_deblur)

    compare = subparsers.add_parser('compare', help="Run the three algorithms on the same degraded image.")
    _add_solver_flags(compare)
    _add_image_flags(compare)
    compare.add_argument('--report', default=None, help="CSV path of the comparison report.")
    compare.set_defaults(handler=cmd_compare)

    sweep = subparsers.add_parser('sweep', help="SNR traces over several exponents q.")
    _add_solver_flags(sweep)
    _add_image_flags(sweep)
    sweep.add_argument('--qs', default=None, help="Comma-separated exponents, e.g. 0.2,0.4,0.6,0.8.")
    sweep.add_argument('--report', default=None, help="CSV path of the long-format sweep.")
    sweep.set_defaults(handler=cmd_sweep)

    verify = subparsers.add_parser('verify', help="Run the diagnostics and oracle suite. Exit code 0 iff all pass.")
    verify.add_argument('--quick', action='store_true', help="Fewer oracle samples, no determinism rerun.")
    verify.add_argument('--seed', type=int, default=0)
    verify.add_argument('--n-jobs', type=int, default=1)
    verify.set_defaults(handler=cmd_verify)
    return parser


def config_from_args(args: argparse.Namespace) -> ConfigDict:
    """
    Read ``--config`` when given, then let every flag that was set override it.
    """
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG_DESTS}
    return read_config_file(getattr(args, 'config', None)).overridden_by(flags)


def cmd_solve(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    instance = instance_from_config(config)
    algo = config.section('experiment').get('algo') or 'ilr'
    solver_config = BaselineConfig.from_config(config)
    solver = make_solver(algo, instance.problem, solver_config)
    _, trace = solver.run(instance.initial_state(solver))
    trace_path = config.section('experiment').get('trace')
    if trace_path is not None:
        emit_csv(trace, trace_path)

    constants = constants_for(instance.problem, solver_config, p0=instance.p0)
    for key, value in trace.summary().items():
        print(f"{key}: {value}")
    for report in (check_descent(trace, constants), check_criticality(trace), check_relative_error(trace),
                   check_x_residual(trace)):
        print(f"{report.name}: {report.status}")
    return EXIT_OK


def cmd_deblur(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_config(config_from_args(args))
    results = run_deblur_repeats(config)
    for result in results:
        print(f"seed {result.seed}: SNR degraded {result.snr_degraded:.4f} dB, restored {result.snr_restored:.4f} dB, "
              f"{len(result.trace)} iterations ({result.trace.status.value})")
    if len(results) > 1:
        mean = sum(r.snr_restored for r in results) / len(results)
        print(f"mean restored SNR over {len(results)} repeats: {mean:.4f} dB")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_config(config_from_args(args))
    report = compare_algorithms(config)
    print(report.to_string(index=False))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_config(config_from_args(args))
    sweep = sweep_q(config)
    finals = sweep.groupby('q', sort=True).tail(1)
    print(finals.to_string(index=False))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    reports = run_verify(quick=args.quick, seed=args.seed, n_jobs=args.n_jobs)
    for report in reports:
        print(f"{report.name}: {report.status}")
    passed = all_passed(reports)
    print("verify: " + ("pass" if passed else "fail"))
    return EXIT_OK if passed else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, PGMParseError, OSError) as e:
        get_run_logger('cli').error(f"{args.command}: {e}")
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
