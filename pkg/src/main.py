# Command-line front end: dynamic N-1 screening and overload risk estimation.
#
#   python main.py validate --grid grid.json
#   python main.py simulate --grid grid.json --line 3 --kind three_phase --tau 0.5
#   python main.py screen   --grid grid.json --tau 0.5
#   python main.py estimate --grid grid.json --method ce --gamma 5 --seed 7
#   python main.py bench    --grid grid.json --ms 1 10 100

import argparse
import logging
import sys

from errors import NumericalError, ValidationError
from reporting.commands import commands
from reporting.emitters import FORMATS
from utils.nameToType import faultNames, methodNames

EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--grid', required=True, help='grid document (JSON)')
    common.add_argument('--seed', type=int, help='master seed (default 0)')
    common.add_argument('--T', type=float, help='simulation horizon in seconds (default 20)')
    common.add_argument('--dt', type=float, help='output time step in seconds (default 0.01)')
    common.add_argument('--out-dir', default='.', help='directory for output files')
    common.add_argument('--format', choices=FORMATS, default='csv', help='table format')
    common.add_argument('--config', help='risk config document (JSON)')
    common.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--log-file', help='write the log here instead of stderr')

    # solver selection shared by everything that simulates
    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument('--kind', choices=sorted(faultNames), help='fault kind')
    solver.add_argument('--solver', choices=sorted(methodNames), help='exact or perturbative spectra')
    solver.add_argument('--m', type=int, help='perturbation steps of the perturbative solver')
    solver.add_argument('--workers', type=int, help='worker threads')

    parser = argparse.ArgumentParser(prog='swingscreen', description='Dynamic N-1 contingency screening and overload risk estimation.')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('validate', parents=[common], help='check a grid and print a summary')

    simulate = sub.add_parser('simulate', parents=[common, solver], help='simulate one contingency')
    simulate.add_argument('--line', type=int, help='faulted line index (omit for no fault)')
    simulate.add_argument('--tau', type=float, default=0.5, help='fault duration in seconds')
    simulate.add_argument('--onset', type=float, default=0.0, help='fault onset in seconds')
    simulate.add_argument('--reference', action='store_true', help='integrate with RK4 instead')
    simulate.add_argument('--npz', action='store_true', help='also write the trajectory as .npz')

    screen = sub.add_parser('screen', parents=[common, solver], help='fault every line in turn')
    screen.add_argument('--tau', type=float, default=0.5, help='fault duration in seconds')
    screen.add_argument('--taus', type=float, nargs='+', help='sweep these durations instead')

    estimate = sub.add_parser('estimate', parents=[common, solver], help='estimate overload risk')
    estimate.add_argument('--method', choices=['mc', 'ce', 'compare'], default='ce')
    estimate.add_argument('--gamma', type=float, help='overload time threshold in seconds')
    estimate.add_argument('--n', type=int, help='samples of the final estimate')
    estimate.add_argument('--n-per-iter', type=int, help='samples per cross-entropy iteration')
    estimate.add_argument('--rate', type=float, help='nominal fault duration rate lambda')
    estimate.add_argument('--per-line', action='store_true', help='fit one proposal per line')
    estimate.add_argument('--sizes', type=int, nargs='+', default=[1000, 5000, 25000],
                          help='sample sizes of the compare study')
    estimate.add_argument('--tolerance', type=float, default=0.3,
                          help='relative CI half-width counted as converged')
    estimate.add_argument('--by-duration', action='store_true',
                          help='tabulate per-line risk by fault duration from a nominal sample')
    estimate.add_argument('--bins', type=int, default=10, help='duration bins over [0, T]')

    bench = sub.add_parser('bench', parents=[common, solver], help='time and compare the solvers')
    bench.add_argument('--ms', type=int, nargs='+', default=[1, 10, 50, 100], help='perturbation steps')
    bench.add_argument('--taus', type=float, nargs='+', default=[0.1, 0.5, 1.0], help='fault durations')
    bench.add_argument('--repeats', type=int, default=20)
    bench.add_argument('--warmups', type=int, default=3)
    bench.add_argument('--no-reference', action='store_true', help='skip the RK4 row')

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(filename=args.log_file, level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)
    logging.debug(f'>>> {args.command} {args.grid}')

    try:
        return commands[args.command](args)
    except FileNotFoundError as error:
        what = 'grid' if str(error.filename) == str(args.grid) else 'config'
        print(f'error: {what} file not found: {error.filename}', file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as error:
        print(f'error: {error}', file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as error:
        logging.debug('numerical failure', exc_info=True)
        print(f'numerical failure: {error}', file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
