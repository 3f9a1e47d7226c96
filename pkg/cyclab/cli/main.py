"""
Command line entry point. The shared options may come before or after the verb.

Usage:
    lab VERB [--config CONFIG] [--seed SEED] [--out OUT] [--threads N] [options]

    lab gen --task months --out months.ds
    lab train --config cfg.json --out ckpt
    lab das --task months --var input_concept --layer 1 --hook post_attn --k 1..8
    lab probe --layer 2 --periods 2..150
    lab probe circular --task weekdays --pca 5
    lab steer --task hours --targets 0..23 --alpha 10 --periods auto
    lab neurons --layer 1 --tau 0.4 --report full
    lab report
    lab verify runs/cyclab
"""
import argparse
import copy
import sys
from typing import Any, Dict, List, Optional
from ..hooks import normalize_hook_point
from ..utils import LabError, ConfigError
from .artifacts import verify_artifacts
from .config import ExperimentConfig, STAGES, parse_range
from .pipeline import run_pipeline


__all__ = ['parse_args', 'build_config', 'main']


def _range(text: str):
    try:
        return parse_range(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e))


def _range_list(text: str) -> List[int]:
    """'1..8' -> [1, 2, ..., 8] (inclusive)"""
    lo, hi = _range(text)
    return list(range(lo, hi + 1))


AUTO = 'auto'


def _periods(text: str):
    """AUTO (periods picked from the probe/subspace overlap) or an inclusive range"""
    return AUTO if text == AUTO else _range_list(text)


def _hook_point(text: str) -> str:
    try:
        return normalize_hook_point(text)
    except LabError as e:
        raise argparse.ArgumentTypeError(str(e))


def _shared_options(suppress: bool) -> argparse.ArgumentParser:
    """
    Options every verb accepts. Verb parsers get suppressed defaults, so a value given before the verb is not
    reset by the verb's parser.
    """
    unset, off = (argparse.SUPPRESS, argparse.SUPPRESS) if suppress else (None, False)
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--config', '-c', type=str, default=unset, help="JSON experiment config")
    shared.add_argument('--seed', type=int, default=unset, help="overrides the config seed")
    shared.add_argument('--out', '-o', type=str, default=unset, help="output directory (overrides the config)")
    shared.add_argument('--threads', type=int, default=unset, help="torch intra-op threads")
    shared.add_argument('--quiet', '-q', action='store_true', default=off)
    return shared


def _task_option(parser: argparse.ArgumentParser):
    parser.add_argument('--task', dest='tasks', action='append', default=None,
                        help="restrict the stage to this task (repeatable)")


def parse_args(argv: Optional[List[str]]=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog='lab', description="Cyclic-arithmetic interpretability experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter, epilog=__doc__, parents=[_shared_options(False)]
    )
    verbs = parser.add_subparsers(dest='verb', required=True)
    common = [_shared_options(True)]

    gen = verbs.add_parser('gen', parents=common, help="generate the task datasets")
    _task_option(gen)

    train = verbs.add_parser('train', parents=common, help="train the toy model on the task mixture")
    train.add_argument('--epochs', type=int, default=None)
    train.add_argument('--lr', type=float, default=None)
    train.add_argument('--batch-size', type=int, default=None)

    patch = verbs.add_parser('patch', parents=common, help="full residual patching sweep")
    patch.add_argument('--layers', type=_range_list, default=None, help="e.g. 0..3")

    das = verbs.add_parser('das', parents=common, help="distributed alignment search")
    _task_option(das)
    das.add_argument('--layers', '--layer', dest='layers', type=_range_list, default=None, help="e.g. 1 or 0..3")
    das.add_argument('--hook', type=_hook_point, default=None, help="e.g. post_attn")
    das.add_argument('--k', type=_range_list, default=None, help="dimension sweep, every k in lo..hi")
    das.add_argument('--var', '--variable', dest='variable', type=str, default=None)

    crosspatch = verbs.add_parser('crosspatch', parents=common, help="patch union subspaces across tasks")
    crosspatch.add_argument('--n-pairs', type=int, default=None)

    probe = verbs.add_parser('probe', parents=common, help="Fourier and circular probes")
    probe.add_argument('kind', nargs='?', choices=['fourier', 'circular', 'both'], default='both')
    _task_option(probe)
    probe.add_argument('--layers', '--layer', dest='layers', type=_range_list, default=None, help="e.g. 2 or 0..3")
    probe.add_argument('--periods', type=_range, default=None, help="e.g. 2..150")
    probe.add_argument('--pca', type=int, default=None, help="PCA dimension of the circular probe")

    steer = verbs.add_parser('steer', parents=common, help="Fourier steering matrices")
    _task_option(steer)
    steer.add_argument('--alpha', type=float, default=None)
    steer.add_argument('--targets', type=_range_list, default=None, help="e.g. 0..23")
    steer.add_argument('--periods', type=_periods, default=None, help="'auto' or e.g. 2..10")
    steer.add_argument('--layer', type=int, default=None)

    neurons = verbs.add_parser('neurons', parents=common, help="neuron selection, ablation and clustering")
    _task_option(neurons)
    neurons.add_argument('--tau', type=float, default=None)
    neurons.add_argument('--layer', type=int, default=None)
    neurons.add_argument('--report', type=str, default=None, help="'full' or 'summary'")

    verbs.add_parser('report', parents=common, help="run every configured stage and write the report bundle")

    verify = verbs.add_parser('verify', parents=common, help="check saved artifacts")
    verify.add_argument('paths', nargs='+')
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Verb options as stage parameters; None means unset"""
    verb = args.verb
    if verb == 'gen':
        return {'tasks': args.tasks}
    if verb == 'train':
        schedule = {'n_epoch': args.epochs, 'lr': args.lr, 'batch_size': args.batch_size}
        return {'schedule': {k: v for k, v in schedule.items() if v is not None}}
    if verb == 'patch':
        return {'layers': args.layers}
    if verb == 'das':
        return {
            'tasks': args.tasks, 'layers': args.layers, 'k_values': args.k, 'variable': args.variable,
            'hook_points': [args.hook] if args.hook else None
        }
    if verb == 'crosspatch':
        return {'n_pairs': args.n_pairs}
    if verb == 'probe':
        return {
            'task': args.tasks[0] if args.tasks else None, 'circular_tasks': args.tasks,
            'layers': args.layers, 'circular_layers': args.layers,
            'periods': list(args.periods) if args.periods else None, 'd_pca': args.pca,
            'fourier': args.kind in ('fourier', 'both'), 'circular': args.kind in ('circular', 'both')
        }
    if verb == 'steer':
        return {
            'tasks': args.tasks, 'alpha': args.alpha, 'targets': args.targets, 'periods': args.periods,
            'layer': args.layer
        }
    if verb == 'neurons':
        return {'tasks': args.tasks, 'tau': args.tau, 'layer': args.layer, 'report': args.report}
    return {}


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults), then global flags, then the verb's options"""
    base = ExperimentConfig.load(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    d = copy.deepcopy(base)
    for name in ('seed', 'out', 'threads'):
        if getattr(args, name) is not None:
            d[name] = getattr(args, name)
    if args.verb in STAGES and args.verb != 'report':
        d['stages'] = [args.verb]
        params = d['params'].setdefault(args.verb, {})
        for key, value in _overrides(args).items():
            if key == 'schedule':
                params.setdefault('schedule', {}).update(value)
            elif key == 'periods' and value == AUTO:
                params[key] = None
            elif value is not None:
                params[key] = value
    return ExperimentConfig.from_dict(d)


def main(argv: Optional[List[str]]=None) -> int:
    args = parse_args(argv)
    try:
        if args.verb == 'verify':
            report = verify_artifacts(args.paths)
            for entry in report.rows():
                status = "ok" if entry['ok'] else "FAIL"
                print(status + "\t" + entry['kind'] + "\t" + entry['path']
                      + ("\t" + entry['message'] if entry['message'] else ""))
            return 0 if report.ok else 3
        config = build_config(args)
        bundle = run_pipeline(config, verbose=not args.quiet)
        if not args.quiet:
            print("Bundle written to " + config.out + " (config " + config.hash() + ")")
        for failure in bundle.failures:
            print("stage " + failure['stage'] + " failed: " + failure['message'], file=sys.stderr)
        return bundle.exit_code
    except ConfigError as e:
        print("config error: " + str(e), file=sys.stderr)
        return e.exit_code
    except LabError as e:
        print(type(e).__name__ + ": " + str(e), file=sys.stderr)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
