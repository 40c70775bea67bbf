"""
Command-line interface.

    lobekit [--seed N] [--config run.yaml] [--threads N] [--log-level LEVEL] <command> ...

Commands: preprocess, phantom-gen, train, infer, evaluate, ablate, gradcheck.
Logs go to stderr as JSON lines; tables and reports go to stdout. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure, 1 anything else.
"""

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
from tqdm import tqdm

from . import __version__
from .ablation import ablate
from .autodiff import Tensor, gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AblationMode, RunConfig, load_run_config
from .dataset import load_dataset
from .errors import IoFailure, LobekitError, NumericError
from .log import setup_logging
from .loss import hybrid_loss, one_hot
from .metrics import dice_average, format_table
from .model import LobeNet, LobeNetSpec
from .phantom import PhantomConfig, generate, write_dataset
from .preprocess import lung_crop_pipeline
from .trainer import prepare_sample, segment, train, write_history
from .volume_io import hu_normalize, read_metaimage, write_metaimage

logger = logging.getLogger('lobekit.cli')


@contextlib.contextmanager
def progress_bar(desc: str) -> Iterator:
    """Yield a progress_callback(current, total, message) drawing a tqdm bar on stderr."""
    bar = tqdm(desc=desc, file=sys.stderr, disable=not sys.stderr.isatty(), leave=False)

    def callback(current: int, total: int, message: str = "") -> None:
        bar.total = total
        bar.n = current
        if message:
            bar.set_postfix_str(message, refresh=False)
        bar.refresh()

    try:
        yield callback
    finally:
        bar.close()


def _write_json(doc, path) -> None:
    try:
        Path(path).write_text(json.dumps(doc, indent=2))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args, cfg: RunConfig) -> int:
    volume = read_metaimage(args.input, kind='volume')
    result = lung_crop_pipeline(volume, cfg.preprocess)
    write_metaimage(result.volume, args.out, {'source': str(args.input), 'region': result.region.to_dict()})
    if args.hull:
        write_metaimage(result.hull, args.hull)
    if args.region:
        doc = result.region.to_dict(spacing=volume.spacing)
        doc['dims'] = list(volume.dims)
        _write_json(doc, args.region)
    if args.plot:
        from .visualize import plot_hull_overlay
        plot_hull_overlay(hu_normalize(volume), result.hull.data, result.region, args.plot)
    return 0


def cmd_phantom_gen(args, cfg: RunConfig) -> int:
    phantom_cfg = PhantomConfig(
        dims=tuple(args.dims),
        seed=args.seed if args.seed is not None else 0,
        domain=args.domain,
        incompleteness=args.incompleteness,
    )
    with progress_bar('phantoms') as progress:
        write_dataset(args.out, args.n, phantom_cfg, threads=args.threads, progress_callback=progress)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    if args.mode:
        cfg = cfg.for_mode(args.mode)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    cfg.validate()
    samples = [prepare_sample(s, cfg.hull_crop, cfg.preprocess) for s in load_dataset(args.data)]
    with progress_bar('train') as progress:
        result = train(samples, cfg.train, cfg.model, progress_callback=progress)
    save_checkpoint(result.net, args.out, metadata={
        'mode': cfg.mode.value if cfg.mode else None,
        'hull_crop': cfg.hull_crop,
        'preprocess': cfg.preprocess.to_dict(),
        'train': cfg.train.to_dict(),
        'epochs_run': len(result.history),
        'final_loss': result.history[-1].mean_loss,
    })
    history_path = args.history or Path(args.out).with_suffix('.csv')
    write_history(result.history, history_path)
    if args.plot:
        from .visualize import plot_history
        plot_history(result.history, args.plot)
    return 0


def cmd_infer(args, cfg: RunConfig) -> int:
    from .preprocess import PreprocessConfig

    net, metadata = load_checkpoint(args.ckpt)
    preprocess = PreprocessConfig.from_dict(metadata['preprocess']) if 'preprocess' in metadata else cfg.preprocess
    hull_crop = bool(metadata.get('hull_crop', cfg.hull_crop))
    volume = read_metaimage(args.input, kind='volume')
    prediction = segment(net, volume, hull_crop, preprocess)
    write_metaimage(prediction, args.out, {'checkpoint': str(args.ckpt), 'source': str(args.input)})
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    prediction = read_metaimage(args.pred, kind='labels')
    truth = read_metaimage(args.gt, kind='labels')
    report = dice_average(prediction, truth)
    if args.out:
        _write_json(report.to_dict(), args.out)
    print(format_table({Path(args.pred).stem: report}))
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    samples = load_dataset(args.data)
    external = load_dataset(args.external) if args.external else ()
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    modes = [AblationMode.parse(m) for m in args.modes] if args.modes else list(AblationMode)
    with progress_bar('ablation arms') as progress:
        report = ablate(samples, cfg, modes, external=external, threads=args.threads,
                        progress_callback=progress)
    if args.out:
        _write_json(report.to_dict(), args.out)
    print(report.table())
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    seed = args.seed if args.seed is not None else 0
    volume, labels = generate(PhantomConfig(dims=(8, 8, 8), seed=seed))
    x = Tensor(hu_normalize(volume).data.astype(np.float64)[np.newaxis, np.newaxis])
    g = one_hot(labels.data, dtype=np.float64)
    net = LobeNet(LobeNetSpec(base_width=args.width, seed=seed)).astype(np.float64)

    def loss():
        return hybrid_loss(net(x), g, cfg.train.loss)

    worst = gradcheck(loss, net.parameters().values(), samples=args.samples, seed=seed)
    print(json.dumps({'max_relative_error': worst, 'tolerance': args.tolerance,
                      'parameters': len(net.parameters())}))
    if worst >= args.tolerance:
        raise NumericError(f"gradient check failed: relative error {worst:.3e} >= {args.tolerance:g}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument('--seed', type=int, default=default(None), help='seed for every random stream')
    parser.add_argument('--config', default=default(None), help='run config (JSON or YAML)')
    parser.add_argument('--threads', type=int, default=default(1), help='worker processes')
    parser.add_argument('--log-level', default=default('INFO'),
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='stderr log level')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lobekit', description='Pulmonary lobe segmentation toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', parents=[common], help='crop a CT volume to its lung hull')
    p.add_argument('--in', dest='input', required=True, help='input .mhd (HU)')
    p.add_argument('--out', required=True, help='cropped normalized .mhd')
    p.add_argument('--hull', help='dilated hull mask .mhd')
    p.add_argument('--region', help='crop region .json')
    p.add_argument('--plot', help='hull overlay image of the middle slice')
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser('phantom-gen', parents=[common], help='write synthetic phantoms')
    p.add_argument('--n', type=int, default=10, help='number of phantoms')
    p.add_argument('--dims', type=int, nargs=3, default=[32, 64, 64], metavar=('Z', 'Y', 'X'))
    p.add_argument('--domain', choices=['standard', 'external'], default='standard')
    p.add_argument('--incompleteness', type=float, default=0.0, help='hidden fissure share, 0..1')
    p.add_argument('--out', required=True, help='output directory')
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser('train', parents=[common], help='train a network on a dataset directory')
    p.add_argument('--data', required=True, help='dataset directory')
    p.add_argument('--out', required=True, help='checkpoint path')
    p.add_argument('--mode', help='apply an ablation mode (DL, DL+FL, DL+FL+CH)')
    p.add_argument('--epochs', type=int, help='override the configured epoch count')
    p.add_argument('--history', help='history CSV (default: checkpoint path with .csv)')
    p.add_argument('--plot', help='loss curve image')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('infer', parents=[common], help='segment a CT volume')
    p.add_argument('--ckpt', required=True, help='checkpoint path')
    p.add_argument('--in', dest='input', required=True, help='input .mhd (HU)')
    p.add_argument('--out', required=True, help='label mask .mhd')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('evaluate', parents=[common], help='lobe dice of a prediction')
    p.add_argument('--pred', required=True, help='predicted label mask .mhd')
    p.add_argument('--gt', required=True, help='ground-truth label mask .mhd')
    p.add_argument('--out', help='report .json')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('ablate', parents=[common], help='compare DL, DL+FL and DL+FL+CH')
    p.add_argument('--data', required=True, help='dataset directory')
    p.add_argument('--external', help='second test set evaluated by every arm')
    p.add_argument('--modes', nargs='+', help='subset of modes to run')
    p.add_argument('--epochs', type=int, help='override the configured epoch count')
    p.add_argument('--out', help='report .json')
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('gradcheck', parents=[common], help='finite-difference check of the full network')
    p.add_argument('--width', type=int, default=4, help='base width of the checked network')
    p.add_argument('--samples', type=int, default=5, help='coordinates checked per parameter')
    p.add_argument('--tolerance', type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        logger.info("command started", extra={'event': 'start', 'command': args.command, 'seed': args.seed})
        code = args.func(args, cfg)
        logger.info("command finished", extra={'event': 'done', 'command': args.command})
        return code
    except LobekitError as e:
        extra = {'event': 'error', 'error': type(e).__name__, 'exit_code': e.exit_code}
        for attr in ('sample_id', 'epoch'):
            if getattr(e, attr, None) is not None:
                extra[attr] = getattr(e, attr)
        logger.error(str(e), extra=extra)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure", extra={'event': 'error', 'exit_code': 1})
        return 1


if __name__ == '__main__':
    sys.exit(main())
