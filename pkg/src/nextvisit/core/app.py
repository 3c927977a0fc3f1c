"""
nextvisit - generative next-visit pretraining on clinical event sequences.

Usage:
    nextvisit gen [-c FILE]... [options]
    nextvisit vocab [-c FILE]... [options]
    nextvisit train [-c FILE]... [--resume] [options]
    nextvisit eval-pretrain [-c FILE]... [--condition NAME]
                            [--checkpoint FILE] [options]
    nextvisit sweep-delta [-c FILE]... [--deltas LIST] [options]
    nextvisit eval-zeroshot [-c FILE]... [--condition NAME]
                            [--horizons LIST] [--checkpoint FILE] [options]
    nextvisit plot [-c FILE]... [options]
    nextvisit dump-mask [-c FILE]... [--row N] [--mode MODE]
                            [--output FILE] [options]
    nextvisit [--help | --version]

Options:
    -c FILE, --config FILE      Add config file, may be given multiple times
    -s N, --seed N              Override the global seed
    -o DIR, --out DIR           Override the run folder
    --isolated                  Ignore nextvisit.yml in the current directory
    --resume                    Continue training from <out>/last.pt
    --condition NAME            Label set to evaluate
    --checkpoint FILE           Checkpoint to evaluate, defaults to <out>/best.pt
    --deltas LIST               Comma separated decay factors
    --horizons LIST             Comma separated horizons in days
    --row N                     Index of the packed training row [default: 0]
    --mode MODE                 Packing mode: cross or isolated
    --output FILE               Write to FILE instead of stdout
    -h, --help                  Show this help
    -v, --version               Show version information

Exit codes:
    0 success, 2 configuration error, 3 data error, 4 numeric failure
"""

__all__ = [
    'main',
    'run',
    'init_logging',
    'parse_list',
]

import logging
import sys

from docopt import docopt

from nextvisit import __version__, get_copyright_notice
from nextvisit.core import config, pipeline
from nextvisit.core.errors import ConfigError, NextVisitError
from nextvisit.core.session import Session


def init_logging(section):
    """Apply the ``logging`` config section."""
    level = str(section.get('level', 'info')).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError("Unknown log level: {!r}".format(level))
    logging.basicConfig(
        level=level,
        format=section.get('format') or logging.BASIC_FORMAT,
        filename=section.get('file') or None,
        force=True)


def parse_list(text, type=float):
    """Parse a comma separated list from the command line."""
    if not text:
        return None
    try:
        return [type(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise ConfigError("Invalid list: {!r}".format(text))


def load_config(opts):
    overrides = {}
    if opts['--seed'] is not None:
        try:
            overrides['seed'] = int(opts['--seed'])
        except ValueError:
            raise ConfigError("Invalid seed: {!r}".format(opts['--seed']))
    if opts['--out']:
        overrides['out'] = opts['--out']
    return config.load(*opts['--config'], isolated=opts['--isolated'],
                       overrides=overrides)


def run(opts):
    """Execute the subcommand selected in the parsed ``opts``."""
    conf = load_config(opts)
    init_logging(conf.logging)
    session = Session(conf)
    checkpoint = opts['--checkpoint']
    if opts['gen']:
        pipeline.cmd_gen(session)
    elif opts['vocab']:
        pipeline.cmd_vocab(session)
    elif opts['train']:
        pipeline.cmd_train(session, resume=opts['--resume'])
    elif opts['eval-pretrain']:
        pipeline.cmd_eval_pretrain(session, opts['--condition'], checkpoint)
    elif opts['sweep-delta']:
        pipeline.cmd_sweep_delta(session, parse_list(opts['--deltas']))
    elif opts['eval-zeroshot']:
        pipeline.cmd_eval_zeroshot(
            session, opts['--condition'],
            parse_list(opts['--horizons'], int), checkpoint)
    elif opts['plot']:
        pipeline.cmd_plot(session)
    elif opts['dump-mask']:
        try:
            row = int(opts['--row'])
        except ValueError:
            raise ConfigError("Invalid row: {!r}".format(opts['--row']))
        pipeline.cmd_dump_mask(session, row, opts['--mode'],
                               opts['--output'])
    return session


def main(argv=None):
    """Run nextvisit and exit the process with the command's exit code."""
    version = "nextvisit {}\n\n{}".format(__version__, get_copyright_notice())
    opts = docopt(__doc__, argv, version=version)
    try:
        run(opts)
    except NextVisitError as e:
        logging.error(str(e))
        return sys.exit(e.exit_code)
    return sys.exit(0)
