"""
Implementation of the command line subcommands. Every command takes a
:class:`~nextvisit.core.session.Session` and writes its artifacts into the
session folder, see :mod:`nextvisit.core.session` for the layout.
"""

__all__ = [
    'cmd_gen',
    'cmd_vocab',
    'cmd_train',
    'cmd_eval_pretrain',
    'cmd_sweep_delta',
    'cmd_eval_zeroshot',
    'cmd_plot',
    'cmd_dump_mask',
    'build_examples',
    'rank_correlation',
    'pr_curve_path',
    'read_metrics',
    'SWEEP_COLUMNS',
    'PR_COLUMNS',
]

import glob
import logging
import os
import re
import sys
from collections import Counter

from scipy.stats import spearmanr

from nextvisit.core.errors import ConfigError, DataError
from nextvisit.cohort.records import save_cohort
from nextvisit.cohort.synth import (
    CohortConfig, SPLIT_NAMES, generate_cohort, split_cohort)
from nextvisit.eval.pretrain import evaluate_condition
from nextvisit.eval.zeroshot import evaluate_horizon, write_label_sets
from nextvisit.model.checkpoint import load_model
from nextvisit.model.sequence import (
    prepare_examples, pack_sequences, build_attention_mask, format_mask)
from nextvisit.model.transformer import ModelConfig, init_params
from nextvisit.tokenize.vocab import build_vocabulary
from nextvisit.train.loss import LossConfig
from nextvisit.train.optim import OptConfig
from nextvisit.train.trainer import TrainConfig, Trainer, resolve_dtype
from nextvisit.util.export import (
    read_records, read_table, write_records, write_table)
from nextvisit.util.misc import format_counts


SWEEP_COLUMNS = ('delta', 'precision', 'recall', 'on_time_rate',
                 'threshold', 'tp_total', 'tp_on_time')

PR_COLUMNS = ('threshold', 'precision', 'recall', 'optimal')

RE_PR_FILE = re.compile(r'^pr_(?P<condition>.+)_(?P<horizon>\d+)d\.tsv$')


def _hash_comment(session):
    return 'config_hash: {}'.format(session.config_hash)


def cmd_gen(session):
    """Generate the synthetic cohort, split it and write the label sets."""
    session.write_config()
    conf = session.config
    cohort = generate_cohort(CohortConfig.from_config(conf.cohort, conf.seed))
    splits = split_cohort(cohort, conf.cohort.split, conf.seed)
    for name in SPLIT_NAMES:
        save_cohort(session.cohort_path(name), splits[name])
    logging.info("Split sizes: {}".format(format_counts(
        {name: len(splits[name]) for name in SPLIT_NAMES})))
    conditions = conf.get('conditions')
    if conditions:
        write_label_sets(session.data_path('labels.tsv'),
                         conditions.to_dict(), [_hash_comment(session)])
    return splits


def cmd_vocab(session):
    """Build the vocabulary from the training split."""
    session.write_config()
    conf = session.config.vocab
    vocab = build_vocabulary(
        session.cohort('train'), n_bins=int(conf.n_bins),
        age_bins=conf.get('age_bins'))
    vocab.meta['config_hash'] = session.config_hash
    vocab.save(session.vocab_path)
    session.vocab = vocab
    return vocab


def build_examples(session, split):
    """Training examples of ``split`` with the session's loss config."""
    loss = LossConfig.from_config(session.config.loss)
    stats = Counter()
    examples = prepare_examples(
        session.tokenized[split], int(session.config.model.block_size),
        loss.temporal_decay, loss.min_weight, stats)
    logging.info("{} examples from the {} split {}".format(
        len(examples), split, format_counts(stats)))
    return examples


def _trainer(session):
    conf = session.config
    train_conf = TrainConfig.from_config(conf.train)
    model_conf = ModelConfig.from_config(conf.model, len(session.vocab))
    model = init_params(model_conf, conf.seed,
                        dtype=resolve_dtype(train_conf.dtype),
                        device=train_conf.device)
    logging.info("Model with {} parameters".format(model.num_params()))
    return Trainer(
        model, build_examples(session, 'train'),
        build_examples(session, 'val'),
        opt_config=OptConfig.from_config(conf.optim),
        loss_config=LossConfig.from_config(conf.loss),
        train_config=train_conf,
        seed=conf.seed,
        folder=session.folder,
        config_hash=session.config_hash)


def cmd_train(session, resume=False):
    """Train a model, optionally continuing from ``last.pt``."""
    session.write_config()
    trainer = _trainer(session)
    if resume:
        trainer.resume(session.require(session.path('last.pt')))
    trainer.fit(resumed=resume)
    return trainer


def _load_checkpoint(session, checkpoint):
    path = session.require(checkpoint or session.path('best.pt'))
    model, ckpt = load_model(path, session.config.train.device)
    if ckpt.get('config_hash') and ckpt['config_hash'] != session.config_hash:
        logging.warning("Checkpoint {!r} was trained with config {}, "
                        "current config is {}".format(
                            path, ckpt['config_hash'], session.config_hash))
    return model


def cmd_eval_pretrain(session, condition=None, checkpoint=None):
    """Next-visit precision, recall and on-time rate for ``condition``."""
    conf = session.config.eval
    condition = condition or conf.condition
    model = _load_checkpoint(session, checkpoint)
    record = evaluate_condition(
        model, session.tokenized['val'], session.tokenized['test'],
        session.label_ids(condition), int(conf.batch_size))
    record = dict(task='pretrain', condition=condition, **record,
                  config_hash=session.config_hash)
    write_records(session.path('metrics.log'), [record], append=True)
    logging.info("Pretraining evaluation of {!r}: precision={}, recall={}, "
                 "on_time_rate={}".format(condition, record['precision'],
                                          record['recall'],
                                          record['on_time_rate']))
    return record


def cmd_sweep_delta(session, deltas=None):
    """
    Train and evaluate one model per decay factor. All runs share seed, data
    and vocabulary. Returns ``(rows, rho)`` where ``rho`` is the Spearman
    correlation of the on-time rate against the decay factor (``None`` if
    undefined).
    """
    session.write_config()
    conf = session.config.sweep
    deltas = [float(d) for d in (deltas or conf.deltas)]
    if not deltas:
        raise ConfigError("Empty list of decay factors")
    condition = conf.get('condition') or session.config.eval.condition
    rows = []
    for delta in deltas:
        logging.info("Sweep: temporal_decay={}".format(delta))
        child = session.child(
            {'loss': {'temporal_decay': delta}},
            session.path('sweep', 'delta_{}'.format(delta)))
        child.vocab = session.vocab
        child.tokenized = session.tokenized
        child.label_sets = session.label_sets
        cmd_train(child)
        record = cmd_eval_pretrain(child, condition,
                                   child.path('best.pt'))
        rows.append(dict(delta=delta, **record))
    rho = rank_correlation(
        [r['delta'] for r in rows], [r['on_time_rate'] for r in rows])
    write_table(
        session.path('sweep.tsv'), SWEEP_COLUMNS,
        [[r[c] for c in SWEEP_COLUMNS] for r in rows],
        [_hash_comment(session), 'condition: {}'.format(condition),
         'spearman_on_time_rate_vs_delta: {}'.format(rho)])
    logging.info("Sweep done, Spearman(on-time rate, delta) = {}".format(rho))
    return rows, rho


def rank_correlation(x, y):
    """Spearman correlation over the pairs where ``y`` is defined."""
    pairs = [(a, b) for a, b in zip(x, y) if b is not None]
    if len(pairs) < 2 or len({b for _, b in pairs}) < 2:
        return None
    rho, _ = spearmanr(*zip(*pairs))
    return float(rho)


def pr_curve_path(session, condition, horizon):
    return session.path('pr_{}_{}d.tsv'.format(condition, int(horizon)))


def cmd_eval_zeroshot(session, condition=None, horizons=None,
                      checkpoint=None):
    """AUROC/AUPRC with bootstrap intervals and PR curves per horizon on the
    test split."""
    conf = session.config.eval
    condition = condition or conf.zeroshot_condition
    horizons = [int(h) for h in (horizons or conf.horizons)]
    model = _load_checkpoint(session, checkpoint)
    label_ids = session.label_ids(condition)
    results = {}
    for horizon in horizons:
        records, curve, counts = evaluate_horizon(
            model, session.tokenized['test'], label_ids, horizon,
            grid_size=int(conf.grid_size),
            min_history_days=int(conf.min_history_days),
            exclusion_days=int(conf.exclusion_days),
            n_resamples=int(conf.bootstrap),
            seed=session.config.seed,
            batch_size=int(conf.batch_size))
        records = [
            dict(task='zeroshot', condition=condition, **r,
                 **counts._asdict(), config_hash=session.config_hash)
            for r in records
        ]
        write_records(session.path('metrics.log'), records, append=True)
        if curve is not None:
            write_table(pr_curve_path(session, condition, horizon),
                        PR_COLUMNS, curve, [_hash_comment(session)])
        for r in records:
            logging.info("{} {}d: {} = {} [{}, {}]".format(
                condition, horizon, r['metric'], r['value'],
                r['ci_lo'], r['ci_hi']))
        results[horizon] = (records, curve, counts)
    return results


def cmd_plot(session):
    """Render PR curves and the sweep summary found in the run folder."""
    from nextvisit.plot.figures import plot_pr_curves, plot_sweep
    curves = {}
    for path in sorted(glob.glob(session.path('pr_*.tsv'))):
        match = RE_PR_FILE.match(os.path.basename(path))
        if not match:
            continue
        header, rows = read_table(path)
        rows = [[float(x) for x in row] for row in rows]
        curves.setdefault(match.group('condition'), {})[
            '{}d'.format(match.group('horizon'))] = [
                [row[header.index(c)] for c in PR_COLUMNS] for row in rows]
    written = []
    for condition, by_horizon in curves.items():
        filename = session.path('pr_{}.png'.format(condition))
        plot_pr_curves(by_horizon, filename, title=condition)
        written.append(filename)
    if os.path.isfile(session.path('sweep.tsv')):
        header, rows = read_table(session.path('sweep.tsv'))
        rows = [dict(zip(header, row)) for row in rows]
        filename = session.path('sweep.png')
        plot_sweep(rows, filename)
        written.append(filename)
    if not written:
        raise DataError("Nothing to plot in {!r}".format(session.folder))
    return written


def cmd_dump_mask(session, index=0, mode=None, output=None):
    """Write the attention mask of packed training row ``index`` as text."""
    conf = session.config
    mode = mode or conf.train.packing
    rows = pack_sequences(build_examples(session, 'train'),
                          int(conf.model.block_size))
    if not 0 <= index < len(rows):
        raise DataError("Row {} out of range, have {} packed rows"
                        .format(index, len(rows)))
    text = format_mask(build_attention_mask(rows[index], mode))
    if output:
        with open(output, 'wt', encoding='utf-8') as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return text


def read_metrics(session):
    """All metric records of the run folder."""
    return read_records(session.require(session.path('metrics.log')))
