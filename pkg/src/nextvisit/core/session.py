"""
This module defines the toplevel context that is used in nextvisit to keep
track of the resolved config, the run folder and the artifacts in it.

Layout of a run folder::

    config.yml                  resolved config of the last command
    train.cohort, val.cohort, test.cohort
    labels.tsv                  condition label sets
    vocab.tsv
    best.pt, last.pt            checkpoints (+ .manifest.yml)
    loss.log                    training records
    metrics.log                 evaluation records
    pr_<condition>_<horizon>d.tsv
    sweep.tsv, sweep/delta_<value>/...
"""

__all__ = [
    'Session',
]

import logging
import os
from collections import Counter

from nextvisit.core.config import (
    ConfigSection, load as load_config, dump as dump_config, config_hash)
from nextvisit.core.errors import DataError
from nextvisit.cohort.records import load_cohort
from nextvisit.cohort.synth import SPLIT_NAMES
from nextvisit.tokenize.vocab import Vocabulary, tokenize_cohort
from nextvisit.eval.zeroshot import read_label_sets, resolve_label_set
from nextvisit.util.misc import cachedproperty, userpath, format_counts


class Session:

    """
    Context variables of one command invocation: the config, the folder that
    artifacts are written to, and the folder that the cohort and vocabulary
    are read from (usually the same).
    """

    def __init__(self, config=None, folder=None, data_folder=None):
        if config is None:
            config = load_config()
        self.config = config
        self.folder = userpath(folder or config.out)
        self.data_folder = userpath(data_folder or self.folder)

    def path(self, *names):
        return os.path.join(self.folder, *names)

    def data_path(self, *names):
        return os.path.join(self.data_folder, *names)

    def require(self, path):
        """Return ``path`` if the file exists, else raise
        :class:`DataError`."""
        if not os.path.isfile(path):
            raise DataError("Missing artifact: {!r}".format(path))
        return path

    def cohort_path(self, split):
        return self.data_path('{}.cohort'.format(split))

    @property
    def vocab_path(self):
        return self.data_path('vocab.tsv')

    @property
    def labels_path(self):
        labels = self.config.eval.get('labels')
        return userpath(labels) if labels else self.data_path('labels.tsv')

    @cachedproperty
    def config_hash(self):
        return config_hash(self.config)

    def write_config(self):
        """Echo the resolved config into the run folder."""
        os.makedirs(self.folder, exist_ok=True)
        with open(self.path('config.yml'), 'wt', encoding='utf-8') as f:
            f.write("# config_hash: {}\n".format(self.config_hash))
            f.write(dump_config(self.config))

    def child(self, overrides, folder):
        """Session with a modified config that writes to ``folder`` and
        reads data from this session's data folder."""
        data = self.config.to_dict()
        for section, values in overrides.items():
            data.setdefault(section, {}).update(values)
        return Session(ConfigSection(data), folder=folder,
                       data_folder=self.data_folder)

    # artifacts

    def cohort(self, split):
        return load_cohort(self.require(self.cohort_path(split)))

    @cachedproperty
    def vocab(self):
        return Vocabulary.load(self.require(self.vocab_path))

    @cachedproperty
    def tokenized(self):
        """``{split: [TokenizedTrajectory]}`` for all splits."""
        result = {}
        for split in SPLIT_NAMES:
            stats = Counter()
            result[split] = tokenize_cohort(
                self.cohort(split), self.vocab, stats)
            logging.info("Tokenized {} split: {} patients {}".format(
                split, len(result[split]), format_counts(stats)))
        return result

    @cachedproperty
    def label_sets(self):
        return read_label_sets(self.require(self.labels_path))

    def label_ids(self, name):
        """Token ids of the label set ``name``."""
        try:
            label_set = self.label_sets[name]
        except KeyError:
            raise DataError("Unknown condition {!r} in {!r}".format(
                name, self.labels_path))
        return resolve_label_set(label_set, self.vocab)
