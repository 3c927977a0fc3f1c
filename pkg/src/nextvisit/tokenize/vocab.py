"""
Token vocabulary and trajectory tokenization.

Every categorical event (demographic category, diagnosis, medication) is one
token. Continuous events (age at visit, lab results) are discretized into
quantile bins computed on the training split, and every (code, bin) pair is
one token. Token keys look like::

    <pad>                   padding, id 0
    <sep>                   visit separator, id 1
    demographic:sex:1
    diagnosis:D0012
    medication:M0003
    age:years:bin4
    lab:L007:bin9

Bin edges are nearest-rank percentiles: with ``n`` sorted training values
``x[1] <= ... <= x[n]``, the ``k``-th of ``n_bins - 1`` edges is
``x[ceil(k * n / n_bins)]``, computed in integer arithmetic. Duplicate edges
are collapsed. Bins are left-closed: a value equal to an edge belongs to the
bin above it (see :func:`bin_value`).
"""

__all__ = [
    'PAD',
    'SEP',
    'Vocabulary',
    'TokenizedVisit',
    'TokenizedTrajectory',
    'event_key',
    'continuous_key',
    'nearest_rank_edges',
    'bin_value',
    'build_vocabulary',
    'tokenize_trajectory',
    'tokenize_cohort',
]

import logging
import math
import os
from collections import Counter, defaultdict, namedtuple

import numpy as np

from nextvisit.core.errors import ConfigError, DataError
from nextvisit.cohort.synth import (
    DEMOGRAPHIC, AGE, DIAGNOSIS, MEDICATION, LAB, CONTINUOUS_KINDS)


PAD = '<pad>'
SEP = '<sep>'

KEY_PREFIX = {
    DEMOGRAPHIC: 'demographic',
    AGE: 'age',
    DIAGNOSIS: 'diagnosis',
    MEDICATION: 'medication',
    LAB: 'lab',
}


TokenizedVisit = namedtuple('TokenizedVisit', ['token_ids', 'time_days'])
TokenizedVisit.__doc__ = """
Token ids of one visit, deduplicated and sorted ascending."""

TokenizedTrajectory = namedtuple(
    'TokenizedTrajectory', ['patient_id', 'visits'])


def event_key(event):
    """Token key of a categorical event, or the base key (without bin) of a
    continuous event."""
    return '{}:{}'.format(KEY_PREFIX[event.kind], event.code)


def continuous_key(base, index):
    """Token key of bin ``index`` of the continuous code ``base``."""
    return '{}:bin{}'.format(base, index)


def nearest_rank_edges(values, n_bins):
    """Nearest-rank quantile edges at ``k / n_bins`` for ``k = 1 ..
    n_bins-1``, with duplicates collapsed. Edge ``k`` is the sorted value of
    rank ``ceil(k * n / n_bins)``, as ``np.percentile(values, 100 * k /
    n_bins, method='inverted_cdf')`` in exact arithmetic. The rank is kept
    in integers since the float product may round past it."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        return np.zeros(0)
    ranks = [-(-k * n // n_bins) for k in range(1, n_bins)]
    return np.unique(x[[max(r, 1) - 1 for r in ranks]])


def bin_value(value, edges):
    """Return the number of edges less than or equal to ``value``, i.e. the
    index of the left-closed bin containing it, in ``[0, len(edges)]``."""
    value = float(value)
    if math.isnan(value):
        raise DataError("Cannot bin NaN value")
    return int(np.searchsorted(edges, value, side='right'))


class Vocabulary:

    """
    Immutable mapping between token keys and dense ids.

    :ivar list tokens: token keys in id order
    :ivar dict token_to_id: inverse of ``tokens``
    :ivar dict bin_edges: ascending edges per continuous base key
    :ivar dict meta: free form header values (bin counts, config hash)
    """

    pad_id = 0
    sep_id = 1

    def __init__(self, tokens, bin_edges, meta=None):
        tokens = list(tokens)
        if tokens[:2] != [PAD, SEP]:
            raise DataError("Vocabulary must start with {} and {}"
                            .format(PAD, SEP))
        self.tokens = tokens
        self.token_to_id = {key: i for i, key in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise DataError("Duplicate token keys in vocabulary")
        self.bin_edges = {
            base: np.asarray(edges, dtype=float)
            for base, edges in bin_edges.items()
        }
        for base, edges in self.bin_edges.items():
            if np.any(np.diff(edges) <= 0):
                raise DataError("Bin edges of {} are not strictly ascending"
                                .format(base))
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self):
        return len(self.tokens)

    def __contains__(self, key):
        return key in self.token_to_id

    def encode_event(self, event):
        """Token id of ``event``, or ``None`` if it is not in the
        vocabulary."""
        key = event_key(event)
        if event.kind in CONTINUOUS_KINDS:
            edges = self.bin_edges.get(key)
            if edges is None:
                return None
            key = continuous_key(key, bin_value(event.value, edges))
        return self.token_to_id.get(key)

    def decode(self, token_id):
        """Token key of ``token_id``."""
        return self.tokens[token_id]

    def describe(self, token_id):
        """Split the key of ``token_id`` into ``(prefix, code, bin)``, where
        ``bin`` is ``None`` for categorical tokens. Special tokens give
        ``(key, None, None)``."""
        key = self.tokens[token_id]
        if key in (PAD, SEP):
            return key, None, None
        prefix, rest = key.split(':', 1)
        base, _, last = rest.rpartition(':')
        if base and last.startswith('bin') and \
                '{}:{}'.format(prefix, base) in self.bin_edges:
            return prefix, base, int(last[3:])
        return prefix, rest, None

    def ids_for_keys(self, keys):
        """Resolve token keys. Returns ``(ids, missing_keys)``."""
        ids, missing = [], []
        for key in keys:
            if key in self.token_to_id:
                ids.append(self.token_to_id[key])
            else:
                missing.append(key)
        return sorted(set(ids)), missing

    # serialization

    def save(self, filename):
        """Write vocabulary as tab separated text. The output only depends
        on the vocabulary contents."""
        lines = ['# nextvisit vocabulary\n']
        lines.extend(
            'meta\t{}\t{}\n'.format(k, self.meta[k]) for k in sorted(self.meta))
        lines.extend(
            'token\t{}\t{}\n'.format(i, key) for i, key in enumerate(self.tokens))
        lines.extend(
            'edges\t{}\t{}\n'.format(
                base, ' '.join(repr(float(e)) for e in self.bin_edges[base]))
            for base in sorted(self.bin_edges))
        folder = os.path.dirname(filename)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(filename, 'wt', encoding='utf-8') as f:
            f.write(''.join(lines))

    @classmethod
    def load(cls, filename):
        """Read vocabulary written by :meth:`save`."""
        if not os.path.isfile(filename):
            raise DataError("Vocabulary file not found: {!r}".format(filename))
        tokens, edges, meta = {}, {}, {}
        with open(filename, encoding='utf-8') as f:
            for line in f:
                line = line.rstrip('\n')
                if not line or line.startswith('#'):
                    continue
                kind, key, value = line.split('\t')
                if kind == 'token':
                    tokens[int(key)] = value
                elif kind == 'edges':
                    edges[key] = [float(x) for x in value.split()]
                elif kind == 'meta':
                    meta[key] = value
                else:
                    raise DataError("Unknown vocabulary line: {!r}"
                                    .format(line))
        if sorted(tokens) != list(range(len(tokens))):
            raise DataError("Token ids in {!r} are not dense".format(filename))
        return cls([tokens[i] for i in range(len(tokens))], edges, meta)


def build_vocabulary(train_patients, n_bins=10, age_bins=None):
    """
    Build the vocabulary from the *training split only*.

    Every categorical code seen in training becomes a token. Continuous codes
    get nearest-rank quantile edges (``age_bins`` for age, ``n_bins`` for
    labs) and one token per bin.
    """
    age_bins = n_bins if age_bins is None else age_bins
    if min(n_bins, age_bins) < 2:
        raise ConfigError("Need at least 2 bins per continuous code")
    categorical = set()
    values = defaultdict(list)
    for patient in train_patients:
        categorical.update(event_key(e) for e in patient.demographics)
        for visit in patient.visits:
            for event in visit.events:
                if event.kind in CONTINUOUS_KINDS:
                    values[(event.kind, event_key(event))].append(event.value)
                else:
                    categorical.add(event_key(event))
    edges = {}
    binned = set()
    for (kind, base), vals in sorted(values.items()):
        wanted = age_bins if kind == AGE else n_bins
        edges[base] = e = nearest_rank_edges(vals, wanted)
        if len(e) < wanted - 1:
            logging.warning(
                "{}: collapsed duplicate bin edges, {} effective bins "
                "instead of {}".format(base, len(e) + 1, wanted))
        binned.update(continuous_key(base, i) for i in range(len(e) + 1))
    vocab = Vocabulary(
        [PAD, SEP] + sorted(categorical | binned), edges,
        meta={'n_bins': n_bins, 'age_bins': age_bins})
    logging.info("Built vocabulary with {} tokens ({} binned codes)"
                 .format(len(vocab), len(edges)))
    return vocab


def tokenize_trajectory(patient, vocab, stats=None):
    """
    Map the visits of ``patient`` to sorted, deduplicated token ids.
    Demographic events are injected into the first visit. Events unknown to
    the vocabulary are dropped and counted in ``stats['unknown_events']``;
    visits left empty are dropped as well (``stats['dropped_visits']``).
    """
    stats = Counter() if stats is None else stats
    visits = []
    for i, visit in enumerate(patient.visits):
        events = visit.events | patient.demographics if i == 0 else visit.events
        ids = set()
        for event in events:
            token_id = vocab.encode_event(event)
            if token_id is None:
                stats['unknown_events'] += 1
            else:
                ids.add(token_id)
        if ids:
            visits.append(TokenizedVisit(tuple(sorted(ids)), visit.time_days))
        else:
            stats['dropped_visits'] += 1
    return TokenizedTrajectory(patient.patient_id, visits)


def tokenize_cohort(patients, vocab, stats=None):
    """Tokenize all patients, excluding trajectories that end up with fewer
    than two visits (``stats['excluded_patients']``)."""
    stats = Counter() if stats is None else stats
    result = []
    for patient in patients:
        traj = tokenize_trajectory(patient, vocab, stats)
        if len(traj.visits) >= 2:
            result.append(traj)
        else:
            stats['excluded_patients'] += 1
    if stats['unknown_events'] or stats['excluded_patients']:
        logging.warning(
            "Tokenization dropped {} unknown events, {} visits, {} patients"
            .format(stats['unknown_events'], stats['dropped_visits'],
                    stats['excluded_patients']))
    return result
