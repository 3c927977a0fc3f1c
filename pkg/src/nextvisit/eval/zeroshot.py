"""
Zero-shot disease risk forecasting.

Prediction windows are anchored at visits with at least ``min_history_days``
of prior history. A window is *excluded* if its history already contains a
label token, if the condition starts within ``exclusion_days`` after the
anchor, or if the patient is not followed up to the end of the horizon. The
label is 1 iff the first label token occurs in ``(anchor + exclusion_days,
anchor + horizon]``.

The model is never trained on this task. To score a window, a separator is
appended to the history at each of ``grid_size`` query times evenly spaced
in ``(anchor + exclusion_days, anchor + horizon]``; the label-set logits at
the separator are summed and passed through a sigmoid, and the window score
is the maximum over the query times.

Label sets are read from tab-delimited files with the columns ``disease``,
``type``, ``description`` and ``code``, where ``type`` is ``Diagnosis`` or
``Medication``.
"""

__all__ = [
    'LabelSet',
    'WindowExample',
    'WindowCounts',
    'LABEL_COLUMNS',
    'read_label_sets',
    'write_label_sets',
    'resolve_label_set',
    'first_onset',
    'curate_zero_shot_windows',
    'query_example',
    'query_times',
    'score_windows',
    'condition_score',
    'evaluate_horizon',
]

import logging
from collections import namedtuple

import numpy as np
from scipy.special import expit

from nextvisit.core.errors import ConfigError, DataError, UndefinedMetricError
from nextvisit.eval.metrics import auroc, auprc, bootstrap_ci, pr_curve
from nextvisit.eval.pretrain import sep_logits
from nextvisit.model.sequence import context_example
from nextvisit.util.export import read_table, write_table


LABEL_COLUMNS = ('disease', 'type', 'description', 'code')

TYPE_PREFIX = {
    'diagnosis': 'diagnosis',
    'medication': 'medication',
}


LabelSet = namedtuple('LabelSet', ['name', 'keys', 'descriptions'])

WindowExample = namedtuple('WindowExample', [
    'patient_id', 'anchor_index', 'anchor_days', 'horizon', 'label',
    'history'])
WindowExample.__doc__ = """
``history`` holds the visits ``0..anchor_index`` of the tokenized
trajectory."""

WindowCounts = namedtuple('WindowCounts', [
    'candidates', 'included', 'excluded_history', 'excluded_1y',
    'excluded_followup', 'positives'])


def read_label_sets(filename):
    """Read label sets, returns ``{name: LabelSet}`` in file order."""
    try:
        header, rows = read_table(filename)
    except (OSError, StopIteration) as e:
        raise DataError("Cannot read label file {!r}: {}".format(filename, e))
    missing = set(LABEL_COLUMNS) - set(header)
    if missing:
        raise DataError("Label file {!r} lacks columns: {}".format(
            filename, ', '.join(sorted(missing))))
    col = {name: header.index(name) for name in LABEL_COLUMNS}
    keys, descriptions = {}, {}
    for row in rows:
        name = row[col['disease']]
        kind = row[col['type']].strip().lower()
        if kind not in TYPE_PREFIX:
            raise DataError("Unknown code type {!r} in {!r}".format(
                row[col['type']], filename))
        key = '{}:{}'.format(TYPE_PREFIX[kind], row[col['code']].strip())
        keys.setdefault(name, []).append(key)
        descriptions.setdefault(name, []).append(row[col['description']])
    return {
        name: LabelSet(name, tuple(keys[name]), tuple(descriptions[name]))
        for name in keys
    }


def write_label_sets(filename, conditions, comments=()):
    """Write the ``conditions`` config section (``{name: [[type, code,
    description], ...]}``) as label file."""
    rows = []
    for name, entries in conditions.items():
        for entry in entries:
            try:
                kind, code, description = entry
            except (TypeError, ValueError):
                raise ConfigError("Invalid condition entry for {!r}: {!r}"
                                  .format(name, entry))
            if str(kind).lower() not in TYPE_PREFIX:
                raise ConfigError("Unknown code type {!r}".format(kind))
            rows.append([name, str(kind).capitalize(), description, code])
    write_table(filename, LABEL_COLUMNS, rows, comments)


def resolve_label_set(label_set, vocab):
    """Token ids of a label set. Unknown codes are reported and skipped."""
    ids, missing = vocab.ids_for_keys(label_set.keys)
    if missing:
        logging.warning("Label set {!r}: codes not in vocabulary: {}".format(
            label_set.name, ', '.join(missing)))
    if not ids:
        raise DataError("Label set {!r} has no code in the vocabulary"
                        .format(label_set.name))
    return ids


def first_onset(traj, label_ids):
    """Index of the first visit containing a label token, or ``None``."""
    labels = set(label_ids)
    for i, visit in enumerate(traj.visits):
        if labels.intersection(visit.token_ids):
            return i
    return None


def curate_zero_shot_windows(trajs, label_ids, horizon_days,
                             min_history_days=365, exclusion_days=365):
    """Return ``(windows, counts)`` for a held-out split, see module
    docstring. ``counts`` is a :class:`WindowCounts`."""
    if horizon_days <= exclusion_days:
        raise ConfigError("Horizon must exceed the exclusion period")
    windows = []
    n = dict.fromkeys(WindowCounts._fields, 0)
    for traj in trajs:
        onset = first_onset(traj, label_ids)
        onset_days = None if onset is None else traj.visits[onset].time_days
        end_days = traj.visits[-1].time_days
        for a, visit in enumerate(traj.visits):
            t = visit.time_days
            if t < min_history_days:
                continue
            n['candidates'] += 1
            if onset is not None and onset <= a:
                n['excluded_history'] += 1
                continue
            if onset_days is not None and onset_days <= t + exclusion_days:
                n['excluded_1y'] += 1
                continue
            if onset_days is not None and onset_days <= t + horizon_days:
                label = 1
            elif end_days >= t + horizon_days:
                label = 0
            else:
                n['excluded_followup'] += 1
                continue
            n['included'] += 1
            n['positives'] += label
            windows.append(WindowExample(
                traj.patient_id, a, t, horizon_days, label,
                traj.visits[:a + 1]))
    return windows, WindowCounts(**n)


def query_times(anchor_days, horizon_days, grid_size, exclusion_days=365):
    """``grid_size`` times evenly spaced in ``(anchor + exclusion_days,
    anchor + horizon]``, ending at the horizon."""
    if grid_size < 1:
        raise ConfigError("grid_size must be positive")
    start = anchor_days + exclusion_days
    step = (horizon_days - exclusion_days) / grid_size
    return [start + step * (g + 1) for g in range(grid_size)]


def query_example(window, query_day, block_size):
    """History of ``window`` followed by one separator positioned at
    ``query_day``. The oldest visits are dropped to fit ``block_size``."""
    return context_example(
        window.patient_id, window.history, query_day, block_size)


def score_windows(model, windows, label_ids, grid_size,
                  exclusion_days=365, batch_size=64):
    """Scores of all windows, shape ``[len(windows)]``."""
    label_ids = sorted(set(label_ids))
    if not label_ids:
        raise DataError("Empty label set")
    block_size = model.config.block_size
    examples = [
        query_example(w, day, block_size)
        for w in windows
        for day in query_times(w.anchor_days, w.horizon, grid_size,
                               exclusion_days)
    ]
    _, logits = sep_logits(model, examples, label_ids, batch_size)
    scores = expit(logits.sum(axis=1))
    return scores.reshape(len(windows), grid_size).max(axis=1)


def condition_score(model, window, label_ids, grid_size, exclusion_days=365):
    """Score of a single window."""
    return float(score_windows(
        model, [window], label_ids, grid_size, exclusion_days)[0])


def evaluate_horizon(model, trajs, label_ids, horizon_days, *, grid_size=8,
                     min_history_days=365, exclusion_days=365,
                     n_resamples=1000, seed=0, batch_size=64):
    """
    Curate, score and evaluate the windows of one horizon.

    Returns ``(records, curve, counts)`` where ``records`` are metric records
    ``{metric, value, ci_lo, ci_hi, n}``, ``curve`` the rows of
    :func:`~nextvisit.eval.metrics.pr_curve` (or ``None``) and ``counts`` the
    :class:`WindowCounts`.
    """
    windows, counts = curate_zero_shot_windows(
        trajs, label_ids, horizon_days, min_history_days, exclusion_days)
    logging.info("Horizon {}d: {}".format(horizon_days, dict(
        counts._asdict())))
    if not windows:
        raise DataError(
            "No zero-shot windows for horizon {}d: {}".format(
                horizon_days, ', '.join(
                    '{}={}'.format(k, v)
                    for k, v in counts._asdict().items())))
    scores = score_windows(model, windows, label_ids, grid_size,
                           exclusion_days, batch_size)
    labels = np.array([w.label for w in windows])
    groups = [w.patient_id for w in windows]
    records = []
    for name, metric in (('auroc', auroc), ('auprc', auprc)):
        try:
            value = metric(scores, labels)
            lo, hi = bootstrap_ci(scores, labels, metric, n_resamples,
                                  seed=seed, groups=groups)
        except UndefinedMetricError as e:
            logging.warning("{} undefined for horizon {}d: {}"
                            .format(name, horizon_days, e))
            value = lo = hi = None
        records.append({
            'metric': name, 'horizon': horizon_days, 'value': value,
            'ci_lo': lo, 'ci_hi': hi, 'n': len(windows),
            'n_positive': int(labels.sum()),
        })
    try:
        curve = pr_curve(scores, labels)
    except UndefinedMetricError:
        curve = None
    return records, curve, counts
