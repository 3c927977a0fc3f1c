"""
Assembly of training sequences from tokenized trajectories.

A trajectory with visits ``0 .. n-1`` becomes the token sequence::

    e e e <sep> e e <sep> ... <sep> e e

Event tokens of visit ``i`` share the position ``t_i`` (days since the first
visit). The separator that follows visit ``i`` carries the position of the
*next* visit ``t_{i+1}`` and its output predicts the contents of visit
``i+1``. For masking purposes, the separator belongs to visit ``i``, i.e. it
sees visit ``i`` and everything before, and it is visible to all later
visits. The final visit has no separator since there is nothing to predict.

Sequences longer than ``block_size`` are cut at visit boundaries into chunks
that are packed independently. A chunk keeps the separator after its last
visit (its target is the first visit of the next chunk), so no target is
lost or duplicated. A trailing chunk made of the final visit alone has no
separator and is dropped.
"""

__all__ = [
    'PositionedSequence',
    'TargetBlock',
    'TrainingExample',
    'PackedSequence',
    'PackedBatch',
    'CROSS',
    'ISOLATED',
    'PACKING_MODES',
    'assign_positions',
    'repeat_counts',
    'build_targets_and_weights',
    'truncate_visits',
    'prepare_example',
    'split_example',
    'prepare_examples',
    'context_example',
    'pack_sequences',
    'build_attention_mask',
    'make_batch',
    'format_mask',
]

import logging
from collections import Counter, namedtuple

import numpy as np
import torch

from nextvisit.core.errors import ConfigError, DataError
from nextvisit.tokenize.vocab import TokenizedTrajectory, TokenizedVisit
from nextvisit.train.loss import repeat_weights


PAD_ID = 0
SEP_ID = 1

CROSS = 'cross'
ISOLATED = 'isolated'
PACKING_MODES = (CROSS, ISOLATED)


PositionedSequence = namedtuple('PositionedSequence', [
    'token_ids',        # list of token ids
    'positions',        # list of positions in days, one per token
    'visit_ids',        # list of visit indices, separators count to the
                        # visit they terminate
    'sep_slots',        # list of (sequence_index, target_visit_index)
    'patient_spans',    # list of (start, end)
])


class TargetBlock(namedtuple('TargetBlock', [
        'positives', 'counts', 'weights'])):

    """
    Sparse next-visit target of one separator.

    ``positives`` are the token ids of the target visit, ``counts`` the number
    of history visits containing each of them, and ``weights`` the repeat
    decay weights. All other tokens are negatives with weight 1.
    """

    __slots__ = ()

    def dense(self, vocab_size, dtype=np.float64):
        """Return the multi-hot target and weight vectors."""
        target = np.zeros(vocab_size, dtype=dtype)
        weight = np.ones(vocab_size, dtype=dtype)
        idx = list(self.positives)
        target[idx] = 1
        weight[idx] = self.weights
        return target, weight


TrainingExample = namedtuple('TrainingExample', [
    'patient_id', 'sequence', 'targets'])
TrainingExample.__doc__ = """
A positioned sequence that fits into one block, with one
:class:`TargetBlock` per separator slot."""


PackedSequence = namedtuple('PackedSequence', [
    'token_ids',        # int64 array [block_size], PAD_ID in padding
    'positions',        # float64 array [block_size]
    'visit_ids',        # int64 array [block_size], -1 in padding
    'segment_ids',      # int64 array [block_size], -1 in padding
    'sep_index',        # list of row positions of separator slots
    'sep_slots',        # list of (patient_id, target_visit_index)
    'targets',          # list of TargetBlock aligned with sep_index
    'patient_spans',    # list of (start, end)
    'patient_ids',      # list of patient ids, one per span
])

PackedBatch = namedtuple('PackedBatch', [
    'idx',              # long tensor [B, T]
    'pos',              # float tensor [B, T]
    'mask',             # bool tensor [B, T, T], mask[b, q, k]
    'sep_rows',         # long tensor [S]
    'sep_cols',         # long tensor [S]
    'targets',          # float tensor [S, V]
    'weights',          # float tensor [S, V]
])


def assign_positions(traj):
    """Lay out the tokens of a trajectory with visit time positions and
    separator slots."""
    visits = traj.visits
    if len(visits) < 2:
        raise DataError("Trajectory {!r} has fewer than 2 visits"
                        .format(traj.patient_id))
    tokens, positions, visit_ids, slots = [], [], [], []
    for i, visit in enumerate(visits):
        tokens.extend(visit.token_ids)
        positions.extend([float(visit.time_days)] * len(visit.token_ids))
        visit_ids.extend([i] * len(visit.token_ids))
        if i + 1 < len(visits):
            slots.append((len(tokens), i + 1))
            tokens.append(SEP_ID)
            positions.append(float(visits[i + 1].time_days))
            visit_ids.append(i)
    return PositionedSequence(
        tokens, positions, visit_ids, slots, [(0, len(tokens))])


def repeat_counts(visits):
    """For every separator (predicting visit ``i+1``), return the mapping
    ``token -> number of visits 0..i containing the token`` restricted to the
    tokens of visit ``i+1``."""
    seen = Counter()
    result = []
    for i in range(len(visits) - 1):
        seen.update(visits[i].token_ids)
        result.append({k: seen[k] for k in visits[i + 1].token_ids})
    return result


def build_targets_and_weights(traj, delta, w_min):
    """
    One :class:`TargetBlock` per separator of ``traj``. A positive token
    ``k`` of visit ``i+1`` that occurs in ``c`` of the visits ``0..i`` has
    weight ``max(delta**c, w_min)``.
    """
    if not 0 <= delta <= 1:
        raise ConfigError("temporal_decay must be in [0, 1], got {!r}"
                          .format(delta))
    if not 0 <= w_min < 1:
        raise ConfigError("min_weight must be in [0, 1), got {!r}"
                          .format(w_min))
    blocks = []
    for i, counts in enumerate(repeat_counts(traj.visits)):
        positives = traj.visits[i + 1].token_ids
        c = np.array([counts[k] for k in positives], dtype=np.int64)
        blocks.append(TargetBlock(
            tuple(positives),
            tuple(int(x) for x in c),
            tuple(float(w) for w in repeat_weights(c, delta, w_min))))
    return blocks


def truncate_visits(traj, max_events, stats=None):
    """Cut visits with more than ``max_events`` tokens down to their first
    ``max_events`` ids. Counts truncated visits in
    ``stats['truncated_visits']``."""
    if all(len(v.token_ids) <= max_events for v in traj.visits):
        return traj
    stats = Counter() if stats is None else stats
    visits = []
    for v in traj.visits:
        if len(v.token_ids) > max_events:
            stats['truncated_visits'] += 1
            v = TokenizedVisit(v.token_ids[:max_events], v.time_days)
        visits.append(v)
    return TokenizedTrajectory(traj.patient_id, visits)


def prepare_example(traj, delta, w_min):
    """Positions and targets of a whole trajectory as one example."""
    return TrainingExample(
        traj.patient_id,
        assign_positions(traj),
        build_targets_and_weights(traj, delta, w_min))


def split_example(example, block_size):
    """Split an example into chunks of at most ``block_size`` tokens at visit
    boundaries."""
    seq = example.sequence
    if len(seq.token_ids) <= block_size:
        return [example]
    # visit units: [start, end) of visit tokens plus trailing separator
    bounds = [0]
    for index, _ in seq.sep_slots:
        bounds.append(index + 1)
    bounds.append(len(seq.token_ids))
    units = list(zip(bounds[:-1], bounds[1:]))
    chunks = []
    start = 0
    slot = 0
    while start < len(units):
        stop = start
        while stop < len(units) and \
                units[stop][1] - units[start][0] <= block_size:
            stop += 1
        if stop == start:
            raise DataError("Visit of {!r} exceeds block_size"
                            .format(example.patient_id))
        lo, hi = units[start][0], units[stop - 1][1]
        slots = [(i - lo, v) for i, v in seq.sep_slots if lo <= i < hi]
        chunks.append(TrainingExample(
            example.patient_id,
            PositionedSequence(
                seq.token_ids[lo:hi], seq.positions[lo:hi],
                seq.visit_ids[lo:hi], slots, [(0, hi - lo)]),
            example.targets[slot:slot + len(slots)]))
        slot += len(slots)
        start = stop
    return chunks


def prepare_examples(trajs, block_size, delta, w_min, stats=None):
    """Turn tokenized trajectories into training examples that fit into
    ``block_size``."""
    if block_size < 2:
        raise ConfigError("block_size must be at least 2")
    stats = Counter() if stats is None else stats
    examples = []
    for traj in trajs:
        if len(traj.visits) < 2:
            stats['excluded_patients'] += 1
            continue
        traj = truncate_visits(traj, block_size - 1, stats)
        example = prepare_example(traj, delta, w_min)
        chunks = split_example(example, block_size)
        stats['split_patients'] += len(chunks) > 1
        for chunk in chunks:
            if chunk.sequence.sep_slots:
                examples.append(chunk)
            else:
                stats['dropped_chunks'] += 1
    if stats['truncated_visits']:
        logging.warning("Truncated {} visits to block_size-1 = {} tokens"
                        .format(stats['truncated_visits'], block_size - 1))
    return examples


def context_example(patient_id, visits, query_day, block_size):
    """
    ``visits`` followed by one separator positioned at ``query_day``, whose
    target index is ``len(visits)``. Visits are cut to ``block_size - 1``
    tokens and the oldest visits are dropped until the sequence fits.

    For a trajectory that fits into one block, the separator sees exactly
    what the corresponding separator of :func:`assign_positions` sees.
    """
    tokens, positions, visit_ids = [], [], []
    for i, visit in enumerate(visits):
        ids = visit.token_ids[:block_size - 1]
        tokens.extend(ids)
        positions.extend([float(visit.time_days)] * len(ids))
        visit_ids.extend([i] * len(ids))
        if i + 1 < len(visits):
            tokens.append(SEP_ID)
            positions.append(float(visits[i + 1].time_days))
            visit_ids.append(i)
    tokens.append(SEP_ID)
    positions.append(float(query_day))
    visit_ids.append(len(visits) - 1)
    start = 0
    while len(tokens) - start > block_size:
        start = visit_ids.index(visit_ids[start] + 1, start)
    tokens, positions, visit_ids = (
        tokens[start:], positions[start:], visit_ids[start:])
    seq = PositionedSequence(
        tokens, positions, visit_ids,
        [(len(tokens) - 1, len(visits))], [(0, len(tokens))])
    return TrainingExample(patient_id, seq, [])


def pack_sequences(examples, block_size, max_rows=None):
    """
    Greedy first-fit packing of examples into rows of ``block_size`` tokens.
    Every example goes into the first row that still has room for it.

    If ``max_rows`` is given, no more rows are opened once that many exist and
    examples that do not fit anywhere are skipped.
    """
    rows = []
    free = []
    for example in examples:
        n = len(example.sequence.token_ids)
        if n > block_size:
            raise DataError("Example of {!r} exceeds block_size ({} > {})"
                            .format(example.patient_id, n, block_size))
        for r, room in enumerate(free):
            if n <= room:
                rows[r].append(example)
                free[r] -= n
                break
        else:
            if max_rows is None or len(rows) < max_rows:
                rows.append([example])
                free.append(block_size - n)
    return [_concat_row(row, block_size) for row in rows]


def _concat_row(row, block_size):
    token_ids = np.full(block_size, PAD_ID, dtype=np.int64)
    positions = np.zeros(block_size, dtype=np.float64)
    visit_ids = np.full(block_size, -1, dtype=np.int64)
    segment_ids = np.full(block_size, -1, dtype=np.int64)
    sep_index, sep_slots, targets, spans, ids = [], [], [], [], []
    offset = 0
    for segment, example in enumerate(row):
        seq = example.sequence
        end = offset + len(seq.token_ids)
        token_ids[offset:end] = seq.token_ids
        positions[offset:end] = seq.positions
        visit_ids[offset:end] = seq.visit_ids
        segment_ids[offset:end] = segment
        sep_index.extend(offset + i for i, _ in seq.sep_slots)
        sep_slots.extend((example.patient_id, v) for _, v in seq.sep_slots)
        targets.extend(example.targets)
        spans.append((offset, end))
        ids.append(example.patient_id)
        offset = end
    return PackedSequence(
        token_ids, positions, visit_ids, segment_ids,
        sep_index, sep_slots, targets, spans, ids)


def build_attention_mask(seq, mode=CROSS):
    """
    Boolean matrix ``allowed[q, k]``. Within a segment, ``q`` may attend to
    ``k`` iff ``visit(k) <= visit(q)``. In ``cross`` mode, ``q`` may also
    attend to every token of earlier segments. Padding neither attends nor
    is attended.

    Accepts a :class:`PackedSequence` or a single-span
    :class:`PositionedSequence`.
    """
    if mode not in PACKING_MODES:
        raise ConfigError("Unknown packing mode: {!r}".format(mode))
    visit = np.asarray(seq.visit_ids)
    segment = np.asarray(getattr(seq, 'segment_ids', np.zeros_like(visit)))
    valid = segment >= 0
    same = segment[:, None] == segment[None, :]
    allowed = same & (visit[None, :] <= visit[:, None])
    if mode == CROSS:
        allowed |= segment[None, :] < segment[:, None]
    return allowed & valid[:, None] & valid[None, :]


def make_batch(rows, vocab_size, mode=CROSS, device='cpu',
               dtype=torch.float32, with_targets=True):
    """Collate packed rows into tensors with dense targets and weights.
    Without ``with_targets``, ``targets`` and ``weights`` are ``None``."""
    rows = list(rows)
    idx = np.stack([r.token_ids for r in rows])
    pos = np.stack([r.positions for r in rows])
    mask = np.stack([build_attention_mask(r, mode) for r in rows])
    sep_rows = [b for b, r in enumerate(rows) for _ in r.sep_index]
    sep_cols = [i for r in rows for i in r.sep_index]
    blocks = [t for r in rows for t in r.targets] if with_targets else []
    target = np.zeros((len(blocks), vocab_size))
    weight = np.ones((len(blocks), vocab_size))
    for s, block in enumerate(blocks):
        target[s], weight[s] = block.dense(vocab_size)
    return PackedBatch(
        idx=torch.as_tensor(idx, dtype=torch.long, device=device),
        pos=torch.as_tensor(pos, dtype=torch.float64, device=device),
        mask=torch.as_tensor(mask, dtype=torch.bool, device=device),
        sep_rows=torch.as_tensor(sep_rows, dtype=torch.long, device=device),
        sep_cols=torch.as_tensor(sep_cols, dtype=torch.long, device=device),
        targets=_tensor(target, dtype, device) if with_targets else None,
        weights=_tensor(weight, dtype, device) if with_targets else None,
    )


def format_mask(mask):
    """Render a boolean mask as lines of ``0``/``1`` characters."""
    return ''.join(
        ''.join('1' if x else '0' for x in row) + '\n'
        for row in np.asarray(mask))


def _tensor(array, dtype, device):
    return torch.as_tensor(array, dtype=dtype, device=device)
