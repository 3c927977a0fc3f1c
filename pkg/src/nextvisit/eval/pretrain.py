"""
Pretraining evaluation of next-visit predictions for a condition.

At every separator of a held-out trajectory, the model's logits for the
condition's label tokens are summed and passed through a sigmoid, giving the
condition score of the next visit. A separator is *flagged* if its score
reaches the decision threshold, which is chosen to maximize F1 on the
validation split. A flag is only correct if a label token occurs in the very
next visit.

The on-time rate is evaluated per patient: a patient who develops the
condition and is flagged at any separator counts as true positive. It is on
time if the earliest flagged separator predicts a visit at or before the
first visit containing a label token. Patients with a label token in their
first visit are prevalent cases and are left out.

A trajectory that fits into one block is scored in a single pass. For longer
trajectories every separator gets its own row holding the newest visits that
fit, so no separator loses the history directly before it.
"""

__all__ = [
    'SepPrediction',
    'OnTimeStats',
    'LOW_TP',
    'sep_logits',
    'scoring_examples',
    'predict_seps',
    'select_threshold',
    'next_visit_precision_recall',
    'on_time_rate',
    'evaluate_condition',
]

import logging
from collections import namedtuple

import numpy as np
import torch
from scipy.special import expit

from nextvisit.core.errors import DataError, UndefinedMetricError
from nextvisit.eval.metrics import f1_score
from nextvisit.model.sequence import (
    ISOLATED, TrainingExample, assign_positions, context_example, make_batch,
    pack_sequences, truncate_visits)


LOW_TP = 10


SepPrediction = namedtuple('SepPrediction', [
    'patient_id',
    'visit_index',      # separator follows this visit
    'time_days',        # prediction time t_i
    'target_time',      # time of the predicted visit t_{i+1}
    'score',            # sigmoid of summed label logits
    'target',           # label token present in visit i+1
    'in_history',       # label token present in visits 0..i
])


OnTimeStats = namedtuple('OnTimeStats', [
    'tp_total', 'tp_on_time', 'rate', 'n_prevalent'])


@torch.no_grad()
def sep_logits(model, examples, token_ids, batch_size=64):
    """
    Forward ``examples`` in isolated packing and return ``(slots, logits)``
    where ``slots`` lists ``(patient_id, target_visit_index)`` per separator
    and ``logits`` is an array ``[n_slots, len(token_ids)]``.
    """
    model.eval()
    param = next(model.parameters())
    block_size = model.config.block_size
    token_ids = torch.as_tensor(list(token_ids), dtype=torch.long,
                                device=param.device)
    examples = list(examples)
    slots, chunks = [], []
    for start in range(0, len(examples), batch_size):
        rows = pack_sequences(examples[start:start+batch_size], block_size)
        batch = make_batch(rows, model.config.vocab_size, ISOLATED,
                           device=param.device, dtype=param.dtype,
                           with_targets=False)
        logits = model(batch.idx, batch.pos, batch.mask)
        sel = logits[batch.sep_rows, batch.sep_cols][:, token_ids]
        chunks.append(sel.double().cpu().numpy())
        slots.extend(s for r in rows for s in r.sep_slots)
    if not chunks:
        return slots, np.zeros((0, len(token_ids)))
    return slots, np.concatenate(chunks)


def scoring_examples(trajs, block_size):
    """Yield examples that cover every separator of ``trajs`` once, each
    with as much preceding history as fits into ``block_size``."""
    for traj in trajs:
        traj = truncate_visits(traj, block_size - 1)
        seq = assign_positions(traj)
        if len(seq.token_ids) <= block_size:
            yield TrainingExample(traj.patient_id, seq, [])
            continue
        visits = traj.visits
        for v in range(1, len(visits)):
            yield context_example(traj.patient_id, visits[:v],
                                  visits[v].time_days, block_size)


def predict_seps(model, trajs, label_ids, batch_size=64):
    """Condition score at every separator of ``trajs``."""
    label_ids = sorted(set(label_ids))
    if not label_ids:
        raise DataError("Empty label set")
    trajs = [t for t in trajs if len(t.visits) >= 2]
    examples = list(scoring_examples(trajs, model.config.block_size))
    slots, logits = sep_logits(model, examples, label_ids, batch_size)
    scores = expit(logits.sum(axis=1))
    by_id = {t.patient_id: t for t in trajs}
    labels = set(label_ids)
    result = []
    for (pid, v), score in zip(slots, scores):
        visits = by_id[pid].visits
        result.append(SepPrediction(
            patient_id=pid,
            visit_index=v - 1,
            time_days=visits[v - 1].time_days,
            target_time=visits[v].time_days,
            score=float(score),
            target=bool(labels.intersection(visits[v].token_ids)),
            in_history=any(labels.intersection(x.token_ids)
                           for x in visits[:v]),
        ))
    return result


def select_threshold(predictions):
    """
    Threshold maximizing F1 of ``score >= threshold`` against next-visit
    truth, scanning every distinct score. Ties go to the higher threshold.
    """
    scores = np.array([p.score for p in predictions], dtype=float)
    truth = np.array([p.target for p in predictions], dtype=bool)
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise UndefinedMetricError(
            "F1 undefined: no positive targets in validation predictions")
    order = np.argsort(-scores, kind='stable')
    scores, truth = scores[order], truth[order]
    tp = np.cumsum(truth)
    fp = np.cumsum(~truth)
    best, best_f1 = None, -1.0
    # last index of each run of equal scores, descending
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    for i in ends:
        f1 = f1_score(tp[i], fp[i], n_pos - tp[i])
        if f1 > best_f1:
            best, best_f1 = scores[i], f1
    return float(best)


def next_visit_precision_recall(predictions, threshold):
    """Strict next-visit precision and recall. Undefined values are
    returned as ``None``."""
    flagged = np.array([p.score >= threshold for p in predictions], bool)
    truth = np.array([p.target for p in predictions], bool)
    tp = int((flagged & truth).sum())
    precision = tp / flagged.sum() if flagged.any() else None
    recall = tp / truth.sum() if truth.any() else None
    return (None if precision is None else float(precision),
            None if recall is None else float(recall))


def on_time_rate(predictions, threshold):
    """Patient level on-time statistics, see module docstring."""
    patients = {}
    for p in predictions:
        patients.setdefault(p.patient_id, []).append(p)
    tp_total = tp_on_time = n_prevalent = 0
    for preds in patients.values():
        preds.sort(key=lambda p: p.visit_index)
        if preds[0].in_history:
            n_prevalent += 1
            continue
        onset = next((p.visit_index + 1 for p in preds if p.target), None)
        if onset is None:
            continue
        first_flag = next(
            (p.visit_index + 1 for p in preds if p.score >= threshold), None)
        if first_flag is None:
            continue
        tp_total += 1
        tp_on_time += first_flag <= onset
    rate = tp_on_time / tp_total if tp_total else None
    return OnTimeStats(tp_total, tp_on_time, rate, n_prevalent)


def evaluate_condition(model, val_trajs, test_trajs, label_ids,
                       batch_size=64):
    """Choose the threshold on validation and evaluate on test. Returns a
    record dict."""
    val = predict_seps(model, val_trajs, label_ids, batch_size)
    test = predict_seps(model, test_trajs, label_ids, batch_size)
    threshold = select_threshold(val)
    precision, recall = next_visit_precision_recall(test, threshold)
    stats = on_time_rate(test, threshold)
    if stats.tp_total < LOW_TP:
        logging.warning("Only {} true positive patients, on-time rate is "
                        "unreliable".format(stats.tp_total))
    return {
        'threshold': threshold,
        'precision': precision,
        'recall': recall,
        'on_time_rate': stats.rate,
        'tp_total': stats.tp_total,
        'tp_on_time': stats.tp_on_time,
        'n_prevalent': stats.n_prevalent,
        'n_seps': len(test),
        'low_tp': stats.tp_total < LOW_TP,
    }
