import numpy as np
import pytest

from nextvisit.core.errors import DataError, UndefinedMetricError
from nextvisit.eval.metrics import f1_score
from nextvisit.eval.pretrain import (
    SepPrediction, LOW_TP, predict_seps, scoring_examples, select_threshold,
    next_visit_precision_recall, on_time_rate, evaluate_condition)


def pred(score, target, pid='p0', index=0, in_history=False):
    return SepPrediction(pid, index, index * 10, index * 10 + 10,
                         score, target, in_history)


def test_threshold_tie_prefers_higher():
    # F1 is 2/3 at both 0.9 and 0.6
    preds = [pred(0.9, True), pred(0.8, False), pred(0.7, False),
             pred(0.6, True)]
    assert select_threshold(preds) == 0.9


def test_threshold_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(50):
        n = int(rng.integers(2, 40))
        scores = np.round(rng.random(n), 2)
        truth = rng.random(n) < 0.4
        truth[0] = True
        preds = [pred(s, bool(t)) for s, t in zip(scores, truth)]

        def f1(threshold):
            flagged = scores >= threshold
            tp = int((flagged & truth).sum())
            return f1_score(tp, int((flagged & ~truth).sum()),
                            int((~flagged & truth).sum()))
        best = max(f1(s) for s in scores)
        expected = max(s for s in scores if f1(s) == best)
        assert select_threshold(preds) == expected


def test_threshold_without_positives():
    with pytest.raises(UndefinedMetricError):
        select_threshold([pred(0.3, False), pred(0.8, False)])


def test_strict_precision_recall():
    # flag at visit 0 for a label that only shows up at visit 2 is wrong
    preds = [
        pred(0.9, False, index=0),
        pred(0.2, False, index=1),
        pred(0.9, True, index=2),
        pred(0.1, True, index=3),
    ]
    precision, recall = next_visit_precision_recall(preds, 0.5)
    assert precision == 0.5
    assert recall == 0.5
    assert next_visit_precision_recall(preds, 0.95) == (None, 0.0)
    assert next_visit_precision_recall(
        [pred(0.9, False)], 0.5) == (0.0, None)


def test_on_time_late():
    preds = [pred(0.1, False, index=0), pred(0.2, True, index=1),
             pred(0.9, True, index=2)]
    stats = on_time_rate(preds, 0.5)
    assert (stats.tp_total, stats.tp_on_time, stats.rate) == (1, 0, 0.0)


def test_on_time_early():
    preds = [pred(0.7, False, index=0), pred(0.2, True, index=1),
             pred(0.1, True, index=2)]
    stats = on_time_rate(preds, 0.5)
    assert (stats.tp_total, stats.tp_on_time, stats.rate) == (1, 1, 1.0)


def test_on_time_exact_and_prevalent():
    preds = [
        pred(0.2, False, 'a', 0), pred(0.8, True, 'a', 1),
        pred(0.9, True, 'b', 0, in_history=True),
        pred(0.9, False, 'c', 0), pred(0.9, False, 'c', 1),
        pred(0.1, True, 'd', 0),
    ]
    stats = on_time_rate(preds, 0.5)
    assert stats.n_prevalent == 1
    # 'c' never develops the condition, 'd' is never flagged
    assert (stats.tp_total, stats.tp_on_time) == (1, 1)
    assert on_time_rate([pred(0.1, False)], 0.5).rate is None


def test_predict_seps_enumeration(tiny_model, traj):
    model = tiny_model()
    t = traj((0, [2, 3]), (10, [4]), (25, [7, 2]), (40, [5]),
             (70, [7]), (90, [6]))
    preds = predict_seps(model, [t], [7])
    assert len(preds) == 5
    assert [p.visit_index for p in preds] == [0, 1, 2, 3, 4]
    assert [p.time_days for p in preds] == [0, 10, 25, 40, 70]
    assert [p.target_time for p in preds] == [10, 25, 40, 70, 90]
    assert [p.target for p in preds] == [False, True, False, True, False]
    assert [p.in_history for p in preds] == [False, False, True, True, True]
    assert all(0 < p.score < 1 for p in preds)
    with pytest.raises(DataError):
        predict_seps(model, [t], [])


def test_predict_seps_packing_independent(tiny_model, traj, random_trajs):
    model = tiny_model()
    t = traj((0, [2, 3]), (10, [4]), (25, [7, 2]), patient_id='x')
    others = random_trajs(np.random.default_rng(3), 5, 64)
    alone = predict_seps(model, [t], [7, 4])
    together = [p for p in predict_seps(model, others + [t], [7, 4])
                if p.patient_id == 'x']
    for a, b in zip(alone, together):
        assert a.score == pytest.approx(b.score, abs=1e-9)


def test_predict_seps_split_keeps_history(tiny_model, traj):
    wide = tiny_model()
    narrow = tiny_model(block_size=8)
    narrow.load_state_dict(wide.state_dict())
    # 13 tokens in total; with 8 per block the oldest visits are cut only
    # from the fourth separator on
    t = traj((0, [2, 3]), (10, [4]), (25, [7, 2]), (40, [5]),
             (70, [7]), (90, [6]))
    full = predict_seps(wide, [t], [7])
    split = predict_seps(narrow, [t], [7])
    assert [p.visit_index for p in split] == [0, 1, 2, 3, 4]
    assert [p.target for p in split] == [p.target for p in full]
    for a, b in zip(full[:3], split[:3]):
        assert a.score == pytest.approx(b.score, abs=1e-9)


def test_scoring_examples_one_per_separator(traj):
    t = traj((0, [2, 3]), (10, [4]), (25, [7, 2]), (40, [5]),
             (70, [7]), (90, [6]))
    examples = list(scoring_examples([t], 8))
    assert len(examples) == 5
    assert all(len(e.sequence.token_ids) <= 8 for e in examples)
    assert [e.sequence.sep_slots[-1][1] for e in examples] == [1, 2, 3, 4, 5]
    # the separator before visit 4 drops visit 0 only
    assert examples[3].sequence.token_ids == [4, 1, 7, 2, 1, 5, 1]
    fits, = scoring_examples([t], 64)
    assert len(fits.sequence.sep_slots) == 5


def test_evaluate_condition(tiny_model, random_trajs):
    model = tiny_model()
    rng = np.random.default_rng(4)
    val = random_trajs(rng, 10, 64)
    test = random_trajs(rng, 10, 64)
    record = evaluate_condition(model, val, test, range(2, 20))
    assert set(record) == {
        'threshold', 'precision', 'recall', 'on_time_rate', 'tp_total',
        'tp_on_time', 'n_prevalent', 'n_seps', 'low_tp'}
    assert record['n_seps'] == sum(len(t.visits) - 1 for t in test)
    assert record['low_tp'] == (record['tp_total'] < LOW_TP)
    assert record['tp_on_time'] <= record['tp_total']
