from collections import Counter

import numpy as np
import pytest

from nextvisit.core.errors import ConfigError, DataError
from nextvisit.cohort.synth import (
    PatientTrajectory, Visit, AGE, DEMOGRAPHIC, DIAGNOSIS, LAB, MEDICATION,
    make_event)
from nextvisit.tokenize.vocab import (
    PAD, SEP, Vocabulary, bin_value, build_vocabulary, nearest_rank_edges,
    tokenize_trajectory, tokenize_cohort)


def patient(pid, *visits, demographics=('sex:1',)):
    return PatientTrajectory(pid, [
        Visit(day, frozenset(make_event(*e) for e in events))
        for day, events in visits
    ], frozenset(make_event(DEMOGRAPHIC, d) for d in demographics))


@pytest.fixture
def train():
    labs = [(LAB, 'X', float(v)) for v in range(1, 101)]
    return [
        patient('a',
                (0, [(DIAGNOSIS, 'A'), (AGE, 'years', 40.0)] + labs[:50]),
                (30, [(DIAGNOSIS, 'B'), (AGE, 'years', 41.0)] + labs[50:])),
        patient('b',
                (0, [(MEDICATION, 'M'), (AGE, 'years', 60.0)]),
                (10, [(DIAGNOSIS, 'A'), (AGE, 'years', 62.0)]),
                demographics=('sex:0',)),
    ]


def test_nearest_rank_edges():
    edges = nearest_rank_edges(np.arange(1, 101), 10)
    assert list(edges) == [10, 20, 30, 40, 50, 60, 70, 80, 90]
    assert list(nearest_rank_edges([5, 1, 4, 2, 3], 2)) == [3]
    assert list(nearest_rank_edges([7, 7, 7, 7], 4)) == [7]


def test_nearest_rank_matches_inverted_cdf():
    # quartiles are exact in binary, so the float ranks are exact too
    rng = np.random.default_rng(0)
    for n in range(1, 60):
        values = rng.integers(0, 20, n)
        expected = np.unique(np.percentile(
            values, [25, 50, 75], method='inverted_cdf'))
        assert list(nearest_rank_edges(values, 4)) == list(expected)


def test_quantile_balance():
    values = np.arange(1, 101)
    edges = nearest_rank_edges(values, 10)
    counts = Counter(bin_value(v, edges) for v in values)
    assert sorted(counts) == list(range(10))
    assert all(5 <= c <= 20 for c in counts.values())


def test_bin_value():
    edges = np.array([10.0, 20.0, 30.0])
    assert bin_value(-5, edges) == 0
    assert bin_value(10, edges) == 1
    assert bin_value(20, edges) == 2
    assert bin_value(25, edges) == 2
    assert bin_value(99, edges) == 3
    for v in np.linspace(0, 40, 81):
        assert bin_value(v, edges) == sum(e <= v for e in edges)
    with pytest.raises(DataError):
        bin_value(float('nan'), edges)


def test_build_vocabulary(train):
    vocab = build_vocabulary(train, n_bins=10, age_bins=2)
    assert vocab.tokens[:2] == [PAD, SEP]
    assert vocab.pad_id == 0 and vocab.sep_id == 1
    for key in ('diagnosis:A', 'diagnosis:B', 'medication:M',
                'demographic:sex:0', 'demographic:sex:1',
                'lab:X:bin0', 'lab:X:bin9', 'age:years:bin0',
                'age:years:bin1'):
        assert key in vocab
    assert 'lab:X:bin10' not in vocab
    assert 'age:years:bin2' not in vocab
    assert list(vocab.bin_edges['lab:X']) == list(range(10, 100, 10))
    assert list(vocab.bin_edges['age:years']) == [41.0]
    assert vocab.tokens[2:] == sorted(vocab.tokens[2:])
    assert [vocab.token_to_id[k] for k in vocab.tokens] == \
        list(range(len(vocab)))


def test_collapsed_edges_warn(caplog):
    data = [patient('a', (0, [(LAB, 'X', 1.0)]), (5, [(LAB, 'X', 1.0)]))]
    vocab = build_vocabulary(data, n_bins=4)
    assert list(vocab.bin_edges['lab:X']) == [1.0]
    assert 'collapsed' in caplog.text


def test_too_few_bins(train):
    with pytest.raises(ConfigError):
        build_vocabulary(train, n_bins=1)


def test_tokenize_visit(train):
    vocab = build_vocabulary(train, n_bins=10)
    p = patient('c',
                (0, [(DIAGNOSIS, 'B')]),
                (7, [(DIAGNOSIS, 'A'), (LAB, 'X', 5.0)]))
    traj = tokenize_trajectory(p, vocab)
    assert traj.patient_id == 'c'
    assert [v.time_days for v in traj.visits] == [0, 7]
    assert traj.visits[1].token_ids == tuple(sorted([
        vocab.token_to_id['diagnosis:A'], vocab.token_to_id['lab:X:bin0']]))
    # demographics go into the first visit
    assert vocab.token_to_id['demographic:sex:1'] in traj.visits[0].token_ids
    for visit in traj.visits:
        assert len(set(visit.token_ids)) == len(visit.token_ids)
        assert vocab.pad_id not in visit.token_ids
        assert vocab.sep_id not in visit.token_ids


def test_unknown_codes_dropped(train):
    vocab = build_vocabulary(train)
    stats = Counter()
    p = patient('c',
                (0, [(DIAGNOSIS, 'A'), (DIAGNOSIS, 'Z')]),
                (5, [(DIAGNOSIS, 'Z')]),
                (9, [(DIAGNOSIS, 'B')]))
    traj = tokenize_trajectory(p, vocab, stats)
    assert [v.time_days for v in traj.visits] == [0, 9]
    assert stats['unknown_events'] == 2
    assert stats['dropped_visits'] == 1


def test_short_trajectories_excluded(train):
    vocab = build_vocabulary(train)
    stats = Counter()
    p = patient('c', (0, [(DIAGNOSIS, 'A')]), (5, [(DIAGNOSIS, 'Z')]),
                demographics=())
    assert tokenize_cohort([p] + train, vocab, stats)[0].patient_id == 'a'
    assert stats['excluded_patients'] == 1


def test_describe_roundtrip(train):
    vocab = build_vocabulary(train, n_bins=10, age_bins=2)
    assert vocab.describe(vocab.token_to_id['lab:X:bin3']) == ('lab', 'X', 3)
    assert vocab.describe(vocab.token_to_id['age:years:bin1']) == \
        ('age', 'years', 1)
    assert vocab.describe(vocab.token_to_id['diagnosis:A']) == \
        ('diagnosis', 'A', None)
    assert vocab.describe(vocab.token_to_id['demographic:sex:0']) == \
        ('demographic', 'sex:0', None)
    assert vocab.describe(vocab.sep_id) == (SEP, None, None)
    for i in range(len(vocab)):
        assert vocab.token_to_id[vocab.decode(i)] == i


def test_save_load(tmp_path, train):
    vocab = build_vocabulary(train)
    vocab.meta['config_hash'] = 'abc'
    vocab.save(str(tmp_path / 'a.tsv'))
    loaded = Vocabulary.load(str(tmp_path / 'a.tsv'))
    assert loaded.tokens == vocab.tokens
    assert loaded.meta['config_hash'] == 'abc'
    for base, edges in vocab.bin_edges.items():
        assert list(loaded.bin_edges[base]) == list(edges)
    loaded.save(str(tmp_path / 'b.tsv'))
    assert (tmp_path / 'a.tsv').read_bytes() == \
        (tmp_path / 'b.tsv').read_bytes()


def test_invalid_vocabulary(tmp_path):
    with pytest.raises(DataError):
        Vocabulary(['a', SEP], {})
    with pytest.raises(DataError):
        Vocabulary([PAD, SEP, 'x', 'x'], {})
    with pytest.raises(DataError):
        Vocabulary([PAD, SEP], {'lab:X': [2.0, 1.0]})
    with pytest.raises(DataError):
        Vocabulary.load(str(tmp_path / 'missing.tsv'))


def test_train_only_vocabulary(train):
    test = [patient('t', (0, [(DIAGNOSIS, 'Q')]), (5, [(DIAGNOSIS, 'A')]))]
    a = build_vocabulary(train)
    b = build_vocabulary(train + test)
    assert set(b.tokens) - set(a.tokens) == {'diagnosis:Q'}
