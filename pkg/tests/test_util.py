from collections import OrderedDict

import numpy as np
import pytest

from nextvisit.plot.figures import plot_pr_curves, plot_sweep
from nextvisit.util import yaml
from nextvisit.util.export import (
    import_params, read_records, read_table, write_records, write_table)
from nextvisit.util.misc import cachedproperty, format_counts
from nextvisit.util.numdiff import jac_central, relative_error


def test_dump_line_numpy():
    record = OrderedDict([('b', np.float64(0.25)), ('a', np.int64(3)),
                          ('c', [np.bool_(True), None]), ('d', (1, 2)),
                          ('e', np.arange(3))])
    line = yaml.dump_line(record)
    assert '\n' not in line
    assert line.index('b:') < line.index('a:')
    assert yaml.safe_load(line) == {
        'b': 0.25, 'a': 3, 'c': [True, None], 'd': [1, 2], 'e': [0, 1, 2]}


def test_records_append(tmp_path):
    path = str(tmp_path / 'sub' / 'metrics.log')
    write_records(path, [{'x': 1}])
    write_records(path, [{'x': 2}, {'x': 0.1, 'y': 'a b'}], append=True)
    assert read_records(path) == [{'x': 1}, {'x': 2}, {'x': 0.1, 'y': 'a b'}]
    write_records(path, [{'x': 5}])
    assert read_records(path) == [{'x': 5}]


def test_save_file_keeps_old_on_error(tmp_path):
    path = str(tmp_path / 'data.yml')
    yaml.save_file(path, {'a': 1})
    with pytest.raises(yaml.YAMLError):
        yaml.save_file(path, {'a': object()})
    assert yaml.load_file(path) == {'a': 1}


def test_tables(tmp_path):
    path = str(tmp_path / 'table.tsv')
    write_table(path, ('name', 'value'), [['a', 0.1], ['b', None]],
                comments=['config_hash: abc'])
    with open(path) as f:
        assert f.readline() == '# config_hash: abc\n'
    header, rows = read_table(path)
    assert header == ['name', 'value']
    assert rows == [['a', '0.1'], ['b', '']]


def test_import_params(tmp_path):
    path = tmp_path / 'params.txt'
    path.write_text('# comment\nn_layer = 2;\nlearning_rate := 1e-3\n'
                    'decay_lr True\n')
    assert import_params(str(path)) == {
        'n_layer': 2, 'learning_rate': 1e-3, 'decay_lr': True}
    (tmp_path / 'x.json').write_text('{}')
    with pytest.raises(ValueError):
        import_params(str(tmp_path / 'x.json'))


def test_cachedproperty():
    calls = []

    class Session:
        @cachedproperty
        def vocab(self):
            calls.append(1)
            return ['<pad>']
    session = Session()
    assert session.vocab is session.vocab
    assert len(calls) == 1
    session.vocab = 'shared'
    assert session.vocab == 'shared'
    del session.vocab
    assert session.vocab == ['<pad>']
    assert len(calls) == 2


def test_format_counts():
    assert format_counts({'b': 2, 'a': 1, 'c': 0}) == 'a=1, b=2'
    assert format_counts({}) == ''


def test_numdiff():
    jac = jac_central(lambda x: np.sin(x[0]) * x[1], [0.3, 2.0], 1e-5)
    assert np.allclose(jac, [2.0 * np.cos(0.3), np.sin(0.3)], atol=1e-8)
    assert relative_error([1, 2], [1, 2]) == 0
    assert relative_error([0, 0], [0, 0]) == 0
    assert relative_error([3, 4], [0, 0]) == 1


def test_figures(tmp_path):
    rows = [(0.1, 0.3, 1.0, 0), (0.5, 0.6, 0.7, 1), (0.9, 1.0, 0.1, 0)]
    path = str(tmp_path / 'fig' / 'pr.png')
    plot_pr_curves({'730d': rows, '1825d': rows[1:]}, path, title='x')
    with open(path, 'rb') as f:
        assert f.read(8) == b'\x89PNG\r\n\x1a\n'
    sweep = [
        {'delta': '0.5', 'precision': '0.8', 'recall': '0.7',
         'on_time_rate': '0.6'},
        {'delta': '1.0', 'precision': '0.9', 'recall': '0.6',
         'on_time_rate': ''},
    ]
    path = str(tmp_path / 'sweep.png')
    plot_sweep(sweep, path)
    with open(path, 'rb') as f:
        assert f.read(4) == b'\x89PNG'
