"""
YAML input and output.

nextvisit writes three kinds of YAML: config files, checkpoint manifests and
record files. Record files (cohorts, ``loss.log``, ``metrics.log``) hold one
flow mapping per line so that they can be appended to and grepped.

Compared to plain PyYAML, the dumper used here also accepts numpy scalars and
arrays, tuples and :class:`OrderedDict`, which regularly end up in records
(e.g. ``scores[i]`` is a ``numpy.float64``). Files are only opened after the
data has been serialized, so a failing dump leaves an existing file intact.
"""

__all__ = [
    'load_file',
    'save_file',
    'load_resource',
    'safe_load',
    'safe_dump',
    'dump_line',
    'load_lines',
    'save_lines',
    'YAMLError',
]

import os
from collections import OrderedDict

from importlib_resources import read_binary

import numpy as np
import yaml


SafeLoader = getattr(yaml, 'CSafeLoader', yaml.SafeLoader)
SafeDumper = getattr(yaml, 'CSafeDumper', yaml.SafeDumper)

YAMLError = yaml.error.YAMLError


class RecordDumper(SafeDumper):
    """Safe dumper that knows about numpy types and ordered mappings."""


def _represent_ordered(dumper, data):
    return dumper.represent_mapping(
        yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, data.items())


def _represent_numpy_scalar(dumper, value):
    return dumper.represent_data(value.item())


def _represent_numpy_array(dumper, array):
    return dumper.represent_list(array.tolist())


RecordDumper.add_representer(OrderedDict, _represent_ordered)
RecordDumper.add_representer(tuple, SafeDumper.represent_list)
RecordDumper.add_representer(np.ndarray, _represent_numpy_array)
RecordDumper.add_multi_representer(np.generic, _represent_numpy_scalar)


def safe_load(stream):
    return yaml.load(stream, SafeLoader)


def safe_dump(data, stream=None, **kwds):
    """Dump ``data`` to ``stream``, or return the text if no stream is
    given."""
    return yaml.dump(data, stream, RecordDumper, **kwds)


def load_file(filename):
    with open(filename, 'rb') as f:
        return safe_load(f)


def save_file(filename, data, **kwargs):
    """Write a block style YAML document, creating parent folders."""
    kwargs.setdefault('default_flow_style', False)
    kwargs.setdefault('sort_keys', False)
    _write(filename, safe_dump(data, **kwargs), 'wt')


def load_resource(package, resource):
    """Load a YAML document shipped as package data."""
    return safe_load(read_binary(package, resource))


def dump_line(record):
    """One record as single-line flow mapping, without newline."""
    text = safe_dump(record, default_flow_style=True, width=2**31 - 1,
                     sort_keys=False)
    return text.rstrip('\n')


def save_lines(filename, records, mode='wt'):
    """Write (``mode='wt'``) or append (``mode='at'``) records, one per
    line."""
    _write(filename, ''.join(dump_line(r) + '\n' for r in records), mode)


def load_lines(filename):
    """Iterate over the records of a record file, skipping blank lines."""
    with open(filename, 'rt', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                yield safe_load(line)


def _write(filename, text, mode):
    folder = os.path.dirname(filename)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(filename, mode, encoding='utf-8') as f:
        f.write(text)
