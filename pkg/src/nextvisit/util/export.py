"""
Functions for serializing parameters, records and tables to files.

Three text formats are used throughout nextvisit:

- *flat parameter files* (``.cfg``, ``.str``, ``.txt``) with one
  ``name = value`` (or ``name value``) assignment per line, so that
  hyperparameter tables can be pasted in directly,
- *record files*: one YAML flow mapping per line, see
  :func:`nextvisit.util.yaml.dump_line`,
- *tables*: tab-delimited text with a single header line.
"""

__all__ = [
    'import_params',
    'read_str_file',
    'parse_value',
    'write_records',
    'read_records',
    'write_table',
    'read_table',
]

import csv
import os
import re

import numpy as np

import nextvisit.util.yaml as yaml


FLAT_EXTENSIONS = ('.cfg', '.str', '.txt')


def import_params(filename, data_key=None):
    """Read a parameter file. YAML files are returned as (nested) dict, flat
    parameter files as a flat dict."""
    _, ext = os.path.splitext(filename.lower())
    if ext in ('.yml', '.yaml'):
        data = yaml.load_file(filename) or {}
        if data_key:
            data = data[data_key]
    elif ext in FLAT_EXTENSIONS:
        data = read_str_file(filename)
        if data is None:
            raise ValueError(
                "SyntaxError in {!r}. Expected lines of 'name = value'."
                .format(filename))
    else:
        raise ValueError(
            "Unknown file format for import: {!r}".format(filename))
    return data


def read_str_file(filename):
    """Read flat parameter file, return as dict. Returns ``None`` if the file
    contains lines that are not assignments."""
    with open(filename, encoding='utf-8') as f:
        try:
            return _parse_str_lines(f)
        except (ValueError, AttributeError):
            return None


def _parse_str_lines(lines):
    return dict(
        _parse_str_line(line)
        for line in map(str.strip, lines)
        if line and not line.startswith(('#', '!')))


RE_ASSIGN = re.compile(
    r'^([a-z_][a-z0-9_]*)\s*(?::?=\s*|\s+)(.*?);?$', re.IGNORECASE)


def _parse_str_line(line):
    m = RE_ASSIGN.match(line)
    if not m:
        raise ValueError("not an assignment: {!r}".format(line))
    k, v = m.groups()
    return k.lower(), parse_value(v)


RE_GROUPED_NUMBER = re.compile(r'^[+-]?\d{1,3}(,\d{3})+(\.\d*)?$')


def parse_value(text):
    """Parse a scalar from a flat parameter file. Understands booleans,
    thousands separators (``2,048``), and floats in exponent notation that
    YAML 1.1 would otherwise read as strings (``1e-7``)."""
    text = text.strip()
    if RE_GROUPED_NUMBER.match(text):
        text = text.replace(',', '')
    value = yaml.safe_load(text) if text else None
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def write_records(filename, records, append=False):
    """Write records (dicts) as line-delimited file."""
    yaml.save_lines(filename, records, mode='at' if append else 'wt')


def read_records(filename):
    """Read all records from a line-delimited file."""
    return list(yaml.load_lines(filename))


def write_table(filename, header, rows, comments=()):
    """Write tab-delimited table with a header line. Optional ``comments`` are
    emitted first, each prefixed by ``#``."""
    folder = os.path.dirname(filename)
    if folder:
        os.makedirs(folder, exist_ok=True)
    rows = [[_format_cell(c) for c in row] for row in rows]
    with open(filename, 'wt', encoding='utf-8', newline='') as f:
        for comment in comments:
            f.write('# {}\n'.format(comment))
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)


def read_table(filename):
    """Read tab-delimited table, return ``(header, rows)`` where rows are
    lists of strings. Comment lines starting with ``#`` are skipped."""
    with open(filename, encoding='utf-8', newline='') as f:
        lines = [line for line in f if line.strip() and not line.startswith('#')]
    reader = csv.reader(lines, delimiter='\t')
    header = next(reader)
    return header, list(reader)


def _format_cell(value):
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)
