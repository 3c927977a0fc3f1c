"""
Line-delimited cohort files.

Every line holds one patient as a YAML flow mapping with the fields:

``id``
    patient id (string)
``demographics``
    list of demographic codes, e.g. ``[sex:1, race:3]``
``visits``
    list of mappings ``{time_days: <int>, events: [...]}``, where every event
    is a list ``[kind, code]`` or, for continuous kinds, ``[kind, code,
    value]``

Events are written in canonical order (kind, code, value) so that writing a
loaded cohort reproduces the file byte for byte.
"""

__all__ = [
    'patient_to_record',
    'patient_from_record',
    'save_cohort',
    'load_cohort',
]

import os

from nextvisit.core.errors import DataError
from nextvisit.util import yaml
from nextvisit.cohort.synth import (
    DEMOGRAPHIC, PatientTrajectory, Visit, make_event, check_trajectory)


def _event_sort_key(event):
    return (event.kind, event.code,
            float('-inf') if event.value is None else event.value)


def patient_to_record(patient):
    """Convert a :class:`PatientTrajectory` into a plain record."""
    return {
        'id': patient.patient_id,
        'demographics': sorted(e.code for e in patient.demographics),
        'visits': [
            {
                'time_days': int(visit.time_days),
                'events': [
                    [e.kind, e.code] if e.value is None
                    else [e.kind, e.code, float(e.value)]
                    for e in sorted(visit.events, key=_event_sort_key)
                ],
            }
            for visit in patient.visits
        ],
    }


def patient_from_record(record):
    """Inverse of :func:`patient_to_record`, checks all invariants."""
    try:
        patient = PatientTrajectory(
            patient_id=str(record['id']),
            visits=[
                Visit(int(v['time_days']),
                      frozenset(make_event(*e) for e in v['events']))
                for v in record['visits']
            ],
            demographics=frozenset(
                make_event(DEMOGRAPHIC, code)
                for code in record.get('demographics') or ()),
        )
    except (KeyError, TypeError) as e:
        raise DataError("Malformed patient record: {!r}".format(e))
    return check_trajectory(patient)


def save_cohort(filename, patients):
    """Write patients to a line-delimited cohort file."""
    yaml.save_lines(filename, map(patient_to_record, patients))


def load_cohort(filename):
    """Read a cohort file written by :func:`save_cohort`."""
    if not os.path.isfile(filename):
        raise DataError("Cohort file not found: {!r}".format(filename))
    try:
        return [patient_from_record(r) for r in yaml.load_lines(filename)]
    except yaml.YAMLError as e:
        raise DataError("Cannot parse {!r}: {}".format(filename, e))
