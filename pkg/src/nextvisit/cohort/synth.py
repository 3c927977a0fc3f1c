"""
Deterministic generator of synthetic longitudinal cohorts.

A cohort is a list of :class:`PatientTrajectory` objects, each a chronological
list of :class:`Visit` records holding a set of :class:`Event` descriptors.
Background events are drawn from Zipf-like code popularities. On top of that,
:class:`PlantedRule` objects make known dynamics happen: whenever one of the
trigger codes occurs in visit ``i``, the effect code occurs in visit
``i + lag_visits`` with the rule's probability (and, for chronic rules, in
every visit after that).

All randomness derives from ``CohortConfig.seed``. Global code tables use the
root seed sequence, patient ``i`` uses the spawned child ``(seed, i)``, so
patients can be generated independently and in any order.
"""

__all__ = [
    'DEMOGRAPHIC',
    'AGE',
    'DIAGNOSIS',
    'MEDICATION',
    'LAB',
    'EVENT_KINDS',
    'CONTINUOUS_KINDS',
    'Event',
    'Visit',
    'PatientTrajectory',
    'PlantedRule',
    'CohortConfig',
    'make_event',
    'check_trajectory',
    'generate_cohort',
    'generate_patient',
    'split_cohort',
    'event_codes',
    'binomial_bound',
]

import logging
import math
from collections import namedtuple

import numpy as np

from nextvisit.core.errors import ConfigError, DataError


DEMOGRAPHIC = 'demographic'
AGE = 'age_bin'
DIAGNOSIS = 'diagnosis_code'
MEDICATION = 'medication_code'
LAB = 'lab_code_with_value'

EVENT_KINDS = (DEMOGRAPHIC, AGE, DIAGNOSIS, MEDICATION, LAB)
CONTINUOUS_KINDS = (AGE, LAB)

ONCE = 'once'
CHRONIC_REPEAT = 'chronic_repeat'

SPLIT_NAMES = ('train', 'val', 'test')


Event = namedtuple('Event', ['kind', 'code', 'value'], defaults=(None,))
Event.__doc__ = """
A single clinical event. ``value`` is the real measurement for continuous
kinds (lab result, age in years) and ``None`` otherwise."""

Visit = namedtuple('Visit', ['time_days', 'events'])
Visit.__doc__ = """
Timestamped encounter. ``time_days`` counts days since the patient's first
visit, ``events`` is a frozenset of :class:`Event`."""

PatientTrajectory = namedtuple(
    'PatientTrajectory', ['patient_id', 'visits', 'demographics'])
PatientTrajectory.__doc__ = """
One patient: chronological visits and the static demographic events."""


def make_event(kind, code, value=None):
    """Create an :class:`Event`, checking its invariants."""
    if kind not in EVENT_KINDS:
        raise DataError("Unknown event kind: {!r}".format(kind))
    if not code:
        raise DataError("Empty event code for kind {!r}".format(kind))
    if (value is not None) != (kind in CONTINUOUS_KINDS):
        raise DataError(
            "Event {}:{} must {}carry a value".format(
                kind, code, '' if kind in CONTINUOUS_KINDS else 'not '))
    if value is not None:
        value = float(value)
    return Event(kind, str(code), value)


def check_trajectory(patient):
    """Raise :class:`DataError` if ``patient`` violates trajectory
    invariants."""
    visits = patient.visits
    if len(visits) < 2:
        raise DataError("Patient {} has fewer than 2 visits"
                        .format(patient.patient_id))
    if visits[0].time_days != 0:
        raise DataError("Patient {} does not start at day 0"
                        .format(patient.patient_id))
    for a, b in zip(visits, visits[1:]):
        if b.time_days <= a.time_days:
            raise DataError("Visit times of patient {} are not strictly "
                            "increasing".format(patient.patient_id))
    for visit in visits:
        if not visit.events:
            raise DataError("Patient {} has an empty visit at day {}"
                            .format(patient.patient_id, visit.time_days))
    return patient


def event_codes(events):
    """Set of codes of the coded (diagnosis, medication) events."""
    return {e.code for e in events if e.kind in (DIAGNOSIS, MEDICATION)}


class PlantedRule(namedtuple('PlantedRule', [
        'name', 'trigger', 'effect', 'lag_visits',
        'persistence', 'probability'])):

    """Known dynamics injected into a synthetic cohort."""

    __slots__ = ()

    @classmethod
    def from_config(cls, data):
        data = dict(data)
        try:
            rule = cls(
                name=str(data.get('name') or data['effect']),
                trigger=frozenset(map(str, data['trigger'])),
                effect=str(data['effect']),
                lag_visits=int(data.get('lag_visits', 1)),
                persistence=str(data.get('persistence', ONCE)),
                probability=float(data.get('probability', 1.0)),
            )
        except KeyError as e:
            raise ConfigError("Planted rule is missing {}".format(e))
        return rule.validate()

    def validate(self):
        if not self.trigger:
            raise ConfigError("Rule {!r} has no trigger codes"
                              .format(self.name))
        if self.lag_visits < 1:
            raise ConfigError("Rule {!r}: lag_visits must be >= 1"
                              .format(self.name))
        if self.persistence not in (ONCE, CHRONIC_REPEAT):
            raise ConfigError("Rule {!r}: unknown persistence {!r}"
                              .format(self.name, self.persistence))
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("Rule {!r}: probability must be in [0, 1]"
                              .format(self.name))
        return self


class CohortConfig:

    """
    Parameters of the synthetic cohort.

    :ivar int n_patients: number of trajectories
    :ivar dict vocab_sizes: number of codes per kind, keys ``diagnosis``,
        ``medication``, ``lab``
    :ivar dict demographics: number of categories per demographic field
    :ivar float mean_visits: mean number of visits per patient (>= 2)
    :ivar float mean_gap_days: mean of the geometric inter-visit gaps
    :ivar list planted_rules: list of :class:`PlantedRule`
    :ivar int seed: root seed
    """

    def __init__(self, n_patients, vocab_sizes, *,
                 demographics=None, mean_visits=18, max_visits=60,
                 mean_gap_days=120, age_range=(20, 85),
                 mean_diagnoses=2.5, mean_medications=1.5, mean_labs=2.0,
                 zipf_exponent=1.0, chronic_per_patient=2,
                 chronic_recurrence=0.6, planted_rules=(), seed=0):
        self.n_patients = int(n_patients)
        self.vocab_sizes = {k: int(v) for k, v in vocab_sizes.items()}
        self.demographics = dict(demographics or {'sex': 2})
        self.mean_visits = float(mean_visits)
        self.max_visits = int(max_visits)
        self.mean_gap_days = float(mean_gap_days)
        self.age_range = tuple(map(float, age_range))
        self.mean_diagnoses = float(mean_diagnoses)
        self.mean_medications = float(mean_medications)
        self.mean_labs = float(mean_labs)
        self.zipf_exponent = float(zipf_exponent)
        self.chronic_per_patient = int(chronic_per_patient)
        self.chronic_recurrence = float(chronic_recurrence)
        self.planted_rules = [
            r if isinstance(r, PlantedRule) else PlantedRule.from_config(r)
            for r in planted_rules
        ]
        self.seed = int(seed)

    @classmethod
    def from_config(cls, section, seed):
        """Create from the ``cohort`` config section (or a plain dict)."""
        data = section.to_dict() if hasattr(section, 'to_dict') else section
        try:
            vocab_sizes = {
                'diagnosis': data['diagnosis_codes'],
                'medication': data['medication_codes'],
                'lab': data['lab_codes'],
            }
            n_patients = data['n_patients']
        except KeyError as e:
            raise ConfigError("cohort config is missing {}".format(e))
        options = {
            k: data[k] for k in (
                'demographics', 'mean_visits', 'max_visits', 'mean_gap_days',
                'age_range', 'mean_diagnoses', 'mean_medications',
                'mean_labs', 'zipf_exponent', 'chronic_per_patient',
                'chronic_recurrence')
            if data.get(k) is not None
        }
        return cls(
            n_patients, vocab_sizes,
            planted_rules=list(data.get('planted_rules') or ()),
            seed=seed, **options).validate()

    def validate(self):
        if self.n_patients <= 0:
            raise ConfigError("n_patients must be positive")
        for kind in ('diagnosis', 'medication', 'lab'):
            if self.vocab_sizes.get(kind, 0) <= 0:
                raise ConfigError("Empty {} vocabulary".format(kind))
        if any(int(n) <= 0 for n in self.demographics.values()):
            raise ConfigError("Demographic fields need >= 1 category")
        if self.mean_visits < 2 or self.max_visits < 2:
            raise ConfigError("Trajectories need at least 2 visits")
        if self.mean_gap_days < 1:
            raise ConfigError("mean_gap_days must be >= 1")
        lo, hi = self.age_range
        if not 0 <= lo <= hi:
            raise ConfigError("Invalid age_range: {}".format(self.age_range))
        if min(self.mean_diagnoses, self.mean_medications,
               self.mean_labs) < 0:
            raise ConfigError("Mean event counts must be non-negative")
        if not 0.0 <= self.chronic_recurrence <= 1.0:
            raise ConfigError("chronic_recurrence must be in [0, 1]")
        tables = CodeTables(self)
        known = set(tables.diagnoses) | set(tables.medications)
        for rule in self.planted_rules:
            unknown = (rule.trigger | {rule.effect}) - known
            if unknown:
                raise ConfigError("Rule {!r} uses unknown codes: {}".format(
                    rule.name, ', '.join(sorted(unknown))))
        if self.chronic_per_patient > len(tables.background_diagnoses):
            raise ConfigError("chronic_per_patient exceeds the number of "
                              "background diagnoses")
        return self


class CodeTables:

    """Code names, background popularities and lab distributions, derived
    from the config and the root seed only."""

    def __init__(self, config):
        sizes = config.vocab_sizes
        self.diagnoses = ['D{:04d}'.format(i) for i in range(sizes['diagnosis'])]
        self.medications = [
            'M{:04d}'.format(i) for i in range(sizes['medication'])]
        self.labs = ['L{:03d}'.format(i) for i in range(sizes['lab'])]
        effects = {r.effect for r in config.planted_rules}
        self.background_diagnoses = [c for c in self.diagnoses
                                     if c not in effects]
        self.background_medications = [c for c in self.medications
                                       if c not in effects]
        s = config.zipf_exponent
        self.p_diagnoses = _zipf(len(self.background_diagnoses), s)
        self.p_medications = _zipf(len(self.background_medications), s)
        self.p_labs = _zipf(len(self.labs), s)
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        self.lab_mean = rng.uniform(1.0, 100.0, size=len(self.labs))
        self.lab_sd = self.lab_mean * rng.uniform(0.05, 0.3, size=len(self.labs))
        medications = set(self.medications)
        self.kind_of = lambda code: (
            MEDICATION if code in medications else DIAGNOSIS)


def _zipf(n, s):
    if n == 0:
        return np.zeros(0)
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate_cohort(config):
    """Generate ``config.n_patients`` trajectories. Calling this twice with
    the same config yields identical cohorts."""
    config.validate()
    tables = CodeTables(config)
    patients = [generate_patient(config, tables, index)
                for index in range(config.n_patients)]
    logging.info("Generated {} synthetic patients with {} visits".format(
        len(patients), sum(len(p.visits) for p in patients)))
    return patients


def generate_patient(config, tables, index):
    """Generate the trajectory of patient number ``index``."""
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(index,)))

    n_visits = min(config.max_visits,
                   2 + int(rng.poisson(config.mean_visits - 2)))
    gaps = rng.geometric(1.0 / config.mean_gap_days, size=n_visits - 1)
    times = np.concatenate([[0], np.cumsum(gaps)]).astype(int)

    demographics = frozenset(
        make_event(DEMOGRAPHIC, '{}:{}'.format(
            field, int(rng.integers(config.demographics[field]))))
        for field in sorted(config.demographics))

    age0 = rng.uniform(*config.age_range)
    chronic = list(rng.choice(
        tables.background_diagnoses, size=config.chronic_per_patient,
        replace=False, p=tables.p_diagnoses))

    scheduled = {}          # visit index -> set of effect codes
    active = set()          # chronic effects that already had their onset
    visits = []
    for i, t in enumerate(times):
        events = {make_event(AGE, 'years', round(age0 + t / 365.25, 2))}
        events.update(_sample_coded(
            rng, DIAGNOSIS, tables.background_diagnoses, tables.p_diagnoses,
            config.mean_diagnoses))
        events.update(_sample_coded(
            rng, MEDICATION, tables.background_medications,
            tables.p_medications, config.mean_medications))
        events.update(
            make_event(DIAGNOSIS, code) for code in chronic
            if rng.random() < config.chronic_recurrence)
        for _ in range(int(rng.poisson(config.mean_labs))):
            j = int(rng.choice(len(tables.labs), p=tables.p_labs))
            value = rng.normal(tables.lab_mean[j], tables.lab_sd[j])
            events.add(make_event(LAB, tables.labs[j], round(value, 2)))

        effects = scheduled.pop(i, set()) | active
        events.update(make_event(tables.kind_of(c), c) for c in effects)

        codes = event_codes(events)
        for rule in config.planted_rules:
            if rule.trigger & codes and rng.random() < rule.probability:
                scheduled.setdefault(i + rule.lag_visits, set()).add(rule.effect)
        chronic_effects = {r.effect for r in config.planted_rules
                           if r.persistence == CHRONIC_REPEAT}
        active |= codes & chronic_effects

        visits.append(Visit(int(t), frozenset(events)))

    return check_trajectory(PatientTrajectory(
        'P{:06d}'.format(index), visits, demographics))


def _sample_coded(rng, kind, codes, p, mean):
    count = int(rng.poisson(mean))
    if count == 0 or not codes:
        return set()
    picks = rng.choice(len(codes), size=count, p=p)
    return {make_event(kind, codes[j]) for j in picks}


def split_cohort(patients, fractions, seed):
    """
    Partition ``patients`` into disjoint ``train``, ``val`` and ``test``
    lists. Sizes are ``round(f * n)`` for train and val, the remainder goes to
    test, which keeps every split within one patient of its fraction.
    Patients keep their original relative order within each split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("Need three non-negative split fractions, got {}"
                          .format(fractions))
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("Split fractions must sum to 1, got {}"
                          .format(sum(fractions)))
    n = len(patients)
    n_train = int(round(fractions[0] * n))
    n_val = min(n - n_train, int(round(fractions[1] * n)))
    order = np.random.default_rng(seed).permutation(n)
    parts = (order[:n_train], order[n_train:n_train+n_val],
             order[n_train+n_val:])
    return {
        name: [patients[i] for i in sorted(part)]
        for name, part in zip(SPLIT_NAMES, parts)
    }


def binomial_bound(n, p, sigmas=3):
    """Half width of the ``sigmas``-sigma interval of a binomial rate."""
    return sigmas * math.sqrt(p * (1 - p) / n) if n else float('inf')
