"""
Config loading and serialization utilities.

The configuration is assembled from several layers that are merged
recursively, later layers taking precedence:

1. the package default ``nextvisit/data/config.yml``
2. ``nextvisit.yml`` in the current directory (skipped if ``isolated``)
3. every file passed on the command line, in order

Command line files may be nested YAML documents or flat parameter files (see
:mod:`nextvisit.util.export`) using nanoGPT-style hyperparameter names, e.g.
``n_embd``, ``warmup_iters`` or ``temporal_decay``.
"""

__all__ = [
    'load',
    'ConfigSection',
    'FLAT_KEYS',
    'update_recursive',
    'route_flat',
    'config_hash',
    'dump',
]

import copy
import hashlib
import os

from nextvisit.core.errors import ConfigError
from nextvisit.util import yaml
from nextvisit.util.export import import_params, FLAT_EXTENSIONS


local_config_path = 'nextvisit.yml'


# Flat (hyperparameter table) names and their place in the nested config:
FLAT_KEYS = {
    'n_embd':                       ('model', 'n_embd'),
    'n_head':                       ('model', 'n_head'),
    'n_layer':                      ('model', 'n_layer'),
    'block_size':                   ('model', 'block_size'),
    'bias':                         ('model', 'bias'),
    'dropout':                      ('model', 'dropout'),
    'rotary_base':                  ('model', 'rotary_base'),
    'temporal_decay':               ('loss', 'temporal_decay'),
    'min_weight':                   ('loss', 'min_weight'),
    'learning_rate':                ('optim', 'learning_rate'),
    'min_lr':                       ('optim', 'min_lr'),
    'warmup_iters':                 ('optim', 'warmup_iters'),
    'lr_decay_iters':               ('optim', 'lr_decay_iters'),
    'max_iters':                    ('optim', 'max_iters'),
    'beta1':                        ('optim', 'beta1'),
    'beta2':                        ('optim', 'beta2'),
    'weight_decay':                 ('optim', 'weight_decay'),
    'grad_clip':                    ('optim', 'grad_clip'),
    'gradient_accumulation_steps':  ('optim', 'gradient_accumulation_steps'),
    'batch_size':                   ('optim', 'batch_size'),
    'decay_lr':                     ('optim', 'decay_lr'),
    'eval_interval':                ('train', 'eval_interval'),
    'seed':                         ('seed',),
}

# Accepted for paste-compatibility, checked but otherwise not used:
FLAT_CHECKS = {
    'rotary': lambda v: v is True,
    'optimizer': lambda v: str(v).lower() == 'adamw',
    'n_tokens': lambda v: isinstance(v, int) and v > 0,
}


def update_recursive(a, b):
    """Recursively merge two dicts. Updates a."""
    if not isinstance(b, dict):
        return b
    for k, v in b.items():
        if k in a and isinstance(a[k], dict):
            a[k] = update_recursive(a[k], v)
        else:
            a[k] = v
    return a


def route_flat(flat):
    """Convert a flat ``{name: value}`` dict into the nested config layout
    using :data:`FLAT_KEYS`."""
    nested = {}
    for name, value in flat.items():
        if name in FLAT_CHECKS:
            if not FLAT_CHECKS[name](value):
                raise ConfigError(
                    "Unsupported value for {!r}: {!r}".format(name, value))
            continue
        try:
            path = FLAT_KEYS[name]
        except KeyError:
            raise ConfigError("Unknown parameter: {!r}".format(name))
        section = nested
        for key in path[:-1]:
            section = section.setdefault(key, {})
        section[path[-1]] = value
    return nested


def _load_file(path):
    try:
        _, ext = os.path.splitext(path.lower())
        data = import_params(path)
    except FileNotFoundError:
        return {}
    except (ValueError, yaml.YAMLError) as e:
        raise ConfigError(str(e))
    if ext in FLAT_EXTENSIONS:
        data = route_flat(data)
    if not isinstance(data, dict):
        raise ConfigError("Config file {!r} is not a mapping".format(path))
    return data


def load(*config_files, isolated=False, overrides=None):
    """Read config files and recursively merge them with the package default
    config. Files given explicitly must exist."""
    for path in config_files:
        if not os.path.isfile(path):
            raise ConfigError("Config file not found: {!r}".format(path))
    resources = [
        yaml.load_resource('nextvisit.data', 'config.yml'),   # package default
    ] + ([] if isolated else [
        _load_file(local_config_path),                          # current dir
    ])
    resources.extend(map(_load_file, config_files))             # command line
    resources.append(overrides or {})
    config = {}
    for merge in resources:
        if merge:
            update_recursive(config, copy.deepcopy(merge))
    return ConfigSection(config)


def dump(config):
    """Serialize a config (section or dict) to canonical YAML text."""
    data = config.to_dict() if isinstance(config, ConfigSection) else config
    return yaml.safe_dump(data, default_flow_style=False, sort_keys=True)


def config_hash(config):
    """Short content hash of the resolved config, embedded into artifacts."""
    return hashlib.sha256(dump(config).encode('utf-8')).hexdigest()[:12]


class ConfigSection:

    """
    Wrapper class for a config section (dict-like structure in YAML) that
    supports attribute access to config entries.

    Attribute access is overloaded to return subsections as
    :class:`ConfigSection` and scalar entries as plain values.
    """

    def __init__(self, value, parent=None, name=''):
        self._name = name
        self._value = value
        self._subsections = {
            name: ConfigSection(value, self, name)
            for name, value in self._value.items()
            if isinstance(value, dict)
        }

    def get(self, name, default=None):
        if name in self._subsections:
            return self._subsections[name]
        return self._value.get(name, default)

    def keys(self):
        return self._value.keys()

    def items(self):
        return [(name, self[name]) for name in self._value]

    def __iter__(self):
        return iter(self._value)

    def __len__(self):
        return len(self._value)

    def __contains__(self, name):
        return name in self._value

    def __getitem__(self, name):
        if name in self._subsections:
            return self._subsections[name]
        return self._value[name]

    def __getattr__(self, name):
        if name.startswith('_') or name not in self._value:
            raise AttributeError(name)
        if name in self._subsections:
            return self._subsections[name]
        return self._value[name]

    def __setitem__(self, name, val):
        if name in self._subsections or isinstance(val, dict):
            raise NotImplementedError('Can only update scalar values!')
        self._value[name] = val

    def __setattr__(self, name, val):
        if name.startswith('_'):
            super().__setattr__(name, val)
        else:
            self[name] = val

    def to_dict(self):
        """Return a deep copy of the underlying data."""
        return copy.deepcopy(self._value)

    def __repr__(self):
        return "<{} {}({!r})>".format(
            self.__class__.__name__, self._name, self._value)
