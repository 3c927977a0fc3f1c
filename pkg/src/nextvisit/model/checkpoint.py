"""
Checkpoint files.

A checkpoint ``NAME.pt`` is a :func:`torch.save` archive with the keys
``model_args``, ``model``, ``optimizer``, ``step``, ``best_val_loss`` and
``config_hash``. Next to it, ``NAME.manifest.yml`` lists the config hash, the
model arguments and name, shape and dtype of every parameter tensor.
"""

__all__ = [
    'save_checkpoint',
    'load_checkpoint',
    'load_model',
    'manifest_path',
]

import logging
import os

import torch

from nextvisit.core.errors import DataError
from nextvisit.model.transformer import ModelConfig, NextVisitTransformer
from nextvisit.util import yaml


def manifest_path(path):
    return os.path.splitext(path)[0] + '.manifest.yml'


def save_checkpoint(path, model, optimizer=None, *, step=0,
                    best_val_loss=None, config_hash=None):
    """Write checkpoint and manifest. The checkpoint replaces an existing
    file only after it was written completely."""
    data = {
        'model_args': dict(model.config._asdict()),
        'model': model.state_dict(),
        'optimizer': optimizer.state_dict() if optimizer else None,
        'step': int(step),
        'best_val_loss': best_val_loss,
        'config_hash': config_hash,
    }
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    tmp = path + '.tmp'
    torch.save(data, tmp)
    os.replace(tmp, path)
    yaml.save_file(manifest_path(path), {
        'config_hash': config_hash,
        'step': int(step),
        'best_val_loss': best_val_loss,
        'model_args': data['model_args'],
        'parameters': [
            {'name': name, 'shape': list(t.shape),
             'dtype': str(t.dtype).replace('torch.', '')}
            for name, t in data['model'].items()
        ],
    })
    logging.info("Saved checkpoint {!r} at step {}".format(path, step))


def load_checkpoint(path, device='cpu'):
    """Read a checkpoint archive written by :func:`save_checkpoint`."""
    if not os.path.isfile(path):
        raise DataError("Checkpoint not found: {!r}".format(path))
    try:
        return torch.load(path, map_location=device, weights_only=True)
    except (RuntimeError, EOFError, OSError) as e:
        raise DataError("Cannot read checkpoint {!r}: {}".format(path, e))


def load_model(path, device='cpu'):
    """Return ``(model, checkpoint)`` with the model in eval mode."""
    checkpoint = load_checkpoint(path, device)
    config = ModelConfig(**checkpoint['model_args']).validate()
    model = NextVisitTransformer(config)
    state = checkpoint['model']
    dtype = next(iter(state.values())).dtype
    model.to(device=device, dtype=dtype)
    model.load_state_dict(state)
    model.eval()
    return model, checkpoint
