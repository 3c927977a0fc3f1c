"""
Weighted multi-label next-visit objective.

For a separator predicting visit ``i+1`` with multi-hot target ``V`` and
predicted probabilities ``p``, the loss is::

    -sum_k w'_k * (V_k * log(p_k) + (1 - V_k) * log(1 - p_k))

where ``w'_k = max(delta**c_k, w_min)`` for positives that already occurred
in ``c_k`` history visits, and ``w'_k = 1`` for negatives. Probabilities are
clipped to ``[eps, 1-eps]`` before taking logs. The batch loss is the mean
over separator slots of this per-slot sum over the vocabulary.

With ``delta = 0`` the weight is 1 for a first occurrence and ``w_min`` for
every repetition.
"""

__all__ = [
    'LossConfig',
    'repeat_weight',
    'repeat_weights',
    'weighted_bce',
    'next_visit_loss',
    'batch_loss',
    'loss_and_grads',
]

import math
from collections import namedtuple

import numpy as np
import torch

from nextvisit.core.errors import ConfigError, DataError, NumericError


class LossConfig(namedtuple('LossConfig', [
        'temporal_decay', 'min_weight', 'eps'])):

    __slots__ = ()

    @classmethod
    def from_config(cls, section):
        try:
            conf = cls(float(section['temporal_decay']),
                       float(section['min_weight']),
                       float(section.get('eps', 1e-7)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError("Invalid loss config: {}".format(e))
        return conf.validate()

    def validate(self):
        if not 0 <= self.temporal_decay <= 1:
            raise ConfigError("temporal_decay must be in [0, 1]")
        if not 0 <= self.min_weight < 1:
            raise ConfigError("min_weight must be in [0, 1)")
        if not 0 < self.eps < 0.5:
            raise ConfigError("eps must be in (0, 0.5)")
        return self


def repeat_weight(count, delta, w_min):
    """Return ``max(delta**count, w_min)``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return max(float(delta) ** int(count), float(w_min))


def repeat_weights(counts, delta, w_min):
    """Vectorized :func:`repeat_weight`."""
    counts = np.asarray(counts, dtype=np.int64)
    return np.maximum(np.power(float(delta), counts), float(w_min))


def weighted_bce(probs, targets, weights):
    """
    Per-slot weighted binary cross-entropy summed over the last axis.
    Weights only apply to positives. ``probs`` must already be clipped.
    """
    if probs.shape != targets.shape or probs.shape != weights.shape:
        raise DataError("Shape mismatch: probs {}, targets {}, weights {}"
                        .format(tuple(probs.shape), tuple(targets.shape),
                                tuple(weights.shape)))
    w = torch.where(targets > 0, weights, torch.ones_like(weights))
    ll = targets * torch.log(probs) + (1 - targets) * torch.log(1 - probs)
    return -(w * ll).sum(-1)


def next_visit_loss(logits, targets, weights, eps=1e-7):
    """Mean over slots of :func:`weighted_bce` on ``sigmoid(logits)``."""
    probs = torch.sigmoid(logits).clamp(eps, 1 - eps)
    return weighted_bce(probs, targets, weights).mean()


def batch_loss(model, batch, eps=1e-7):
    """Forward ``batch`` and return the loss tensor over its separator
    slots."""
    if len(batch.sep_rows) == 0:
        raise DataError("Batch contains no separator slots")
    logits = model(batch.idx, batch.pos, batch.mask)
    sep_logits = logits[batch.sep_rows, batch.sep_cols]
    loss = next_visit_loss(sep_logits, batch.targets, batch.weights, eps)
    if not math.isfinite(loss.item()):
        raise NumericError("Non-finite loss: {}".format(loss.item()))
    return loss


def loss_and_grads(model, batch, loss_config):
    """Return ``(loss, grads)`` where ``grads`` maps parameter names to the
    gradient tensors of the loss."""
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch, loss_config.eps)
    loss.backward()
    grads = {name: p.grad.detach().clone()
             for name, p in model.named_parameters()}
    return loss.item(), grads
