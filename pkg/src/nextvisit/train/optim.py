"""
AdamW with decoupled weight decay, global norm clipping and the learning
rate schedule (linear warmup, cosine or linear decay, constant floor).
"""

__all__ = [
    'OptConfig',
    'AdamW',
    'adamw_step',
    'new_state',
    'lr_at',
    'global_norm',
    'clip_gradients',
    'param_groups',
    'build_optimizer',
]

import math
from collections import namedtuple

import torch

from nextvisit.core.errors import ConfigError, NumericError


COSINE = 'cosine'
LINEAR = 'linear'


class OptConfig(namedtuple('OptConfig', [
        'learning_rate', 'min_lr', 'warmup_iters', 'lr_decay_iters',
        'max_iters', 'beta1', 'beta2', 'eps', 'weight_decay', 'grad_clip',
        'gradient_accumulation_steps', 'batch_size', 'decay_lr',
        'lr_schedule'])):

    __slots__ = ()

    @classmethod
    def from_config(cls, section):
        try:
            conf = cls(
                learning_rate=float(section['learning_rate']),
                min_lr=float(section['min_lr']),
                warmup_iters=int(section['warmup_iters']),
                lr_decay_iters=int(section['lr_decay_iters']),
                max_iters=int(section['max_iters']),
                beta1=float(section['beta1']),
                beta2=float(section['beta2']),
                eps=float(section.get('eps', 1e-8)),
                weight_decay=float(section['weight_decay']),
                grad_clip=float(section['grad_clip']),
                gradient_accumulation_steps=int(
                    section['gradient_accumulation_steps']),
                batch_size=int(section['batch_size']),
                decay_lr=bool(section.get('decay_lr', True)),
                lr_schedule=str(section.get('lr_schedule', COSINE)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError("Invalid optim config: {}".format(e))
        return conf.validate()

    def validate(self):
        if not 0 <= self.warmup_iters <= self.lr_decay_iters <= self.max_iters:
            raise ConfigError(
                "Need warmup_iters <= lr_decay_iters <= max_iters, got {}, "
                "{}, {}".format(self.warmup_iters, self.lr_decay_iters,
                                self.max_iters))
        if not 0 < self.min_lr <= self.learning_rate:
            raise ConfigError("Need 0 < min_lr <= learning_rate")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must be in [0, 1)")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError("weight_decay and eps must be non-negative")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be non-negative (0 disables)")
        if self.gradient_accumulation_steps < 1 or self.batch_size < 1:
            raise ConfigError("gradient_accumulation_steps and batch_size "
                              "must be positive")
        if self.lr_schedule not in (COSINE, LINEAR):
            raise ConfigError("Unknown lr_schedule: {!r}"
                              .format(self.lr_schedule))
        return self


def lr_at(step, config):
    """Learning rate at ``step``: linear warmup from 0 to the peak over
    ``warmup_iters``, decay to ``min_lr`` at ``lr_decay_iters``, constant
    afterwards."""
    peak = config.learning_rate
    if not config.decay_lr:
        return peak
    if step < config.warmup_iters:
        return peak * step / config.warmup_iters
    if step >= config.lr_decay_iters:
        return config.min_lr
    ratio = ((step - config.warmup_iters) /
             (config.lr_decay_iters - config.warmup_iters))
    if config.lr_schedule == LINEAR:
        coeff = 1.0 - ratio
    else:
        coeff = 0.5 * (1.0 + math.cos(math.pi * ratio))
    return config.min_lr + coeff * (peak - config.min_lr)


def global_norm(grads):
    """Euclidean norm of all gradient tensors together."""
    grads = [g for g in grads if g is not None]
    if not grads:
        return 0.0
    return math.sqrt(sum(float(g.detach().double().pow(2).sum())
                         for g in grads))


def clip_gradients(grads, max_norm):
    """Scale ``grads`` in place by ``max_norm / norm`` if their global norm
    exceeds ``max_norm``. Returns the norm before clipping."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [g for g in grads if g is not None]
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericError("Non-finite gradient norm: {}".format(norm))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


def _check_finite(params, grads):
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and not torch.isfinite(g).all():
            raise NumericError(
                "Non-finite gradient in parameter #{} of shape {}"
                .format(i, tuple(p.shape)))


def _update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    if weight_decay:
        p.mul_(1 - lr * weight_decay)
    m.mul_(beta1).add_(g, alpha=1 - beta1)
    v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    p.sub_(lr * m_hat / (v_hat.sqrt() + eps))


def new_state(params):
    return {
        'step': 0,
        'exp_avg': [torch.zeros_like(p) for p in params],
        'exp_avg_sq': [torch.zeros_like(p) for p in params],
    }


@torch.no_grad()
def adamw_step(params, grads, state, config, lr, weight_decay=None):
    """
    One AdamW update of the tensors ``params`` (modified in place) given
    ``grads``. ``state`` is created by :func:`new_state` and updated in place.
    Raises :class:`NumericError` before touching anything if a gradient is
    not finite. Returns ``(params, state)``.
    """
    _check_finite(params, grads)
    wd = config.weight_decay if weight_decay is None else weight_decay
    state['step'] += 1
    for p, g, m, v in zip(params, grads, state['exp_avg'],
                          state['exp_avg_sq']):
        _update(p, g, m, v, state['step'], lr,
                config.beta1, config.beta2, config.eps, wd)
    return params, state


class AdamW(torch.optim.Optimizer):

    """AdamW optimizer, the :class:`torch.optim.Optimizer` counterpart of
    :func:`adamw_step`."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.95), eps=1e-8,
                 weight_decay=0.01):
        if lr < 0:
            raise ConfigError("Invalid learning rate: {}".format(lr))
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ConfigError("Invalid betas: {}".format(betas))
        if eps <= 0:
            raise ConfigError("Invalid eps: {}".format(eps))
        if weight_decay < 0:
            raise ConfigError("Invalid weight_decay: {}".format(weight_decay))
        defaults = dict(lr=lr, betas=betas, eps=eps,
                        weight_decay=weight_decay)
        super().__init__(params, defaults)

    def set_lr(self, lr):
        for group in self.param_groups:
            group['lr'] = lr

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            params = [p for p in group['params'] if p.grad is not None]
            _check_finite(params, [p.grad for p in params])
        for group in self.param_groups:
            beta1, beta2 = group['betas']
            for p in group['params']:
                if p.grad is None:
                    continue
                state = self.state[p]
                if len(state) == 0:
                    state['step'] = 0
                    state['exp_avg'] = torch.zeros_like(p)
                    state['exp_avg_sq'] = torch.zeros_like(p)
                state['step'] += 1
                _update(p, p.grad, state['exp_avg'], state['exp_avg_sq'],
                        state['step'], group['lr'], beta1, beta2,
                        group['eps'], group['weight_decay'])
        return loss


def param_groups(model, weight_decay):
    """Split parameters into a decayed group (matrices except the token
    embedding) and an undecayed group (norms, biases, embedding)."""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if p.dim() >= 2 and not name.startswith('wte.'):
            decay.append(p)
        else:
            no_decay.append(p)
    return [
        {'params': decay, 'weight_decay': weight_decay},
        {'params': no_decay, 'weight_decay': 0.0},
    ]


def build_optimizer(model, config):
    return AdamW(param_groups(model, config.weight_decay),
                 lr=lr_at(0, config),
                 betas=(config.beta1, config.beta2),
                 eps=config.eps,
                 weight_decay=config.weight_decay)
