"""
Decoder-only transformer over packed visit sequences.

GPT-2 style pre-norm blocks with a 4x GELU MLP and an untied output layer.
There is no learned position table: queries and keys are rotated by angles
proportional to the token's time position in days (rotary embedding on raw
day values), so attention scores only depend on time differences. Attention
is restricted by an explicit boolean mask, see
:func:`nextvisit.model.sequence.build_attention_mask`.

The model emits logits; sigmoids are applied by the loss and the scorers.
"""

__all__ = [
    'ModelConfig',
    'NextVisitTransformer',
    'init_params',
    'rotary_angles',
    'apply_rotary',
    'count_params',
]

import math
from collections import namedtuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from nextvisit.core.errors import ConfigError, NumericError


class ModelConfig(namedtuple('ModelConfig', [
        'n_layer', 'n_head', 'n_embd', 'vocab_size', 'block_size',
        'rotary_base', 'bias', 'dropout'])):

    __slots__ = ()

    @classmethod
    def from_config(cls, section, vocab_size):
        try:
            conf = cls(
                n_layer=int(section['n_layer']),
                n_head=int(section['n_head']),
                n_embd=int(section['n_embd']),
                vocab_size=int(vocab_size),
                block_size=int(section['block_size']),
                rotary_base=float(section.get('rotary_base', 10000.0)),
                bias=bool(section.get('bias', False)),
                dropout=float(section.get('dropout', 0.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError("Invalid model config: {}".format(e))
        return conf.validate()

    @property
    def head_dim(self):
        return self.n_embd // self.n_head

    def validate(self):
        if min(self.n_layer, self.n_head, self.n_embd, self.vocab_size,
               self.block_size) <= 0:
            raise ConfigError("Model dimensions must be positive: {}"
                              .format(self))
        if self.n_embd % self.n_head:
            raise ConfigError("n_embd={} not divisible by n_head={}"
                              .format(self.n_embd, self.n_head))
        if self.head_dim % 2:
            raise ConfigError("head_dim={} must be even for rotary pairs"
                              .format(self.head_dim))
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.rotary_base <= 0:
            raise ConfigError("rotary_base must be positive")
        return self


def count_params(config):
    """Closed form number of parameters for ``config``."""
    d, V, L = config.n_embd, config.vocab_size, config.n_layer
    per_layer = 12 * d * d + 2 * d
    if config.bias:
        per_layer += 3 * d + d + 4 * d + d + 2 * d
    final = 2 * d if config.bias else d
    return 2 * V * d + L * per_layer + final


def rotary_angles(positions, head_dim, base=10000.0):
    """Angles ``pos * base**(-2j/head_dim)`` for ``j < head_dim/2``, computed
    in double precision. Shape ``positions.shape + (head_dim/2,)``."""
    positions = torch.as_tensor(positions, dtype=torch.float64)
    j = torch.arange(head_dim // 2, dtype=torch.float64,
                     device=positions.device)
    inv_freq = base ** (-2 * j / head_dim)
    return positions[..., None] * inv_freq


def apply_rotary(x, positions, base=10000.0):
    """
    Rotate consecutive dimension pairs ``(2j, 2j+1)`` of ``x`` by the rotary
    angles of ``positions``.

    ``x`` has shape ``[..., seq, head_dim]``; ``positions`` is either
    ``[seq]`` or ``[batch, seq]`` for ``x`` of shape
    ``[batch, heads, seq, head_dim]``.
    """
    head_dim = x.shape[-1]
    if head_dim % 2:
        raise ConfigError("head_dim must be even")
    angles = rotary_angles(positions.to(x.device), head_dim, base)
    if angles.dim() == 3 and x.dim() == 4:
        angles = angles[:, None]
    cos = torch.cos(angles).to(x.dtype)
    sin = torch.sin(angles).to(x.dtype)
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


class SelfAttention(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.n_head = config.n_head
        self.n_embd = config.n_embd
        self.rotary_base = config.rotary_base
        self.c_attn = nn.Linear(config.n_embd, 3 * config.n_embd,
                                bias=config.bias)
        self.c_proj = nn.Linear(config.n_embd, config.n_embd,
                                bias=config.bias)
        self.attn_dropout = nn.Dropout(config.dropout)
        self.resid_dropout = nn.Dropout(config.dropout)

    def forward(self, x, pos, mask, return_probs=False):
        B, T, C = x.shape
        q, k, v = self.c_attn(x).split(self.n_embd, dim=2)
        q, k, v = (
            t.view(B, T, self.n_head, C // self.n_head).transpose(1, 2)
            for t in (q, k, v))
        q = apply_rotary(q, pos, self.rotary_base)
        k = apply_rotary(k, pos, self.rotary_base)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(k.shape[-1])
        att = att.masked_fill(~mask[:, None], float('-inf'))
        probs = F.softmax(att, dim=-1)
        y = self.attn_dropout(probs) @ v
        y = y.transpose(1, 2).contiguous().view(B, T, C)
        y = self.resid_dropout(self.c_proj(y))
        return (y, probs) if return_probs else y


class MLP(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.c_fc = nn.Linear(config.n_embd, 4 * config.n_embd,
                              bias=config.bias)
        self.gelu = nn.GELU()
        self.c_proj = nn.Linear(4 * config.n_embd, config.n_embd,
                                bias=config.bias)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x):
        return self.dropout(self.c_proj(self.gelu(self.c_fc(x))))


class Block(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.ln_1 = nn.LayerNorm(config.n_embd, bias=config.bias)
        self.attn = SelfAttention(config)
        self.ln_2 = nn.LayerNorm(config.n_embd, bias=config.bias)
        self.mlp = MLP(config)

    def forward(self, x, pos, mask):
        x = x + self.attn(self.ln_1(x), pos, mask)
        x = x + self.mlp(self.ln_2(x))
        return x


class NextVisitTransformer(nn.Module):

    """
    Transformer mapping token ids, day positions and an attention mask to
    per-position vocabulary logits.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.wte = nn.Embedding(config.vocab_size, config.n_embd)
        self.drop = nn.Dropout(config.dropout)
        self.h = nn.ModuleList([Block(config) for _ in range(config.n_layer)])
        self.ln_f = nn.LayerNorm(config.n_embd, bias=config.bias)
        self.lm_head = nn.Linear(config.n_embd, config.vocab_size, bias=False)

    def reset_parameters(self, seed):
        """Normal(0, 0.02) weights, residual projections scaled by
        ``1/sqrt(2*n_layer)``, zero biases, unit norms."""
        gen = torch.Generator().manual_seed(int(seed))
        std_proj = 0.02 / math.sqrt(2 * self.config.n_layer)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith('c_proj.weight'):
                    _normal(p, std_proj, gen)
                elif name.endswith('.bias'):
                    p.zero_()
                elif p.dim() >= 2:
                    _normal(p, 0.02, gen)
                else:
                    p.fill_(1.0)

    def num_params(self):
        return sum(p.numel() for p in self.parameters())

    def forward(self, idx, pos, mask):
        """
        :param idx: long tensor ``[B, T]``
        :param pos: tensor ``[B, T]`` of day positions
        :param mask: bool tensor ``[B, T, T]``, ``mask[b, q, k]``
        :returns: logits ``[B, T, vocab_size]``
        """
        B, T = idx.shape
        if mask.shape != (B, T, T):
            raise ValueError("Mask shape {} does not match input {}"
                             .format(tuple(mask.shape), (B, T)))
        # rows without any allowed key (padding) attend to themselves:
        eye = torch.eye(T, dtype=torch.bool, device=mask.device)
        mask = mask | (eye & ~mask.any(-1, keepdim=True))
        x = self.drop(self.wte(idx))
        for block in self.h:
            x = block(x, pos, mask)
        logits = self.lm_head(self.ln_f(x))
        if not torch.isfinite(logits).all():
            bad = (~torch.isfinite(logits)).nonzero()[0].tolist()
            raise NumericError(
                "Non-finite logits, first at (batch, pos, token)={}, "
                "max |param|={:.3g}".format(
                    bad, max(p.abs().max().item() for p in self.parameters())))
        return logits


def _normal(p, std, gen):
    # sampled on CPU in double precision
    p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * std)


def init_params(config, seed, dtype=torch.float32, device='cpu'):
    """Create a model with deterministic initial parameters."""
    model = NextVisitTransformer(config)
    model.reset_parameters(seed)
    return model.to(device=device, dtype=dtype)
