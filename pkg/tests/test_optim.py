import math

import numpy as np
import pytest
import torch

from nextvisit.core.errors import ConfigError, NumericError
from nextvisit.model.sequence import (
    prepare_examples, pack_sequences, make_batch)
from nextvisit.train.loss import batch_loss
from nextvisit.train.optim import (
    OptConfig, AdamW, adamw_step, new_state, lr_at, global_norm,
    clip_gradients, param_groups, build_optimizer)


FULL_SCALE = OptConfig(
    learning_rate=2.2e-4, min_lr=2.2e-5, warmup_iters=20000,
    lr_decay_iters=800000, max_iters=810000, beta1=0.9, beta2=0.95,
    eps=1e-8, weight_decay=0.01, grad_clip=1.0,
    gradient_accumulation_steps=8, batch_size=16, decay_lr=True,
    lr_schedule='cosine')


def test_lr_anchors():
    assert lr_at(0, FULL_SCALE) == 0
    assert lr_at(10000, FULL_SCALE) == pytest.approx(1.1e-4, rel=1e-12)
    assert lr_at(20000, FULL_SCALE) == pytest.approx(2.2e-4, rel=1e-12)
    assert lr_at(800000, FULL_SCALE) == pytest.approx(2.2e-5, rel=1e-12)
    assert lr_at(805000, FULL_SCALE) == lr_at(810000, FULL_SCALE) == 2.2e-5
    midpoint = (20000 + 800000) // 2
    assert lr_at(midpoint, FULL_SCALE) == pytest.approx((2.2e-4 + 2.2e-5) / 2)


def test_lr_continuity():
    for boundary in (20000, 800000):
        a = lr_at(boundary - 1, FULL_SCALE)
        b = lr_at(boundary, FULL_SCALE)
        assert abs(a - b) < 1e-7
    steps = range(20000, 800001, 997)
    values = [lr_at(s, FULL_SCALE) for s in steps]
    assert all(x >= y for x, y in zip(values, values[1:]))


def test_lr_linear_and_constant():
    linear = FULL_SCALE._replace(lr_schedule='linear')
    assert lr_at(410000, linear) == pytest.approx(
        2.2e-5 + 0.5 * (2.2e-4 - 2.2e-5))
    constant = FULL_SCALE._replace(decay_lr=False)
    assert {lr_at(s, constant) for s in (0, 5, 20000, 10**6)} == {2.2e-4}


def test_config_validation(config):
    conf = OptConfig.from_config(config.optim)
    assert conf.warmup_iters <= conf.lr_decay_iters <= conf.max_iters
    with pytest.raises(ConfigError):
        FULL_SCALE._replace(warmup_iters=900000).validate()
    with pytest.raises(ConfigError):
        FULL_SCALE._replace(min_lr=1e-3).validate()
    with pytest.raises(ConfigError):
        FULL_SCALE._replace(min_lr=0.0).validate()
    with pytest.raises(ConfigError):
        FULL_SCALE._replace(beta2=1.0).validate()
    with pytest.raises(ConfigError):
        FULL_SCALE._replace(lr_schedule='step').validate()
    with pytest.raises(ConfigError):
        FULL_SCALE._replace(gradient_accumulation_steps=0).validate()


def test_adamw_scalar_oracle():
    conf = FULL_SCALE._replace(weight_decay=0.1, eps=1e-8)
    lr = 0.01
    p = torch.tensor([1.5], dtype=torch.float64)
    state = new_state([p])
    x, m, v = 1.5, 0.0, 0.0
    for t, g in enumerate([0.3, -1.2, 0.05, 2.0, -0.7], 1):
        adamw_step([p], [torch.tensor([g], dtype=torch.float64)],
                   state, conf, lr)
        x *= 1 - lr * 0.1
        m = 0.9 * m + 0.1 * g
        v = 0.95 * v + 0.05 * g * g
        m_hat = m / (1 - 0.9**t)
        v_hat = v / (1 - 0.95**t)
        x -= lr * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(p.item() - x) < 1e-12
    assert state['step'] == 5


def test_adamw_zero_gradient():
    p = torch.tensor([0.5, -2.0], dtype=torch.float64)
    state = new_state([p])
    adamw_step([p], [torch.zeros(2, dtype=torch.float64)], state,
               FULL_SCALE, lr=1e-3, weight_decay=0.0)
    assert p.tolist() == [0.5, -2.0]
    # weight decay acts alone
    adamw_step([p], [torch.zeros(2, dtype=torch.float64)], state,
               FULL_SCALE, lr=1e-3, weight_decay=0.5)
    assert torch.allclose(
        p, torch.tensor([0.5, -2.0], dtype=torch.float64) * (1 - 5e-4),
        atol=1e-15, rtol=0)


def test_adamw_rejects_non_finite():
    p = torch.ones(3, dtype=torch.float64)
    state = new_state([p])
    with pytest.raises(NumericError):
        adamw_step([p], [torch.tensor([1.0, float('inf'), 0.0],
                                      dtype=torch.float64)],
                   state, FULL_SCALE, lr=1e-3)
    assert p.tolist() == [1.0, 1.0, 1.0]
    assert state['step'] == 0


def test_matches_torch_adamw():
    gen = torch.Generator().manual_seed(0)
    ours = torch.randn(4, 3, generator=gen, dtype=torch.float64)
    ref = ours.clone().requires_grad_(True)
    theirs = ours.clone().requires_grad_(True)
    reference = torch.optim.AdamW([ref], lr=3e-3, betas=(0.9, 0.95),
                                  eps=1e-8, weight_decay=0.1)
    optimizer = AdamW([theirs], lr=3e-3, betas=(0.9, 0.95), eps=1e-8,
                      weight_decay=0.1)
    state = new_state([ours])
    conf = FULL_SCALE._replace(weight_decay=0.1)
    for _ in range(10):
        g = torch.randn(4, 3, generator=gen, dtype=torch.float64)
        ref.grad = g.clone()
        theirs.grad = g.clone()
        reference.step()
        optimizer.step()
        adamw_step([ours], [g], state, conf, lr=3e-3)
    assert torch.allclose(ours, ref.detach(), atol=1e-12, rtol=0)
    assert torch.allclose(theirs.detach(), ref.detach(), atol=1e-12, rtol=0)


def test_clip_gradients():
    small = [torch.tensor([0.3, 0.4])]
    assert clip_gradients(small, 1.0) == pytest.approx(0.5)
    assert torch.allclose(small[0], torch.tensor([0.3, 0.4]))
    large = [torch.tensor([3.0]), torch.tensor([0.0, 4.0])]
    assert clip_gradients(large, 1.0) == pytest.approx(5.0)
    assert global_norm(large) == pytest.approx(1.0)
    assert torch.allclose(large[1], torch.tensor([0.0, 0.8]))
    with pytest.raises(NumericError):
        clip_gradients([torch.tensor([float('nan')])], 1.0)
    with pytest.raises(ValueError):
        clip_gradients(small, 0.0)


def test_param_groups(tiny_model):
    model = tiny_model()
    decay, no_decay = param_groups(model, 0.01)
    names = {id(p): n for n, p in model.named_parameters()}
    assert decay['weight_decay'] == 0.01 and no_decay['weight_decay'] == 0
    assert all(p.dim() >= 2 for p in decay['params'])
    assert 'wte.weight' in {names[id(p)] for p in no_decay['params']}
    assert 'lm_head.weight' in {names[id(p)] for p in decay['params']}
    assert len(decay['params']) + len(no_decay['params']) == \
        len(list(model.parameters()))
    optimizer = build_optimizer(model, FULL_SCALE)
    assert optimizer.param_groups[0]['lr'] == 0
    optimizer.set_lr(1e-4)
    assert {g['lr'] for g in optimizer.param_groups} == {1e-4}


def test_accumulation_equivalence(tiny_model, random_trajs):
    trajs = random_trajs(np.random.default_rng(0), 4, 64)
    examples = prepare_examples(trajs, 64, 0.5, 0.01)
    rows_a = pack_sequences(examples[:2], 64)
    rows_b = pack_sequences(examples[2:], 64)

    def batch(rows):
        return make_batch(rows, 64, dtype=torch.float64)
    model = tiny_model()
    # accumulate micro-batches weighted by their share of slots
    parts = [batch(rows_a), batch(rows_b)]
    total = sum(len(b.sep_rows) for b in parts)
    model.zero_grad()
    for b in parts:
        (batch_loss(model, b) * len(b.sep_rows) / total).backward()
    accumulated = [p.grad.clone() for p in model.parameters()]
    model.zero_grad()
    batch_loss(model, batch(rows_a + rows_b)).backward()
    for a, b in zip(accumulated, model.parameters()):
        assert torch.allclose(a, b.grad, atol=1e-12, rtol=1e-9)
