import math

import numpy as np
import pytest
import torch

from nextvisit.core.errors import ConfigError, DataError, NumericError
from nextvisit.model.sequence import (
    prepare_examples, pack_sequences, make_batch)
from nextvisit.train.loss import (
    LossConfig, repeat_weight, repeat_weights, weighted_bce,
    next_visit_loss, batch_loss, loss_and_grads)
from nextvisit.util.numdiff import check_gradients


def batch_for(trajs, vocab_size, delta=0.5, w_min=0.01, block_size=64):
    examples = prepare_examples(trajs, block_size, delta, w_min)
    return make_batch(pack_sequences(examples, block_size), vocab_size,
                      dtype=torch.float64)


def test_repeat_weight_grid():
    for delta in (0.25, 0.5, 0.75, 1.0):
        for w_min in (0, 0.01, 0.1):
            for c in range(31):
                assert repeat_weight(c, delta, w_min) == max(delta**c, w_min)
            np.testing.assert_allclose(
                repeat_weights(range(31), delta, w_min),
                [max(delta**c, w_min) for c in range(31)], rtol=1e-15)


def test_repeat_weight_examples():
    assert repeat_weight(0, 0.5, 0.01) == 1.0
    assert repeat_weight(1, 0.5, 0.01) == 0.5
    assert repeat_weight(20, 0.5, 0.01) == 0.01
    assert all(repeat_weight(c, 1.0, 0.3) == 1.0 for c in range(50))
    # zero decay: only first occurrences count fully
    assert repeat_weight(0, 0.0, 0.01) == 1.0
    assert repeat_weight(1, 0.0, 0.01) == 0.01
    with pytest.raises(ValueError):
        repeat_weight(-1, 0.5, 0.01)


def test_repeat_weight_monotonic():
    w = repeat_weights(range(40), 0.7, 0.05)
    assert np.all(np.diff(w) <= 0)
    assert w.min() >= 0.05 and w.max() <= 1


def test_three_token_example():
    p = torch.tensor([0.9, 0.2, 0.5], dtype=torch.float64)
    v = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
    w = torch.tensor([1.0, 0.3, 0.5], dtype=torch.float64)
    expected = -(math.log(0.9) + math.log(0.8) + 0.5 * math.log(0.5))
    assert abs(weighted_bce(p, v, w).item() - expected) < 1e-12


def test_weight_linearity():
    p = torch.tensor([0.9, 0.2, 0.5], dtype=torch.float64)
    v = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
    w = torch.tensor([1.0, 1.0, 0.5], dtype=torch.float64)
    base = weighted_bce(p, v, w).item()
    doubled = weighted_bce(p, v, w * torch.tensor([1.0, 1.0, 2.0],
                                                  dtype=torch.float64))
    assert abs(doubled.item() - base + 0.5 * math.log(0.5)) < 1e-12


def test_shape_mismatch():
    with pytest.raises(DataError):
        weighted_bce(torch.ones(3) / 2, torch.ones(3), torch.ones(4))


def test_confident_negatives():
    logits = torch.full((4, 10), -20.0, dtype=torch.float64)
    zeros = torch.zeros_like(logits)
    loss = next_visit_loss(logits, zeros, torch.ones_like(logits))
    assert 0 <= loss.item() < 1e-6


def test_perfect_predictions_clipped():
    target = torch.tensor([[1.0, 0.0, 1.0]], dtype=torch.float64)
    logits = (target * 2 - 1) * 1000
    loss = next_visit_loss(logits, target, torch.ones_like(target), eps=1e-7)
    assert math.isfinite(loss.item())
    assert loss.item() <= 3 * -math.log(1 - 1e-7) + 1e-12


def test_no_decay_equals_naive_bce(tiny_model, random_trajs):
    model = tiny_model()
    trajs = random_trajs(np.random.default_rng(0), 6, 64)
    batch = batch_for(trajs, 64, delta=1.0, w_min=0.2)
    with torch.no_grad():
        loss = batch_loss(model, batch).item()
        logits = model(batch.idx, batch.pos, batch.mask)
        sep = logits[batch.sep_rows, batch.sep_cols].numpy()
    target = batch.targets.numpy()
    naive = []
    for row, t in zip(sep, target):
        total = 0.0
        for x, y in zip(row, t):
            p = min(max(1 / (1 + math.exp(-x)), 1e-7), 1 - 1e-7)
            total -= math.log(p) if y else math.log(1 - p)
        naive.append(total)
    assert abs(loss - sum(naive) / len(naive)) < 1e-9


def test_weighted_differs_from_unweighted(tiny_model, traj):
    model = tiny_model()
    t = traj((0, [2, 3]), (5, [2, 3]), (9, [2, 4]))
    a = batch_loss(model, batch_for([t], 64, delta=1.0)).item()
    b = batch_loss(model, batch_for([t], 64, delta=0.5)).item()
    assert b < a


def test_gradient_check(tiny_model, random_trajs):
    model = tiny_model(vocab_size=64, n_layer=2, n_head=2, n_embd=32)
    trajs = random_trajs(np.random.default_rng(1), 4, 64)
    batch = batch_for(trajs, 64)
    errors = check_gradients(
        model, lambda m: batch_loss(m, batch), delta=1e-3)
    assert set(errors) == {name for name, _ in model.named_parameters()}
    assert max(errors.values()) < 1e-4


def test_loss_and_grads(tiny_model, random_trajs):
    model = tiny_model()
    batch = batch_for(random_trajs(np.random.default_rng(2), 3, 64), 64)
    config = LossConfig(0.5, 0.01, 1e-7)
    loss, grads = loss_and_grads(model, batch, config)
    assert loss > 0
    assert set(grads) == {name for name, _ in model.named_parameters()}
    again, _ = loss_and_grads(model, batch, config)
    assert loss == again


def test_no_slots(tiny_model, traj):
    model = tiny_model()
    batch = batch_for([traj((0, [2]), (1, [3]))], 64)
    empty = batch._replace(sep_rows=batch.sep_rows[:0],
                           sep_cols=batch.sep_cols[:0])
    with pytest.raises(DataError):
        batch_loss(model, empty)


def test_non_finite_loss(tiny_model, traj):
    model = tiny_model()
    batch = batch_for([traj((0, [2]), (1, [3]))], 64)
    bad = batch._replace(weights=batch.weights * float('nan'))
    with pytest.raises(NumericError):
        batch_loss(model, bad)


def test_loss_config(config):
    loss = LossConfig.from_config(config.loss)
    assert loss == (0.5, 0.01, 1e-7)
    with pytest.raises(ConfigError):
        LossConfig(1.5, 0.01, 1e-7).validate()
    with pytest.raises(ConfigError):
        LossConfig(0.5, 1.0, 1e-7).validate()
    with pytest.raises(ConfigError):
        LossConfig(0.5, 0.01, 0.6).validate()
