"""
Training loop: gradient accumulation, clipping, scheduled learning rate,
periodic validation and checkpointing.

Micro-batch ``j`` of step ``s`` packs examples drawn with the random stream
``(seed, s, j)``, validation batch ``j`` with ``(seed, VAL_STREAM, j)``.
Batch contents therefore only depend on the step number, which makes a run
resumed from ``last.pt`` identical to an uninterrupted one.
"""

__all__ = [
    'TrainConfig',
    'Trainer',
    'resolve_dtype',
]

import logging
import math
import os
from collections import namedtuple

import numpy as np
import torch

from nextvisit.core.errors import ConfigError, DataError, NumericError
from nextvisit.model.checkpoint import save_checkpoint, load_checkpoint
from nextvisit.model.sequence import PACKING_MODES, pack_sequences, make_batch
from nextvisit.train.loss import batch_loss
from nextvisit.train.optim import build_optimizer, clip_gradients, lr_at
from nextvisit.util.export import write_records


VAL_STREAM = 2**32 - 1

DTYPES = {
    'float32': torch.float32,
    'float64': torch.float64,
}


def resolve_dtype(name):
    try:
        return DTYPES[name]
    except KeyError:
        raise ConfigError("Unsupported dtype: {!r}".format(name))


class TrainConfig(namedtuple('TrainConfig', [
        'packing', 'device', 'dtype', 'eval_interval', 'eval_batches',
        'log_interval'])):

    __slots__ = ()

    @classmethod
    def from_config(cls, section):
        try:
            conf = cls(
                packing=str(section.get('packing', 'cross')),
                device=str(section.get('device', 'cpu')),
                dtype=str(section.get('dtype', 'float32')),
                eval_interval=int(section['eval_interval']),
                eval_batches=int(section.get('eval_batches', 20)),
                log_interval=int(section.get('log_interval', 10)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError("Invalid train config: {}".format(e))
        if conf.packing not in PACKING_MODES:
            raise ConfigError("Unknown packing mode: {!r}"
                              .format(conf.packing))
        if min(conf.eval_interval, conf.eval_batches,
               conf.log_interval) < 1:
            raise ConfigError("Train intervals must be positive")
        resolve_dtype(conf.dtype)
        return conf


class Trainer:

    """
    Owns model, optimizer and data of one training run.

    :ivar model: :class:`~nextvisit.model.transformer.NextVisitTransformer`
    :ivar list train_examples: training examples, see
        :func:`nextvisit.model.sequence.prepare_examples`
    :ivar list val_examples: validation examples
    :ivar str folder: output folder for checkpoints and the loss log, or
        ``None`` to write nothing
    """

    def __init__(self, model, train_examples, val_examples, *,
                 opt_config, loss_config, train_config, seed,
                 folder=None, config_hash=None):
        if not train_examples:
            raise DataError("No training examples")
        self.model = model
        self.train_examples = list(train_examples)
        self.val_examples = list(val_examples)
        self.opt = opt_config
        self.loss = loss_config
        self.conf = train_config
        self.seed = int(seed)
        self.folder = folder
        self.config_hash = config_hash
        self.block_size = model.config.block_size
        self.vocab_size = model.config.vocab_size
        self.dtype = resolve_dtype(train_config.dtype)
        self.optimizer = build_optimizer(model, opt_config)
        self.step = 0
        self.best_val_loss = None
        self.history = []
        self._val_batches = None

    # data

    def _batch(self, examples, stream):
        rng = np.random.default_rng(stream)
        order = rng.permutation(len(examples))
        rows = pack_sequences(
            (examples[i] for i in order), self.block_size,
            max_rows=self.opt.batch_size)
        return make_batch(rows, self.vocab_size, self.conf.packing,
                          device=self.conf.device, dtype=self.dtype)

    def micro_batches(self, step):
        """Training micro-batches of ``step``."""
        return [
            self._batch(self.train_examples, [self.seed, step, micro])
            for micro in range(self.opt.gradient_accumulation_steps)
        ]

    def val_batches(self):
        if self._val_batches is None:
            self._val_batches = [
                self._batch(self.val_examples, [self.seed, VAL_STREAM, j])
                for j in range(self.conf.eval_batches)
            ] if self.val_examples else []
        return self._val_batches

    # training

    def train_step(self, step):
        """Run one optimizer step. Returns ``(loss, lr, grad_norm)``. Each
        micro-batch loss is weighted by its share of separator slots, so the
        result equals the mean over all slots of the step."""
        lr = lr_at(step, self.opt)
        self.optimizer.set_lr(lr)
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        batches = [b for b in self.micro_batches(step) if len(b.sep_rows)]
        total = sum(len(b.sep_rows) for b in batches)
        if total == 0:
            raise DataError("No separator slots in the batches of step {}"
                            .format(step))
        loss_sum = 0.0
        for batch in batches:
            loss = batch_loss(self.model, batch, self.loss.eps)
            loss = loss * (len(batch.sep_rows) / total)
            loss.backward()
            loss_sum += loss.item()
        params = [p for p in self.model.parameters() if p.grad is not None]
        if self.opt.grad_clip > 0:
            norm = clip_gradients([p.grad for p in params], self.opt.grad_clip)
        else:
            norm = float('nan')
        self.optimizer.step()
        return loss_sum, lr, norm

    @torch.no_grad()
    def evaluate(self):
        """Mean validation loss over the fixed validation batches."""
        batches = [b for b in self.val_batches() if len(b.sep_rows)]
        if not batches:
            return None
        self.model.eval()
        total = sum(len(b.sep_rows) for b in batches)
        value = sum(
            batch_loss(self.model, b, self.loss.eps).item() * len(b.sep_rows)
            for b in batches) / total
        self.model.train()
        return value

    def _path(self, name):
        return os.path.join(self.folder, name)

    def save(self, name):
        if self.folder is not None:
            save_checkpoint(
                self._path(name), self.model, self.optimizer,
                step=self.step, best_val_loss=self.best_val_loss,
                config_hash=self.config_hash)

    def resume(self, path=None):
        """Restore model, optimizer and step counter from a checkpoint."""
        path = path or self._path('last.pt')
        checkpoint = load_checkpoint(path, self.conf.device)
        if (self.config_hash and checkpoint.get('config_hash') and
                checkpoint['config_hash'] != self.config_hash):
            logging.warning(
                "Resuming from checkpoint with different config hash "
                "{} (current {})".format(
                    checkpoint['config_hash'], self.config_hash))
        self.model.load_state_dict(checkpoint['model'])
        if checkpoint.get('optimizer'):
            self.optimizer.load_state_dict(checkpoint['optimizer'])
        self.step = checkpoint['step']
        self.best_val_loss = checkpoint.get('best_val_loss')
        logging.info("Resumed from {!r} at step {}".format(path, self.step))

    def _log(self, record):
        self.history.append(record)
        if self.folder is not None:
            write_records(self._path('loss.log'), [record], append=True)

    def fit(self, resumed=False):
        """Train until ``max_iters``. Returns the list of log records."""
        max_iters = self.opt.max_iters
        skip_eval = resumed
        while True:
            step = self.step
            record = {}
            if (step % self.conf.eval_interval == 0 or step == max_iters) \
                    and not skip_eval:
                val_loss = self.evaluate()
                record.update(step=step, lr=lr_at(step, self.opt),
                              val_loss=val_loss)
                logging.info("step {}: val loss {}".format(step, val_loss))
                if val_loss is not None and (
                        self.best_val_loss is None or
                        val_loss < self.best_val_loss):
                    self.best_val_loss = val_loss
                    self.save('best.pt')
                self.save('last.pt')
            skip_eval = False
            if step >= max_iters:
                if record:
                    self._log(dict(record, config_hash=self.config_hash))
                if self.best_val_loss is None:
                    logging.warning("No validation loss, saving the final "
                                    "model as best.pt")
                    self.save('best.pt')
                break
            try:
                loss, lr, norm = self.train_step(step)
            except NumericError as e:
                logging.error("Training aborted at step {}: {}; last good "
                              "checkpoint is kept".format(step, e))
                raise
            if not math.isfinite(loss):
                raise NumericError("Non-finite loss at step {}".format(step))
            if step % self.conf.log_interval == 0 or record:
                record.update(step=step, lr=lr, train_loss=loss,
                              grad_norm=norm)
                logging.info("step {}: loss {:.5f}, lr {:.3g}"
                             .format(step, loss, lr))
            if record:
                record.setdefault('val_loss', None)
                self._log(dict(record, config_hash=self.config_hash))
            self.step = step + 1
        return self.history
