"""Mini-batch training loop."""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDataset, LabelOutOfRange
from ..seeding import counter_stream, substream
from .layers import softmax_cross_entropy
from .model import classify_backward, classify_forward, init_state
from .optim import adam_update

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float


def train_step(state, config, xb, yb, dropout_rng):
    logits, trace = classify_forward(xb, state, config, training=True, dropout_rng=dropout_rng)
    loss, grad_logits = softmax_cross_entropy(logits, yb)
    grads = classify_backward(trace, grad_logits, state, config, input_grad=False)
    adam_update(state, grads, lr=config.lr)
    return loss, int((logits.argmax(axis=1) == yb).sum())


def train(data, labels, config, log_path=None, state=None):
    """Train on ``data (N, C, H, W)`` / ``labels (N,)``.

    Each epoch visits the samples in a seeded permutation, in batches of
    ``config.batch``; every batch is one Adam step on the batch-mean loss.
    Returns ``(state, records)`` with one :class:`EpochRecord` per epoch
    (mean batch loss, accuracy of the training-mode predictions).
    """
    data = np.asarray(data)
    labels = np.asarray(labels, dtype=np.int64)
    if len(data) == 0:
        raise EmptyDataset("no training samples")
    if labels.min() < 0 or labels.max() >= config.classes:
        raise LabelOutOfRange(f"labels must lie in [0, {config.classes})")
    data = data.astype(config.dtype, copy=False)
    if state is None:
        state = init_state(config)
    records = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_acc"])
    try:
        for epoch in range(config.epochs):
            order = substream(config.seed, "shuffle", epoch).permutation(len(data))
            losses, correct = [], 0
            for b, start in enumerate(range(0, len(data), config.batch)):
                idx = order[start:start + config.batch]
                rng = counter_stream(config.seed, "dropout", epoch, b)
                loss, hits = train_step(state, config, data[idx], labels[idx], rng)
                losses.append(loss)
                correct += hits
            rec = EpochRecord(epoch + 1, float(np.mean(losses)), correct / len(data))
            records.append(rec)
            log.debug("epoch %d loss %.6f acc %.4f", rec.epoch, rec.loss, rec.train_acc)
            if writer is not None:
                writer.writerow([rec.epoch, repr(rec.loss), repr(rec.train_acc)])
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return state, records
