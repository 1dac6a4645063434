"""Joint autoencoder + classifier training on labeled and unlabeled data,
and the plain supervised trainer it reduces to."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, cross_entropy, mse_loss, one_hot
from ..data import Dataset, SplitPlan, make_batches
from ..errors import ProtocolError
from ..models import JointModel
from .common import Stopwatch, TrainConfig, accuracy, make_optimizer, optimizer_step, should_eval
from .report import EpochRecord, TrainReport


@dataclass
class JointLoss:
    total: Tensor
    unsupervised: Tensor
    supervised: Tensor
    logits: Tensor


def joint_loss(model: JointModel, x_l: np.ndarray, y_l: np.ndarray, x_u: np.ndarray, weight: float) -> JointLoss:
    """``weight * loss_u + loss_s`` for one mini-batch.

    ``loss_u`` is the batch-mean squared reconstruction error of the unlabeled
    part plus that of the labeled part; ``loss_s`` is the cross-entropy of the
    labeled part. Both parts share one encoder/decoder pass.
    """
    b_l, b_u = len(x_l), len(x_u)
    if b_l == 0:
        raise ProtocolError("mini-batch has no labeled samples")
    x = Tensor(np.concatenate([x_l, x_u]) if b_u else x_l)
    z = model.encode(x)
    x_hat = model.decode(z)
    loss_u = mse_loss(x_hat[:b_l], x_l)
    if b_u:
        loss_u = mse_loss(x_hat[b_l:], x_u) + loss_u
    logits = model.head(z[:b_l])
    loss_s = cross_entropy(logits, one_hot(y_l))
    return JointLoss(weight * loss_u + loss_s, loss_u, loss_s, logits)


def joint_ssl_epoch(model: JointModel, optimizer, train: Dataset, batches, t: int,
                    config: TrainConfig) -> EpochRecord:
    """One pass over the R batches with one optimizer step per batch."""
    clock = Stopwatch()
    unsup_weight = config.unsup_weight(t)
    sums = np.zeros(3)
    correct = seen = 0
    model.train()
    for batch in batches:
        pl, pu = train.positions(batch.labeled), train.positions(batch.unlabeled)
        out = joint_loss(model, train.x[pl], train.y[pl], train.x[pu], unsup_weight)
        optimizer_step(out.total, optimizer, config)
        sums += (out.unsupervised.item(), out.supervised.item(), out.total.item())
        correct += int((out.logits.data.argmax(axis=1) == train.y[pl]).sum())
        seen += len(pl)
    n = len(batches)
    return EpochRecord(t, unsup_weight, sums[0] / n, sums[1] / n, sums[2] / n, correct / seen, wall_ms=clock.ms())


def train_joint(model: JointModel, train: Dataset, plan: SplitPlan, config: TrainConfig,
                test: Dataset = None, rng: np.random.Generator = None) -> TrainReport:
    """Train autoencoder and classifier together for ``config.epochs`` epochs."""
    model.bind_rng(rng if rng is not None else np.random.default_rng(plan.seed))
    optimizer = make_optimizer(model.parameters(), config)
    report = TrainReport()
    report.begin_phase("joint")
    for t in range(1, config.epochs + 1):
        batches = make_batches(plan, t, config.batch_unlabeled)
        if batches[0].reused and t == 1:
            report.notes.append("labeled samples reused cyclically: fewer labeled samples than batches")
        rec = joint_ssl_epoch(model, optimizer, train, batches, t, config)
        if should_eval(t, config):
            rec.test_acc = accuracy(model, test)
        report.add(rec)
    report.end_phase()
    return report


def supervised_epoch(model, optimizer, train: Dataset, batches, t: int, config: TrainConfig) -> EpochRecord:
    clock = Stopwatch()
    total = 0.0
    correct = seen = 0
    model.train()
    for batch in batches:
        pl = train.positions(batch.labeled)
        logits = model.logits(Tensor(train.x[pl]))
        loss = cross_entropy(logits, one_hot(train.y[pl]))
        optimizer_step(loss, optimizer, config)
        total += loss.item()
        correct += int((logits.data.argmax(axis=1) == train.y[pl]).sum())
        seen += len(pl)
    n = len(batches)
    return EpochRecord(t, 0.0, 0.0, total / n, total / n, correct / seen, wall_ms=clock.ms())


def train_supervised(model, train: Dataset, plan: SplitPlan, config: TrainConfig,
                     test: Dataset = None, rng: np.random.Generator = None) -> TrainReport:
    """Cross-entropy on the labeled ids of ``plan`` only.

    Joint models train only the parameters on the classification path, so
    the decoder is left untouched.
    """
    labeled_only = SplitPlan(plan.seed, plan.label_fraction, plan.labeled_ids, ())
    model.bind_rng(rng if rng is not None else np.random.default_rng(plan.seed))
    params = model.supervised_parameters() if hasattr(model, "supervised_parameters") else model.parameters()
    optimizer = make_optimizer(params, config)
    report = TrainReport()
    report.begin_phase("supervised")
    for t in range(1, config.epochs + 1):
        batches = make_batches(labeled_only, t, config.batch_unlabeled)
        rec = supervised_epoch(model, optimizer, train, batches, t, config)
        if should_eval(t, config):
            rec.test_acc = accuracy(model, test)
        report.add(rec)
    report.end_phase()
    return report
