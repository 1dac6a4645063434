"""Benchmark semi-supervised strategies: unsupervised pre-training with
fine-tuning, pseudo-labeling, the Pi model, temporal ensembling and mean
teacher.

Consistency terms compare softmax outputs with :func:`mse_loss` (batch mean
of the per-sample squared distance) and are weighted by the same ramp-up as
the joint autoencoder loss.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, cross_entropy, mse_loss, no_grad, one_hot, softmax
from ..data import Dataset, SplitPlan, make_batches
from ..errors import ContractError, ProtocolError
from ..models import JointModel, predict
from .common import Stopwatch, TrainConfig, accuracy, make_optimizer, optimizer_step, should_eval
from .joint import train_supervised
from .report import EpochRecord, TrainReport


def _noisy(x: np.ndarray, std: float, rng: np.random.Generator) -> Tensor:
    if std == 0.0:
        return Tensor(x)
    return Tensor(x + rng.normal(0.0, std, x.shape))


def _batch_arrays(train: Dataset, batch):
    pl, pu = train.positions(batch.labeled), train.positions(batch.unlabeled)
    pos = np.concatenate([pl, pu])
    return pl, pos


# ---------------------------------------------------------------------------
# unsupervised pre-training + fine-tuning
# ---------------------------------------------------------------------------

def pretrain_finetune(model: JointModel, train: Dataset, plan: SplitPlan, config: TrainConfig,
                      test: Dataset = None, rng: np.random.Generator = None) -> TrainReport:
    """Phase 1 fits the autoencoder to every training sample; phase 2
    fine-tunes encoder and classifier with cross-entropy on the labeled ids."""
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    model.bind_rng(rng)
    everything = SplitPlan(plan.seed, 1.0, tuple(plan.labeled_ids) + tuple(plan.unlabeled_ids), ())
    optimizer = make_optimizer(model.autoencoder.parameters(), config)
    phase1 = TrainReport()
    model.train()
    for t in range(1, config.epochs + 1):
        clock = Stopwatch()
        batches = make_batches(everything, t, config.batch_unlabeled)
        total = 0.0
        for batch in batches:
            x = train.x[train.positions(batch.labeled)]
            loss = mse_loss(model.decode(model.encode(Tensor(x))), x)
            optimizer_step(loss, optimizer, config)
            total += loss.item()
        phase1.add(EpochRecord(t, 1.0, total / len(batches), 0.0, total / len(batches),
                               float("nan"), wall_ms=clock.ms()))
    phase2 = train_supervised(model, train, plan, config, test, rng)
    report = TrainReport()
    report.extend(phase1, "pretrain")
    report.extend(phase2, "finetune")
    return report


# ---------------------------------------------------------------------------
# pseudo-labeling
# ---------------------------------------------------------------------------

def pseudo_labels(model, x: np.ndarray) -> np.ndarray:
    """Arg-max predictions of a frozen (eval-mode) model."""
    return predict(model, x)


def pseudo_label_train(model, train: Dataset, plan: SplitPlan, config: TrainConfig,
                       test: Dataset = None, rng: np.random.Generator = None) -> TrainReport:
    """Train on labeled ids, label the rest with arg-max predictions, then
    retrain on the union with a fresh optimizer."""
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    stage1 = train_supervised(model, train, plan, config, test, rng)
    report = TrainReport()
    report.extend(stage1, "labeled")
    if not plan.unlabeled_ids:
        return report
    pu = train.positions(plan.unlabeled_ids)
    y = train.y.copy()
    y[pu] = pseudo_labels(model, train.x[pu])
    relabeled = Dataset(train.x, y, train.ids, train.sessions)
    union = SplitPlan(plan.seed, 1.0, tuple(plan.labeled_ids) + tuple(plan.unlabeled_ids), ())
    stage3 = train_supervised(model, relabeled, union, config, test, rng)
    report.extend(stage3, "pseudo")
    report.notes.append(f"pseudo-label agreement with truth: {float(np.mean(y[pu] == train.y[pu])):.4f}")
    return report


# ---------------------------------------------------------------------------
# Pi model
# ---------------------------------------------------------------------------

def pi_model_step(model, optimizer, x_l, y_l, x_all, weight: float, config: TrainConfig,
                  rng: np.random.Generator, step: bool = True):
    """Two stochastic passes; cross-entropy on the labeled rows of the first
    pass plus ``weight`` times the squared distance between the two softmaxes.

    Returns ``(total, consistency, supervised, logits_of_labeled)``.
    """
    b_l = len(x_l)
    logits1 = model.logits(_noisy(x_all, config.noise_std, rng))
    logits2 = model.logits(_noisy(x_all, config.noise_std, rng))
    cons = mse_loss(softmax(logits1, axis=1), softmax(logits2, axis=1))
    sup = cross_entropy(logits1[:b_l], one_hot(y_l))
    total = sup + weight * cons
    if step:
        optimizer_step(total, optimizer, config)
    return total, cons, sup, logits1[:b_l]


def train_pi_model(model, train: Dataset, plan: SplitPlan, config: TrainConfig,
                   test: Dataset = None, rng: np.random.Generator = None) -> TrainReport:
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    model.bind_rng(rng)
    optimizer = make_optimizer(model.parameters(), config)
    report = TrainReport()
    report.begin_phase("pi_model")
    for t in range(1, config.epochs + 1):
        clock = Stopwatch()
        unsup_weight = config.unsup_weight(t)
        sums = np.zeros(3)
        correct = seen = 0
        model.train()
        batches = make_batches(plan, t, config.batch_unlabeled)
        for batch in batches:
            pl, pos = _batch_arrays(train, batch)
            total, cons, sup, logits = pi_model_step(model, optimizer, train.x[pl], train.y[pl],
                                                     train.x[pos], unsup_weight, config, rng)
            sums += (cons.item(), sup.item(), total.item())
            correct += int((logits.data.argmax(axis=1) == train.y[pl]).sum())
            seen += len(pl)
        n = len(batches)
        rec = EpochRecord(t, unsup_weight, sums[0] / n, sums[1] / n, sums[2] / n, correct / seen, wall_ms=clock.ms())
        if should_eval(t, config):
            rec.test_acc = accuracy(model, test)
        report.add(rec)
    report.end_phase()
    return report


# ---------------------------------------------------------------------------
# temporal ensembling
# ---------------------------------------------------------------------------

@dataclass
class EnsembleState:
    """Per-sample moving average of softmax outputs across epochs.

    ``aggregate`` starts at zero; after each epoch it becomes
    ``momentum * aggregate + (1 - momentum) * outputs``. Targets are the
    bias-corrected ``aggregate / (1 - momentum ** epochs_seen)`` (zero before
    the first update).
    """

    ids: tuple
    momentum: float = 0.6
    n_classes: int = 3
    aggregate: np.ndarray = None
    epochs_seen: int = 0
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        if self.aggregate is None:
            self.aggregate = np.zeros((len(self.ids), self.n_classes))
        self._index = {sid: i for i, sid in enumerate(self.ids)}

    def rows(self, ids) -> np.ndarray:
        try:
            return np.fromiter((self._index[i] for i in ids), dtype=int, count=len(ids))
        except KeyError as exc:
            raise ProtocolError(f"sample id {exc.args[0]!r} is not tracked by the ensemble") from None

    def targets(self, ids) -> np.ndarray:
        rows = self.rows(ids)
        if self.epochs_seen == 0:
            return np.zeros((len(rows), self.n_classes))
        return self.aggregate[rows] / (1.0 - self.momentum ** self.epochs_seen)

    def update(self, ids, outputs: np.ndarray) -> None:
        """Fold one epoch of outputs (one row per id, any order) into the aggregate."""
        rows = self.rows(ids)
        if len(set(rows.tolist())) != len(self.ids) or len(rows) != len(self.ids):
            raise ProtocolError("epoch outputs must cover every tracked sample exactly once")
        current = np.empty_like(self.aggregate)
        current[rows] = outputs
        self.aggregate = self.momentum * self.aggregate + (1.0 - self.momentum) * current
        self.epochs_seen += 1


def temporal_ensembling_epoch(model, optimizer, state: EnsembleState, train: Dataset, batches,
                              t: int, config: TrainConfig, rng: np.random.Generator) -> EpochRecord:
    """One noisy pass per sample; the ensemble is updated once, after the epoch,
    from the outputs collected per sample id."""
    clock = Stopwatch()
    unsup_weight = config.unsup_weight(t)
    sums = np.zeros(3)
    correct = seen = 0
    collected: dict = {}
    model.train()
    for batch in batches:
        pl, pos = _batch_arrays(train, batch)
        ids = train.ids[pos]
        logits = model.logits(_noisy(train.x[pos], config.noise_std, rng))
        probs = softmax(logits, axis=1)
        cons = mse_loss(probs, state.targets(ids))
        sup = cross_entropy(logits[:len(pl)], one_hot(train.y[pl]))
        total = sup + unsup_weight * cons
        optimizer_step(total, optimizer, config)
        for sid, p in zip(ids.tolist(), probs.data):
            collected.setdefault(sid, []).append(p)
        sums += (cons.item(), sup.item(), total.item())
        correct += int((logits.data[:len(pl)].argmax(axis=1) == train.y[pl]).sum())
        seen += len(pl)
    ids = sorted(collected)
    state.update(ids, np.stack([np.mean(collected[i], axis=0) for i in ids]))
    n = len(batches)
    return EpochRecord(t, unsup_weight, sums[0] / n, sums[1] / n, sums[2] / n, correct / seen, wall_ms=clock.ms())


def train_temporal_ensembling(model, train: Dataset, plan: SplitPlan, config: TrainConfig,
                              test: Dataset = None, rng: np.random.Generator = None,
                              state: EnsembleState = None) -> TrainReport:
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    model.bind_rng(rng)
    optimizer = make_optimizer(model.parameters(), config)
    if state is None:
        state = EnsembleState(tuple(plan.labeled_ids) + tuple(plan.unlabeled_ids), config.te_momentum)
    report = TrainReport()
    report.begin_phase("temporal_ensembling")
    for t in range(1, config.epochs + 1):
        batches = make_batches(plan, t, config.batch_unlabeled)
        rec = temporal_ensembling_epoch(model, optimizer, state, train, batches, t, config, rng)
        if should_eval(t, config):
            rec.test_acc = accuracy(model, test)
        report.add(rec)
    report.end_phase()
    return report


# ---------------------------------------------------------------------------
# mean teacher
# ---------------------------------------------------------------------------

class TeacherState:
    """Exponential moving average copy of a student model.

    The teacher starts as an exact copy of the student, never receives
    gradients and is refreshed after every student step as
    ``teacher = decay * teacher + (1 - decay) * student``.
    """

    def __init__(self, student, decay: float = 0.95):
        self.decay = decay
        self.model = copy.deepcopy(student)
        for p in self.model.parameters():
            p.requires_grad = False
            p.grad = None
        self.step_count = 0

    def update(self, student) -> None:
        g = self.decay
        for tp, sp in zip(self.model.parameters(), student.parameters()):
            tp.data *= g
            tp.data += (1.0 - g) * sp.data
        for (_, tb), (_, sb) in zip(self.model.named_buffers(), student.named_buffers()):
            tb *= g
            tb += (1.0 - g) * sb
        self.step_count += 1

    def check_no_gradients(self) -> None:
        if any(p.grad is not None for p in self.model.parameters()):
            raise ContractError("teacher parameters received gradients")


def mean_teacher_step(student, teacher: TeacherState, optimizer, x_l, y_l, x_all, weight: float,
                      config: TrainConfig, rng: np.random.Generator):
    """Student step on cross-entropy plus consistency with the teacher's
    softmax, followed by the teacher's moving-average update."""
    b_l = len(x_l)
    logits = student.logits(_noisy(x_all, config.noise_std, rng))
    teacher.model.train(student.training)
    with no_grad():
        target = softmax(teacher.model.logits(_noisy(x_all, config.noise_std, rng)), axis=1).data
    cons = mse_loss(softmax(logits, axis=1), target)
    sup = cross_entropy(logits[:b_l], one_hot(y_l))
    total = sup + weight * cons
    optimizer_step(total, optimizer, config)
    teacher.check_no_gradients()
    teacher.update(student)
    return total, cons, sup, logits[:b_l]


def train_mean_teacher(model, train: Dataset, plan: SplitPlan, config: TrainConfig,
                       test: Dataset = None, rng: np.random.Generator = None,
                       teacher: TeacherState = None) -> TrainReport:
    """Train the student; the returned model is the student and the teacher
    stays available on ``report.teacher``."""
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    model.bind_rng(rng)
    teacher = teacher or TeacherState(model, config.ema_decay)
    teacher.model.bind_rng(rng)
    optimizer = make_optimizer(model.parameters(), config)
    if {id(p) for p in optimizer.params} & {id(p) for p in teacher.model.parameters()}:
        raise ContractError("teacher parameters registered with the optimizer")
    report = TrainReport()
    report.teacher = teacher
    report.begin_phase("mean_teacher")
    for t in range(1, config.epochs + 1):
        clock = Stopwatch()
        unsup_weight = config.unsup_weight(t)
        sums = np.zeros(3)
        correct = seen = 0
        model.train()
        batches = make_batches(plan, t, config.batch_unlabeled)
        for batch in batches:
            pl, pos = _batch_arrays(train, batch)
            total, cons, sup, logits = mean_teacher_step(model, teacher, optimizer, train.x[pl], train.y[pl],
                                                         train.x[pos], unsup_weight, config, rng)
            sums += (cons.item(), sup.item(), total.item())
            correct += int((logits.data.argmax(axis=1) == train.y[pl]).sum())
            seen += len(pl)
        n = len(batches)
        rec = EpochRecord(t, unsup_weight, sums[0] / n, sums[1] / n, sums[2] / n, correct / seen, wall_ms=clock.ms())
        if should_eval(t, config):
            rec.test_acc = accuracy(model, test)
        report.add(rec)
    report.end_phase()
    return report
