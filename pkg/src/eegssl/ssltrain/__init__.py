"""Training strategies: joint autoencoder SSL and the benchmark methods."""
from .benchmarks import (
    EnsembleState, TeacherState, mean_teacher_step, pi_model_step, pretrain_finetune,
    pseudo_label_train, pseudo_labels, temporal_ensembling_epoch, train_mean_teacher,
    train_pi_model, train_temporal_ensembling,
)
from .common import TrainConfig, accuracy, set_dropout
from .joint import joint_loss, joint_ssl_epoch, supervised_epoch, train_joint, train_supervised
from .report import EpochRecord, TrainReport
from .schedule import RampSchedule, ramp

__all__ = [
    "ramp", "RampSchedule", "TrainConfig", "TrainReport", "EpochRecord", "accuracy", "set_dropout",
    "joint_loss", "joint_ssl_epoch", "train_joint", "supervised_epoch", "train_supervised",
    "pretrain_finetune", "pseudo_labels", "pseudo_label_train", "pi_model_step", "train_pi_model",
    "EnsembleState", "temporal_ensembling_epoch", "train_temporal_ensembling",
    "TeacherState", "mean_teacher_step", "train_mean_teacher",
]
