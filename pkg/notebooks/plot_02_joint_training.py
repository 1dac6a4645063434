"""
Joint autoencoder and classifier training with few labels
=========================================================

Train the attention recurrent autoencoder together with its classifier on
a small synthetic corpus where only 10% of the training segments carry a
label, and compare it with the same network trained on the labeled part
alone.
"""

import numpy as np

from eegssl.data import SynthSpec, make_batches, make_split, session_split, synth_features
from eegssl.models import build_model
from eegssl.ssltrain import TrainConfig, accuracy, ramp, train_joint, train_supervised

ds = synth_features(SynthSpec(segments_per_session=40), seed=0)
train, test = session_split(ds)
mean, std = train.standardizer()
train, test = train.standardized(mean, std), test.standardized(mean, std)
print("train", train.x.shape, "test", test.x.shape)

###############################################################################
# The labeled subset is stratified, and every mini-batch keeps the global
# labeled to unlabeled ratio.

plan = make_split(train, 0.10, seed=0)
batches = make_batches(plan, epoch=1)
print(len(plan.labeled_ids), "labeled,", len(plan.unlabeled_ids), "unlabeled,", len(batches), "batches")
print("labeled per batch:", sorted({len(b.labeled) for b in batches}),
      "unlabeled per batch:", sorted({len(b.unlabeled) for b in batches}))

###############################################################################
# The unsupervised weight ramps up over the epochs.

print("ramp:", [round(ramp(t, 10), 3) for t in (1, 4, 7, 10)])

###############################################################################
# Joint training versus supervised-only training of the same architecture.

config = TrainConfig(epochs=10)
joint = build_model("att_rae", seed=0, hidden_size=16)
report = train_joint(joint, train, plan, config, test)
for r in report.records[::3]:
    print(f"epoch {r.epoch:2d} weight {r.unsup_weight:6.3f} loss_u {r.loss_u:9.2f} loss_s {r.loss_s:.3f}")

supervised = build_model("att_rae", seed=0, hidden_size=16)
train_supervised(supervised, train, plan, config, test)
print(f"test accuracy: joint {accuracy(joint, test):.3f}, supervised only {accuracy(supervised, test):.3f}")
print("chance level", np.round(1 / 3, 3))
