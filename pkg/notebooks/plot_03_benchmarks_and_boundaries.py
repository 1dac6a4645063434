"""
Benchmark methods, confusion matrices and decision boundaries
=============================================================

Run the consistency-based benchmarks on a DNN backbone through the
experiment harness, then export the data behind a confusion matrix and a
PCA decision-boundary panel.
"""

import tempfile
from pathlib import Path

from eegssl import harness

out = Path(tempfile.mkdtemp())
base = harness.ExperimentConfig(seeds=(0, 1), epochs=3, hidden_size=8, synth_segments=20, out=str(out))

###############################################################################
# A sweep trains every (method, fraction) pair over the seeds. All methods see
# the same labeled subset for a given seed.

table = harness.sweep(base, ["pi_model:dnn", "temporal_ensembling:dnn", "mean_teacher:dnn", "supervised:dnn"],
                      [0.05, 0.10])
print(table.to_csv_text())

###############################################################################
# Every figure can be regenerated from stored checkpoints. Rows of the
# confusion matrix are true classes and columns are predictions.

cfg = base.replace(method="mean_teacher", backbone="dnn", label_fraction=0.10)
model, plan, _ = harness.load_run(harness.run_dir(cfg), seed=0)
train, test = harness.load_data(cfg)
print(harness.model_confusion(model, test).round(3))

###############################################################################
# Decision boundaries in the plane of the first two principal components,
# for the trained model and for a linear max-margin reference fitted on the
# labeled segments only.

n = harness.decision_boundary_export(model, train, out / "boundary_model.csv", grid_res=50, plan=plan)
lab = train.by_ids(plan.labeled_ids)
ref = harness.LinearReference().fit(lab.x, lab.y)
harness.decision_boundary_export(ref, train, out / "boundary_linear.csv", grid_res=50, plan=plan)
print(n, "rows written to", out)
