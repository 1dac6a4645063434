"""Command-line interface: ``eegssl <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (non-finite loss).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .data import SynthSpec, save_features, synth_features, synth_raw
from .errors import ConfigError, DegenerateError, NumericError, SchemaError, SplitError, UnsupportedError
from .sigproc import preprocess, read_raw_csv, recording_features, write_feature_csv, write_raw_csv

log = logging.getLogger("eegssl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config's seeds)")
    p.add_argument("--config", default=None, help="key = value experiment config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--force", action="store_true", help="redo completed runs / overwrite outputs")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="eegssl", parents=[common],
                                     description="Semi-supervised EEG emotion recognition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--mode", choices=("features", "raw"), default="features")
    p.add_argument("--segments", type=int, default=None, help="segments per session")
    p.add_argument("--spec", default=None, help="synthetic spec JSON file")

    p = sub.add_parser("preprocess", parents=[common], help="filter, resample and normalize raw CSV recordings")
    p.add_argument("inputs", nargs="+")

    p = sub.add_parser("features", parents=[common], help="DE features from raw CSV recordings")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--labels", default=None, help="JSON file mapping input file name to {label, session}")
    p.add_argument("--preprocessed", action="store_true", help="inputs already went through preprocess")

    for name, helptext in (("train", "train one configuration over its seeds"),
                           ("sweep", "train methods x label fractions")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--method", default=None)
        p.add_argument("--backbone", default=None)
        p.add_argument("--data", default=None, help="feature CSV (default: synthetic corpus)")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--hidden-size", type=int, default=None)
        if name == "train":
            p.add_argument("--fraction", type=float, default=None)
        else:
            p.add_argument("--methods", default="att_rae",
                           help="comma list of method[:backbone], e.g. att_rae,pi_model:dnn")
            p.add_argument("--fractions", default="0.03,0.05,0.1,1.0")

    for name in ("confusion", "boundary"):
        p = sub.add_parser(name, parents=[common], help=f"{name} data from a stored run")
        p.add_argument("--run", required=True, help="run directory (…/runs/<hash>)")
        p.add_argument("--run-seed", type=int, default=None, help="seed of the stored model (default: first)")
        if name == "boundary":
            p.add_argument("--grid-res", type=int, default=200)
            p.add_argument("--linear", action="store_true",
                           help="use a linear max-margin reference fitted on the labeled ids instead")

    p = sub.add_parser("report", parents=[common], help="merge ResultTable CSVs into CSV and JSON")
    p.add_argument("inputs", nargs="+")
    return parser


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    changes = {}
    for attr, key in (("method", "method"), ("backbone", "backbone"), ("data", "data"), ("epochs", "epochs"),
                      ("hidden_size", "hidden_size"), ("fraction", "label_fraction")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[key] = value
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _out(args, default: str = ".") -> Path:
    path = Path(args.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def cmd_synth(args) -> int:
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    if args.segments is not None:
        spec = SynthSpec.from_dict(dict(spec.to_dict(), segments_per_session=args.segments))
    spec = SynthSpec.from_dict(dict(spec.to_dict(), mode=args.mode))
    seed = 0 if args.seed is None else args.seed
    out = _out(args)
    spec.save(out / "synth_spec.json")
    if args.mode == "features":
        target = out / "features.csv"
        _guard(target, args.force)
        save_features(target, synth_features(spec, seed))
        print(target)
        return EXIT_OK
    raw_dir = out / "raw"
    raw_dir.mkdir(exist_ok=True)
    labels = {}
    for rec, label, session, sid in synth_raw(spec, seed):
        name = f"{sid}.csv"
        write_raw_csv(raw_dir / name, rec)
        labels[name] = {"label": int(label), "session": int(session)}
    (out / "labels.json").write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n")
    print(raw_dir)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    out = _out(args, "preprocessed")
    for name in args.inputs:
        target = out / Path(name).name
        _guard(target, args.force)
        write_raw_csv(target, preprocess(read_raw_csv(name)))
        print(target)
    return EXIT_OK


def cmd_features(args) -> int:
    meta = json.loads(Path(args.labels).read_text()) if args.labels else {}
    ids, feats, labels, sessions = [], [], [], []
    for name in args.inputs:
        stem = Path(name).stem
        info = meta.get(Path(name).name, {})
        segs = recording_features(read_raw_csv(name), preprocessed=args.preprocessed)
        for k, f in enumerate(segs):
            ids.append(stem if len(segs) == 1 else f"{stem}-{k:03d}")
            feats.append(f)
            labels.append(info.get("label"))
            sessions.append(info.get("session", 0))
    if not feats:
        raise SchemaError("inputs are shorter than one segment")
    out = _out(args)
    target = out / "features.csv"
    _guard(target, args.force)
    write_feature_csv(target, ids, np.stack(feats), labels, sessions)
    print(target)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    row = harness.run_experiment(cfg, force=args.force)
    print(f"{row.method}\t{row.backbone}\t{row.fraction:g}\t{row.mean:.4f} ± {row.std:.4f}\t"
          f"{harness.run_dir(cfg)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse fractions {args.fractions!r}") from None
    methods = [m for m in args.methods.split(",") if m.strip()]
    # validate every combination before training anything
    for m in methods:
        method, backbone = harness.parse_method(m)
        for f in fractions:
            cfg.replace(method=method, backbone=backbone, label_fraction=f)
    table = harness.sweep(cfg, methods, fractions, force=args.force)
    out = _out(args, cfg.out)
    table.to_csv(out / "results.csv")
    table.to_json(out / "results.json")
    sys.stdout.write(table.to_csv_text())
    return EXIT_OK


def _stored(args):
    run = Path(args.run)
    seeds = json.loads((run / "config.json").read_text())["seeds"] if (run / "config.json").exists() else []
    seed = args.run_seed if args.run_seed is not None else (seeds[0] if seeds else 0)
    model, plan, cfg = harness.load_run(run, seed)
    return model, plan, cfg, seed


def cmd_confusion(args) -> int:
    model, _, cfg, seed = _stored(args)
    _, test = harness.load_data(cfg)
    matrix = harness.model_confusion(model, test)
    target = _out(args, args.run) / f"confusion_seed{seed}.csv"
    harness.write_matrix_csv(target, matrix)
    print(target)
    return EXIT_OK


def cmd_boundary(args) -> int:
    model, plan, cfg, seed = _stored(args)
    train, _ = harness.load_data(cfg)
    if args.linear:
        lab = train.by_ids(plan.labeled_ids)
        model = harness.LinearReference(seed=seed).fit(lab.x, lab.y)
    name = f"boundary_{'linear' if args.linear else 'model'}_seed{seed}.csv"
    target = _out(args, args.run) / name
    harness.decision_boundary_export(model, train, target, args.grid_res, plan)
    print(target)
    return EXIT_OK


def cmd_report(args) -> int:
    table = harness.ResultTable.concat(harness.ResultTable.from_csv(p) for p in args.inputs)
    out = _out(args)
    table.to_csv(out / "report.csv")
    table.to_json(out / "report.json")
    sys.stdout.write(table.to_csv_text())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "features": cmd_features, "train": cmd_train,
    "sweep": cmd_sweep, "confusion": cmd_confusion, "boundary": cmd_boundary, "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (SchemaError, SplitError, DegenerateError, UnsupportedError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
