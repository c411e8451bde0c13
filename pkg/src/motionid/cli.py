"""Command-line entry point: import, synth, split, encode, train, eval, hpo, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import bvh
from .dataset import FilterPolicy, filter_and_split, movement_score, read_split, synth_generate, write_split
from .encoders import EncodingKind, write_features
from .evaluation import default_lengths, dump_report, score_samples, sr_offset, vote_curve
from .hpo import Combination, make_objective, stage1, stage2
from .models.io import load_model, save_model
from .models.train import (ConfigError, TrainConfig, TrainingDiverged, config_from_json, config_to_json,
                           train)
from .pipeline import Pipeline
from .sampling import DataParams
from .take import Manifest, TakeEntry, TakeFormatError, atomic_write_text, read_manifest, write_manifest, write_take

log = logging.getLogger("motionid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
WORKDIR_ENV = "MOTIONID_WORKDIR"
RUN_CONFIG_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _path(args, p) -> Path:
    """Relative paths resolve against the work dir (flag, then environment)."""
    p = Path(p)
    if p.is_absolute():
        return p
    root = args.work_dir or os.environ.get(WORKDIR_ENV)
    return Path(root) / p if root else p


def _write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


# --- run configuration ----------------------------------------------------------


def run_config(args) -> dict:
    """Config file values overridden by command-line flags, validated."""
    doc = {"version": RUN_CONFIG_VERSION}
    if getattr(args, "config", None):
        doc = _load_json(_path(args, args.config))
        if doc.get("version") != RUN_CONFIG_VERSION:
            raise ConfigError(f"config version must be {RUN_CONFIG_VERSION}, got {doc.get('version')!r}")
    model = dict(doc.get("model", {}))
    data = dict(doc.get("data_params", {}))
    tcfg = dict(doc.get("train", {}))
    if args.family:
        if model.get("family") not in (None, args.family):
            model = {}
        model["family"] = args.family
    for flag, key in (("n_estimators", "n_estimators"), ("min_samples_leaf", "min_samples_leaf"),
                      ("layers", "layers"), ("layer_size", "layer_size"), ("hidden_size", "hidden_size"),
                      ("dropout", "dropout"), ("lr", "learning_rate")):
        v = getattr(args, flag, None)
        if v is not None:
            model[key] = v
    if args.encoding:
        doc["encoding"] = args.encoding
    if args.frames_per_bin is not None:
        data = DataParams.binned(args.frames_per_bin).to_json()
    if args.fps is not None or args.window is not None:
        data = DataParams.windowed(args.fps or data.get("fps_target") or 30,
                                   args.window or data.get("window_size") or 30).to_json()
    for flag, key in (("max_epochs", "max_epochs"), ("batch_size", "batch_size"),
                      ("patience", "patience"), ("dtype", "dtype")):
        v = getattr(args, flag, None)
        if v is not None:
            tcfg[key] = v
    if args.seed is not None:
        doc["seed"] = args.seed
    seed = int(doc.get("seed", 0))
    model["seed"] = seed
    tcfg["seed"] = seed
    if args.train_stride is not None:
        doc["train_stride"] = args.train_stride

    if "family" not in model:
        raise ConfigError("no model family given (use --family or a config file)")
    if "encoding" not in doc:
        raise ConfigError("no encoding given (use --encoding or a config file)")
    try:
        cfg = config_from_json(model)
        train_cfg = TrainConfig.from_json(tcfg)
        enc = EncodingKind(doc["encoding"])
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not data:
        data = (DataParams.windowed(30, 30) if cfg.family not in ("rf", "mlp") else DataParams.binned(90)).to_json()
    params = DataParams.from_json(data)
    cfg.validate()
    train_cfg.validate()
    try:
        params.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if (params.mode == "binned") != (cfg.family in ("rf", "mlp")):
        raise ConfigError(f"{cfg.family} needs {'binned' if cfg.family in ('rf', 'mlp') else 'windowed'} samples")
    return {"version": RUN_CONFIG_VERSION, "encoding": enc.value, "data_params": params.to_json(),
            "model": config_to_json(cfg), "train": train_cfg.to_json(), "seed": seed,
            "train_stride": doc.get("train_stride")}


def _takes(manifest: Manifest, pairs):
    return [manifest.load(s, t) for s, t in pairs]


def _load_split_takes(args):
    manifest = read_manifest(_path(args, args.manifest))
    split = read_split(_path(args, args.split))
    return manifest, split


# --- subcommands ----------------------------------------------------------------


def cmd_import(args) -> int:
    src = _path(args, args.bvh_dir)
    out = _path(args, args.out)
    pattern = re.compile(args.pattern)
    files = sorted(src.rglob("*.bvh"))
    if not files:
        raise ValueError(f"no .bvh files under {src}")
    single = set()
    if args.single_speaker:
        single = {line.strip() for line in _path(args, args.single_speaker).read_text().splitlines() if line.strip()}
    subjects: dict[str, list[TakeEntry]] = {}
    for f in files:
        rel = f.relative_to(src).as_posix()
        m = pattern.search(rel)
        if m is None or "subject" not in m.groupdict():
            raise ValueError(f"{rel}: does not match --pattern {args.pattern!r}")
        subject = m.group("subject")
        session = m.groupdict().get("session")
        take_id = f"{subject}_{f.stem}" if not f.stem.startswith(subject) else f.stem
        try:
            clip = bvh.load_bvh(f)
        except bvh.BvhError as exc:
            raise bvh.BvhError(f"{rel}: {exc}") from None
        take = bvh.extract_three_point(clip, args.head, args.left, args.right, args.unit_scale,
                                       subject, take_id, args.axes)
        path = f"takes/{take_id}.csv"
        write_take(take, out / path)
        subjects.setdefault(subject, []).append(
            TakeEntry(take_id, path, take.fps, len(take), session, f.stem not in single and take_id not in single,
                      movement_score(take)))
        log.info("imported %s (%d frames)", rel, len(take))
    write_manifest(Manifest(dict(sorted(subjects.items())), out), out / "manifest.json")
    print(f"imported {len(files)} takes for {len(subjects)} subjects into {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = _path(args, args.out)
    synth_generate(args.subjects, args.takes, args.seconds, fps=args.fps, seed=args.seed,
                   vary_home=args.vary_home, home_radius=args.home_radius,
                   take_turn=args.take_turn, sway=args.sway, out_dir=out)
    print(f"wrote {args.subjects} subjects x {args.takes} takes to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = read_manifest(_path(args, args.manifest))
    policy = FilterPolicy(args.min_seconds, args.movement, args.min_takes)
    split = filter_and_split(manifest, policy)
    write_split(split, _path(args, args.out))
    print(f"{len(split.subjects)} subjects: {len(split.train)} train, {len(split.validation)} validation, "
          f"{len(split.test)} test takes")
    return EXIT_OK


def cmd_encode(args) -> int:
    manifest, split = _load_split_takes(args)
    kind = EncodingKind(args.kind)
    out = _path(args, args.out)
    pairs = [p for role in ("train", "validation", "test") for p in split.role(role)]
    params = DataParams.windowed(args.fps, 1) if args.fps else DataParams.binned(10)
    pipe = Pipeline(kind, params, frame=args.frame)

    def one(pair):
        seq = pipe.sequence(manifest.load(*pair))
        write_features(seq, out / f"{pair[1]}.{kind.value}.csv")
        return pair

    if args.jobs == 1:
        for p in pairs:
            one(p)
    else:
        from joblib import Parallel, delayed

        Parallel(n_jobs=args.jobs)(delayed(one)(p) for p in pairs)
    print(f"encoded {len(pairs)} takes as {kind.value} into {out}")
    return EXIT_OK


def _pipeline_from_run(rc: dict, frame: str = "heading") -> Pipeline:
    return Pipeline(EncodingKind(rc["encoding"]), DataParams.from_json(rc["data_params"]), frame=frame)


def cmd_train(args) -> int:
    rc = run_config(args)
    manifest, split = _load_split_takes(args)
    pipe = _pipeline_from_run(rc, args.frame)
    classes = split.subjects
    tr = pipe.sample_set(_takes(manifest, split.train), classes, rc["train_stride"])
    va = pipe.sample_set(_takes(manifest, split.validation), classes)
    model = train(config_from_json(rc["model"]), tr, va, TrainConfig.from_json(rc["train"]),
                  n_jobs=args.jobs, pipeline=pipe)
    out = _path(args, args.out)
    save_model(model, out)
    lines = [json.dumps({k: v for k, v in vars(r).items() if k != "seconds"}) for r in model.history]
    atomic_write_text(out.with_suffix(".log.jsonl"), "\n".join(lines) + "\n")
    _write_json(out.with_suffix(".run.json"), rc)
    print(f"trained {model.family} on {len(tr)} samples; snapshot epoch {model.snapshot['epoch']}, "
          f"validation mean accuracy {model.snapshot['val_mean_accuracy']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(_path(args, args.model))
    manifest, split = _load_split_takes(args)
    if model.pipeline is None:
        raise ValueError("model file carries no pipeline description")
    takes = _takes(manifest, split.role(args.role))
    if args.offset is not None:
        takes = [sr_offset(t, *args.offset) for t in takes]
    samples = model.pipeline.sample_set(takes, model.classes)
    report = score_samples(model, samples)
    sample_seconds = model.pipeline.sample_seconds(takes[0].fps)
    lengths = args.lengths or default_lengths(sample_seconds, args.max_length, args.length_step)
    curve = vote_curve(model, takes, lengths, args.placement_stride)
    extra = {"family": model.family, "encoding": model.pipeline.encoding.value,
             "data_params": model.pipeline.params.to_json(), "role": args.role,
             "offset": list(args.offset) if args.offset is not None else None}
    out = _path(args, args.out)
    atomic_write_text(out, dump_report(report, curve, extra))
    atomic_write_text(_path(args, args.curve) if args.curve else out.with_suffix(".curve.csv"), curve.to_csv())
    reach = curve.first_length_reaching(1.0)
    print(f"mean accuracy {report.mean_accuracy:.4f}, min accuracy {report.min_accuracy:.4f}; "
          f"voting reaches 100% at {reach if reach is not None else 'n/a'} s")
    return EXIT_OK


def cmd_hpo(args) -> int:
    comb = Combination.parse(args.combination)
    manifest, split = _load_split_takes(args)
    classes = split.subjects
    train_takes = _takes(manifest, split.train)
    val_takes = _takes(manifest, split.validation)
    tcfg = TrainConfig(max_epochs=args.max_epochs, patience=args.patience, seed=args.seed)
    tcfg.validate()
    objective = make_objective(lambda p: Pipeline(comb.encoding, p), train_takes, val_takes, classes,
                               tcfg, args.train_stride)
    log_path = _path(args, args.log)
    if args.stage == 1:
        study = stage1(comb, args.budget, args.seed, objective, log_path, args.jobs)
    else:
        if not args.best:
            raise ConfigError("stage 2 needs --best (the stage-1 winner file)")
        best = config_from_json(_load_json(_path(args, args.best))["config"])
        study = stage2(comb, best, args.seed, objective, log_path, args.jobs)
    _write_json(_path(args, args.out), study.to_json())
    b = study.best()
    print(f"{comb.tag} stage {args.stage}: best trial {b.index} objective {b.objective:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows: dict[tuple[str, str], dict] = {}
    for name in args.inputs:
        doc = _load_json(_path(args, name))
        if "report" in doc:
            key = (doc.get("family", "?"), doc.get("encoding", "?"))
            col = "offset" if doc.get("offset") else "test"
            rows.setdefault(key, {})[f"{col}_mean"] = doc["report"]["mean_accuracy"]
            rows.setdefault(key, {})[f"{col}_min"] = doc["report"]["min_accuracy"]
        elif "combination" in doc:
            fam, _, enc = doc["combination"].partition("+")
            rows.setdefault((fam, enc), {})[f"stage{doc['stage']}_val_min"] = doc["best_objective"]
        else:
            raise ValueError(f"{name}: neither an eval report nor a study result")
    cols = sorted({c for r in rows.values() for c in r})
    lines = [",".join(["family", "encoding"] + cols)]
    for (fam, enc), r in sorted(rows.items()):
        vals = ["" if r.get(c) is None else f"{r[c]:.4f}" for c in cols]
        lines.append(",".join([fam, enc] + vals))
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(_path(args, args.out), text)
    sys.stdout.write(text)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def _add_run_flags(p) -> None:
    p.add_argument("--config", help="run config JSON (flags override its values)")
    p.add_argument("--family", choices=["rf", "mlp", "frnn", "lstm", "gru"])
    p.add_argument("--encoding", choices=[k.value for k in EncodingKind])
    p.add_argument("--frames-per-bin", type=int)
    p.add_argument("--fps", type=float, help="windowed: target frame rate")
    p.add_argument("--window", type=int, help="windowed: frames per window")
    p.add_argument("--train-stride", type=int, help="windowed: stride between training windows")
    p.add_argument("--n-estimators", type=int)
    p.add_argument("--min-samples-leaf", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--layer-size", type=int)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionid", description="Identify people from head and hand tracking data.")
    parser.add_argument("--work-dir", help=f"base for relative paths (default: ${WORKDIR_ENV} or cwd)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("import", help="convert BVH recordings to takes and a manifest")
    p.add_argument("bvh_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--head", default="b_head")
    p.add_argument("--left", default="b_l_wrist_twist")
    p.add_argument("--right", default="b_r_wrist_twist")
    p.add_argument("--unit-scale", type=float, default=0.01, help="file units to meters")
    p.add_argument("--axes", help="axis remap such as 'x,z,-y'")
    p.add_argument("--pattern", default=r"(?P<subject>[^/]+)/",
                   help="regex on the relative path with group 'subject' and optional 'session'")
    p.add_argument("--single-speaker", help="file listing take stems recorded without a partner")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("synth", help="generate synthetic subjects")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--takes", type=int, default=3)
    p.add_argument("--seconds", type=float, default=120.0)
    p.add_argument("--fps", type=float, default=90.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vary-home", action="store_true", help="move and turn every take in the scene")
    p.add_argument("--home-radius", type=float, default=0.1, help="spread of subject home positions (m)")
    p.add_argument("--take-turn", type=float, default=1.0, help="per-take body turn range (rad)")
    p.add_argument("--sway", type=float, default=0.005, help="horizontal sway amplitude (m)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="filter takes and assign train/validation/test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-seconds", type=float, default=300.0)
    p.add_argument("--movement", type=float, default=0.001)
    p.add_argument("--min-takes", type=int, default=3)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("encode", help="write per-take feature files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--kind", required=True, choices=[k.value for k in EncodingKind])
    p.add_argument("--frame", default="heading", choices=["heading", "head"])
    p.add_argument("--fps", type=float, help="decimate to this rate before encoding")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame", default="heading", choices=["heading", "head"])
    p.add_argument("--jobs", type=int, default=1)
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model and compute the voting curve")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--role", default="test", choices=["train", "validation", "test"])
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="CSV path (default: next to --out)")
    p.add_argument("--offset", type=float, nargs=2, metavar=("DX", "DZ"))
    p.add_argument("--lengths", type=float, nargs="+", help="sequence lengths in seconds")
    p.add_argument("--max-length", type=float, default=300.0)
    p.add_argument("--length-step", type=float, default=5.0)
    p.add_argument("--placement-stride", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hpo", help="run one stage of the hyperparameter search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--combination", required=True, help="family+encoding, e.g. lstm+br")
    p.add_argument("--stage", type=int, choices=[1, 2], default=1)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--best", help="stage-1 winner file (stage 2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--patience", type=int)
    p.add_argument("--train-stride", type=int)
    p.add_argument("--log", required=True, help="append-only trial log (JSON lines)")
    p.add_argument("--out", required=True, help="winner file")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_hpo)

    p = sub.add_parser("report", help="summarize eval reports and study results")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"motionid {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"motionid {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, OSError, TakeFormatError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"motionid {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
