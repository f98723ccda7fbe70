"""Command-line entry point: ``tiadc-crae <command> [options]``.

Exit status is 0 on success, 1 on invalid input or usage, 2 on runtime
failure. Every command writes ``run_manifest.json`` beside its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import measure_spur, write_spectrum_csv
from .calib import CalibrationError, SkewCalibrator
from .crae import TrainingDiverged, layer_spectra, load_checkpoint
from .pipeline import (
    AlignmentError,
    ExperimentConfig,
    build_dataset,
    read_report,
    run_eval_sweep,
    run_training_campaign,
    summarize,
    write_run_manifest,
)
from .sampler import load_record
from .signals import read_wv01, write_wv01

log = logging.getLogger("tiadc_crae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else None
    if cfg is None and getattr(args, "data", None) and (Path(args.data) / "config.json").exists():
        cfg = ExperimentConfig.from_json(Path(args.data) / "config.json")
    cfg = cfg or ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, crae=replace(cfg.crae, seed=args.seed))
    return cfg


def cmd_gen(args) -> None:
    cfg = _load_config(args)
    manifest = build_dataset(cfg, args.out)
    write_run_manifest(args.out, cfg, "gen", {"records": len(manifest.entries)})
    print(f"wrote {len(manifest.entries)} pairs to {args.out}")


def cmd_train(args) -> None:
    if not args.data:
        raise UsageError("train needs --data")
    cfg = _load_config(args)
    mism = [float(m) for m in args.train_mismatches.split(",")] if args.train_mismatches else None
    ckpt, report = run_training_campaign(cfg, args.data, args.out, train_mismatches_ps=mism)
    print(json.dumps(summarize(report), indent=2, sort_keys=True))


def cmd_eval(args) -> None:
    if not args.ckpt:
        raise UsageError("eval needs --ckpt")
    cfg = _load_config(args)
    report = run_eval_sweep(args.ckpt, cfg, args.out)
    print(f"wrote {len(report)} cells to {Path(args.out) / 'sweep.csv'}")


def cmd_calib(args) -> None:
    if not args.record:
        raise UsageError("calib needs --record")
    rec = load_record(args.record)
    cal = SkewCalibrator(method=args.method).fit(rec)
    out = cal.transform(rec)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    write_wv01(dest / "corrected.wv", out, rec.fs_total)
    rep = measure_spur(out, rec.fs_total, rec.spec.f_start, rec.spec.f_stop).to_dict()
    rep.update(gain=cal.gain_, skew_ps=cal.skew_ps_, method=args.method)
    (dest / "spur.json").write_text(json.dumps(rep, indent=2, sort_keys=True))
    cfg = _load_config(args)
    write_run_manifest(dest, cfg, "calib", {"record": str(args.record)})
    print(json.dumps(rep, indent=2, sort_keys=True))


def cmd_report(args) -> None:
    src = Path(args.input)
    files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
    files = [f for f in files if f.name != "loss.csv"]
    if not files:
        raise FileNotFoundError(f"no report CSV under {src}")
    summary = {f.name: summarize(read_report(f)) for f in files}
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report_summary.json").write_text(text)
        write_run_manifest(args.out, _load_config(args), "report")
    print(text)


def cmd_spectra(args) -> None:
    if not (args.ckpt and args.record):
        raise UsageError("spectra needs --ckpt and --record")
    model = load_checkpoint(args.ckpt).to_model()
    path = Path(args.record)
    v = load_record(path).interleaved() if path.is_dir() else read_wv01(path)[0]
    n = v.size - v.size % model.config.segment_len
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    for tap, spec in layer_spectra(model, v[:n]).items():
        write_spectrum_csv(spec, dest / f"{tap}.csv")
    write_run_manifest(dest, _load_config(args), "spectra", {"record": str(path)})
    print(f"wrote layer spectra to {dest}")


COMMANDS = {
    "gen": (cmd_gen, "generate and align the paired dataset"),
    "train": (cmd_train, "train the network and evaluate on the testing datasets"),
    "eval": (cmd_eval, "sweep States 1-3 and boundary cells with a checkpoint"),
    "calib": (cmd_calib, "run the classical calibrator on one capture directory"),
    "report": (cmd_report, "summarize report CSVs"),
    "spectra": (cmd_spectra, "dump per-layer spectra of a record"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tiadc-crae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="experiment config JSON")
        s.add_argument("--seed", type=int, help="override experiment and network seeds")
        s.add_argument("--out", required=name != "report", help="output directory")
        if name in ("train", "eval", "gen"):
            s.add_argument("--data", help="dataset directory")
        if name in ("eval", "spectra"):
            s.add_argument("--ckpt", help="checkpoint file")
        if name in ("calib", "spectra"):
            s.add_argument("--record", help="capture directory or WV01 file")
        if name == "train":
            s.add_argument("--train-mismatches", help="comma-separated subset of training mismatches (ps)")
        if name == "calib":
            s.add_argument("--method", choices=("lms", "search"), default="lms")
        if name == "report":
            s.add_argument("--in", dest="input", required=True, help="report CSV or directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command][0](args)
    except UsageError as exc:
        print(f"tiadc-crae {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"tiadc-crae {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except (CalibrationError, AlignmentError, TrainingDiverged, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"tiadc-crae {args.command}: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
