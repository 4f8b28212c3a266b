"""Command-line entry point: ``sstafed run | compare | prep``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import yaml

from . import kernels
from .config import dump_config, expand_sweep, load_config
from .errors import ConfigError, InputError, NumericError, SstaFedError
from .fl import run_experiment
from .runlog import RoundWriter, compare_runs, write_report, write_summary, write_table, write_timing
from .synthdata import partition as make_partition
from .vision import (
    HogConfig,
    crop_face,
    fixed_rect_detector,
    full_frame_detector,
    augment,
    hog_descriptor,
    parse_augment_spec,
    read_pgm,
    write_descriptor_csv,
    write_pgm,
)

log = logging.getLogger("sstafed")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _run_one(cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(dump_config(cfg))
    part = make_partition(cfg.scenario, cfg.seed)
    writer = RoundWriter(out / "rounds.csv", cfg.scenario.operators, cfg.eval_sets)
    records = []

    def on_round(rec):
        writer.write(rec)
        records.append(rec)
        ev = rec.evaluation
        shown = ", ".join(f"{k}={v['accuracy']:.3f}" for k, v in ev.items())
        log.info("round %d/%d valid=%s %s", rec.round, cfg.rounds, list(rec.report.valid), shown)

    try:
        result = run_experiment(cfg, part, on_round=on_round)
    except Exception as exc:
        (out / "errors.log").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    finally:
        writer.close()
        write_timing(out / "timing.csv", records)
    echo = cfg.to_dict()
    echo.pop("out")
    echo.pop("workers")
    write_summary(out / "summary.json", result, echo)
    write_report(out / "report.csv", result.participants)


def cmd_run(args) -> int:
    cfg, sweep = load_config(args.config)
    if args.workers is not None:
        from dataclasses import replace

        cfg = replace(cfg, workers=args.workers).validate()
    out = Path(args.out or cfg.out or Path("runs") / Path(args.config).stem)
    runs = expand_sweep(cfg, sweep)
    log.info("kernel backend: %s", kernels.BACKEND)
    for name, sub in runs:
        target = out / name if name else out
        log.info("running %s -> %s", name or Path(args.config).name, target)
        _run_one(sub, target)
    return EXIT_OK


def cmd_compare(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table, summary = compare_runs(args.dirs, args.metric)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "comparison.csv", table)
    write_table(out / "comparison_summary.csv", summary)
    return EXIT_OK


def _parse_hog(spec: str) -> HogConfig:
    if not spec:
        return HogConfig()
    p = Path(spec)
    if p.is_file():
        data = yaml.safe_load(p.read_text()) or {}
    else:
        data = {}
        for item in filter(None, (s.strip() for s in spec.split(","))):
            key, _, val = item.partition("=")
            data[key.strip()] = yaml.safe_load(val)
    if not isinstance(data, dict):
        raise ConfigError(f"HoG config {spec!r} must be a mapping")
    return HogConfig.from_dict(data)


def _parse_augment(spec: str):
    p = Path(spec) if spec else None
    if p is not None and p.is_file():
        spec = ",".join(line.split("#")[0].strip() for line in p.read_text().splitlines())
    return parse_augment_spec(spec or "")


def _parse_detector(spec: str):
    if not spec or spec == "full":
        return full_frame_detector
    if spec.startswith("rect:"):
        vals = [int(v) for v in spec[5:].split(",")]
        if len(vals) != 4:
            raise ConfigError("rect detector needs top,left,bottom,right")
        return fixed_rect_detector(tuple(vals))
    raise ConfigError(f"unknown detector {spec!r}")


def cmd_prep(args) -> int:
    cfg = _parse_hog(args.hog)
    ops = _parse_augment(args.augment)
    detector = _parse_detector(args.detector)
    src = Path(args.inp)
    files = sorted(src.glob("*.pgm"))
    if not files:
        raise InputError(f"no .pgm frames in {src}")
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    labels = ["identity"] + [op.label for op in ops]
    manifest = [["source", "output", "transform", "descriptor_length"]]
    descriptors = []
    readable = 0
    for path in files:
        try:
            frame = read_pgm(path)
        except (InputError, OSError) as exc:
            log.warning("skipping unreadable frame %s: %s", path.name, exc)
            continue
        readable += 1
        face = crop_face(frame, detector)
        if face is None:
            log.warning("no face in %s; skipped", path.name)
            continue
        for k, (label, img) in enumerate(zip(labels, augment(face, ops))):
            name = f"{path.stem}_{k}.pgm"
            write_pgm(out / "frames" / name, img)
            desc = hog_descriptor(img, cfg)
            descriptors.append((name, desc.vector))
            manifest.append([path.name, name, label, str(desc.vector.size)])
    if readable == 0:
        raise InputError(f"none of the {len(files)} frames in {src} could be read")
    write_descriptor_csv(out / "descriptors.csv", descriptors)
    write_table(out / "manifest.csv", manifest)
    log.info("wrote %d outputs from %d frames", len(descriptors), readable)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sstafed", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a federated experiment (or sweep) from a YAML config")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=None, help="concurrent operators per round (default 1)")
    r.add_argument("--out", default=None, help="output directory (default runs/<config stem>)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="align accuracy curves of two or more runs")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--metric", default="", help="rounds.csv column to align (default validation_accuracy)")
    c.add_argument("--out", default=".", help="where comparison.csv and comparison_summary.csv go")
    c.set_defaults(func=cmd_compare)

    p = sub.add_parser("prep", help="crop, augment and HoG-describe a directory of PGM frames")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--hog", default="", help="YAML file or inline 'cell_size=8,bins=9,...'")
    p.add_argument("--augment", default="", help="file or inline 'flip,rotate:10,brightness:0.2,zoom:1.1'")
    p.add_argument("--detector", default="full", help="'full' or 'rect:top,left,bottom,right'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SstaFedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
