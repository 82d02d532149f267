"""Command-line pipeline: ``synth`` -> ``roi`` -> ``features`` -> ``eval``.

Each stage reads the previous stage's files.  Parameters come from built-in
defaults, then an optional ``--config`` file of ``section.key=value`` lines,
then command-line flags.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or parameters,
3 some images in a batch failed, 4 the pairing protocol cannot be run.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .errors import (EmptyScoreSet, FKPError, InvalidConfig, IoFailure, MissingInstance,
                     MissingManifest, ValidationError)
from .evaluation import (FAR_POINTS_PCT, combinations, emit_roc, emit_table,
                         evaluate, PairingProtocol, run_verification)
from .features import (DEFAULT_ANGULAR_SIGMA, DEFAULT_F0, FeatureSet,
                       LogGaborEncoder, read_features, write_features)
from .fusion import NormScheme, combination_label, write_stats
from .matcher import METRICS
from .preprocess import ROI_SHAPE, RoiParams, extract_roi

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_PARTIAL, EXIT_PROTOCOL = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _grid(text):
    if isinstance(text, tuple):
        return text
    try:
        rows, cols = (int(p) for p in str(text).lower().split("x"))
    except ValueError:
        raise ValueError(f"grid must look like ROWSxCOLS, got {text!r}") from None
    return rows, cols


# section -> key -> (parser, default, flag)
SCHEMA = {
    "dataset": {
        "subjects": (int, 20, "--subjects"),
        "samples": (int, 6, "--samples"),
        "width": (int, None, "--width"),
        "height": (int, None, "--height"),
        "ridges": (int, 6, "--ridges"),
        "jitter_translation": (float, 3.0, "--jitter-translation"),
        "jitter_rotation": (float, 1.0, "--jitter-rotation"),
        "noise": (float, 0.08, "--noise"),
        "brightness_jitter": (float, 0.04, "--brightness-jitter"),
        "contrast_jitter": (float, 0.08, "--contrast-jitter"),
        "seed": (int, 42, "--seed"),
        "layout": (str, "roi", "--layout"),
    },
    "roi": {
        "factor": (int, 2, "--factor"),
        "sigma": (float, 1.4, "--sigma"),
        "low": (float, 0.1, "--low"),
        "high": (float, 0.3, "--high"),
        "window": (int, 9, "--window"),
        "eps": (float, 1e-3, "--eps"),
        "ycols": (int, 20, "--ycols"),
        "bypass": (_bool, False, "--bypass"),
    },
    "features": {
        "orientations": (int, 6, "--orientations"),
        "scales": (int, 1, "--scales"),
        "f0": (float, DEFAULT_F0, "--f0"),
        "mult": (float, 2.0, "--mult"),
        "sigma_ratio": (float, 0.65, "--sigma-ratio"),
        "angular_sigma": (float, DEFAULT_ANGULAR_SIGMA, "--angular-sigma"),
        "grid": (_grid, (16, 32), "--grid"),
        "border": (int, 8, "--border"),
    },
    "fusion": {
        "norm": (str, "zscore", "--norm"),
    },
    "eval": {
        "instances": (str, "RI,RM,LI,LM", "--instances"),
        "pairs": (int, None, "--pairs"),
        "far_points": (str, "0.01,0.1,1", "--far-points"),
        "metric": (str, "cosine", "--metric"),
    },
}

COMMAND_SECTIONS = {
    "synth": ("dataset",),
    "roi": ("roi",),
    "features": ("features",),
    "eval": ("fusion", "eval"),
}

FINGER_DEFAULT_SIZE = (560, 320)

SYNTH_FLAGS = {
    "num_subjects": "--subjects", "samples_per_class": "--samples",
    "image_width": "--width", "image_height": "--height", "ridge_count": "--ridges",
    "jitter_translation_px": "--jitter-translation", "jitter_rotation_deg": "--jitter-rotation",
    "noise_sigma": "--noise", "brightness_jitter": "--brightness-jitter",
    "contrast_jitter": "--contrast-jitter", "seed": "--seed", "layout": "--layout",
}


def read_config(path):
    """Parse a flat ``section.key=value`` file; unknown keys are errors."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise UsageError(f"{path}:{n}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." in key:
            sec, key = key.split(".", 1)
        elif section is not None:
            sec = section
        else:
            raise UsageError(f"{path}:{n}: key {key!r} needs a section prefix")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise UsageError(f"{path}:{n}: unknown config key {sec}.{key}")
        parser = SCHEMA[sec][key][0]
        try:
            values[(sec, key)] = parser(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{n}: {sec}.{key}: {exc}") from None
    return values


def effective_config(args, sections):
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    config = {}
    for sec in sections:
        for key, (parser, default, _flag) in SCHEMA[sec].items():
            value = default
            if (sec, key) in file_values:
                value = file_values[(sec, key)]
            flag_value = getattr(args, f"{sec}_{key}", None)
            if flag_value is not None:
                value = flag_value
            config[(sec, key)] = value
    if ("dataset", "layout") in config:
        finger = config[("dataset", "layout")] == "finger"
        for key, size in zip(("width", "height"), FINGER_DEFAULT_SIZE if finger else ROI_SHAPE[::-1]):
            if config[("dataset", key)] is None:
                config[("dataset", key)] = size
    return config


def _render(value):
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def config_lines(config):
    return [f"{sec}.{key}={_render(v)}" for (sec, key), v in config.items()]


def echo_config(config, out):
    for line in config_lines(config):
        print(f"# {line}", file=out)


def _positive(config, key_tuple, allow_zero=False):
    value = config[key_tuple]
    if value is None:
        return
    bad = value < 0 if allow_zero else value <= 0
    if bad or (isinstance(value, float) and not math.isfinite(value)):
        flag = SCHEMA[key_tuple[0]][key_tuple[1]][2]
        need = "non-negative" if allow_zero else "positive"
        raise UsageError(f"{flag} must be {need}, got {value!r}")


def add_section_flags(parser, section):
    for key, (conv, default, flag) in SCHEMA[section].items():
        dest = f"{section}_{key}"
        if conv is _bool:
            parser.add_argument(flag, dest=dest, action="store_const", const=True,
                                default=None, help=f"(default: {default})")
            continue
        parser.add_argument(flag, dest=dest, type=conv, default=None, metavar=key.upper(),
                            help=f"(default: {_render(default) or 'auto'})")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, out=None):
    out = out or sys.stdout
    config = effective_config(args, COMMAND_SECTIONS["synth"])
    for key in ("subjects", "samples", "width", "height", "ridges"):
        _positive(config, ("dataset", key))
    for key in ("jitter_translation", "jitter_rotation", "noise", "brightness_jitter",
                "contrast_jitter"):
        _positive(config, ("dataset", key), allow_zero=True)
    if config[("dataset", "layout")] not in ds.LAYOUTS:
        raise UsageError(f"--layout must be one of {', '.join(ds.LAYOUTS)}")
    c = {k: v for (s, k), v in config.items()}
    syn = ds.SyntheticConfig(
        num_subjects=c["subjects"], samples_per_class=c["samples"],
        image_width=c["width"], image_height=c["height"], ridge_count=c["ridges"],
        jitter_translation_px=c["jitter_translation"],
        jitter_rotation_deg=c["jitter_rotation"], noise_sigma=c["noise"],
        brightness_jitter=c["brightness_jitter"], contrast_jitter=c["contrast_jitter"],
        seed=c["seed"], layout=c["layout"])
    try:
        syn.validate()
    except InvalidConfig as exc:
        raise UsageError(f"{SYNTH_FLAGS.get(exc.field, exc.field)}: {exc}") from None
    echo_config(config, out)
    manifest = ds.generate_synthetic(syn, args.out)
    print(f"wrote {len(manifest)} images", file=out)
    print(Path(args.out) / ds.MANIFEST_NAME, file=out)
    return EXIT_OK


def roi_params(config):
    return RoiParams(**{k: v for (s, k), v in config.items() if s == "roi"})


def cmd_roi(args, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    config = effective_config(args, COMMAND_SECTIONS["roi"])
    for key in ("factor", "sigma", "window", "eps", "ycols"):
        _positive(config, ("roi", key))
    params = roi_params(config)
    if not 0 <= params.low <= params.high:
        raise UsageError("need 0 <= --low <= --high")
    if params.window < 3 or params.window % 2 == 0:
        raise UsageError("--window must be an odd integer >= 3")
    echo_config(config, out)
    manifest = ds.load_manifest(args.input)
    dest = Path(args.out)
    done, failures = [], []
    for rec in manifest:
        try:
            img = ds.load_image(manifest.image_path(rec))
            roi = extract_roi(img, params)
            ds.save_image(dest / rec.path, roi)
        except (FKPError, OSError, ValueError) as exc:
            failures.append((rec, exc))
            continue
        done.append(rec)
    ds.write_manifest(ds.DatasetManifest(tuple(done), dest))
    print(f"wrote {len(done)} ROIs to {dest}", file=out)
    for rec, exc in failures:
        print(f"FAILED {rec.path}: {exc}", file=err)
    if failures:
        print(f"{len(failures)} of {len(manifest)} images failed", file=err)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_features(args, out=None):
    out = out or sys.stdout
    config = effective_config(args, COMMAND_SECTIONS["features"])
    c = {k: v for (s, k), v in config.items()}
    for key in ("orientations", "scales", "f0", "mult", "angular_sigma"):
        _positive(config, ("features", key))
    _positive(config, ("features", "border"), allow_zero=True)
    encoder = LogGaborEncoder(c["orientations"], c["scales"], c["f0"], c["mult"],
                              c["sigma_ratio"], c["angular_sigma"], c["grid"], c["border"])
    encoder.fit(None)
    echo_config(config, out)
    manifest = ds.load_manifest(args.input)
    rois = []
    for rec in manifest:
        try:
            img = ds.load_image(manifest.image_path(rec))
        except OSError as exc:
            raise IoFailure(str(manifest.image_path(rec)), str(exc)) from exc
        if img.shape != ROI_SHAPE:
            raise ValidationError(
                f"{rec.path}: expected a {ROI_SHAPE[1]}x{ROI_SHAPE[0]} ROI, "
                f"got {img.shape[1]}x{img.shape[0]}")
        rois.append(img)
    values = encoder.transform(rois) if rois else np.empty((0, encoder.n_features_out_))
    fs = FeatureSet(values, manifest.keys(), c["orientations"], c["scales"], c["grid"])
    write_features(args.out, fs)
    print(f"wrote {len(fs)} records, D={fs.dimension} to {args.out}", file=out)
    return EXIT_OK


def parse_schemes(text):
    if str(text).strip().lower() == "all":
        return list(NormScheme)
    try:
        return [NormScheme.parse(p) for p in str(text).split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_far_points(text):
    try:
        points = tuple(float(p) for p in str(text).split(",") if p.strip())
    except ValueError:
        raise UsageError(f"--far-points must be comma separated percentages, got {text!r}") from None
    if not points or any(not 0 <= p <= 100 for p in points):
        raise UsageError("--far-points must be percentages in [0, 100]")
    return points


def roc_path(base, scheme, label, single):
    base = Path(base)
    if single:
        return base
    return base.with_name(f"{base.stem}_{scheme.value}_{label}{base.suffix or '.csv'}")


def cmd_eval(args, out=None):
    out = out or sys.stdout
    config = effective_config(args, COMMAND_SECTIONS["eval"])
    c = {k: v for (s, k), v in config.items()}
    schemes = parse_schemes(c["norm"])
    if not schemes:
        raise UsageError("--norm is empty")
    try:
        instances = [ds.FingerInstance.parse(p) for p in c["instances"].split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 1 <= len(instances) <= 4 or len(set(instances)) != len(instances):
        raise UsageError("--instances must list 1 to 4 distinct codes from RI, RM, LI, LM")
    if c["metric"] not in METRICS:
        raise UsageError(f"--metric must be one of {', '.join(METRICS)}")
    far_points = parse_far_points(c["far_points"])
    k = c["pairs"]
    if k is None:
        combos = [tuple(ds.canonical_instances(instances))]
    elif not 1 <= k <= len(instances):
        raise UsageError(f"--pairs must be between 1 and {len(instances)}")
    else:
        combos = combinations(instances, k)
    echo_config(config, out)

    features = read_features(args.features)
    protocol = PairingProtocol()
    meta = [f"features={args.features}", f"protocol={protocol.describe()}",
            f"records={len(features)}", f"dimension={features.dimension}",
            f"orientations={features.num_orientations}", f"scales={features.num_scales}",
            f"grid={features.grid[0]}x{features.grid[1]}"]
    meta += config_lines(config)
    single = len(schemes) * len(combos) == 1
    tables = {}
    for scheme in schemes:
        results = tables[scheme] = {}
        for combo in combos:
            label = combination_label(combo)
            scores = run_verification(features, combo, scheme, metric=c["metric"],
                                      protocol=protocol)
            gars, err_rate, curve = evaluate(scores, far_points)
            results[label] = gars
            if args.roc:
                path = roc_path(args.roc, scheme, label, single)
                _write_text(path, emit_roc(curve))
            print(f"[{scheme.value}] {label}", file=out)
            for p in far_points:
                print(f"GAR@FAR={p:g}%: {100.0 * gars[p]:.2f}", file=out)
            print(f"EER: {100.0 * err_rate:.2f}", file=out)
            meta.append(f"result.{scheme.value}.{label}.genuine_pairs={scores.genuine.size}")
            meta.append(f"result.{scheme.value}.{label}.impostor_pairs={scores.impostor.size}")
            meta.append(f"result.{scheme.value}.{label}.degenerate_dims="
                        f"{scores.metadata['degenerate_dims']}")
            meta.append(f"result.{scheme.value}.{label}.eer={err_rate:.10g}")
            if args.stats_dir:
                for inst, stats in scores.metadata["stats"].items():
                    path = Path(args.stats_dir) / f"{scheme.value}_{inst}.fkn"
                    try:
                        path.parent.mkdir(parents=True, exist_ok=True)
                        write_stats(path, stats)
                    except OSError as exc:
                        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    if args.table:
        _write_text(args.table, table_text(tables))
    meta_path = args.meta or (Path(args.table).with_suffix(".run.txt") if args.table else None)
    if meta_path:
        _write_text(meta_path, "\n".join(meta) + "\n")
    return EXIT_OK


def table_text(tables):
    """Join ``{scheme: results}`` blocks; several schemes get ``# name`` headers."""
    blocks = []
    for scheme, results in tables.items():
        block = emit_table(results, scheme)
        if len(tables) > 1:
            block = f"# {NormScheme.parse(scheme).value}\n" + block
        blocks.append(block)
    return "\n".join(blocks)


def _write_text(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fkp", description="Multi-instance finger-knuckle-print verification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config")
    add_section_flags(p, "dataset")

    p = sub.add_parser("roi", help="extract 220x110 ROIs from a dataset")
    p.add_argument("--in", dest="input", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config")
    add_section_flags(p, "roi")

    p = sub.add_parser("features", help="encode ROIs with the log-Gabor bank")
    p.add_argument("--in", dest="input", required=True, help="ROI dataset directory")
    p.add_argument("--out", required=True, help="FKPF1 feature file to write")
    p.add_argument("--config")
    add_section_flags(p, "features")

    p = sub.add_parser("eval", help="run fusion experiments and emit tables")
    p.add_argument("--features", required=True, help="FKPF1 feature file")
    p.add_argument("--table", help="table CSV to write")
    p.add_argument("--roc", help="ROC CSV to write (suffixed per scheme/combination "
                                 "when several are evaluated)")
    p.add_argument("--meta", help="run metadata file (default: next to --table)")
    p.add_argument("--stats-dir", help="write the session-1 normalization statistics "
                                       "as SCHEME_INSTANCE.fkn files here")
    p.add_argument("--config")
    add_section_flags(p, "fusion")
    add_section_flags(p, "eval")
    return parser


COMMANDS = {"synth": cmd_synth, "roi": cmd_roi, "features": cmd_features, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fkp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyScoreSet, MissingInstance) as exc:
        print(f"fkp {args.command}: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (IoFailure, MissingManifest) as exc:
        print(f"fkp {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"fkp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fkp {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
