"""Command-line surface.

Subcommands: init-scene, train, render, report, validate. Exit codes:
0 success, 1 usage, 2 data/format error, 3 numerical abort. Training
options come from a plain-text key=value config file, overridable with
repeated ``--set key=value`` flags and the dedicated shortcuts.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .errors import FormatError, StructureError, TrainAbort
from .forest import stats, validate
from .modelfile import load_model, save_model, size_report
from .renderer import render
from .scene import gen_synthetic_scene, load_scene, save_image, save_scene
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DIMS_PRESETS = {"a": (16, 8), "b": (24, 16), "c": (32, 24)}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise _UsageError(message)


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("str", str):
        return raw
    if field.type in ("tuple", tuple):
        return tuple(float(tok) for tok in raw.split(","))
    raise FormatError(f"config key {field.name!r} has unsupported type")


def _apply_config_pairs(cfg: TrainConfig, pairs, origin: str) -> None:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for key, raw in pairs:
        if key not in fields:
            raise FormatError(f"{origin}: unknown config key {key!r}")
        try:
            setattr(cfg, key, _coerce(fields[key], raw))
        except ValueError:
            raise FormatError(
                f"{origin}: bad value {raw!r} for {key!r}") from None


def _read_config_file(path):
    pairs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{ln}: expected key=value")
            key, raw = line.split("=", 1)
            pairs.append((key.strip(), raw.strip()))
    return pairs


def _build_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        _apply_config_pairs(cfg, _read_config_file(args.config), args.config)
    if args.set:
        pairs = []
        for item in args.set:
            if "=" not in item:
                raise _UsageError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            pairs.append((key.strip(), raw.strip()))
        _apply_config_pairs(cfg, pairs, "--set")
    if args.dims:
        cfg.d_r, cfg.d_i = DIMS_PRESETS[args.dims]
    if args.iters is not None:
        cfg.total_iters = args.iters
    if args.iters_scale is not None:
        cfg.iters_scale = args.iters_scale
    cfg.__post_init__()  # re-check invariants after overrides
    return cfg


def _load_model_file(path):
    with open(path, "rb") as fh:
        return load_model(fh.read())


def _cmd_init_scene(args) -> int:
    dataset, _ = gen_synthetic_scene(args.n_gaussians, args.n_cameras,
                                     args.resolution, args.seed)
    save_scene(dataset, args.out)
    print(f"wrote {len(dataset.cameras)} views "
          f"({args.resolution}x{args.resolution}) to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    dataset = load_scene(args.scene)
    forest, decoders, log = train(dataset, cfg, args.seed)
    blob = save_model(forest, decoders)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    log_path = args.log or (args.out + ".log.jsonl")
    log.to_jsonl(log_path)
    st = stats(forest)
    print(f"trained {cfg.total} iterations -> {args.out} "
          f"({len(blob)} bytes; {st.n_root}/{st.n_internal}/{st.n_leaf} "
          f"roots/internals/leaves); log: {log_path}")
    return EXIT_OK


def _cmd_render(args) -> int:
    forest, decoders = _load_model_file(args.model)
    if decoders is None:
        raise FormatError(f"{args.model} stores no decoder networks")
    dataset = load_scene(args.scene)
    if not 0 <= args.camera_index < len(dataset.cameras):
        raise _UsageError(
            f"camera index {args.camera_index} out of range "
            f"(scene has {len(dataset.cameras)})")
    out = render(forest, decoders, dataset.cameras[args.camera_index],
                 dataset.background)
    save_image(args.out, out.image)
    print(f"rendered view {args.camera_index} -> {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    forest, decoders = _load_model_file(args.model)
    report = size_report(forest, decoders)
    st = stats(forest)
    if args.json:
        import json
        record = dataclasses.asdict(report)
        record.update(n_roots=st.n_root, n_internals=st.n_internal,
                      n_leaves=st.n_leaf)
        print(json.dumps(record))
        return EXIT_OK
    print(f"nodes: {st.n_root} roots, {st.n_internal} internals, "
          f"{st.n_leaf} leaves")
    for label, nbytes in report.rows():
        print(f"{label:32s} {nbytes:12d} B")
    print(f"{'flat baseline (59 floats/leaf)':32s} {report.flat_bytes:12d} B")
    print(f"{'float32-equivalents per leaf':32s} "
          f"{report.eq_total / max(st.n_leaf, 1):12.3f}")
    print(f"{'compression vs flat (serialized)':32s} "
          f"{report.ratio_serialized:12.2f}x")
    print(f"{'compression vs flat (equivalent)':32s} "
          f"{report.ratio_equivalent:12.2f}x")
    return EXIT_OK


def _cmd_validate(args) -> int:
    forest, _ = _load_model_file(args.model)
    report = validate(forest)
    st = stats(forest)
    print(f"nodes: {st.n_root} roots, {st.n_internal} internals, "
          f"{st.n_leaf} leaves")
    if report.ok:
        print("structure: clean")
        return EXIT_OK
    for violation in report.violations:
        print(f"violation: {violation}")
    for orphan in report.orphans:
        print(f"orphan: {orphan}")
    return EXIT_DATA


def _make_parser() -> _Parser:
    parser = _Parser(prog="splatforest",
                     description="hierarchical Gaussian-splat scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-scene", help="generate a synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--n-gaussians", type=int, default=128)
    p.add_argument("--n-cameras", type=int, default=20)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_init_scene)

    p = sub.add_parser("train", help="fit a model to a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--dims", choices=sorted(DIMS_PRESETS),
                   help="feature-dimension preset")
    p.add_argument("--iters", type=int, help="total iterations (unscaled)")
    p.add_argument("--iters-scale", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="TrainLog path (default <out>.log.jsonl)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render one camera from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("report", help="size and compression report")
    p.add_argument("--model", required=True)
    p.add_argument("--json", action="store_true",
                   help="machine-readable record instead of the table")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("validate", help="structural check of a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, StructureError, FileNotFoundError, NotADirectoryError,
            PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainAbort as exc:
        print(f"error: {exc}; snapshot: {exc.snapshot}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
