"""Command-line front door.

Subcommands cover the full pipeline: ``parse``, ``interp``, ``tokenize``,
``detokenize``, ``gen``, ``train``, ``infer``, ``eval-layout``,
``eval-bbox``, ``eval-geom-iou``, ``token-acc``.  All randomness sits
behind ``--seed``; reports are JSON on stdout or ``--out``.

Exit codes: 0 success, 1 usage error, 2 data error (bad input files or
invalid scenes), 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import generate, geom, lang, metrics, tokens
from .errors import SceneError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_output(text, out_path):
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(payload, out_path):
    _write_output(json.dumps(payload, indent=2, sort_keys=True) + "\n", out_path)


def _load_scene(path):
    return lang.parse_scene_text(Path(path).read_text())


def _scene_entities(program):
    return geom.interpret_scene(program).layout_entities


def _paired_scene_files(pred_dir, gt_dir):
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_files = sorted(gt_dir.glob("*.scene"))
    if not gt_files:
        raise SceneError(f"no .scene files under {gt_dir}")
    pairs = []
    for gt_file in gt_files:
        pred_file = pred_dir / gt_file.name
        if not pred_file.exists():
            raise SceneError(f"missing prediction for {gt_file.name}")
        pairs.append((pred_file, gt_file))
    return pairs


def _gen_config(args):
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        known = {f.name for f in dc_fields(generate.GenConfig)}
        unknown = set(raw) - known
        if unknown:
            raise SceneError(f"unknown generator config keys: {sorted(unknown)}")
        for key, value in raw.items():
            if isinstance(value, list):
                raw[key] = tuple(value)
        return generate.GenConfig(**raw)
    return generate.GenConfig()


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_parse(args):
    program = _load_scene(args.scene)
    violations = lang.validate_scene(program)
    if violations:
        raise SceneError(
            "; ".join(str(v) for v in violations)
        )
    _write_output(lang.serialize_scene_text(lang.canonicalize(program)), args.out)
    return EXIT_OK


def _cmd_interp(args):
    program = _load_scene(args.scene)
    geometry = geom.interpret_scene(
        program, bezier_segments=args.segments, cylinder_sides=args.sides
    )
    _write_output(geom.export_obj(geometry), args.out)
    return EXIT_OK


def _cmd_tokenize(args):
    program = _load_scene(args.scene)
    seq = tokens.tokenize(lang.canonicalize(program))
    _write_output(" ".join(str(t) for t in seq) + "\n", args.out)
    return EXIT_OK


def _cmd_detokenize(args):
    seqs = tokens.read_token_file(args.tokens)
    if not seqs:
        raise SceneError(f"no token sequences in {args.tokens}")
    if args.lenient:
        program, skipped = tokens.detokenize_lenient(seqs[0], args.res)
        if skipped:
            print(f"skipped {skipped} malformed command bodies", file=sys.stderr)
    else:
        program = tokens.detokenize(seqs[0], args.res)
    _write_output(lang.serialize_scene_text(program), args.out)
    return EXIT_OK


def _cmd_gen(args):
    config = _gen_config(args)
    manifest = generate.generate_dataset(config, args.n, args.seed, args.out)
    print(f"wrote {manifest['count']} scenes to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    from . import model as M

    model_config = M.ModelConfig()
    train_config = M.TrainConfig()
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if "model" in raw:
            model_config = M.ModelConfig.from_dict(raw["model"])
        if "train" in raw:
            train_config = M.TrainConfig.from_dict(raw["train"])
    if args.epochs is not None:
        train_config = M.TrainConfig(
            **{**train_config.to_dict(), "epochs": args.epochs}
        )

    def report(state, epoch, train_loss, val_loss):
        val = "-" if val_loss is None else f"{val_loss:.4f}"
        print(f"epoch {epoch}: train {train_loss:.4f} val {val}")

    M.train(
        args.data,
        model_config,
        train_config,
        seed=args.seed,
        out_dir=args.out,
        callback=report if args.verbose else None,
    )
    print(f"checkpoint written to {Path(args.out) / train_config.checkpoint_name}")
    return EXIT_OK


def _cmd_infer(args):
    from . import model as M

    model, _ = M.load_checkpoint(args.ckpt)
    points = generate.read_xyz(args.cloud)
    strategy = "nucleus" if args.top_p is not None else "greedy"
    program, result, skipped = M.predict_scene(
        model,
        points,
        strategy=strategy,
        top_p=args.top_p if args.top_p is not None else 0.9,
        seed=args.seed,
        constrained=args.constrained,
    )
    if skipped:
        print(f"skipped {skipped} malformed command bodies", file=sys.stderr)
    if result.truncated:
        print("generation hit the length cap", file=sys.stderr)
    _write_output(lang.serialize_scene_text(program), args.out)
    return EXIT_OK


def _cmd_eval_layout(args):
    names, reports = [], []
    dropped = 0
    for pred_file, gt_file in _paired_scene_files(args.pred, args.gt):
        # predictions may carry unrealizable commands; keep what interprets
        pred_program = lang.parse_scene_text(
            pred_file.read_text(), check_references=False
        )
        pred, n_dropped = geom.layout_entities_lenient(pred_program)
        dropped += n_dropped
        gt = _scene_entities(_load_scene(gt_file))
        names.append(gt_file.stem)
        reports.append(metrics.evaluate_layout(pred, gt))
    if dropped:
        print(f"dropped {dropped} unrealizable predicted entities", file=sys.stderr)
    dataset = metrics.aggregate_layout(reports)
    if args.csv:
        Path(args.csv).write_text(metrics.layout_csv(names, reports))
    _emit_json(dataset.to_dict(), args.out)
    return EXIT_OK


def _cmd_eval_bbox(args):
    names, reports = [], []
    for pred_file, gt_file in _paired_scene_files(args.pred, args.gt):
        pred = geom.interpret_scene(_load_scene(pred_file)).boxes
        gt = geom.interpret_scene(_load_scene(gt_file)).boxes
        names.append(gt_file.stem)
        reports.append(metrics.detection_f1(pred, gt, (0.25, 0.5)))
    dataset = metrics.aggregate_detection(reports)
    if args.csv:
        Path(args.csv).write_text(metrics.detection_csv(names, reports))
    _emit_json(dataset.to_dict(), args.out)
    return EXIT_OK


def _cmd_eval_geom_iou(args):
    pred = geom.interpret_scene(_load_scene(args.pred))
    gt = geom.interpret_scene(_load_scene(args.gt))
    iou = metrics.voxel_geometry_iou(
        list(pred.meshes.values()), list(gt.meshes.values()), args.res
    )
    _emit_json({"voxel_iou": iou, "resolution": args.res}, args.out)
    return EXIT_OK


def _cmd_token_acc(args):
    pred = tokens.read_token_file(args.pred)
    gt = tokens.read_token_file(args.gt)
    if len(pred) != len(gt):
        raise SceneError(
            f"sequence count mismatch: {len(pred)} predictions vs {len(gt)} references"
        )
    if not gt:
        raise SceneError("no sequences to compare")
    accs = [
        tokens.token_accuracy_slack(p, g, args.slack) for p, g in zip(pred, gt)
    ]
    _emit_json(
        {
            "slack": args.slack,
            "mean_accuracy": float(np.mean(accs)),
            "per_sequence": accs,
        },
        args.out,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenelang", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="validate a scene file, echo canonical form")
    p.add_argument("scene")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("interp", help="interpret a scene into a Wavefront OBJ")
    p.add_argument("scene")
    p.add_argument("--out")
    p.add_argument("--segments", type=int, default=geom.DEFAULT_BEZIER_SEGMENTS)
    p.add_argument("--sides", type=int, default=geom.DEFAULT_CYLINDER_SIDES)
    p.set_defaults(func=_cmd_interp)

    p = sub.add_parser("tokenize", help="scene file -> token sequence")
    p.add_argument("scene")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("detokenize", help="token file -> scene file")
    p.add_argument("tokens")
    p.add_argument("--out")
    p.add_argument("--res", type=float, default=lang.DEFAULT_RESOLUTION)
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=_cmd_detokenize)

    p = sub.add_parser("gen", help="generate a scene/cloud/token dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of generator settings")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train the scene model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON with 'model' and 'train' sections")
    p.add_argument("--epochs", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="point cloud -> scene via a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--constrained", action="store_true")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--greedy", action="store_true")
    group.add_argument("--top-p", type=float, dest="top_p")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval-layout", help="layout F1 between scene directories")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out")
    p.add_argument("--csv", help="also write one row of scores per scene")
    p.set_defaults(func=_cmd_eval_layout)

    p = sub.add_parser("eval-bbox", help="detection F1 between scene directories")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out")
    p.add_argument("--csv", help="also write one row of scores per scene")
    p.set_defaults(func=_cmd_eval_bbox)

    p = sub.add_parser("eval-geom-iou", help="voxel IoU between two scenes")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--res", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_geom_iou)

    p = sub.add_parser("token-acc", help="token accuracy with slack")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--slack", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_token_acc)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (SceneError, FileNotFoundError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
