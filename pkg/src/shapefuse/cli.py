"""Command-line surface: gen, train, embed, eval.

Exit codes: 0 success, 2 usage/contract problems (bad flags, bad config
keys, corrupt input files), 3 numeric/runtime failures (NaN loss, shape
mismatches against a checkpoint).

External data can be ingested by writing a manifest by hand: point clouds
are n x 3 PVT1 tensors, views are M x 1 x H x W PVT1 images (or feature
maps with the `# views.precomputed = true` directive).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import load_config
from .errors import ContractError, ShapeFuseError
from .formats import read_manifest, read_pvd1, save_checkpoint, write_pvd1
from .retrieval import evaluate_records
from .synthetic import SyntheticSpec, generate_synthetic_corpus
from .training import (
    build_model_from_checkpoint,
    embed_items,
    finetune,
    format_log,
    load_corpus,
    pretrain,
    robustness_sweep,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override data.seed and train.seed")
    parser.add_argument("--out", help="output path (command-specific)")


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["data.seed"] = args.seed
        out["train.seed"] = args.seed
    return out


def cmd_gen(args) -> int:
    cfg = load_config(args.config, overrides=_overrides(args))
    data = cfg.data
    spec = SyntheticSpec(
        classes=args.classes if args.classes is not None else data.classes,
        per_class=args.per_class if args.per_class is not None else data.per_class,
        points_n=args.points if args.points is not None else data.points,
        views_m=args.views if args.views is not None else data.views,
        resolution=data.resolution,
        jitter_sigma=data.jitter,
        scale_min=data.scale_min,
        scale_max=data.scale_max,
        surface_samples=data.surface_samples,
        render_samples=data.render_samples,
        seed=args.seed if args.seed is not None else data.seed,
    )
    out_dir = args.out or "corpus"
    manifest_path = generate_synthetic_corpus(spec, out_dir)
    manifest = read_manifest(manifest_path)
    n_train = len(manifest.split("train"))
    n_test = len(manifest.split("test"))
    print(manifest_path)
    print(
        f"objects={len(manifest.records)} classes={manifest.num_classes} "
        f"train={n_train} test={n_test} points={spec.points_n} views={spec.views_m}"
    )
    return 0


def _load_ckpt_dir(path: str | None, what: str):
    from .formats import load_checkpoint

    if path is None:
        raise ContractError(f"finetune needs --pretrained-{what}")
    if not os.path.isdir(path):
        raise ContractError(f"missing pretrained {what} checkpoint: {path}")
    return load_checkpoint(path)


def cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.ablate:
        overrides["model.ablate"] = args.ablate
    cfg = load_config(args.config, overrides=overrides, phase=args.phase)
    manifest = read_manifest(args.manifest)
    items = load_corpus(manifest)
    classes = manifest.num_classes
    ckpt_dir = args.out or f"ckpt_{args.phase}"
    if args.phase in ("pretrain_point", "pretrain_view"):
        if args.phase == "pretrain_view" and manifest.views_precomputed:
            raise ContractError("cannot pretrain the view backbone on precomputed maps")
        arrays, log = pretrain(cfg, items, classes, ckpt_dir)
    else:
        point_arrays = None
        view_arrays = None
        from .model import RetrievalModel

        probe = RetrievalModel(cfg, classes, cfg.train.seed)
        if probe.point is not None:
            point_arrays = _load_ckpt_dir(args.pretrained_point, "point")
        if probe.view is not None and not manifest.views_precomputed:
            view_arrays = _load_ckpt_dir(args.pretrained_view, "view")
        arrays, log = finetune(
            cfg, items, classes, point_arrays, view_arrays,
            views_precomputed=manifest.views_precomputed, ckpt_dir=ckpt_dir,
        )
    save_checkpoint(ckpt_dir, arrays)
    from .config import dump_config

    with open(os.path.join(ckpt_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    with open(os.path.join(ckpt_dir, "log.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_log(log))
    for line in format_log(log).splitlines():
        print(line)
    print(ckpt_dir)
    return 0


def _model_from_ckpt(ckpt_dir: str, manifest):
    from .formats import load_checkpoint

    cfg_path = os.path.join(ckpt_dir, "config.txt")
    if not os.path.exists(cfg_path):
        raise ContractError(f"{ckpt_dir}: missing config.txt")
    cfg = load_config(cfg_path)
    arrays = load_checkpoint(ckpt_dir)
    model = build_model_from_checkpoint(cfg, manifest.num_classes, arrays)
    return model, cfg


def cmd_embed(args) -> int:
    manifest = read_manifest(args.manifest)
    model, _ = _model_from_ckpt(args.checkpoint, manifest)
    items = [it for it in load_corpus(manifest) if it.split == args.split]
    if not items:
        raise ContractError(f"no items in split '{args.split}'")
    records = embed_items(model, items, manifest.views_precomputed)
    out_path = args.out or f"descriptors_{args.split}.pvd1"
    write_pvd1(out_path, records)
    print(f"{out_path}\t{len(records)} records")
    return 0


def cmd_eval(args) -> int:
    records = read_pvd1(args.db)
    report = evaluate_records(records)
    text = report.fmt()
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.export_embeddings:
        with open(args.export_embeddings, "w", encoding="utf-8") as fh:
            for rec in records:
                vec = "\t".join(f"{v:.6f}" for v in rec.vector)
                fh.write(f"{rec.object_id}\t{rec.label}\t{vec}\n")
    if args.sweep:
        if not (args.checkpoint and args.manifest):
            raise ContractError("--sweep needs --checkpoint and --manifest")
        manifest = read_manifest(args.manifest)
        model, _ = _model_from_ckpt(args.checkpoint, manifest)
        items = [it for it in load_corpus(manifest) if it.split == args.split]
        table = robustness_sweep(model, items, args.sweep,
                                 views_precomputed=manifest.views_precomputed)
        for setting, value in table:
            print(f"{setting}\t{value:.6f}")
        if args.out:
            with open(args.out + ".sweep", "w", encoding="utf-8") as fh:
                for setting, value in table:
                    fh.write(f"{setting}\t{value:.6f}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapefuse",
        description="point-cloud + multi-view 3D object retrieval at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic corpus")
    _add_common(p_gen)
    p_gen.add_argument("--classes", type=int)
    p_gen.add_argument("--per-class", type=int, dest="per_class")
    p_gen.add_argument("--points", type=int)
    p_gen.add_argument("--views", type=int)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="pretrain a backbone or finetune the model")
    _add_common(p_train)
    p_train.add_argument("--phase", required=True,
                         choices=["pretrain_point", "pretrain_view", "finetune"])
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--ablate", choices=[
        "full", "point_only", "view_only", "direct_concat",
        "no_view_branch", "no_object_branch",
    ])
    p_train.add_argument("--pretrained-point", dest="pretrained_point")
    p_train.add_argument("--pretrained-view", dest="pretrained_view")
    p_train.set_defaults(func=cmd_train)

    p_embed = sub.add_parser("embed", help="embed a split into a descriptor database")
    _add_common(p_embed)
    p_embed.add_argument("--checkpoint", required=True)
    p_embed.add_argument("--manifest", required=True)
    p_embed.add_argument("--split", default="test", choices=["train", "test"])
    p_embed.set_defaults(func=cmd_embed)

    p_eval = sub.add_parser("eval", help="evaluate a descriptor database")
    _add_common(p_eval)
    p_eval.add_argument("--db", required=True)
    p_eval.add_argument("--export-embeddings", dest="export_embeddings")
    p_eval.add_argument("--sweep", choices=["views", "points"])
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--manifest")
    p_eval.add_argument("--split", default="test", choices=["train", "test"])
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShapeFuseError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
