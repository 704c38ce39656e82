"""Whole pipeline at miniature scale: generate, pretrain, finetune, retrieve.

Takes a minute or two on one CPU core. The CLI drives the identical code:

  shapefuse gen --classes 3 --per-class 6 --out corpus
  shapefuse train --phase pretrain_point --manifest corpus/manifest.tsv --out ckpt_p
  shapefuse train --phase pretrain_view  --manifest corpus/manifest.tsv --out ckpt_v
  shapefuse train --phase finetune --manifest corpus/manifest.tsv \
      --pretrained-point ckpt_p --pretrained-view ckpt_v --out ckpt
  shapefuse embed --checkpoint ckpt --manifest corpus/manifest.tsv --out test.pvd1
  shapefuse eval --db test.pvd1

Run:  python3 demos/06_tiny_end_to_end.py
"""

import tempfile

from shapefuse.config import load_config
from shapefuse.formats import read_manifest
from shapefuse.retrieval import evaluate_records
from shapefuse.synthetic import SyntheticSpec, generate_synthetic_corpus
from shapefuse.training import (
    build_model_from_checkpoint,
    embed_items,
    finetune,
    load_corpus,
    pretrain,
    robustness_sweep,
)

TINY = {
    "data.classes": 3, "data.per_class": 6, "data.points": 128, "data.views": 4,
    "data.resolution": 16, "data.surface_samples": 1024, "data.render_samples": 8192,
    "model.point_widths": "16,16", "model.point_k": 8, "model.point_dim": 64,
    "model.view_widths": "8,16", "model.agg_dim": 32, "model.heads": 2,
    "model.mlp_hidden": 16, "model.fuse_hidden": 64, "model.desc_dim": 32,
    "train.batch": 8, "train.seed": 7, "data.seed": 7,
}

with tempfile.TemporaryDirectory() as out:
    cfg = load_config(overrides=TINY)
    spec = SyntheticSpec(classes=3, per_class=6, points_n=128, views_m=4, resolution=16,
                         surface_samples=1024, render_samples=8192, seed=7)
    manifest = read_manifest(generate_synthetic_corpus(spec, out))
    items = load_corpus(manifest)
    classes = manifest.num_classes
    print(f"corpus: {len(items)} objects / {classes} classes "
          f"({len(manifest.split('train'))} train)")

    cfg_p = load_config(overrides={**TINY, "train.epochs": 8}, phase="pretrain_point")
    point_arrays, log = pretrain(cfg_p, items, classes)
    print(f"point pretraining: loss {log[0][2]:.3f} -> {log[-1][2]:.3f}")

    cfg_v = load_config(overrides={**TINY, "train.epochs": 12}, phase="pretrain_view")
    view_arrays, log = pretrain(cfg_v, items, classes)
    print(f"view pretraining:  loss {log[0][2]:.3f} -> {log[-1][2]:.3f}")

    cfg_f = load_config(overrides={**TINY, "train.epochs": 8, "train.freeze_until": 5},
                        phase="finetune")
    arrays, log = finetune(cfg_f, items, classes, point_arrays, view_arrays)
    print(f"finetuning:        loss {log[0][2]:.3f} -> {log[-1][2]:.3f}")

    model = build_model_from_checkpoint(cfg_f, classes, arrays)
    test_items = [it for it in items if it.split == "test"]
    report = evaluate_records(embed_items(model, test_items))
    print("\nheld-out retrieval:")
    print(report.fmt())

    print("robustness to missing views (micro mAP):")
    for setting, value in robustness_sweep(model, test_items, "views"):
        print(f"  {setting} views\t{value:.6f}")
