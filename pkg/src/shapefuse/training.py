"""Two-phase training orchestration.

Phase 1 pretrains each backbone with a plain cross-entropy head: the point
branch classifies its pooled feature, the view branch classifies the mean
of the per-view tokens. Phase 2 builds the requested model variant on top
of the pretrained backbones and trains with the angular-margin loss; for
the first `freeze_backbones_until` epochs only aggregation and head
parameters move (backbone outputs are computed once per object and
cached), afterwards everything trains at the scheduled learning rate.

All loops are single-threaded and seeded: identical config + seed gives
bit-identical checkpoints and logs. A NaN loss aborts with a NumericError
after writing the last completed epoch's parameters as `last_good`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import Config
from .errors import ContractError, NumericError
from .formats import (
    DescriptorRecord,
    Manifest,
    read_pvt1,
    save_checkpoint,
)
from .heads import ClassifierHead
from .model import RetrievalModel, build_arcface
from .optim import SGD, Parameter
from .points import PointCloud, farthest_point_sample, normalize_cloud
from .retrieval import evaluate_records
from .tensor import Tensor, backward


@dataclass
class CorpusItem:
    object_id: str
    label: int
    points: np.ndarray  # normalized n x 3
    views: np.ndarray  # (M, 1, H, W) images or (M, C, H, W) precomputed maps
    split: str


def load_corpus(manifest: Manifest) -> list[CorpusItem]:
    """Materialize the manifest; clouds are normalized at ingestion."""
    items = []
    for rec in manifest.records:
        cloud = normalize_cloud(PointCloud(read_pvt1(manifest.resolve(rec.cloud_path)), rec.object_id))
        views = read_pvt1(manifest.resolve(rec.views_path))
        items.append(CorpusItem(rec.object_id, rec.label, cloud.points, views, rec.split))
    return items


def _epoch_batches(ids: list[int], batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1_000_003 + epoch])))
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def format_log(lines: list[tuple]) -> str:
    return "".join(f"{e}\t{phase}\t{loss:.6f}\t{lr}\n" for e, phase, loss, lr in lines)


class _Aborter:
    """Keeps the last completed epoch's arrays for NaN-abort recovery."""

    def __init__(self, params: dict[str, Parameter], ckpt_dir: str | None):
        self.params = params
        self.ckpt_dir = ckpt_dir
        self.snapshot = {n: p.data.copy() for n, p in params.items()}

    def epoch_done(self) -> None:
        for n, p in self.params.items():
            self.snapshot[n][...] = p.data

    def abort(self, err: Exception, phase: str, epoch: int):
        if self.ckpt_dir is not None:
            save_checkpoint(os.path.join(self.ckpt_dir, "last_good"), self.snapshot)
        raise NumericError(
            f"{phase} diverged at epoch {epoch}: {err}; last good checkpoint saved"
        ) from err


def pretrain(cfg: Config, items: list[CorpusItem], classes: int,
             ckpt_dir: str | None = None) -> tuple[dict, list[tuple]]:
    """Pretrain one backbone with cross-entropy; returns (arrays, log lines)."""
    phase = cfg.train.phase
    if phase not in ("pretrain_point", "pretrain_view"):
        raise ContractError(f"pretrain called with phase '{phase}'")
    tc = cfg.train
    seed = tc.seed
    if phase == "pretrain_point":
        from .points import PointBranch

        branch = PointBranch(cfg.model.point_widths, cfg.model.point_k, cfg.model.point_dim, seed)
        head = ClassifierHead("point", cfg.model.point_dim, classes, seed)

        def features(item: CorpusItem) -> Tensor:
            return branch.forward(item.points)

        params = {**branch.params(), **{p.name: p for p in head.params()}}
    else:
        from .views import ViewBackbone, intra_view_pool

        backbone = ViewBackbone(cfg.model.view_widths, cfg.data.resolution, cfg.model.conv_bias, seed)
        head = ClassifierHead("view", backbone.out_channels, classes, seed)

        def features(item: CorpusItem) -> Tensor:
            tokens = intra_view_pool(backbone.forward(item.views))
            return T.reshape(T.mean(tokens, axis=0), (1, -1))

        params = {**backbone.params(), **{p.name: p for p in head.params()}}

    train_items = [it for it in items if it.split == "train"]
    if not train_items:
        raise ContractError("no training items in corpus")
    opt = SGD(params.values(), tc.momentum, tc.weight_decay)
    aborter = _Aborter(params, ckpt_dir)
    log: list[tuple] = []
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        epoch_loss = 0.0
        try:
            for batch in _epoch_batches(list(range(len(train_items))), tc.batch_size, seed, epoch):
                feats = T.concat([features(train_items[i]) for i in batch], axis=0)
                labels = np.array([train_items[i].label for i in batch])
                loss = head.loss(feats, labels)
                backward(loss)
                opt.step(lr)
                epoch_loss += loss.item() * len(batch)
        except NumericError as err:
            aborter.abort(err, phase, epoch)
        epoch_loss /= len(train_items)
        log.append((epoch, phase, epoch_loss, lr))
        aborter.epoch_done()
    return {n: p.data.copy() for n, p in params.items()}, log


def finetune(cfg: Config, items: list[CorpusItem], classes: int,
             point_arrays: dict | None, view_arrays: dict | None,
             views_precomputed: bool = False,
             ckpt_dir: str | None = None) -> tuple[dict, list[tuple]]:
    """Train the full variant with the angular-margin loss; returns (arrays, log)."""
    tc = cfg.train
    model = RetrievalModel(cfg, classes, tc.seed)
    if model.point is not None:
        if point_arrays is None:
            raise ContractError("finetune needs a pretrained point checkpoint")
        model.load_arrays(point_arrays, subset=True)
    if model.view is not None and not views_precomputed:
        if view_arrays is None:
            raise ContractError("finetune needs a pretrained view checkpoint")
        model.load_arrays(view_arrays, subset=True)
    arcface = build_arcface(cfg, classes, tc.seed)

    backbone = model.backbone_params()
    if views_precomputed and model.view is not None:
        # nothing upstream of precomputed maps can train
        for name in model.view.params():
            backbone.pop(name, None)
        permanent_frozen = set(model.view.params())
    else:
        permanent_frozen = set()
    head_params = {n: p for n, p in model.params().items() if n not in backbone and n not in permanent_frozen}
    head_params[arcface.weight.name] = arcface.weight
    all_params = {**model.params(), arcface.weight.name: arcface.weight}

    opt_head = SGD(head_params.values(), tc.momentum, tc.weight_decay)
    opt_backbone = SGD(backbone.values(), tc.momentum, tc.weight_decay) if backbone else None

    train_items = [it for it in items if it.split == "train"]
    if not train_items:
        raise ContractError("no training items in corpus")

    frozen_names = set(backbone) | permanent_frozen
    cache: dict[str, tuple] = {}

    def set_frozen(flag: bool) -> None:
        for name in frozen_names:
            all_params[name].value.requires_grad = not flag

    aborter = _Aborter(all_params, ckpt_dir)
    log: list[tuple] = []
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        frozen = epoch < tc.freeze_backbones_until or not backbone
        set_frozen(epoch < tc.freeze_backbones_until)
        if not frozen:
            cache.clear()
        epoch_loss = 0.0
        try:
            for batch in _epoch_batches(list(range(len(train_items))), tc.batch_size, tc.seed, epoch):
                descs = []
                for i in batch:
                    item = train_items[i]
                    if frozen:
                        if item.object_id not in cache:
                            f_point, maps = model.backbone_outputs(
                                item.points, item.views, views_precomputed
                            )
                            cache[item.object_id] = (
                                None if f_point is None else f_point.data.copy(),
                                None if maps is None else maps.data.copy(),
                            )
                        fp_arr, maps_arr = cache[item.object_id]
                        f_point = None if fp_arr is None else Tensor(fp_arr)
                        maps = None if maps_arr is None else Tensor(maps_arr)
                    else:
                        f_point, maps = model.backbone_outputs(
                            item.points, item.views, views_precomputed
                        )
                    descs.append(model.descriptor_from_parts(f_point, maps))
                labels = np.array([train_items[i].label for i in batch])
                loss = arcface.loss(T.concat(descs, axis=0), labels)
                backward(loss)
                opt_head.step(lr)
                if opt_backbone is not None and epoch >= tc.freeze_backbones_until:
                    opt_backbone.step(lr)
                epoch_loss += loss.item() * len(batch)
        except NumericError as err:
            aborter.abort(err, "finetune", epoch)
        epoch_loss /= len(train_items)
        log.append((epoch, "finetune", epoch_loss, lr))
        aborter.epoch_done()
    set_frozen(False)
    return {n: p.data.copy() for n, p in all_params.items()}, log


def embed_items(model: RetrievalModel, items: list[CorpusItem],
                views_precomputed: bool = False) -> list[DescriptorRecord]:
    """Embed objects in corpus order; descriptors come out unit-norm."""
    records = []
    for item in items:
        desc = model.embed_object(item.points, item.views, views_precomputed)
        records.append(DescriptorRecord(item.object_id, item.label, desc.data.reshape(-1).copy()))
    return records


def build_model_from_checkpoint(cfg: Config, classes: int, arrays: dict) -> RetrievalModel:
    """Rebuild the variant named by cfg and load every model parameter.

    Extra checkpoint entries (the angular-margin weight, pretrain heads)
    are ignored; a missing or mis-shaped model parameter is a LoadError.
    """
    model = RetrievalModel(cfg, classes, cfg.train.seed)
    model.load_arrays(arrays, subset=False)
    return model


def robustness_sweep(model: RetrievalModel, items: list[CorpusItem], axis: str,
                     grid: list[int] | None = None,
                     views_precomputed: bool = False) -> list[tuple[int, float]]:
    """Re-embed with reduced input along one axis; micro mAP per setting.

    The full setting skips every reduction, so its descriptors (and mAP)
    are bit-identical to a plain embed + evaluate run.
    """
    if axis not in ("views", "points"):
        raise ContractError(f"sweep axis must be 'views' or 'points', got '{axis}'")
    views_m = items[0].views.shape[0]
    points_n = items[0].points.shape[0]
    if grid is None:
        grid = list(range(2, views_m + 1, 2)) if axis == "views" else list(
            range(128, points_n + 1, 128)
        )
    table: list[tuple[int, float]] = []
    for setting in grid:
        if axis == "views":
            if setting < 1 or setting > views_m:
                raise ContractError(f"sweep setting {setting} exceeds trained views {views_m}")
        else:
            if setting < 2 or setting > points_n:
                raise ContractError(f"sweep setting {setting} exceeds trained points {points_n}")
        records = []
        for item in items:
            pts = item.points
            views = item.views
            if axis == "views" and setting < views_m:
                views = views[:setting]  # first V views in azimuth order
            if axis == "points" and setting < pts.shape[0]:
                pts = pts[farthest_point_sample(pts, setting)]
            desc = model.embed_object(pts, views, views_precomputed)
            records.append(DescriptorRecord(item.object_id, item.label, desc.data.reshape(-1).copy()))
        report = evaluate_records(records)
        table.append((setting, report.values["micro"]["map"]))
    return table
