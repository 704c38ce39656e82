"""Model assembly: backbones, aggregation modules, head, and the ablation
variants used by the module study.

Variants (selected via model.ablate):
  full              both modalities, object-level and view-level aggregation
  point_only        point branch straight into the fusion MLP
  view_only         mean view token straight into the fusion MLP
  direct_concat     concat(point feature, mean view token), no aggregation
  no_view_branch    object-level self+cross aggregation only
  no_object_branch  view-level self+cross aggregation only

Every variant shares the same training/evaluation harness; only the fusion
input width and the constructed parameter set differ. The full variant's
parameter names are a strict superset of every ablation's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import Cmam, Imam
from .config import Config
from .errors import ConfigError, ContractError, LoadError
from .heads import ArcFaceHead, FusionHead
from .optim import Parameter
from .points import PointBranch
from .tensor import Tensor
from .views import ViewBackbone, inter_view_pool, intra_view_pool


@dataclass(frozen=True)
class AblationFlags:
    use_point: bool = True
    use_view: bool = True
    use_object_branch: bool = True
    use_view_branch: bool = True
    direct_concat: bool = False


_VARIANT_FLAGS = {
    "full": AblationFlags(),
    "point_only": AblationFlags(use_view=False, use_object_branch=False, use_view_branch=False),
    "view_only": AblationFlags(use_point=False, use_object_branch=False, use_view_branch=False),
    "direct_concat": AblationFlags(use_object_branch=False, use_view_branch=False, direct_concat=True),
    "no_view_branch": AblationFlags(use_view_branch=False),
    "no_object_branch": AblationFlags(use_object_branch=False),
}


def flags_for_variant(name: str) -> AblationFlags:
    if name not in _VARIANT_FLAGS:
        raise ConfigError(f"unknown ablation variant '{name}'")
    return _VARIANT_FLAGS[name]


def validate_flags(flags: AblationFlags) -> None:
    if not (flags.use_point or flags.use_view):
        raise ConfigError("at least one modality must be enabled")
    if flags.direct_concat and not (flags.use_point and flags.use_view):
        raise ConfigError("direct_concat needs both modalities")
    if flags.direct_concat and (flags.use_object_branch or flags.use_view_branch):
        raise ConfigError("direct_concat excludes aggregation branches")
    if (flags.use_object_branch or flags.use_view_branch) and not (
        flags.use_point and flags.use_view
    ):
        raise ConfigError("aggregation branches need both modalities")
    if (
        flags.use_point
        and flags.use_view
        and not flags.direct_concat
        and not (flags.use_object_branch or flags.use_view_branch)
    ):
        raise ConfigError("both modalities enabled but no fusion path selected")


class RetrievalModel:
    """The retrieval network for one ablation variant."""

    def __init__(self, cfg: Config, classes: int, seed: int, flags: AblationFlags | None = None):
        self.cfg = cfg
        self.classes = int(classes)
        self.flags = flags or flags_for_variant(cfg.model.ablate)
        validate_flags(self.flags)
        mc = cfg.model
        self.point = None
        self.view = None
        self.obj_imam = self.view_imam = None
        self.obj_cmam = self.view_cmam = None

        if self.flags.use_point:
            self.point = PointBranch(mc.point_widths, mc.point_k, mc.point_dim, seed)
        if self.flags.use_view:
            self.view = ViewBackbone(mc.view_widths, cfg.data.resolution, mc.conv_bias, seed)

        fuse_in = 0
        if self.flags.direct_concat:
            fuse_in = mc.point_dim + (self.view.out_channels if self.view else 0)
        elif self.flags.use_object_branch or self.flags.use_view_branch:
            c = self.view.out_channels
            hw = self.view.out_hw * self.view.out_hw
            agg = dict(dim=mc.agg_dim, heads=mc.heads, mlp_hidden=mc.mlp_hidden,
                       blocks=mc.blocks, seed=seed)
            if self.flags.use_object_branch:
                self.obj_imam = Imam("agg.obj_imam", c, hw, **agg)
                self.obj_cmam = Cmam(
                    "agg.obj_cmam", c, hw, mc.point_dim, **agg,
                    shared_imam=self.obj_imam if mc.share_cmam_imam else None,
                )
                fuse_in += 2 * mc.agg_dim
            if self.flags.use_view_branch:
                self.view_imam = Imam("agg.view_imam", c, cfg.data.views, **agg)
                self.view_cmam = Cmam(
                    "agg.view_cmam", c, cfg.data.views, mc.point_dim, **agg,
                    shared_imam=self.view_imam if mc.share_cmam_imam else None,
                )
                fuse_in += 2 * mc.agg_dim
        elif self.flags.use_point and not self.flags.use_view:
            fuse_in = mc.point_dim
        else:  # view only
            fuse_in = self.view.out_channels

        self.fusion = FusionHead(fuse_in, mc.fuse_hidden, mc.desc_dim, seed)
        self.desc_dim = mc.desc_dim

    # -- parameter bookkeeping ------------------------------------------------

    def params(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        groups: list[list[Parameter]] = []
        if self.point:
            groups.append(list(self.point.params().values()))
        if self.view:
            groups.append(list(self.view.params().values()))
        for module in (self.obj_imam, self.obj_cmam, self.view_imam, self.view_cmam):
            if module is not None:
                groups.append(module.params())
        groups.append(self.fusion.params())
        for group in groups:
            for p in group:
                if p.name in out:
                    continue  # shared internal aggregator
                out[p.name] = p
        return out

    def backbone_params(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        if self.point:
            out.update(self.point.params())
        if self.view:
            out.update(self.view.params())
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], subset: bool = False) -> None:
        """Copy checkpoint arrays into parameters; shapes must match exactly."""
        params = self.params()
        for name, p in params.items():
            if name not in arrays:
                if subset:
                    continue
                raise LoadError(f"checkpoint is missing parameter {name}")
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise LoadError(
                    f"shape mismatch for parameter {name}: checkpoint "
                    f"{tuple(arr.shape)} vs model {tuple(p.data.shape)}"
                )
            p.value.data[...] = arr

    # -- forward paths ----------------------------------------------------------

    def backbone_outputs(self, points: np.ndarray | None, views: np.ndarray | None,
                         views_precomputed: bool = False):
        """Run the backbones: (f_point 1 x D_p or None, maps M x C x H x W or None)."""
        f_point = self.point.forward(points) if (self.point and points is not None) else None
        maps = None
        if self.flags.use_view:
            if views is None:
                raise ContractError("model variant needs view input")
            if views_precomputed:
                maps = views if isinstance(views, Tensor) else Tensor(views)
            else:
                maps = self.view.forward(views)
        return f_point, maps

    def descriptor_from_parts(self, f_point, maps, attn_sink: list | None = None) -> Tensor:
        """Aggregate backbone outputs into the unit-norm descriptor (1 x desc_dim)."""
        flags = self.flags
        pieces: list[Tensor] = []
        if flags.direct_concat:
            mean_view = T.reshape(T.mean(intra_view_pool(maps), axis=0), (1, -1))
            pieces = [f_point, mean_view]
        elif flags.use_object_branch or flags.use_view_branch:
            if flags.use_object_branch:
                obj_tokens = inter_view_pool(maps)
                pieces.append(self.obj_imam.forward(obj_tokens, attn_sink=attn_sink))
            if flags.use_view_branch:
                view_tokens = intra_view_pool(maps)
                pieces.append(self.view_imam.forward(view_tokens, attn_sink=attn_sink))
            if flags.use_object_branch:
                pieces.append(self.obj_cmam.forward(obj_tokens, f_point, attn_sink=attn_sink))
            if flags.use_view_branch:
                pieces.append(self.view_cmam.forward(view_tokens, f_point, attn_sink=attn_sink))
        elif flags.use_point:
            pieces = [f_point]
        else:
            pieces = [T.reshape(T.mean(intra_view_pool(maps), axis=0), (1, -1))]
        fused = T.concat(pieces, axis=1) if len(pieces) > 1 else pieces[0]
        f_global = self.fusion.forward(fused)
        return T.l2_normalize(f_global, axis=1)

    def embed_object(self, points: np.ndarray | None, views: np.ndarray | None,
                     views_precomputed: bool = False) -> Tensor:
        f_point, maps = self.backbone_outputs(points, views, views_precomputed)
        return self.descriptor_from_parts(f_point, maps)


def build_arcface(cfg: Config, classes: int, seed: int) -> ArcFaceHead:
    return ArcFaceHead(cfg.model.desc_dim, classes, cfg.train.arcface_m, cfg.train.arcface_s, seed)
