"""Multi-view branch: renderer, shared conv backbone, and token pooling.

Rendering is a point-splatting orthographic rasterizer: the cloud is
rotated about Z by each azimuth, projected onto the x/z plane, and every
point writes 1 - normalized depth into its pixel keeping the per-pixel
maximum (a z-buffer over splats). Background stays 0.

The backbone is three conv blocks (3x3 conv, relu, 2x2 stride-2 max pool)
shared across views; with the default 32x32 input and widths 16/32/64 it
emits 64 x 4 x 4 maps, i.e. 16 object-level tokens of width 64.

Token conventions (position embeddings depend on them): object tokens are
the view-averaged map flattened row-major over H then W; view tokens are
per-view spatial means, ordered like the views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .optim import Parameter, init_param
from .points import PointCloud
from .tensor import Tensor


@dataclass
class ViewStack:
    """M single-channel renders of one object plus their azimuths (degrees)."""

    images: np.ndarray  # (M, 1, H, W), values in [0, 1]
    azimuths: np.ndarray  # (M,), strictly increasing, uniform 360/M spacing

    def __post_init__(self):
        img = np.asarray(self.images, dtype=np.float64)
        az = np.asarray(self.azimuths, dtype=np.float64)
        if img.ndim != 4 or img.shape[1] != 1 or img.shape[0] < 1:
            raise ContractError(f"view stack must be (M, 1, H, W), got {img.shape}")
        if az.shape != (img.shape[0],):
            raise ContractError("one azimuth per view required")
        spacing = 360.0 / img.shape[0]
        expected = np.arange(img.shape[0]) * spacing + az[0]
        if not np.allclose(az, expected, atol=1e-9):
            raise ContractError("azimuths must increase uniformly by 360/M")
        self.images = img
        self.azimuths = az

    @property
    def m(self) -> int:
        return self.images.shape[0]


def render_views(cloud: PointCloud, num_views: int, resolution: int) -> ViewStack:
    """Render M orthographic depth-shaded views at uniform azimuths."""
    if cloud.n < 1:
        raise ContractError("cannot render an empty cloud")
    if num_views < 1 or 360 % num_views != 0:
        raise ContractError(f"number of views must divide 360, got {num_views}")
    h = w = int(resolution)
    pts = cloud.points
    images = np.zeros((num_views, 1, h, w))
    azimuths = np.arange(num_views) * (360.0 / num_views)
    for j, az in enumerate(azimuths):
        theta = np.deg2rad(az)
        c, s = np.cos(theta), np.sin(theta)
        x = pts[:, 0] * c - pts[:, 1] * s
        y = pts[:, 0] * s + pts[:, 1] * c
        z = pts[:, 2]
        cols = np.clip(((x + 1.0) * 0.5 * w).astype(np.int64), 0, w - 1)
        rows = np.clip(((1.0 - z) * 0.5 * h).astype(np.int64), 0, h - 1)
        shade = np.clip((y + 1.0) * 0.5, 0.0, 1.0)  # 1 - normalized depth
        np.maximum.at(images[j, 0], (rows, cols), shade)
    return ViewStack(images, azimuths)


class ViewBackbone:
    """Shared conv feature extractor applied to every view."""

    def __init__(self, widths=(16, 32, 64), resolution: int = 32, bias: bool = True, seed: int = 0):
        self.widths = tuple(widths)
        self.resolution = int(resolution)
        self.use_bias = bool(bias)
        if self.resolution % (2 ** len(self.widths)) != 0:
            raise DimensionError(
                f"resolution {self.resolution} incompatible with {len(self.widths)} "
                "stride-2 downsamples"
            )
        self._params: dict[str, Parameter] = {}
        c_in = 1
        for i, c_out in enumerate(self.widths):
            fan_in = 9 * c_in
            self._params[f"view.conv{i}.weight"] = init_param(
                f"view.conv{i}.weight", (fan_in, c_out), "gaussian", seed,
                sigma=float(np.sqrt(2.0 / fan_in)),
            )
            if self.use_bias:
                self._params[f"view.conv{i}.bias"] = init_param(
                    f"view.conv{i}.bias", (c_out,), "zeros", seed
                )
            c_in = c_out
        self.out_channels = c_in
        self.out_hw = self.resolution // (2 ** len(self.widths))
        self._patch_cache: dict[tuple, np.ndarray] = {}

    def params(self) -> dict[str, Parameter]:
        return dict(self._params)

    def _patch_index(self, m: int, h: int, w: int) -> np.ndarray:
        """Flat gather indices for 3x3/pad-1 patches over (M, h+2, w+2, C) rows."""
        key = (m, h, w)
        cached = self._patch_cache.get(key)
        if cached is not None:
            return cached
        hp, wp = h + 2, w + 2
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        base = ii.reshape(-1, 1, 1) + np.arange(3).reshape(1, 3, 1)  # padded row
        offs = jj.reshape(-1, 1, 1) + np.arange(3).reshape(1, 1, 3)  # padded col
        per_view = (base * wp + offs).reshape(h * w, 9)
        idx = (np.arange(m).reshape(-1, 1, 1) * (hp * wp) + per_view).reshape(-1)
        self._patch_cache[key] = idx
        return idx

    def _conv3x3(self, x: Tensor, weight: Parameter, bias: Parameter | None) -> Tensor:
        m, c, h, w = x.shape
        padded = T.pad2d(x, 1)  # (M, C, h+2, w+2)
        rows = T.reshape(T.transpose(padded, (0, 2, 3, 1)), (m * (h + 2) * (w + 2), c))
        patches = T.gather(rows, self._patch_index(m, h, w))  # (M*h*w*9, C)
        flat = T.reshape(patches, (m * h * w, 9 * c))
        out = T.matmul(flat, weight.value)
        if bias is not None:
            out = T.add(out, bias.value)
        return T.transpose(T.reshape(out, (m, h, w, -1)), (0, 3, 1, 2))

    @staticmethod
    def _maxpool2(x: Tensor) -> Tensor:
        m, c, h, w = x.shape
        grouped = T.reshape(x, (m, c, h // 2, 2, w // 2, 2))
        grouped = T.transpose(grouped, (0, 1, 2, 4, 3, 5))
        grouped = T.reshape(grouped, (m, c, h // 2, w // 2, 4))
        return T.tmax(grouped, axis=4)

    def forward(self, images: np.ndarray | Tensor) -> Tensor:
        """(M, 1, H0, W0) images -> (M, C, H, W) feature maps."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        if len(x.shape) != 4 or x.shape[1] != 1:
            raise DimensionError(f"backbone expects (M, 1, H, W), got {x.shape}")
        if x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise DimensionError(
                f"backbone built for {self.resolution}x{self.resolution}, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )
        for i in range(len(self.widths)):
            weight = self._params[f"view.conv{i}.weight"]
            bias = self._params.get(f"view.conv{i}.bias")
            x = self._conv3x3(x, weight, bias)
            x = T.relu(x)
            x = self._maxpool2(x)
        return x


def inter_view_pool(maps: Tensor) -> Tensor:
    """Mean across views, flattened to HW x C object tokens (row-major H, W)."""
    m, c, h, w = maps.shape
    fused = T.mean(maps, axis=0)  # (C, H, W)
    return T.transpose(T.reshape(fused, (c, h * w)), (1, 0))


def intra_view_pool(maps: Tensor) -> Tensor:
    """Per-view spatial mean: M x C view tokens."""
    m, c, h, w = maps.shape
    flat = T.reshape(maps, (m, c, h * w))
    return T.mean(flat, axis=2)
