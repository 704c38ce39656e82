"""Multi-view modality: orthographic depth renders and token pooling.

Run:  python3 demos/03_rendering_and_view_tokens.py
"""

import numpy as np

from shapefuse.points import PointCloud, normalize_cloud
from shapefuse.synthetic import SyntheticSpec, make_object
from shapefuse.tensor import Tensor
from shapefuse.views import ViewBackbone, inter_view_pool, intra_view_pool, render_views


def ascii_view(img, levels=" .:-=+*#%@"):
    rows = []
    for row in img:
        rows.append("".join(levels[min(int(v * (len(levels) - 1)), len(levels) - 1)]
                            for v in row))
    return "\n".join(rows)


# A cone, viewed from 12 azimuths 30 degrees apart (the camera circles the
# Z axis; each point splats 1 - normalized depth, nearest surface wins).
spec = SyntheticSpec(classes=5, per_class=1, points_n=256, views_m=12,
                     surface_samples=2048, render_samples=32768, seed=4)
dense, _, _ = make_object(spec, 4, 0)  # class 4 is the cone family
stack = render_views(normalize_cloud(PointCloud(dense.points)), 12, 32)
print("azimuths:", stack.azimuths.astype(int).tolist())
print("view 0 (32x32, brighter = closer):")
print(ascii_view(stack.images[0, 0]))

# The shared conv backbone turns every view into a C x H x W feature map.
backbone = ViewBackbone(widths=(16, 32, 64), resolution=32, seed=0)
maps = backbone.forward(stack.images)
print("\nfeature maps:", maps.shape, "(views, channels, H, W)")

# Two token sets feed the aggregators:
#   object tokens: average across views, one token per spatial cell
#   view tokens:   average across space, one token per view
obj_tokens = inter_view_pool(maps)
view_tokens = intra_view_pool(maps)
print("object tokens:", obj_tokens.shape, " view tokens:", view_tokens.shape)

# Averaging across views is order-free; per-view tokens follow view order.
shuffled = backbone.forward(stack.images[::-1].copy())
print("inter-view pooling is permutation invariant:",
      bool(np.allclose(inter_view_pool(shuffled).data, obj_tokens.data)))
