"""shapefuse: desk-scale multimodal 3D object retrieval.

Point clouds and multi-view renders of the same object are encoded by
small learned backbones, aggregated with self-attention (per modality) and
cross-attention (point feature querying view tokens), fused into a single
unit-norm descriptor trained with an additive angular-margin loss, and
ranked by cosine similarity. Everything runs on fp64 numpy with a built-in
reverse-mode autodiff tape, so gradients are finite-difference checkable.
"""

from .attention import Cmam, Imam, TokenSequence, cross_attention, multihead_self_attention
from .config import Config, load_config
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    LoadError,
    NumericError,
    ShapeFuseError,
)
from .formats import DescriptorRecord, read_pvd1, read_pvt1, write_pvd1, write_pvt1
from .heads import ArcFaceHead, ClassifierHead, FusionHead, fuse_descriptor
from .model import AblationFlags, RetrievalModel, flags_for_variant
from .optim import SGD, Parameter, init_param
from .points import (
    KnnGraph,
    PointBranch,
    PointCloud,
    edgeconv_layer,
    farthest_point_sample,
    knn_graph,
    normalize_cloud,
)
from .retrieval import (
    MetricReport,
    RankedList,
    aggregate_metrics,
    average_precision,
    evaluate_records,
    f1_at_n,
    ndcg_at_n,
    rank_all,
)
from .synthetic import SyntheticSpec, generate_synthetic_corpus
from .tensor import Tensor, backward
from .views import ViewBackbone, ViewStack, inter_view_pool, intra_view_pool, render_views

__version__ = "0.1.0"
