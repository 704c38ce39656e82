"""Descriptor fusion and training losses.

The final descriptor is MLP(concat of the four aggregated features) in the
fixed order (self/object, self/view, cross/object, cross/view). Training
uses the additive angular margin loss: with unit descriptors f and unit
class weights W_k,

    theta_k = arccos(W_k^T f)
    logits  = s * cos(theta_k + m * [k == y])
    loss    = mean over the batch of -log softmax(logits)[y]

Columns of W are re-normalized on every forward pass, which maintains the
unit-norm invariant exactly without optimizer-side constraints. When
theta_y + m exceeds pi, cos(theta_y + m) is used as-is.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .optim import Parameter, init_param
from .tensor import Tensor


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax at the true class."""
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ContractError(f"need {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label out of range [0, {k})")
    logp = T.log(T.softmax(logits, axis=1))
    picked = T.gather(T.reshape(logp, (n * k,)), np.arange(n, dtype=np.int64) * k + labels)
    return T.smul(T.mean(picked), -1.0)


class FusionHead:
    """Two-layer MLP mapping concatenated aggregated features to the descriptor."""

    def __init__(self, in_width: int, hidden: int = 1024, out_width: int = 512, seed: int = 0):
        self.in_width = int(in_width)
        self.out_width = int(out_width)
        self.w1 = init_param("head.fuse.w1", (in_width, hidden), "gaussian", seed,
                             sigma=float(np.sqrt(2.0 / in_width)))
        self.b1 = init_param("head.fuse.b1", (hidden,), "zeros", seed)
        self.w2 = init_param("head.fuse.w2", (hidden, out_width), "gaussian", seed,
                             sigma=float(np.sqrt(2.0 / hidden)))
        self.b2 = init_param("head.fuse.b2", (out_width,), "zeros", seed)

    def params(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, fused: Tensor) -> Tensor:
        if fused.shape[-1] != self.in_width:
            raise ContractError(
                f"fusion head expects width {self.in_width}, got {fused.shape[-1]}"
            )
        hidden = T.relu(T.add(T.matmul(fused, self.w1.value), self.b1.value))
        return T.add(T.matmul(hidden, self.w2.value), self.b2.value)


def fuse_descriptor(features: list[Tensor], head: FusionHead) -> Tensor:
    """Concatenate 1 x D aggregated features in order and run the MLP."""
    return head.forward(T.concat(features, axis=1))


class ArcFaceHead:
    """Angular-margin classifier state: the per-class weight matrix."""

    def __init__(self, desc_dim: int, classes: int, margin: float = 0.5, scale: float = 64.0,
                 seed: int = 0):
        if not 0.0 <= margin < np.pi / 2:
            raise ContractError(f"margin must lie in [0, pi/2), got {margin}")
        if scale <= 0:
            raise ContractError(f"scale must be positive, got {scale}")
        self.classes = int(classes)
        self.margin = float(margin)
        self.scale = float(scale)
        self.weight = init_param("head.arcface.weight", (desc_dim, classes), "gaussian", seed,
                                 sigma=float(np.sqrt(2.0 / desc_dim)))

    def params(self) -> list[Parameter]:
        return [self.weight]

    def loss(self, descriptors: Tensor, labels: np.ndarray) -> Tensor:
        n, d = descriptors.shape
        norms = np.linalg.norm(descriptors.data, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            worst = float(np.abs(norms - 1.0).max())
            raise ContractError(f"descriptors must be unit-norm (max deviation {worst:.3g})")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= self.classes:
            raise ContractError(f"label out of range [0, {self.classes})")
        w_unit = T.l2_normalize(self.weight.value, axis=0)
        cosine = T.matmul(descriptors, w_unit)  # (N, K)
        theta = T.arccos(cosine)
        margin_shift = np.zeros((n, self.classes))
        margin_shift[np.arange(n), labels] = self.margin
        logits = T.smul(T.cos(T.add(theta, Tensor(margin_shift))), self.scale)
        return softmax_cross_entropy(logits, labels)


class ClassifierHead:
    """Plain affine + cross-entropy head used for backbone pretraining."""

    def __init__(self, prefix: str, in_width: int, classes: int, seed: int = 0):
        self.classes = int(classes)
        self.weight = init_param(f"{prefix}.cls.weight", (in_width, classes), "gaussian", seed,
                                 sigma=float(np.sqrt(2.0 / in_width)))
        self.bias = init_param(f"{prefix}.cls.bias", (classes,), "zeros", seed)

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def logits(self, features: Tensor) -> Tensor:
        return T.add(T.matmul(features, self.weight.value), self.bias.value)

    def loss(self, features: Tensor, labels: np.ndarray) -> Tensor:
        return softmax_cross_entropy(self.logits(features), labels)
