"""Synthetic desk-scale corpus: five primitive surface families.

Each object is a densely sampled primitive surface (sphere, box, cylinder,
torus, cone) with per-object uniform scale and per-point Gaussian jitter.
The dense cloud is normalized, rendered into the view stack, and farthest
point sampling reduces it to the stored cloud. Everything is driven by
per-object seed sequences, so a corpus is byte-identical for a given spec.

The train/test split ranks object ids by a stable content hash within each
class and sends the first 80% to train; splitting per class keeps every
class represented on both sides.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .formats import ManifestRecord, write_manifest, write_pvt1
from .points import PointCloud, farthest_point_sample, normalize_cloud
from .views import render_views

CLASS_NAMES = ("sphere", "box", "cylinder", "torus", "cone")


@dataclass
class SyntheticSpec:
    classes: int = 5
    per_class: int = 40
    points_n: int = 1024
    views_m: int = 12
    resolution: int = 32
    jitter_sigma: float = 0.01
    scale_min: float = 0.8
    scale_max: float = 1.2
    surface_samples: int = 8192  # population the stored cloud is FPS-drawn from
    render_samples: int = 32768  # denser population for hole-free renders
    seed: int = 7

    def __post_init__(self):
        if not 1 <= self.classes <= len(CLASS_NAMES):
            raise ConfigError(f"classes must lie in [1, {len(CLASS_NAMES)}]")
        if self.per_class < 1 or self.points_n < 1 or self.views_m < 1:
            raise ConfigError("per_class, points and views must be positive")
        if self.surface_samples < self.points_n:
            raise ConfigError("surface_samples must be >= points")
        if self.render_samples < self.surface_samples:
            raise ConfigError("render_samples must be >= surface_samples")
        if self.scale_min > self.scale_max or self.scale_min <= 0:
            raise ConfigError("need 0 < scale_min <= scale_max")


def _sample_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_box(rng: np.random.Generator, n: int) -> np.ndarray:
    half = 0.8
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-half, half, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, half, -half)
    for a in range(3):
        mask = axis == a
        rest = [d for d in range(3) if d != a]
        pts[mask, a] = sign[mask]
        pts[mask, rest[0]] = uv[mask, 0]
        pts[mask, rest[1]] = uv[mask, 1]
    return pts


def _sample_cylinder(rng: np.random.Generator, n: int) -> np.ndarray:
    radius, height = 0.6, 1.6
    lateral = 2 * np.pi * radius * height
    caps = 2 * np.pi * radius**2
    on_side = rng.uniform(size=n) < lateral / (lateral + caps)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    z = rng.uniform(-height / 2, height / 2, size=n)
    r_cap = radius * np.sqrt(rng.uniform(size=n))
    cap_z = np.where(rng.uniform(size=n) < 0.5, height / 2, -height / 2)
    pts[:, 0] = np.where(on_side, radius, r_cap) * np.cos(theta)
    pts[:, 1] = np.where(on_side, radius, r_cap) * np.sin(theta)
    pts[:, 2] = np.where(on_side, z, cap_z)
    return pts


def _sample_torus(rng: np.random.Generator, n: int) -> np.ndarray:
    major, minor = 0.65, 0.25
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        batch = max(64, 2 * (n - filled))
        u = rng.uniform(0, 2 * np.pi, size=batch)
        v = rng.uniform(0, 2 * np.pi, size=batch)
        # area element scales with (major + minor cos v); rejection keeps it uniform
        keep = rng.uniform(size=batch) < (major + minor * np.cos(v)) / (major + minor)
        u, v = u[keep], v[keep]
        take = min(len(u), n - filled)
        ring = major + minor * np.cos(v[:take])
        pts[filled : filled + take, 0] = ring * np.cos(u[:take])
        pts[filled : filled + take, 1] = ring * np.sin(u[:take])
        pts[filled : filled + take, 2] = minor * np.sin(v[:take])
        filled += take
    return pts


def _sample_cone(rng: np.random.Generator, n: int) -> np.ndarray:
    radius, height = 0.7, 1.4
    slant = np.sqrt(radius**2 + height**2)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    on_side = rng.uniform(size=n) < lateral / (lateral + base)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    frac = np.sqrt(rng.uniform(size=n))  # uniform over the unrolled sector
    r_base = radius * np.sqrt(rng.uniform(size=n))
    pts = np.empty((n, 3))
    pts[:, 0] = np.where(on_side, frac * radius, r_base) * np.cos(theta)
    pts[:, 1] = np.where(on_side, frac * radius, r_base) * np.sin(theta)
    pts[:, 2] = np.where(on_side, height / 2 - frac * height, -height / 2)
    return pts


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "torus": _sample_torus,
    "cone": _sample_cone,
}


def make_object(spec: SyntheticSpec, class_idx: int, instance_idx: int):
    """Deterministically build one object: (dense normalized cloud, stored cloud, views).

    One dense draw serves both purposes: the full set renders the views
    (dense enough that every covered pixel sees the front surface) and its
    first `surface_samples` points feed farthest point sampling. Both share
    the normalization frame.
    """
    name = CLASS_NAMES[class_idx]
    ss = np.random.SeedSequence([spec.seed, class_idx, instance_idx])
    rng = np.random.Generator(np.random.PCG64(ss))
    pts = _SAMPLERS[name](rng, spec.render_samples)
    pts = pts * rng.uniform(spec.scale_min, spec.scale_max)
    pts = pts + rng.normal(0.0, spec.jitter_sigma, size=pts.shape)
    object_id = f"{name}_{instance_idx:03d}"
    dense = normalize_cloud(PointCloud(pts, object_id))
    views = render_views(dense, spec.views_m, spec.resolution)
    fps_source = dense.points[: spec.surface_samples]
    idx = farthest_point_sample(fps_source, spec.points_n)
    stored = PointCloud(fps_source[idx], object_id)
    return dense, stored, views


def _split_tag(object_id: str, rank: int, n_train: int) -> str:
    return "train" if rank < n_train else "test"


def _id_hash(object_id: str) -> int:
    return int(hashlib.sha1(object_id.encode("utf-8")).hexdigest()[:12], 16)


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir: str) -> str:
    """Write clouds, views and the manifest; returns the manifest path."""
    clouds_dir = os.path.join(out_dir, "clouds")
    views_dir = os.path.join(out_dir, "views")
    os.makedirs(clouds_dir, exist_ok=True)
    os.makedirs(views_dir, exist_ok=True)
    records: list[ManifestRecord] = []
    for class_idx in range(spec.classes):
        ids = [f"{CLASS_NAMES[class_idx]}_{i:03d}" for i in range(spec.per_class)]
        ranked = sorted(ids, key=lambda oid: (_id_hash(oid), oid))
        rank_of = {oid: r for r, oid in enumerate(ranked)}
        n_train = int(spec.per_class * 0.8)
        for instance_idx in range(spec.per_class):
            _, stored, views = make_object(spec, class_idx, instance_idx)
            oid = stored.object_id
            cloud_rel = f"clouds/{oid}.pvt1"
            views_rel = f"views/{oid}.pvt1"
            write_pvt1(os.path.join(out_dir, cloud_rel), stored.points)
            write_pvt1(os.path.join(out_dir, views_rel), views.images)
            records.append(
                ManifestRecord(oid, class_idx, cloud_rel, views_rel,
                               _split_tag(oid, rank_of[oid], n_train))
            )
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest_path, records)
    return manifest_path
