"""Binary and text file formats.

PVT1 (tensor): magic "PVT1", u32 rank, rank x u64 dims, fp64 little-endian
row-major payload. All integers little-endian.

PVD1 (descriptor database): magic "PVD1", u32 count, u32 descriptor width,
then per record: u16 id length, UTF-8 id bytes, u32 label, width x fp64
little-endian values.

Manifest: tab-separated lines `object_id  label  cloud_path  views_path
split`, split in {train, test}. Lines starting with '#' carry corpus-wide
directives (`# key = value`); the only one understood today is
`views.precomputed = true`, which marks the views files as M x C x H x W
feature maps instead of raw M x 1 x H x W images. Paths are relative to the
manifest's directory.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError

PVT1_MAGIC = b"PVT1"
PVD1_MAGIC = b"PVD1"


def write_pvt1(path: str, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(PVT1_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_pvt1(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PVT1_MAGIC:
        raise FormatError(f"{path}: bad PVT1 magic at byte 0")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated PVT1 header at byte {len(blob)}")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    if len(blob) < offset + 8 * rank:
        raise FormatError(f"{path}: truncated PVT1 dims at byte {len(blob)}")
    dims = struct.unpack_from("<" + "Q" * rank, blob, offset)
    offset += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    expected = offset + 8 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: PVT1 payload length {len(blob) - offset} at byte {offset}, "
            f"expected {8 * count}"
        )
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.reshape(dims).astype(np.float64)


@dataclass
class DescriptorRecord:
    """One retrieval unit: id, class label, unit-norm descriptor."""

    object_id: str
    label: int
    vector: np.ndarray


def write_pvd1(path: str, records: list[DescriptorRecord]) -> None:
    if not records:
        raise ContractError("refusing to write an empty descriptor database")
    width = records[0].vector.size
    with open(path, "wb") as fh:
        fh.write(PVD1_MAGIC)
        fh.write(struct.pack("<II", len(records), width))
        for rec in records:
            vec = np.ascontiguousarray(rec.vector, dtype=np.float64)
            if vec.size != width:
                raise ContractError(
                    f"descriptor width mismatch for {rec.object_id}: "
                    f"{vec.size} vs {width}"
                )
            ident = rec.object_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<I", int(rec.label)))
            fh.write(vec.astype("<f8").tobytes())


def read_pvd1(path: str) -> list[DescriptorRecord]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PVD1_MAGIC:
        raise FormatError(f"{path}: bad PVD1 magic at byte 0")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated PVD1 header at byte {len(blob)}")
    count, width = struct.unpack_from("<II", blob, 4)
    offset = 12
    records: list[DescriptorRecord] = []
    for _ in range(count):
        if len(blob) < offset + 2:
            raise FormatError(f"{path}: truncated record header at byte {offset}")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if len(blob) < offset + id_len + 4 + 8 * width:
            raise FormatError(f"{path}: truncated record at byte {offset}")
        object_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        (label,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        vec = np.frombuffer(blob, dtype="<f8", count=width, offset=offset).copy()
        offset += 8 * width
        records.append(DescriptorRecord(object_id, int(label), vec))
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes at byte {offset}")
    return records


@dataclass
class ManifestRecord:
    object_id: str
    label: int
    cloud_path: str
    views_path: str
    split: str


@dataclass
class Manifest:
    records: list[ManifestRecord]
    views_precomputed: bool = False
    root: str = "."
    directives: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return max(r.label for r in self.records) + 1

    def split(self, tag: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == tag]

    def resolve(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path)


def read_manifest(path: str, validate_files: bool = True) -> Manifest:
    """Parse and validate a manifest; label range and file existence checked."""
    records: list[ManifestRecord] = []
    directives: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                body = line.lstrip()[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    directives[key.strip()] = value.strip()
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
            object_id, label_s, cloud_path, views_path, split = parts
            if split not in ("train", "test"):
                raise FormatError(f"{path}:{lineno}: bad split tag '{split}'")
            try:
                label = int(label_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad label '{label_s}'") from None
            records.append(ManifestRecord(object_id, label, cloud_path, views_path, split))
    if not records:
        raise FormatError(f"{path}: empty manifest")
    ids = [r.object_id for r in records]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate object ids")
    labels = sorted({r.label for r in records})
    if labels != list(range(len(labels))):
        raise FormatError(f"{path}: labels must cover 0..K-1, got {labels}")
    man = Manifest(
        records=records,
        views_precomputed=directives.get("views.precomputed", "false").lower() == "true",
        root=os.path.dirname(os.path.abspath(path)),
        directives=directives,
    )
    if validate_files:
        for rec in records:
            for rel in (rec.cloud_path, rec.views_path):
                full = man.resolve(rel)
                if not os.path.exists(full):
                    raise FormatError(f"{path}: missing referenced file {rel}")
    return man


def write_manifest(path: str, records: list[ManifestRecord], directives: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (directives or {}).items():
            fh.write(f"# {key} = {value}\n")
        for r in records:
            fh.write(f"{r.object_id}\t{r.label}\t{r.cloud_path}\t{r.views_path}\t{r.split}\n")


# ---------------------------------------------------------------------------
# checkpoints: one PVT1 per parameter plus a plain-text index
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt_dir: str, arrays: dict[str, np.ndarray]) -> None:
    os.makedirs(ckpt_dir, exist_ok=True)
    index_lines = []
    for name in sorted(arrays):
        fname = name.replace(".", "_") + ".pvt1"
        write_pvt1(os.path.join(ckpt_dir, fname), arrays[name])
        index_lines.append(f"{name}\t{fname}")
    with open(os.path.join(ckpt_dir, "index.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(index_lines) + "\n")


def load_checkpoint(ckpt_dir: str) -> dict[str, np.ndarray]:
    index_path = os.path.join(ckpt_dir, "index.txt")
    if not os.path.exists(index_path):
        raise FormatError(f"{ckpt_dir}: no index.txt; not a checkpoint directory")
    arrays: dict[str, np.ndarray] = {}
    with open(index_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, _, fname = line.partition("\t")
            arrays[name] = read_pvt1(os.path.join(ckpt_dir, fname))
    return arrays
