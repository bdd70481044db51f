"""On-disk formats: PNG images, JSON-lines manifests, poison audits, checkpoints.

Manifest record (one JSON object per line)::

    {"id": "000012", "image": "images/000012.png",
     "faces": [{"bbox": [x, y, w, h], "confidence": 1.0, "landmarks": [10 floats],
                "attack_tag": "lsa_rotated"}],
     "poison": {"attack_tag": ..., "masks": [[x, y, w, h]], "alpha": 1.0,
                "original_faces": [...], "original_patches": ["audit/000012_0.png"]}}

``attack_tag`` on a face is written only when the face was poisoned; the
``poison`` block is present iff the sample was poisoned. Unknown top-level keys
are carried through a read/write round trip untouched.

Checkpoint layout (little-endian): b"BDFD", u32 version, u32 tensor count, then
per tensor u32 name length, UTF-8 name, u32 rank, u32 dims..., float32 payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .anchors import AnchorConfig
from .core import AttackTag, BBox, FaceAnnotation, Landmarks5, Sample
from .detector.model import WIDTHS, DetectorModel
from .poison import AuditRecord, PoisonAudit

MANIFEST = "manifest.jsonl"
AUDIT = "audit.jsonl"
MAGIC = b"BDFD"
VERSION = 1

_KNOWN_KEYS = {"id", "image", "faces", "poison"}


class DataError(ValueError):
    pass


def save_png(path: Path, image: np.ndarray) -> None:
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep reruns byte-identical
    Image.fromarray(arr, "RGB").save(path, format="PNG", compress_level=6)


def load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)


def face_to_json(f: FaceAnnotation) -> dict:
    # floats throughout, so a read/write cycle reproduces the same bytes
    d = {"bbox": [float(v) for v in f.bbox.as_list()], "confidence": float(f.confidence),
         "landmarks": [float(v) for v in f.landmarks.flat()]}
    if f.poisoned:
        d["attack_tag"] = f.attack_tag.value
    return d


def face_from_json(d: dict) -> FaceAnnotation:
    bbox, lms = d.get("bbox"), d.get("landmarks")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise DataError(f"bbox must hold 4 numbers, got {bbox!r}")
    if not isinstance(lms, list) or len(lms) != 10:
        raise DataError(f"landmarks must hold 10 numbers, got {lms!r}")
    tag = AttackTag(d.get("attack_tag", "none"))
    try:
        return FaceAnnotation(BBox(*map(float, bbox)), Landmarks5.from_array(lms),
                              float(d.get("confidence", 1.0)), tag is not AttackTag.NONE, tag)
    except (TypeError, ValueError) as e:
        raise DataError(str(e)) from e


def _record(sample: Sample, image_rel: str, poison: dict | None) -> dict:
    rec = {"id": sample.id, "image": image_rel, "faces": [face_to_json(f) for f in sample.faces]}
    if poison is not None:
        rec["poison"] = poison
    for k, v in sample.extra.items():
        if k not in _KNOWN_KEYS:
            rec[k] = v
    return rec


def _audit_json(r: AuditRecord, patch_paths: list[str]) -> dict:
    return {"attack_tag": r.attack_tag.value, "masks": [[float(v) for v in m.as_list()] for m in r.masks],
            "alpha": r.alpha, "original_faces": [face_to_json(f) for f in r.original_faces],
            "original_patches": patch_paths}


def write_dataset(dataset: list[Sample], out_dir, audit: PoisonAudit | None = None) -> Path:
    """Write images, manifest and (if given) the poison audit under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = {r.sample_id: r for r in audit.records} if audit else {}
    lines, audit_lines = [], []
    for s in dataset:
        rel = f"images/{s.id}.png"
        save_png(out / rel, s.image)
        poison = None
        r = records.get(s.id)
        if r is not None:
            paths = []
            for k, patch in enumerate(r.original_patches):
                prel = f"audit/{s.id}_{k}.png"
                save_png(out / prel, patch)
                paths.append(prel)
            poison = _audit_json(r, paths)
            audit_lines.append(json.dumps({"id": s.id, **poison}))
        lines.append(json.dumps(_record(s, rel, poison)))
    (out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if audit is not None:
        (out / AUDIT).write_text("".join(x + "\n" for x in audit_lines), encoding="utf-8")
    return out / MANIFEST


def write_manifest(dataset: list[Sample], path) -> None:
    """Write the manifest alone; images are assumed to sit at images/<id>.png."""
    lines = [json.dumps(_record(s, s.extra.get("image", f"images/{s.id}.png"), s.extra.get("poison")))
             for s in dataset]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"line {lineno}: malformed JSON ({e.msg})") from e
    if not isinstance(rec, dict) or not isinstance(rec.get("id"), str) or \
            not isinstance(rec.get("image"), str) or not isinstance(rec.get("faces"), list):
        raise DataError(f"line {lineno}: record needs string 'id', 'image' and list 'faces'")
    if not rec["faces"]:
        raise DataError(f"line {lineno}: record has no faces")
    return rec


def read_manifest(path, load_images: bool = True) -> list[Sample]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    root = path.parent
    out = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rec = _parse_record(line, lineno)
        try:
            faces = [face_from_json(f) for f in rec["faces"]]
            if "poison" in rec:
                for f in rec["poison"].get("original_faces", []):
                    face_from_json(f)
        except DataError as e:
            raise DataError(f"line {lineno}: {e}") from e
        image = None
        if load_images:
            img_path = root / rec["image"]
            if not img_path.is_file():
                raise DataError(f"line {lineno}: image {rec['image']} not found")
            image = load_png(img_path)
        extra = {k: v for k, v in rec.items() if k not in ("id", "faces")}
        out.append(Sample(rec["id"], image, faces, extra))
    return out


def read_audit(dataset_dir) -> PoisonAudit:
    """Rebuild the poison audit from the manifest's poison blocks."""
    root = Path(dataset_dir)
    audit = PoisonAudit()
    for s in read_manifest(root, load_images=False):
        p = s.extra.get("poison")
        if p is None:
            continue
        audit.records.append(AuditRecord(
            s.id, AttackTag(p["attack_tag"]), [BBox(*m) for m in p["masks"]], float(p["alpha"]),
            [face_from_json(f) for f in p["original_faces"]],
            [load_png(root / q) for q in p["original_patches"]]))
    return audit


def write_checkpoint(model: DetectorModel, path) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", VERSION, len(model.params))
    for name, arr in model.params.items():
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(bytes(buf))


def read_checkpoint(path, anchor_config: AnchorConfig | None = None,
                    widths: tuple[int, ...] | None = None) -> DetectorModel:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise DataError(f"{path}: not a BDFD checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: bad tensor name") from e
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes after tensor table")
    kwargs = {}
    if anchor_config is not None:
        kwargs["anchor_config"] = anchor_config
    try:
        return DetectorModel(params, widths=widths or WIDTHS, **kwargs)
    except (ValueError, KeyError) as e:
        raise DataError(f"{path}: {e}") from e
