"""On-disk formats.

Scene text
    Lines starting with ``#`` are metadata comments and are skipped on read.
    The first other line is the header::

        splatlift-scene 1 <N> <d> <d_s> <xmin> <ymin> <zmin> <xmax> <ymax> <zmax>

    followed by exactly N primitive records, one per line, whitespace
    separated::

        px py pz  sx sy sz  qw qx qy qz  opacity  r g b  v_1 .. v_d  s_1 .. s_ds

    Floats are written with ``repr`` so a write/read cycle is lossless.

Label maps
    Binary PGM (P5), maxval 65535, big-endian 16-bit samples. Header
    comments carry metadata. Labels above 65535 are refused at write time.

Embedding maps
    16-byte header of four little-endian uint32 (magic, H, W, d) then
    H*W*d little-endian float32 values in raster order, channel fastest.
    Coverage is stored as its own file in the same format with d = 1.

Manifest
    Plain text. ``key = value`` lines describe the dataset; each view is a
    line ``view <index> <split> <W> <H> <fx> <fy> <cx> <cy> <m00> .. <m33>
    <instance_gt> <semantic_gt> <instance_input>`` with paths relative to
    the manifest's directory.

Config files
    ``key = value`` per line, ``#`` starts a comment, blank lines ignored.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import Camera, EmbeddingMap, LabelMap, MaskKind, Scene

SCENE_TAG = "splatlift-scene"
SCENE_VERSION = 1
MANIFEST_TAG = "# splatlift-manifest 1"
EMBEDDING_MAGIC = 0x4D455053  # b"SPEM" read as little-endian uint32
PGM_MAXVAL = 65535


class FormatError(ValueError):
    """A file does not follow the expected format."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _comment_lines(meta: Mapping[str, Any] | None) -> list[str]:
    if not meta:
        return []
    return [f"# {k} = {_meta_value(v)}" for k, v in meta.items()]


def _meta_value(v: Any) -> str:
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


# ---------------------------------------------------------------- scene


def write_scene(path: str | Path, scene: Scene, meta: Mapping[str, Any] | None = None) -> None:
    n, d, ds = len(scene), scene.embedding_dim, scene.semantic_dim
    lines = _comment_lines(meta)
    lines.append(" ".join([SCENE_TAG, str(SCENE_VERSION), str(n), str(d), str(ds),
                           *map(_fmt, np.asarray(scene.bound).ravel())]))
    table = np.hstack([
        scene.positions, scene.scales, scene.rotations, scene.opacities[:, None], scene.colors,
        scene.instance_embeddings, scene.semantic_embeddings,
    ])
    lines.extend(" ".join(map(_fmt, row)) for row in table)
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene(path: str | Path) -> Scene:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty scene file")
    head = rows[0].split()
    if len(head) != 11 or head[0] != SCENE_TAG:
        raise FormatError(f"{path}: bad header {rows[0]!r}")
    if int(head[1]) != SCENE_VERSION:
        raise FormatError(f"{path}: unsupported version {head[1]}")
    n, d, ds = int(head[2]), int(head[3]), int(head[4])
    bound = np.array([float(x) for x in head[5:]]).reshape(2, 3)
    body = rows[1:]
    if len(body) != n:
        raise FormatError(f"{path}: header declares {n} primitives, found {len(body)}")
    width = 14 + d + ds
    table = np.empty((n, width))
    for k, line in enumerate(body):
        vals = line.split()
        if len(vals) != width:
            raise FormatError(f"{path}: primitive {k} has {len(vals)} fields, expected {width}")
        table[k] = [float(v) for v in vals]
    return Scene(
        positions=table[:, 0:3].copy(),
        scales=table[:, 3:6].copy(),
        rotations=table[:, 6:10].copy(),
        opacities=table[:, 10].copy(),
        colors=table[:, 11:14].copy(),
        instance_embeddings=table[:, 14:14 + d].copy(),
        semantic_embeddings=table[:, 14 + d:].copy(),
        bound=bound,
    )


# ---------------------------------------------------------------- label maps


def write_pgm(path: str | Path, labels: LabelMap | np.ndarray, comments: Mapping[str, Any] | None = None) -> None:
    lab = np.asarray(labels.labels if isinstance(labels, LabelMap) else labels)
    if lab.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() > PGM_MAXVAL):
        raise ValueError(
            f"label range [{int(lab.min())}, {int(lab.max())}] does not fit a 16-bit PGM (max {PGM_MAXVAL})"
        )
    h, w = lab.shape
    head = ["P5", *_comment_lines(comments), f"{w} {h}", str(PGM_MAXVAL)]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(lab.astype(">u2").tobytes())


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1  # one whitespace byte ends the header


def read_pgm(path: str | Path, kind: MaskKind = MaskKind.INSTANCE) -> LabelMap:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    size = w * h * np.dtype(dtype).itemsize
    if len(data) - offset < size:
        raise FormatError(f"{path}: expected {size} bytes of samples")
    labels = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset).reshape(h, w).astype(np.int64)
    return LabelMap(labels, kind)


# ---------------------------------------------------------------- embedding maps


def write_embedding_values(path: str | Path, values: np.ndarray) -> None:
    v = np.asarray(values)
    if v.ndim == 2:
        v = v[:, :, None]
    h, w, d = v.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", EMBEDDING_MAGIC, h, w, d))
        fh.write(v.astype("<f4").tobytes())


def read_embedding_values(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: shorter than the 16-byte header")
    magic, h, w, d = struct.unpack("<4I", data[:16])
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic:#x}")
    if len(data) != 16 + 4 * h * w * d:
        raise FormatError(f"{path}: size does not match header {h}x{w}x{d}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, d).astype(np.float64)


def write_embedding_map(path: str | Path, emb_map: EmbeddingMap) -> Path:
    """Write values to ``path`` and coverage next to it; returns the coverage path."""
    path = Path(path)
    cov_path = path.with_suffix(".cov" + path.suffix)
    write_embedding_values(path, emb_map.values)
    write_embedding_values(cov_path, emb_map.coverage)
    return cov_path


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestView:
    index: int
    split: str  # "train" or "eval"
    camera: Camera
    instance_gt: str
    semantic_gt: str
    instance_input: str


@dataclass(frozen=True)
class Manifest:
    root: Path
    meta: dict[str, str]
    views: tuple[ManifestView, ...]

    def split(self, name: str) -> list[ManifestView]:
        return [v for v in self.views if v.split == name]

    def path(self, rel: str) -> Path:
        return self.root / rel

    @property
    def scene_path(self) -> Path:
        return self.path(self.meta["scene"])


def write_manifest(path: str | Path, meta: Mapping[str, Any], views: Sequence[ManifestView]) -> None:
    lines = [MANIFEST_TAG]
    for k, v in meta.items():
        if "\n" in str(k) or "=" in str(k):
            raise ValueError(f"bad manifest key {k!r}")
        lines.append(f"{k} = {_meta_value(v)}")
    for v in views:
        for p in (v.instance_gt, v.semantic_gt, v.instance_input):
            if any(c.isspace() for c in p):
                raise ValueError(f"manifest paths may not contain whitespace: {p!r}")
        cam = v.camera
        nums = [cam.width, cam.height, *map(_fmt, cam.focal), *map(_fmt, cam.principal_point),
                *map(_fmt, np.asarray(cam.world_to_camera).ravel())]
        lines.append(" ".join(["view", str(v.index), v.split, *map(str, nums),
                               v.instance_gt, v.semantic_gt, v.instance_input]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    meta: dict[str, str] = {}
    views = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.startswith("view "):
            tok = s.split()
            if len(tok) != 28:
                raise FormatError(f"{path}:{lineno}: view record has {len(tok)} fields, expected 28")
            cam = Camera(
                world_to_camera=np.array([float(x) for x in tok[9:25]]).reshape(4, 4),
                focal=(float(tok[5]), float(tok[6])),
                principal_point=(float(tok[7]), float(tok[8])),
                width=int(tok[3]),
                height=int(tok[4]),
            )
            views.append(ManifestView(int(tok[1]), tok[2], cam, tok[25], tok[26], tok[27]))
            continue
        key, sep, value = s.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = value' or a view record")
        meta[key.strip()] = value.strip()
    if not views:
        raise FormatError(f"{path}: no views listed")
    return Manifest(root=path.parent, meta=meta, views=tuple(views))


# ---------------------------------------------------------------- config files


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise FormatError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text(), str(path))


def coerce_value(text: str, annotation: Any, default: Any) -> Any:
    """Convert a config string to the type of a dataclass field."""
    kind = type(default) if default is not None else None
    ann = str(annotation)
    if isinstance(default, tuple) or ann.startswith("tuple"):
        parts = text.replace(",", " ").split()
        return tuple(int(p) for p in parts)
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text.lower() == "none" and "None" in ann:
        return None
    if kind is int or ann.startswith("int"):
        return int(text)
    if kind is float or ann.startswith("float"):
        return float(text)
    if kind is not None and issubclass(kind, str):
        return kind(text)
    return text


def dataclass_overrides(cls, values: Mapping[str, str]) -> dict[str, Any]:
    """Typed keyword arguments for ``cls`` taken from string ``values``."""
    out = {}
    defaults = cls()
    for f in fields(cls):
        if f.name in values:
            try:
                out[f.name] = coerce_value(values[f.name], f.type, getattr(defaults, f.name))
            except ValueError as exc:
                raise FormatError(f"{f.name}: {exc}") from None
    return out


# ---------------------------------------------------------------- tables


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              meta: Mapping[str, Any] | None = None) -> None:
    """CSV with ``#`` metadata lines first; floats written with ``repr``."""
    with open(path, "w", newline="") as fh:
        for line in _comment_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def read_csv(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(" = ")
            meta[k] = v
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path: str | Path, obj: Any) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    Path(path).write_text(json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n")
