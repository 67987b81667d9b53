"""Raster, flow and weight-map containers plus their file formats.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and values in ``[0, 1]``.  Flow fields and weight maps carry
metadata, so they get small dataclasses.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import png

FLO_MAGIC = b"PIEH"

DISOCCLUDED = np.uint8(1)
MOTION_BOUNDARY = np.uint8(2)
OUT_OF_BOUNDS = np.uint8(4)


class ImageFormatError(ValueError):
    """Raised for malformed, truncated or unsupported image/flow files."""


@dataclass(frozen=True)
class FlowField:
    """Dense displacement field of shape ``(H, W, 2)`` holding ``(u, v)``.

    ``direction`` is ``"forward"`` (t -> t+1) or ``"backward"`` (t+1 -> t).
    Fields produced by :func:`vidstyle.flow.warp_flow` may contain NaN
    sentinels where the lookup left the image.
    """

    vectors: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {v.shape}")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"unknown flow direction {self.direction!r}")
        object.__setattr__(self, "vectors", v)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def u(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.vectors[..., 1]

    @classmethod
    def zeros(cls, height: int, width: int, direction: str = "forward") -> "FlowField":
        return cls(np.zeros((height, width, 2)), direction)


@dataclass(frozen=True)
class WeightMap:
    """Per-pixel weights in ``[0, 1]`` with a provenance bitmask.

    ``flags`` combines :data:`DISOCCLUDED`, :data:`MOTION_BOUNDARY` and
    :data:`OUT_OF_BOUNDS`.
    """

    weights: np.ndarray
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
            raise ValueError("weights must lie in [0, 1]")
        flags = self.flags
        if flags is None:
            flags = np.zeros(w.shape, dtype=np.uint8)
        flags = np.asarray(flags, dtype=np.uint8)
        if flags.shape != w.shape:
            raise ValueError("flags and weights differ in shape")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "flags", flags)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @classmethod
    def ones(cls, height: int, width: int) -> "WeightMap":
        return cls(np.ones((height, width)))


def as_image(img) -> np.ndarray:
    """Coerce to a float64 ``(H, W, C)`` array."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"image must be (H, W, 1|3), got {a.shape}")
    return a


# ---------------------------------------------------------------- images

def _read_netpbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if data[:2] == b"P5" else 3
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad header") from exc
    if maxval == 255:
        dtype, bits = np.dtype("u1"), 8
    elif maxval == 65535:
        dtype, bits = np.dtype(">u2"), 16
    else:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    expected = width * height * channels * dtype.itemsize
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise ImageFormatError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    return arr.astype(np.float64) / (2 ** bits - 1)


def _read_png(path) -> np.ndarray:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        if info["bitdepth"] not in (8, 16):
            raise ImageFormatError(f"{path}: unsupported bit depth {info['bitdepth']}")
        arr = np.array([np.asarray(r) for r in rows], dtype=np.float64)
    except (png.Error, EOFError, ValueError) as exc:
        if isinstance(exc, ImageFormatError):
            raise
        raise ImageFormatError(f"{path}: {exc}") from exc
    planes = info["planes"]
    if arr.shape != (height, width * planes):
        raise ImageFormatError(f"{path}: truncated pixel data")
    arr = arr.reshape(height, width, planes)
    if info.get("alpha"):
        arr = arr[..., :-1]
    return arr / (2 ** info["bitdepth"] - 1)


def read_image(path) -> np.ndarray:
    """Load an 8/16-bit PNG or binary PGM/PPM as floats in ``[0, 1]``.

    Alpha channels are dropped.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"\x89PNG"):
        return _read_png(path)
    if head[:2] in (b"P5", b"P6"):
        return _read_netpbm(path)
    raise ImageFormatError(f"{path}: unrecognised image format")


def quantize(img, bits: int = 8) -> np.ndarray:
    """Round-half-up quantisation of ``[0, 1]`` values to integer codes."""
    a = as_image(img)
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    if a.min() < -1e-9 or a.max() > 1 + 1e-9:
        raise ValueError("image values outside [0, 1]; clamp before writing")
    maxv = 2 ** bits - 1
    return np.floor(np.clip(a, 0.0, 1.0) * maxv + 0.5).astype(np.uint16 if bits == 16 else np.uint8)


def write_image(img, path, bits: int = 8) -> None:
    """Write PNG (by default) or PGM/PPM when the suffix is .pgm/.ppm."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    q = quantize(img, bits)
    h, w, c = q.shape
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm"):
        magic = b"P5" if c == 1 else b"P6"
        dtype = ">u2" if bits == 16 else "u1"
        header = b"%s\n%d %d\n%d\n" % (magic, w, h, 2 ** bits - 1)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(q.astype(dtype).tobytes())
        return
    writer = png.Writer(width=w, height=h, greyscale=(c == 1), bitdepth=bits)
    with open(path, "wb") as fh:
        writer.write(fh, q.reshape(h, w * c).tolist())


# ------------------------------------------------------------------ flow

def read_flo(path, direction: str = "forward") -> FlowField:
    """Read a Middlebury ``.flo`` file."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FLO_MAGIC:
        raise ImageFormatError(f"{path}: bad .flo magic")
    width, height = np.frombuffer(data[4:12], dtype="<i4")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: invalid dimensions {width}x{height}")
    expected = int(width) * int(height) * 2 * 4
    if len(data) - 12 != expected:
        raise ImageFormatError(f"{path}: payload is {len(data) - 12} bytes, expected {expected}")
    vec = np.frombuffer(data[12:], dtype="<f4").reshape(int(height), int(width), 2)
    if not np.all(np.isfinite(vec)):
        raise ImageFormatError(f"{path}: non-finite flow values")
    return FlowField(vec.astype(np.float64), direction)


def write_flo(flow: FlowField, path) -> None:
    vec = np.asarray(flow.vectors, dtype="<f4")
    if not np.all(np.isfinite(vec)):
        raise ValueError("cannot write non-finite flow")
    h, w, _ = vec.shape
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(vec.tobytes())


def write_mask(mask, path) -> None:
    """Write a boolean or [0, 1] map as an 8-bit PGM/PNG."""
    write_image(np.asarray(mask, dtype=np.float64)[..., None], path)


def read_mask(path) -> np.ndarray:
    return read_image(path)[..., 0] > 0.5


# -------------------------------------------------------------- manifest

@dataclass
class SequenceManifest:
    """JSON description of a frame sequence with flows and optional ground truth.

    Frame indices are 0-based.  Each flow entry maps frame ``from`` to frame
    ``to`` and is defined on the grid of ``from``.  Occlusion masks are
    likewise defined on the ``from`` grid, nonzero meaning "no valid
    correspondence in ``to``".  Relative paths resolve against ``root``.
    """

    frames: list[str]
    flows: list[dict] = field(default_factory=list)
    gt_flows: list[dict] = field(default_factory=list)
    gt_occlusions: list[dict] = field(default_factory=list)
    style: str | None = None
    root: str = "."

    def validate(self) -> None:
        n = len(self.frames)
        if n == 0:
            raise ValueError("manifest lists no frames")
        for key in ("flows", "gt_flows", "gt_occlusions"):
            for entry in getattr(self, key):
                a, b = entry["from"], entry["to"]
                if not (0 <= a < n and 0 <= b < n) or a == b:
                    raise ValueError(f"{key} entry {a}->{b} references missing frames")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.root) / p

    @classmethod
    def load(cls, path) -> "SequenceManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        m = cls(frames=list(doc["frames"]),
                flows=list(doc.get("flows", [])),
                gt_flows=list(doc.get("gt_flows", [])),
                gt_occlusions=list(doc.get("gt_occlusions", [])),
                style=doc.get("style"),
                root=str(path.parent))
        m.validate()
        return m

    def save(self, path) -> None:
        doc = {"frames": self.frames, "flows": self.flows}
        if self.gt_flows:
            doc["gt_flows"] = self.gt_flows
        if self.gt_occlusions:
            doc["gt_occlusions"] = self.gt_occlusions
        if self.style is not None:
            doc["style"] = self.style
        Path(path).write_text(json.dumps(doc, indent=2))


@dataclass
class Sequence:
    """In-memory frames and flows keyed by ``(from, to)`` frame indices."""

    frames: list[np.ndarray]
    flows: dict[tuple[int, int], FlowField] = field(default_factory=dict)
    gt_flows: dict[tuple[int, int], FlowField] = field(default_factory=dict)
    gt_occlusions: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    def flow(self, a: int, b: int) -> FlowField:
        try:
            return self.flows[(a, b)]
        except KeyError:
            raise KeyError(f"missing flow for frame pair {a}->{b}") from None

    @classmethod
    def from_manifest(cls, manifest: SequenceManifest) -> "Sequence":
        frames = [read_image(manifest.resolve(p)) for p in manifest.frames]

        def flows(entries):
            out = {}
            for e in entries:
                a, b = e["from"], e["to"]
                out[(a, b)] = read_flo(manifest.resolve(e["path"]),
                                       "forward" if b > a else "backward")
            return out

        occ = {(e["from"], e["to"]): read_mask(manifest.resolve(e["path"]))
               for e in manifest.gt_occlusions}
        return cls(frames, flows(manifest.flows), flows(manifest.gt_flows), occ)

    def save(self, out_dir, style: np.ndarray | None = None) -> SequenceManifest:
        """Write frames, flows and ground truth under ``out_dir``; returns the manifest."""
        out = Path(out_dir)
        for sub in ("frames", "flow", "gt"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        frames = []
        for i, f in enumerate(self.frames):
            rel = f"frames/frame_{i:04d}.png"
            write_image(np.clip(f, 0, 1), out / rel)
            frames.append(rel)

        def dump(flows, sub):
            entries = []
            for (a, b), fl in sorted(flows.items()):
                rel = f"{sub}/flow_{a:04d}_{b:04d}.flo"
                write_flo(fl, out / rel)
                entries.append({"from": a, "to": b, "path": rel})
            return entries

        occ = []
        for (a, b), m in sorted(self.gt_occlusions.items()):
            rel = f"gt/occ_{a:04d}_{b:04d}.pgm"
            write_mask(m, out / rel)
            occ.append({"from": a, "to": b, "path": rel})
        style_rel = None
        if style is not None:
            style_rel = "style.png"
            write_image(style, out / style_rel)
        m = SequenceManifest(frames, dump(self.flows, "flow"), dump(self.gt_flows, "gt"),
                             occ, style_rel, root=str(out))
        m.save(out / "manifest.json")
        return m


def ensure_writable_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"{p} is not writable")
    return p
