"""File formats: HSC1 cubes, LBL1 label maps, PBM masks, PGM previews,
raw band-sequential import and ``key=value`` sidecar files."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagicError,
    FormatError,
    NonFiniteDataError,
    TruncatedFileError,
    ValidationError,
)
from .hsi import HsiCube, LabelMap, WavelengthGrid

__all__ = [
    "save_cube",
    "save_planes",
    "load_planes",
    "load_cube",
    "save_labels",
    "load_labels",
    "read_pbm",
    "write_pbm",
    "write_pgm",
    "import_raw_bsq",
    "import_raw_labels",
    "write_kv",
    "read_kv",
]

CUBE_MAGIC = b"HSC1"
LABEL_MAGIC = b"LBL1"
UNKNOWN_LABEL_CODE = 0xFFFF


def _atomic_write(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_planes(planes, centers, path) -> None:
    """Write ``planes[p, row, col]`` as HSC1 without cube semantics.

    Used for signed data such as feature and score images; ``centers`` fills
    the wavelength slot (plane indices are fine).
    """
    planes = np.asarray(planes, dtype=float)
    if planes.ndim != 3:
        raise ValidationError("planes must be 3-D (planes, rows, cols)")
    if not np.all(np.isfinite(planes)):
        raise ValidationError("refusing to write non-finite values")
    count, rows, cols = planes.shape
    centers = np.asarray(centers, dtype=float).ravel()
    if centers.size != count:
        raise ValidationError(f"{count} planes but {centers.size} centre values")
    header = CUBE_MAGIC + struct.pack("<III", cols, rows, count)
    _atomic_write(path, header + centers.astype("<f4").tobytes()
                  + np.ascontiguousarray(planes).astype("<f4").tobytes())


def load_planes(path):
    """Read any HSC1 file as ``(centers, planes[p, row, col])`` in float32."""
    raw = Path(path).read_bytes()
    if raw[:4] != CUBE_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CUBE_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: header truncated")
    cols, rows, bands = struct.unpack("<III", raw[4:16])
    need = 16 + 4 * bands + 4 * rows * cols * bands
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes after payload")
    centers = np.frombuffer(raw, "<f4", bands, 16).astype(float)
    flat = np.frombuffer(raw, "<f4", rows * cols * bands, 16 + 4 * bands)
    if not (np.all(np.isfinite(flat)) and np.all(np.isfinite(centers))):
        raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    return centers, flat.reshape(bands, rows, cols).copy()


def save_cube(cube: HsiCube, path) -> None:
    """Write ``cube`` as an HSC1 file (little-endian float32 payload)."""
    data = np.asarray(cube.data)
    if not np.all(np.isfinite(data)):
        raise ValidationError("refusing to write a cube with non-finite values")
    save_planes(np.transpose(data, (2, 0, 1)), cube.grid.centers, path)


def load_cube(path) -> HsiCube:
    centers, planes = load_planes(path)
    return HsiCube(WavelengthGrid.from_centers(centers), np.transpose(planes, (1, 2, 0)))


def save_labels(labels: LabelMap, path, unknown_mask=None) -> None:
    """Write an LBL1 file. Pixels flagged in ``unknown_mask`` get code 0xFFFF."""
    lab = np.asarray(labels.labels)
    rows, cols = lab.shape
    k = labels.n_classes
    if k >= UNKNOWN_LABEL_CODE:
        raise ValidationError("too many classes for a 16-bit label file")
    codes = lab.astype("<u2")
    if unknown_mask is not None:
        codes = codes.copy()
        codes[np.asarray(unknown_mask, bool)] = UNKNOWN_LABEL_CODE
    parts = [LABEL_MAGIC, struct.pack("<III", cols, rows, k), codes.tobytes()]
    for name in labels.class_names:
        enc = name.encode("utf-8")
        parts.append(struct.pack("<I", len(enc)) + enc)
    _atomic_write(path, b"".join(parts))


def load_labels(path, return_unknown=False):
    """Read an LBL1 file.

    Unknown pixels (code 0xFFFF) are mapped to label 0 and reported through
    the mask returned when ``return_unknown`` is true.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != LABEL_MAGIC:
        raise BadMagicError(f"{path}: expected magic {LABEL_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: header truncated")
    cols, rows, k = struct.unpack("<III", raw[4:16])
    off = 16 + 2 * rows * cols
    if len(raw) < off:
        raise TruncatedFileError(f"{path}: label payload truncated")
    codes = np.frombuffer(raw, "<u2", rows * cols, 16).reshape(rows, cols).astype(np.int64)
    names = []
    for _ in range(k):
        if len(raw) < off + 4:
            raise TruncatedFileError(f"{path}: class name table truncated")
        (n,) = struct.unpack("<I", raw[off : off + 4])
        if len(raw) < off + 4 + n:
            raise TruncatedFileError(f"{path}: class name table truncated")
        names.append(raw[off + 4 : off + 4 + n].decode("utf-8"))
        off += 4 + n
    unknown = codes == UNKNOWN_LABEL_CODE
    codes[unknown] = 0
    lm = LabelMap(codes, tuple(names))
    return (lm, unknown) if return_unknown else lm


def _pbm_tokens(raw: bytes):
    pos = 0
    while True:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        yield raw[start:pos], pos


def read_pbm(path) -> np.ndarray:
    """Read a P1 or P4 portable bitmap; returns a uint8 array, 1 = black = open."""
    raw = Path(path).read_bytes()
    tok = _pbm_tokens(raw)
    magic, _ = next(tok)
    if magic not in (b"P1", b"P4"):
        raise BadMagicError(f"{path}: not a PBM file")
    width = int(next(tok)[0])
    height, pos = next(tok)
    height = int(height)
    if magic == b"P1":
        body = raw[pos:]
        bits = [c - 48 for c in body if c in (48, 49)]
        if len(bits) < width * height:
            raise TruncatedFileError(f"{path}: bitmap truncated")
        return np.array(bits[: width * height], dtype=np.uint8).reshape(height, width)
    pos += 1
    row_bytes = (width + 7) // 8
    body = np.frombuffer(raw, np.uint8, offset=pos)
    if body.size < row_bytes * height:
        raise TruncatedFileError(f"{path}: bitmap truncated")
    bits = np.unpackbits(body[: row_bytes * height].reshape(height, row_bytes), axis=1)
    return bits[:, :width].astype(np.uint8)


def write_pbm(mask, path, binary=True) -> None:
    m = (np.asarray(mask) != 0).astype(np.uint8)
    if m.ndim != 2:
        raise ValidationError("PBM data must be 2-D")
    h, w = m.shape
    if binary:
        payload = f"P4\n{w} {h}\n".encode() + np.packbits(m, axis=1).tobytes()
    else:
        lines = [" ".join(str(v) for v in row) for row in m]
        payload = (f"P1\n{w} {h}\n" + "\n".join(lines) + "\n").encode()
    _atomic_write(path, payload)


def write_pgm(image, path, vmin=None, vmax=None) -> None:
    """8-bit grayscale preview, linearly stretched between ``vmin`` and ``vmax``."""
    img = np.asarray(image, dtype=float)
    finite = np.isfinite(img)
    lo = np.min(img[finite]) if vmin is None and finite.any() else (vmin or 0.0)
    hi = np.max(img[finite]) if vmax is None and finite.any() else (vmax or 1.0)
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    out = np.clip(np.round((np.where(finite, img, lo) - lo) * scale), 0, 255).astype(np.uint8)
    h, w = out.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode() + out.tobytes())


_RAW_DTYPES = {"f32": "<f4", "u16": "<u2", "u8": "u1"}


def import_raw_bsq(path, width, height, bands, dtype="f32", wl_min=None, wl_max=None) -> HsiCube:
    """Import a headerless band-sequential file (e.g. a public HSI benchmark).

    Negative samples, which occur in radiometrically corrected products, are
    clipped to zero.
    """
    if dtype not in ("f32", "u16"):
        raise ValidationError(f"unsupported raw dtype {dtype!r}; use f32 or u16")
    n = width * height * bands
    raw = np.fromfile(path, dtype=_RAW_DTYPES[dtype])
    if raw.size < n:
        raise TruncatedFileError(f"{path}: expected {n} samples, found {raw.size}")
    data = raw[:n].astype(float).reshape(bands, height, width).transpose(1, 2, 0)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f"{path}: raw data contains non-finite values")
    if wl_min is None or wl_max is None:
        wl_min, wl_max = 0.0, float(bands - 1)
    grid = WavelengthGrid(wl_min, wl_max, bands)
    return HsiCube(grid, np.maximum(data, 0.0))


def import_raw_labels(path, width, height, dtype="u8", class_names=None) -> LabelMap:
    raw = np.fromfile(path, dtype=_RAW_DTYPES[dtype])
    if raw.size < width * height:
        raise TruncatedFileError(f"{path}: label raster truncated")
    lab = raw[: width * height].astype(np.int64).reshape(height, width)
    return LabelMap(lab, tuple(class_names or ()))


def write_kv(path, mapping) -> None:
    lines = []
    for key, value in mapping.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ",".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        if "\n" in value:
            raise ValidationError(f"value for {key!r} contains a newline")
        lines.append(f"{key}={value}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
