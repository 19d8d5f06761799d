"""Core volumetric data types, geometry, file IO and normalization.

Conventions used throughout the toolkit:

* Grids are stored row-major with z the slowest axis, so numpy arrays are
  indexed ``data[z, y, x]`` and have shape ``(nz, ny, nx)``.
* All public coordinate, dims and spacing tuples are ``(x, y, z)`` ordered.
* A grid on disk is a two-file pair: ``<stem>.hdr``, a line-based text
  header, next to ``<stem>.raw`` holding the raw little-endian payload
  (``f32`` for volumes, one ``u8`` per voxel for masks).  The pair
  round-trips bit-exactly.

Types are immutable after construction (the wrapped arrays are marked
read-only) and safe to share across threads.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError, RoiError, ShapeError, TruncationError

HEADER_SUFFIX = ".hdr"
PAYLOAD_SUFFIX = ".raw"
_HEADER_MAGIC = "voxseg-grid"
_ELEM_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}

Triple = tuple[float, float, float]


def _freeze(data: np.ndarray, dtype) -> np.ndarray:
    out = np.array(data, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


def _check_geometry(data: np.ndarray, spacing) -> Triple:
    if data.ndim != 3:
        raise InputError(f"grid data must be 3-D, got shape {data.shape}")
    if data.size == 0:
        raise InputError("grid has no voxels")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0.0 for s in spacing):
        raise InputError(f"spacing must be three positive finite values, got {spacing!r}")
    return spacing


@dataclass(frozen=True)
class Volume:
    """Dense 3-D scalar grid with physical voxel spacing in millimeters.

    ``data`` is float32, shape ``(nz, ny, nx)``; ``spacing`` is
    ``(sx, sy, sz)``.  Values must be finite.
    """

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _freeze(self.data, np.float32)
        spacing = _check_geometry(data, self.spacing)
        if not np.all(np.isfinite(data)):
            raise InputError("volume contains NaN or Inf values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Voxel counts as (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class BinaryMask:
    """Dense 3-D boolean grid sharing the Volume geometry conventions."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _freeze(self.data, bool)
        spacing = _check_geometry(data, self.spacing)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_count(self) -> int:
        """Number of foreground voxels."""
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned voxel box: ``lo`` inclusive, ``hi`` exclusive, (x, y, z)."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if not all(l < h for l, h in zip(lo, hi)):
            raise RoiError(f"box must satisfy lo < hi componentwise, got lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape_xyz(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


def require_same_geometry(a, b) -> None:
    """Raise ShapeError unless two grids agree in dims and spacing."""
    if a.data.shape != b.data.shape or a.spacing != b.spacing:
        raise ShapeError(
            f"geometry mismatch: {a.data.shape}/{a.spacing} vs {b.data.shape}/{b.spacing}"
        )


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write a file atomically (temp file in the same directory, then rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _stem(path: str) -> str:
    for suffix in (HEADER_SUFFIX, PAYLOAD_SUFFIX):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def save(path: str, grid: Volume | BinaryMask) -> None:
    """Save a Volume or BinaryMask as a header/payload pair.

    ``path`` may be the bare stem or either member of the pair.
    """
    stem = _stem(path)
    if isinstance(grid, Volume):
        elem = "f32"
        payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    elif isinstance(grid, BinaryMask):
        elem = "u8"
        payload = np.ascontiguousarray(grid.data, dtype="u1").tobytes()
    else:
        raise InputError(f"cannot save object of type {type(grid).__name__}")
    nx, ny, nz = grid.dims
    sx, sy, sz = grid.spacing
    header = "\n".join(
        [
            f"# {_HEADER_MAGIC} v1",
            f"dims = {nx} {ny} {nz}",
            f"spacing_mm = {sx:.17g} {sy:.17g} {sz:.17g}",
            f"elem = {elem}",
            "order = little",
            "",
        ]
    )
    atomic_write_text(stem + HEADER_SUFFIX, header)
    atomic_write_bytes(stem + PAYLOAD_SUFFIX, payload)


def _parse_header(path: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith(f"# {_HEADER_MAGIC}"):
            raise FormatError(f"header: first line must announce {_HEADER_MAGIC}, got {first!r}")
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"header line without '=': {line!r}")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    return fields


def load(path: str) -> Volume | BinaryMask:
    """Load the header/payload pair at ``path`` (stem or either file)."""
    stem = _stem(path)
    fields = _parse_header(stem + HEADER_SUFFIX)

    for required in ("dims", "spacing_mm", "elem", "order"):
        if required not in fields:
            raise FormatError(f"{required}: missing from header")
    try:
        dims = tuple(int(tok) for tok in fields["dims"].split())
    except ValueError as exc:
        raise FormatError(f"dims: not integers ({fields['dims']!r})") from exc
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise FormatError(f"dims: need three positive counts, got {fields['dims']!r}")
    try:
        spacing = tuple(float(tok) for tok in fields["spacing_mm"].split())
    except ValueError as exc:
        raise FormatError(f"spacing_mm: not numbers ({fields['spacing_mm']!r})") from exc
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise FormatError(f"spacing_mm: need three positive values, got {fields['spacing_mm']!r}")
    if fields["elem"] not in _ELEM_DTYPES:
        raise FormatError(f"elem: unknown element kind {fields['elem']!r}")
    if fields["order"] != "little":
        raise FormatError(f"order: only 'little' is supported, got {fields['order']!r}")

    dtype = _ELEM_DTYPES[fields["elem"]]
    nx, ny, nz = dims
    expected = nx * ny * nz * dtype.itemsize
    with open(stem + PAYLOAD_SUFFIX, "rb") as fh:
        payload = fh.read()
    if len(payload) != expected:
        raise TruncationError(
            f"payload holds {len(payload)} bytes, header promises {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    if fields["elem"] == "u8":
        return BinaryMask(data != 0, spacing)
    return Volume(data, spacing)


# ---------------------------------------------------------------------------
# Normalization and cropping
# ---------------------------------------------------------------------------

def normalize_zscore(volume: Volume) -> Volume:
    """Shift/scale to zero mean and unit population standard deviation.

    Constant volumes map to all zeros instead of dividing by ~0, so
    degenerate synthetic inputs cannot abort a pipeline.
    """
    if volume.data.size < 2:
        raise InputError("normalization needs at least 2 voxels")
    data = volume.data.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std < 1e-12:
        out = np.zeros_like(data)
    else:
        out = (data - mean) / std
    return Volume(out, volume.spacing)


def _clamp_box(box: RoiBox, dims_xyz, margin: int = 0) -> RoiBox:
    lo = [max(0, l - margin) for l in box.lo]
    hi = [min(d, h + margin) for h, d in zip(box.hi, dims_xyz)]
    if not all(l < h for l, h in zip(lo, hi)):
        raise RoiError(f"box {box.lo}..{box.hi} is degenerate after clamping to dims {tuple(dims_xyz)}")
    return RoiBox(tuple(lo), tuple(hi))


def crop_with_margin(grid, box: RoiBox, margin: int = 0):
    """Extract ``box`` expanded by ``margin`` voxels and clamped to the grid.

    Returns ``(crop, actual_box)`` where ``actual_box`` records the source
    coordinates needed to paste results back (see ``paste_back``).
    """
    if margin < 0:
        raise InputError(f"margin must be >= 0, got {margin}")
    dims = grid.dims
    _clamp_box(box, dims)  # reject boxes fully outside the grid
    actual = _clamp_box(box, dims, margin)
    (x0, y0, z0), (x1, y1, z1) = actual.lo, actual.hi
    sub = grid.data[z0:z1, y0:y1, x0:x1]
    return type(grid)(sub, grid.spacing), actual


def paste_back(base, box: RoiBox, crop):
    """Return a copy of ``base`` with ``crop`` written at ``box``.

    Inverse of ``crop_with_margin``: pasting a crop back at its actual box
    restores the original grid.
    """
    if crop.data.shape[::-1] != box.shape_xyz:
        raise ShapeError(f"crop shape {crop.data.shape[::-1]} does not match box {box.shape_xyz}")
    data = np.array(base.data, copy=True)
    (x0, y0, z0), (x1, y1, z1) = box.lo, box.hi
    data[z0:z1, y0:y1, x0:x1] = crop.data
    return type(base)(data, base.spacing)
