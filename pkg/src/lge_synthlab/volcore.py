"""Volumetric data types, file I/O, resampling, smoothing and normalization.

Axis convention
---------------
In memory every grid is a numpy array of shape ``(H, W, D)`` indexed
``[x, y, z]``. On disk the payload is written with x varying fastest
(Fortran order), which is also the NIfTI convention, so voxel
``(x, y, z)`` lives at flat index ``x + H * (y + W * z)``.

Two on-disk formats are supported:

* single-file NIfTI-1 (``.nii``): little-endian, uncompressed, datatypes
  uint8 / int16 / float32 only;
* raw + sidecar (``.raw``): little-endian payload next to a JSON file with
  the same stem, ``{"dims": [H, W, D], "spacing": [sx, sy, sz], "dtype": "f32"}``.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._io import atomic_write
from .errors import (
    ConstantVolume,
    DimsMismatch,
    IoFailure,
    MalformedHeader,
    OverlappingMasks,
    TruncatedPayload,
    UnsupportedDtype,
)

__all__ = [
    "Volume3D",
    "LabelMap3D",
    "MaskPair",
    "load_volume",
    "save_volume",
    "load_labelmap",
    "save_labelmap",
    "load_masks",
    "resample",
    "gaussian_smooth",
    "gaussian_kernel1d",
    "normalize_intensity",
]

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352

# NIfTI datatype code -> (numpy little-endian dtype, bitpix)
_NIFTI_DTYPES = {
    2: (np.dtype("<u1"), 8),
    4: (np.dtype("<i2"), 16),
    16: (np.dtype("<f4"), 32),
}
_SIDECAR_DTYPES = {
    "u8": np.dtype("<u1"),
    "i16": np.dtype("<i2"),
    "f32": np.dtype("<f4"),
}


def _frozen(array):
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
        raise ValueError(f"spacing must be three positive reals, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar intensity grid with voxel spacing in mm.

    The array is copied and made read-only on construction.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimsMismatch(f"volume must be a non-empty 3D grid, got shape {data.shape}")
        if data.dtype.kind not in "fiu":
            raise UnsupportedDtype(f"unsupported volume dtype {data.dtype}")
        if data.dtype.kind in "iu":
            data = data.astype(np.float64)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    def flat(self):
        """Intensities in on-disk order (x fastest)."""
        return self.data.ravel(order="F")

    def with_data(self, data):
        return Volume3D(data, self.spacing)


@dataclass(frozen=True, eq=False)
class LabelMap3D:
    """Integer semantic labels on a grid.

    ``absent_labels`` documents values below the maximum label that are
    intentionally missing from the map.
    """

    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    absent_labels: tuple = field(default=())

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise DimsMismatch(f"label map must be a non-empty 3D grid, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise UnsupportedDtype("label map contains non-integer values")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "absent_labels", tuple(int(a) for a in self.absent_labels))

    @property
    def dims(self):
        return tuple(int(n) for n in self.labels.shape)

    def label_set(self):
        return [int(v) for v in np.unique(self.labels)]


@dataclass(frozen=True, eq=False)
class MaskPair:
    """Disjoint binary endocardium and wall masks."""

    endo: np.ndarray
    wall: np.ndarray

    def __post_init__(self):
        endo = np.asarray(self.endo)
        wall = np.asarray(self.wall)
        if endo.shape != wall.shape or endo.ndim != 3:
            raise DimsMismatch(f"mask shapes differ: {endo.shape} vs {wall.shape}")
        for name, m in (("endo", endo), ("wall", wall)):
            if not np.all((m == 0) | (m == 1)):
                raise ValueError(f"{name} mask is not binary")
        endo = endo.astype(bool)
        wall = wall.astype(bool)
        overlap = np.argwhere(endo & wall)
        if len(overlap):
            raise OverlappingMasks(
                f"endo and wall overlap at {len(overlap)} voxels, first {tuple(int(i) for i in overlap[0])}")
        object.__setattr__(self, "endo", _frozen(endo))
        object.__setattr__(self, "wall", _frozen(wall))

    @property
    def dims(self):
        return tuple(int(n) for n in self.endo.shape)


# --- file I/O ---------------------------------------------------------------

def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("nifti", "raw"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    name = str(path).lower()
    if name.endswith(".nii.gz") or name.endswith(".gz"):
        raise UnsupportedDtype("compressed NIfTI is not supported")
    if name.endswith(".nii"):
        return "nifti"
    return "raw"


def _sidecar_path(path):
    return Path(path).with_suffix(".json")


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _read_nifti(path):
    raw = _read_bytes(path)
    if len(raw) < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than NIfTI header", len(raw))
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == NIFTI_HEADER_SIZE:
            raise UnsupportedDtype(f"{path}: big-endian NIfTI is not supported", 0)
        raise MalformedHeader(f"{path}: sizeof_hdr is {sizeof_hdr}, expected 348", 0)
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise MalformedHeader(f"{path}: magic {magic!r} is not single-file NIfTI-1", 344)
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(d != 1 for d in dim[4:ndim + 1]):
        raise MalformedHeader(f"{path}: only 3D volumes are supported (dim={dim})", 40)
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) < 1:
        raise MalformedHeader(f"{path}: non-positive dimension {dims}", 42)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDtype(f"{path}: NIfTI datatype code {datatype}", 70)
    dtype, _ = _NIFTI_DTYPES[datatype]
    pixdim = struct.unpack_from("<8f", raw, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if not all(s > 0 for s in spacing):
        raise MalformedHeader(f"{path}: non-positive pixdim {spacing}", 80)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    offset = int(vox_offset)
    if offset < NIFTI_HEADER_SIZE or offset != vox_offset:
        raise MalformedHeader(f"{path}: invalid vox_offset {vox_offset}", 108)
    nbytes = int(np.prod(dims)) * dtype.itemsize
    available = len(raw) - offset
    if available < nbytes:
        raise TruncatedPayload(nbytes, max(available, 0), offset)
    flat = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=offset)
    return flat.reshape(dims, order="F"), spacing


def _read_raw(path):
    sidecar = _sidecar_path(path)
    try:
        meta = json.loads(_read_bytes(sidecar).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{sidecar}: invalid JSON sidecar: {exc}", 0) from exc
    try:
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        code = meta.get("dtype", "f32")
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeader(f"{sidecar}: missing or invalid field {exc}", 0) from exc
    if len(dims) != 3 or min(dims) < 1:
        raise MalformedHeader(f"{sidecar}: dims must be three positive integers", 0)
    if code not in _SIDECAR_DTYPES:
        raise UnsupportedDtype(f"{sidecar}: dtype {code!r}", 0)
    dtype = _SIDECAR_DTYPES[code]
    raw = _read_bytes(path)
    count = int(np.prod(dims))
    if len(raw) < count * dtype.itemsize:
        raise TruncatedPayload(count * dtype.itemsize, len(raw), 0)
    flat = np.frombuffer(raw, dtype=dtype, count=count)
    return flat.reshape(dims, order="F"), spacing


def _read_any(path, fmt):
    fmt = _infer_format(path, fmt)
    return _read_nifti(path) if fmt == "nifti" else _read_raw(path)


def load_volume(path, format=None):
    """Read a :class:`Volume3D` from a NIfTI or raw+sidecar file.

    Integer payloads become float64 without applying any scaling.
    """
    data, spacing = _read_any(path, format)
    return Volume3D(data, spacing)


def load_labelmap(path, format=None):
    data, spacing = _read_any(path, format)
    return LabelMap3D(data, spacing)


def load_masks(endo_path, wall_path, format=None):
    endo, _ = _read_any(endo_path, format)
    wall, _ = _read_any(wall_path, format)
    return MaskPair(endo, wall)


def _nifti_bytes(array, spacing, datatype):
    dtype, bitpix = _NIFTI_DTYPES[datatype]
    header = bytearray(NIFTI_VOX_OFFSET)
    struct.pack_into("<i", header, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, *array.shape, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, datatype)
    struct.pack_into("<h", header, 72, bitpix)
    struct.pack_into("<8f", header, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(NIFTI_VOX_OFFSET))
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope, ignored on read
    header[123] = 2  # xyzt_units: mm
    header[344:348] = b"n+1\x00"
    payload = np.asarray(array, dtype=dtype).tobytes(order="F")
    return bytes(header) + payload


def _write_any(array, spacing, path, fmt, code):
    fmt = _infer_format(path, fmt)
    if fmt == "nifti":
        datatype = {"u8": 2, "i16": 4, "f32": 16}[code]
        atomic_write(path, _nifti_bytes(array, spacing, datatype))
        return
    dtype = _SIDECAR_DTYPES[code]
    meta = {"dims": list(array.shape), "spacing": list(spacing), "dtype": code}
    atomic_write(path, np.asarray(array, dtype=dtype).tobytes(order="F"))
    atomic_write(_sidecar_path(path), json.dumps(meta))


def save_volume(v, path, format=None):
    """Write ``v`` as float32. Round-trips bit-exactly for float32 data."""
    _write_any(v.data, v.spacing, path, format, "f32")


def save_labelmap(m, path, format=None):
    top = int(m.labels.max()) if m.labels.size else 0
    code = "u8" if top <= 255 else "i16"
    if top > 32767:
        raise UnsupportedDtype(f"label {top} does not fit int16")
    _write_any(m.labels, m.spacing, path, format, code)


# --- resampling -------------------------------------------------------------

def _source_coords(n_in, s_in, n_out, s_out):
    # Centre-aligned fields of view; identity when grids coincide.
    c_in = (n_in - 1) / 2.0
    c_out = (n_out - 1) / 2.0
    return c_in + (np.arange(n_out, dtype=np.float64) - c_out) * (s_out / s_in)


def _linear_along(a, axis, x):
    n = a.shape[axis]
    x = np.clip(x, 0.0, n - 1)
    if n == 1:
        return np.repeat(a, len(x), axis=axis).astype(np.float64)
    i0 = np.minimum(np.floor(x).astype(np.intp), n - 2)
    w = x - i0
    shape = [1, 1, 1]
    shape[axis] = len(x)
    w = w.reshape(shape)
    lo = np.take(a, i0, axis=axis).astype(np.float64)
    hi = np.take(a, i0 + 1, axis=axis).astype(np.float64)
    return lo * (1.0 - w) + hi * w


def _nearest_along(a, axis, x):
    n = a.shape[axis]
    idx = np.clip(np.floor(x + 0.5).astype(np.intp), 0, n - 1)
    return np.take(a, idx, axis=axis)


def resample(v, target_dims, target_spacing, interp="trilinear"):
    """Resample a volume or label map onto a new grid.

    Output voxel ``i`` along an axis samples the input at
    ``c_in + (i - c_out) * s_out / s_in`` where ``c`` is the grid centre, so
    both fields of view share their centre. Samples outside the input are
    clamped to the edge. Trilinear interpolation is separable on an
    axis-aligned grid and is applied one axis at a time.
    """
    target_dims = tuple(int(n) for n in target_dims)
    if len(target_dims) != 3 or min(target_dims) < 1:
        raise ValueError(f"target dims must be positive, got {target_dims}")
    target_spacing = _check_spacing(target_spacing)
    is_labels = isinstance(v, LabelMap3D)
    array = v.labels if is_labels else v.data
    if interp not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interp!r}")
    if is_labels and interp != "nearest":
        raise ValueError("label maps must be resampled with nearest interpolation")

    if array.shape == target_dims and v.spacing == target_spacing:
        out = array
    else:
        step = _nearest_along if interp == "nearest" else _linear_along
        out = array
        for axis in range(3):
            x = _source_coords(array.shape[axis], v.spacing[axis],
                               target_dims[axis], target_spacing[axis])
            out = step(out, axis, x)
    if is_labels:
        return LabelMap3D(out, target_spacing, v.absent_labels)
    return Volume3D(out, target_spacing)


# --- smoothing / normalization ---------------------------------------------

def gaussian_kernel1d(sigma):
    """Normalized Gaussian taps truncated at radius ceil(3 sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(v, sigma=1.0):
    """Separable Gaussian smoothing with half-sample reflective borders.

    ``sigma`` is in voxels. ``sigma == 0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return v
    kernel = gaussian_kernel1d(sigma)
    out = np.asarray(v.data, dtype=np.float64)
    for axis in range(3):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="reflect")
    return v.with_data(out)


def normalize_intensity(v):
    """Affine map of intensities onto [0, 1] (min -> 0, max -> 1)."""
    data = np.asarray(v.data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if not hi > lo:
        raise ConstantVolume("cannot normalize a constant volume")
    out = (data - lo) / (hi - lo)
    np.clip(out, 0.0, 1.0, out=out)
    return v.with_data(out)
