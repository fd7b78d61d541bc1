"""NIfTI-1 single-file reading/writing and slice extraction."""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    BadDim,
    BadMagic,
    BadSize,
    InvalidVolume,
    TooShort,
    TruncatedData,
    Unsupported4D,
    UnsupportedDatatype,
)

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype code -> numpy scalar type
DATATYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}
DATATYPE_NAMES = {
    "uint8": 2,
    "int16": 4,
    "int32": 8,
    "float32": 16,
    "float64": 64,
}

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]


def _header_dtype(byteorder: str) -> np.dtype:
    dt = np.dtype(_HEADER_FIELDS)
    assert dt.itemsize == HEADER_SIZE
    return dt.newbyteorder(byteorder)


@dataclass(frozen=True)
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple
    datatype: int
    bitpix: int
    pixdim: tuple
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    endianness: str = "little"
    qform_code: int = 0
    sform_code: int = 0

    @property
    def ndim(self) -> int:
        return self.dim[0]

    @property
    def numpy_dtype(self) -> np.dtype:
        order = "<" if self.endianness == "little" else ">"
        return np.dtype(DATATYPES[self.datatype]).newbyteorder(order)

    def as_dict(self) -> dict:
        return {
            "sizeof_hdr": self.sizeof_hdr,
            "dim": list(self.dim),
            "datatype": self.datatype,
            "bitpix": self.bitpix,
            "pixdim": list(self.pixdim),
            "vox_offset": self.vox_offset,
            "scl_slope": self.scl_slope,
            "scl_inter": self.scl_inter,
            "magic": self.magic.decode("latin-1").rstrip("\x00"),
            "endianness": self.endianness,
            "qform_code": self.qform_code,
            "sform_code": self.sform_code,
        }


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar volume indexed ``data[x, y, z]``."""

    data: np.ndarray
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)
    source_id: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise InvalidVolume(f"expected a 3D array, got shape {data.shape}")
        if data.size == 0:
            raise InvalidVolume("volume has zero voxels")
        if not np.all(np.isfinite(data)):
            raise InvalidVolume(f"{self.source_id or 'volume'} has non-finite voxels")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size_mm", tuple(float(v) for v in self.voxel_size_mm))

    @property
    def extents(self) -> tuple:
        return tuple(int(n) for n in self.data.shape)


@dataclass(frozen=True, eq=False)
class Slice:
    pixels: np.ndarray
    index: int = 0
    scan_id: str = ""

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise InvalidVolume(f"slice must be 2D, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise InvalidVolume("slice has non-finite pixels")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels) -> "Slice":
        return Slice(pixels, index=self.index, scan_id=self.scan_id)


def datatype_code(datatype) -> int:
    """Accept a NIfTI code (16) or a name ('float32')."""
    if isinstance(datatype, str):
        if datatype not in DATATYPE_NAMES:
            raise UnsupportedDatatype(f"unknown datatype name {datatype!r}")
        return DATATYPE_NAMES[datatype]
    code = int(datatype)
    if code not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {code} not supported")
    return code


def _maybe_gunzip(raw: bytes) -> bytes:
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def parse_header(raw: bytes) -> NiftiHeader:
    """Decode the 348-byte NIfTI-1 header, inferring byte order from sizeof_hdr."""
    if len(raw) < HEADER_SIZE:
        raise TooShort(f"need {HEADER_SIZE} header bytes, got {len(raw)}")
    head = bytes(raw[:HEADER_SIZE])
    if int.from_bytes(head[:4], "little", signed=True) == HEADER_SIZE:
        order, endianness = "<", "little"
    elif int.from_bytes(head[:4], "big", signed=True) == HEADER_SIZE:
        order, endianness = ">", "big"
    else:
        raise BadSize("sizeof_hdr is not 348 under either byte order")

    rec = np.frombuffer(head, dtype=_header_dtype(order), count=1)[0]
    magic = bytes(rec["magic"]).ljust(4, b"\x00")
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"magic {magic!r} is not a single-file NIfTI-1 ('n+1')")

    datatype = int(rec["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not supported")

    dim = tuple(int(d) for d in rec["dim"])
    if not 1 <= dim[0] <= 7:
        raise BadDim(f"dim[0]={dim[0]} outside 1..7")
    if any(d < 1 for d in dim[1 : dim[0] + 1]):
        raise BadDim(f"non-positive extent in dim={dim}")

    vox_offset = float(rec["vox_offset"])
    if vox_offset < HEADER_SIZE:
        raise BadDim(f"vox_offset={vox_offset} precedes end of header")

    return NiftiHeader(
        sizeof_hdr=int(rec["sizeof_hdr"]),
        dim=dim,
        datatype=datatype,
        bitpix=int(rec["bitpix"]),
        pixdim=tuple(float(p) for p in rec["pixdim"]),
        vox_offset=vox_offset,
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        magic=magic,
        endianness=endianness,
        qform_code=int(rec["qform_code"]),
        sform_code=int(rec["sform_code"]),
    )


def _encode_voxels(data: np.ndarray, code: int) -> np.ndarray:
    target = np.dtype(DATATYPES[code])
    if target.kind in "ui":
        info = np.iinfo(target)
        if np.any(data != np.round(data)) or data.min() < info.min or data.max() > info.max:
            raise InvalidVolume(f"values not exactly representable as {target.name}")
    return data.astype(target)


def write_volume(volume: Volume, datatype=16, endianness: str = "little") -> bytes:
    """Serialize ``volume`` as a single-file NIfTI-1 byte stream."""
    code = datatype_code(datatype)
    order = "<" if endianness == "little" else ">"
    nx, ny, nz = volume.extents

    hdr = np.zeros(1, dtype=_header_dtype(order))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, nx, ny, nz, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = np.dtype(DATATYPES[code]).itemsize * 8
    hdr["pixdim"] = [1.0, *volume.voxel_size_mm, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["descrip"] = volume.source_id.encode("ascii", "replace")[:79]
    hdr["magic"] = MAGIC_SINGLE

    payload = _encode_voxels(volume.data, code).astype(
        np.dtype(DATATYPES[code]).newbyteorder(order)
    )
    # on-disk order is x fastest
    return hdr.tobytes() + b"\x00" * 4 + payload.tobytes(order="F")


def read_volume(raw: bytes, source_id: str = "") -> Volume:
    """Decode a complete (optionally gzipped) NIfTI-1 byte stream."""
    raw = _maybe_gunzip(raw)
    header = parse_header(raw)
    dim = header.dim
    used = list(dim[1 : dim[0] + 1]) + [1] * max(0, 3 - dim[0])
    if any(n > 1 for n in used[3:]):
        raise Unsupported4D(f"extents beyond the third axis must be 1, got dim={dim}")
    nx, ny, nz = used[:3]
    count = nx * ny * nz

    dtype = header.numpy_dtype
    start = int(header.vox_offset)
    needed = start + count * dtype.itemsize
    if len(raw) < needed:
        raise TruncatedData(f"payload has {len(raw) - start} bytes, need {count * dtype.itemsize}")
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=start).astype(np.float64)
    if header.scl_slope != 0 and np.isfinite(header.scl_slope):
        values = header.scl_slope * values + header.scl_inter
    data = values.reshape((nx, ny, nz), order="F")
    return Volume(data, voxel_size_mm=header.pixdim[1:4], source_id=source_id)


def load_volume(path: Union[str, Path]) -> Volume:
    path = Path(path)
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return read_volume(path.read_bytes(), source_id=name)


def save_volume(volume: Volume, path: Union[str, Path], datatype=16, endianness="little"):
    raw = write_volume(volume, datatype=datatype, endianness=endianness)
    path = Path(path)
    if path.name.endswith(".gz"):
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)


_AXES = {"x": 0, "y": 1, "z": 2}


def axis_index(axis) -> int:
    if isinstance(axis, str):
        if axis.lower() not in _AXES:
            raise ValueError(f"axis must be x, y or z, got {axis!r}")
        return _AXES[axis.lower()]
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis!r}")
    return int(axis)


def extract_slices(volume: Volume, axis="z") -> list:
    """Split ``volume`` into 2D slices along ``axis`` in ascending index order.

    A slice has shape (second remaining extent, first remaining extent); for
    axis z that is (ny, nx), so ``pixels[j, i] == data[i, j, k]``.
    """
    ax = axis_index(axis)
    return [
        Slice(np.take(volume.data, k, axis=ax).T.copy(), index=k, scan_id=volume.source_id)
        for k in range(volume.data.shape[ax])
    ]
