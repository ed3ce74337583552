"""Minimal single-file NIfTI-1 (``n+1``) reader and writer, optionally gzipped.

Array axes map to NIfTI (i, j, k); voxel data is stored with the first
axis fastest, as the format requires. Orientation fields (qform/sform)
are carried through untouched.
"""
import gzip
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadMagic, IoFailure, TruncatedFile, UnsupportedDatatype
from .volume import Volume3

HEADER_SIZE = 348
VOX_OFFSET = 352

HEADER_DTYPE = np.dtype(
    [
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
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

DATATYPES = {
    "uint8": (2, np.uint8),
    "int16": (4, np.int16),
    "int32": (8, np.int32),
    "float32": (16, np.float32),
    "float64": (64, np.float64),
}
_BY_CODE = {code: np.dtype(dt) for code, dt in DATATYPES.values()}


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple
    datatype: int
    pixdim: tuple
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    qform_code: int = 0
    sform_code: int = 1
    quatern: tuple = (0.0, 0.0, 0.0)
    qoffset: tuple = (0.0, 0.0, 0.0)
    srow: tuple = ((1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0))
    xyzt_units: int = 2
    vox_offset: float = float(VOX_OFFSET)
    descrip: str = ""
    magic: bytes = field(default=b"n+1")

    @property
    def spacing(self):
        return tuple(float(v) for v in self.pixdim[1:4])


def _open_bytes(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedFile(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, file has {len(raw)}")
    for order in ("<", ">"):
        dt = HEADER_DTYPE.newbyteorder(order)
        rec = np.frombuffer(raw[:HEADER_SIZE], dtype=dt)[0]
        if rec["sizeof_hdr"] == HEADER_SIZE:
            break
    else:
        raise BadMagic("sizeof_hdr is not 348 in either byte order")
    magic = bytes(rec["magic"]).rstrip(b"\0")
    if magic != b"n+1":
        raise BadMagic(f"expected single-file magic 'n+1', found {magic!r}")
    code = int(rec["datatype"])
    if code not in _BY_CODE:
        raise UnsupportedDatatype(f"NIfTI datatype code {code} is not supported")
    ndim = int(rec["dim"][0])
    dims = tuple(int(v) for v in rec["dim"][1 : 1 + ndim])
    if ndim < 3 or any(d != 1 for d in dims[3:]) or min(dims[:3]) < 1:
        raise UnsupportedDatatype(f"only 3D volumes are supported, got dims {dims}")
    hdr = NiftiHeader(
        dims=dims[:3],
        datatype=code,
        pixdim=tuple(float(v) for v in rec["pixdim"]),
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        qform_code=int(rec["qform_code"]),
        sform_code=int(rec["sform_code"]),
        quatern=(float(rec["quatern_b"]), float(rec["quatern_c"]), float(rec["quatern_d"])),
        qoffset=(float(rec["qoffset_x"]), float(rec["qoffset_y"]), float(rec["qoffset_z"])),
        srow=tuple(tuple(float(v) for v in rec[k]) for k in ("srow_x", "srow_y", "srow_z")),
        xyzt_units=int(rec["xyzt_units"]),
        vox_offset=float(rec["vox_offset"]),
        descrip=bytes(rec["descrip"]).rstrip(b"\0").decode("latin-1"),
        magic=magic,
    )
    return hdr, order


def read_nifti(path):
    """Return ``(Volume3, NiftiHeader)``; data is float64 with scaling applied."""
    raw = _open_bytes(path)
    hdr, order = parse_header(raw)
    dt = _BY_CODE[hdr.datatype].newbyteorder(order)
    count = int(np.prod(hdr.dims))
    start = int(hdr.vox_offset)
    if start < HEADER_SIZE or len(raw) < start + count * dt.itemsize:
        raise TruncatedFile(f"{path}: voxel data shorter than {count} x {dt.itemsize} bytes")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=start).reshape(hdr.dims, order="F")
    data = data.astype(np.float64)
    if hdr.scl_slope != 0 and np.isfinite(hdr.scl_slope):
        if hdr.scl_slope != 1 or hdr.scl_inter != 0:
            data = data * hdr.scl_slope + hdr.scl_inter
    spacing = tuple(abs(s) if s != 0 else 1.0 for s in hdr.spacing)
    return Volume3(np.ascontiguousarray(data), spacing), hdr


def _as_volume(v):
    if isinstance(v, Volume3):
        return v
    labels = getattr(v, "labels", None)
    if labels is not None:
        return labels if isinstance(labels, Volume3) else Volume3(labels, v.spacing)
    raise TypeError(f"cannot write {type(v).__name__} as NIfTI")


def encode_nifti(v, datatype="float64", header=None, scl_slope=1.0, scl_inter=0.0):
    """Serialise to uncompressed NIfTI-1 bytes."""
    vol = _as_volume(v)
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype {datatype!r} not in {sorted(DATATYPES)}")
    code, np_dt = DATATYPES[datatype]
    data = np.asarray(vol.data)
    cast = data.astype(np_dt)
    if np.issubdtype(np_dt, np.integer) and not np.array_equal(cast, data):
        raise ValueError(f"values are not representable as {datatype}")
    sx, sy, sz = vol.spacing
    base = header or NiftiHeader(
        dims=vol.shape,
        datatype=code,
        pixdim=(1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0),
        srow=((sx, 0.0, 0.0, 0.0), (0.0, sy, 0.0, 0.0), (0.0, 0.0, sz, 0.0)),
    )
    pixdim = (base.pixdim[0] or 1.0, sx, sy, sz) + tuple(base.pixdim[4:8])
    hdr = replace(base, dims=vol.shape, datatype=code, pixdim=pixdim)

    rec = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    rec["sizeof_hdr"] = HEADER_SIZE
    rec["regular"] = b"r"
    rec["dim"] = (3,) + tuple(hdr.dims) + (1, 1, 1, 1)
    rec["datatype"] = code
    rec["bitpix"] = np.dtype(np_dt).itemsize * 8
    rec["pixdim"] = hdr.pixdim
    rec["vox_offset"] = VOX_OFFSET
    rec["scl_slope"] = scl_slope
    rec["scl_inter"] = scl_inter
    rec["xyzt_units"] = hdr.xyzt_units
    rec["descrip"] = hdr.descrip.encode("latin-1")[:79]
    rec["qform_code"] = hdr.qform_code
    rec["sform_code"] = hdr.sform_code
    rec["quatern_b"], rec["quatern_c"], rec["quatern_d"] = hdr.quatern
    rec["qoffset_x"], rec["qoffset_y"], rec["qoffset_z"] = hdr.qoffset
    rec["srow_x"], rec["srow_y"], rec["srow_z"] = hdr.srow
    rec["magic"] = b"n+1\0"
    body = cast.astype(np.dtype(np_dt).newbyteorder("<")).tobytes(order="F")
    return rec.tobytes() + b"\0\0\0\0" + body


def write_nifti(v, path, datatype="float64", header=None, scl_slope=1.0, scl_inter=0.0):
    """Write a Volume3 or SegmentationMap; ``.gz`` paths are gzip-compressed.

    Compressed output carries no timestamp, so identical inputs give
    identical files.
    """
    payload = encode_nifti(v, datatype, header, scl_slope, scl_inter)
    try:
        with open(path, "wb") as fh:
            if str(path).endswith(".gz"):
                with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                    gz.write(payload)
            else:
                fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path

