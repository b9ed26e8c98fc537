"""Uncompressed LAS 1.4 (point format 6) with label fields carried as extra bytes.

The byte layout is documented in ``docs/format.md``.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path

import numpy as np

from ..pointcloud import SEMANTIC_NAMES, PointCloud

HEADER_SIZE = 375
VLR_HEADER_SIZE = 54
EXTRA_BYTES_STRUCT = 192
POINT_FORMAT = 6
BASE_RECORD = 30
SCALE = 0.001
# creation date is fixed so identical clouds give identical files
CREATION_DAY, CREATION_YEAR = 1, 2025
SOFTWARE = "sylvagen"
ASPRS_CLASS = {0: 2, 1: 3, 2: 5, 3: 5}
_CLASS_TABLE = np.ones(256, np.uint8)  # anything unknown is "unclassified"
_CLASS_TABLE[list(ASPRS_CLASS)] = list(ASPRS_CLASS.values())

# name, LAS extra-bytes data type code, numpy dtype
EXTRA_FIELDS = (("semantic", 1, "u1"), ("instance", 5, "<u4"), ("viewpoint", 3, "<u2"))
_DTYPE_CODES = {1: "u1", 2: "i1", 3: "<u2", 4: "<i2", 5: "<u4", 6: "<i4", 7: "<u8", 8: "<i8", 9: "<f4", 10: "<f8"}

_BASE_FIELDS = [
    ("X", "<i4"),
    ("Y", "<i4"),
    ("Z", "<i4"),
    ("intensity", "<u2"),
    ("returns", "u1"),
    ("flags", "u1"),
    ("classification", "u1"),
    ("user_data", "u1"),
    ("scan_angle", "<i2"),
    ("point_source_id", "<u2"),
    ("gps_time", "<f8"),
]


class LasFormatError(ValueError):
    """Malformed file, or coordinates that do not fit the integer grid."""


class LabeledFormatError(LasFormatError):
    """File lacks the label extra bytes."""


def _record_dtype() -> np.dtype:
    return np.dtype(_BASE_FIELDS + [(name, dt) for name, _, dt in EXTRA_FIELDS])


def _pad(text: str, n: int) -> bytes:
    raw = text.encode("ascii")[:n]
    return raw + b"\0" * (n - len(raw))


def _vlr(user_id: str, record_id: int, description: str, payload: bytes) -> bytes:
    return struct.pack("<H16sHH32s", 0, _pad(user_id, 16), record_id, len(payload), _pad(description, 32)) + payload


def _extra_bytes_descriptor(name: str, code: int, description: str) -> bytes:
    out = struct.pack("<2sBB32s4s", b"\0\0", code, 0, _pad(name, 32), b"\0" * 4)
    # no_data, min, max, scale, offset slots with their deprecated padding, all unused
    out += b"\0" * (8 + 16 + 8 + 16 + 8 + 16 + 8 + 16 + 8 + 16)
    out += _pad(description, 32)
    assert len(out) == EXTRA_BYTES_STRUCT
    return out


def _semantic_note() -> str:
    return " ".join(f"{k}={v}" for k, v in SEMANTIC_NAMES.items())


def write_las(cloud: PointCloud, path: str | Path) -> Path:
    path = Path(path)
    n = len(cloud)
    if n:
        lo = cloud.xyz.min(axis=0)
        hi = cloud.xyz.max(axis=0)
        offset = np.floor(lo)
        q = np.round((cloud.xyz - offset) / SCALE)
        if q.max() > np.iinfo(np.int32).max or q.min() < np.iinfo(np.int32).min:
            raise LasFormatError("coordinates overflow 32-bit integers at 0.001 m scale")
        if np.any(cloud.instance.astype(np.uint64) > np.iinfo(np.uint32).max):
            raise LasFormatError("instance id exceeds 32 bits")
    else:
        lo = hi = offset = np.zeros(3)
        q = np.zeros((0, 3))

    descriptions = {"semantic": _semantic_note()[:32], "instance": "tree instance, 0 = none", "viewpoint": "station, leg or flight line"}
    eb = b"".join(_extra_bytes_descriptor(name, code, descriptions[name]) for name, code, _ in EXTRA_FIELDS)
    meta = json.dumps(
        {"plot_id": cloud.plot_id, "platform": cloud.platform, "crs_note": cloud.crs_note, "semantic_codes": SEMANTIC_NAMES},
        sort_keys=True,
    ).encode("utf-8")
    vlrs = _vlr("LASF_Spec", 4, "label fields", eb) + _vlr(SOFTWARE, 1, "plot metadata (json)", meta)
    n_vlrs = 2
    data_offset = HEADER_SIZE + len(vlrs)
    rec = _record_dtype()

    by_return = [0] * 15
    by_return[0] = n
    header = b"".join(
        [
            b"LASF",
            struct.pack("<HH", 0, 0x10),
            b"\0" * 16,
            struct.pack("<BB", 1, 4),
            _pad("OTHER", 32),
            _pad(SOFTWARE, 32),
            struct.pack("<HHHII", CREATION_DAY, CREATION_YEAR, HEADER_SIZE, data_offset, n_vlrs),
            struct.pack("<BHI", POINT_FORMAT, rec.itemsize, 0),
            struct.pack("<5I", 0, 0, 0, 0, 0),
            struct.pack("<3d", SCALE, SCALE, SCALE),
            struct.pack("<3d", *offset),
            struct.pack("<6d", hi[0], lo[0], hi[1], lo[1], hi[2], lo[2]),
            struct.pack("<QQI", 0, 0, 0),
            struct.pack("<Q", n),
            struct.pack("<15Q", *by_return),
        ]
    )
    assert len(header) == HEADER_SIZE

    pts = np.zeros(n, dtype=rec)
    if n:
        pts["X"], pts["Y"], pts["Z"] = q[:, 0], q[:, 1], q[:, 2]
        pts["returns"] = 0x11
        pts["classification"] = _CLASS_TABLE[cloud.semantic]
        pts["point_source_id"] = cloud.viewpoint
        pts["gps_time"] = cloud.gps_time
        pts["semantic"] = cloud.semantic
        pts["instance"] = cloud.instance
        pts["viewpoint"] = cloud.viewpoint
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(vlrs)
        fh.write(pts.tobytes())
    return path


def _parse_vlrs(data: bytes, start: int, count: int) -> list[tuple[str, int, bytes]]:
    out = []
    off = start
    for _ in range(count):
        if off + VLR_HEADER_SIZE > len(data):
            raise LasFormatError("truncated VLR header")
        _, user, rid, length, _ = struct.unpack_from("<H16sHH32s", data, off)
        off += VLR_HEADER_SIZE
        out.append((user.rstrip(b"\0").decode("ascii", "replace"), rid, data[off : off + length]))
        off += length
    return out


def read_las(path: str | Path, require_labels: bool = True) -> PointCloud:
    """Inverse of :func:`write_las` up to coordinate quantization.

    Without the label extra bytes a :class:`LabeledFormatError` is raised, unless
    ``require_labels`` is False, in which case geometry is returned with zero labels,
    ``labeled=False`` and a warning.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE or data[:4] != b"LASF":
        raise LasFormatError("not a LAS file")
    major, minor = struct.unpack_from("<BB", data, 24)
    header_size, data_offset, n_vlrs = struct.unpack_from("<HII", data, 94)
    fmt, rec_len = struct.unpack_from("<BH", data, 104)
    if fmt != POINT_FORMAT:
        raise LasFormatError(f"point format {fmt} not supported")
    scale = np.array(struct.unpack_from("<3d", data, 131))
    offset = np.array(struct.unpack_from("<3d", data, 155))
    n = struct.unpack_from("<Q", data, 247)[0] if (major, minor) >= (1, 4) else struct.unpack_from("<I", data, 107)[0]

    fields = list(_BASE_FIELDS)
    extras = {}
    meta = {}
    pos = BASE_RECORD
    for user, rid, payload in _parse_vlrs(data, header_size, n_vlrs):
        if user == "LASF_Spec" and rid == 4:
            for k in range(len(payload) // EXTRA_BYTES_STRUCT):
                code = payload[k * EXTRA_BYTES_STRUCT + 2]
                name = payload[k * EXTRA_BYTES_STRUCT + 4 : k * EXTRA_BYTES_STRUCT + 36].rstrip(b"\0").decode("ascii", "replace")
                if code not in _DTYPE_CODES:
                    raise LasFormatError(f"extra bytes data type {code} not supported")
                dt = np.dtype(_DTYPE_CODES[code])
                fields.append((f"eb_{name}", dt))
                extras[name] = dt
                pos += dt.itemsize
        elif user == SOFTWARE and rid == 1:
            meta = json.loads(payload.decode("utf-8"))
    if pos < rec_len:
        fields.append(("_tail", f"V{rec_len - pos}"))
    elif pos > rec_len:
        raise LasFormatError("extra bytes descriptors exceed the record length")
    rec = np.dtype(fields)
    if data_offset + n * rec_len > len(data):
        raise LasFormatError("truncated point data")
    pts = np.frombuffer(data, dtype=rec, count=n, offset=data_offset)
    xyz = np.column_stack([pts["X"], pts["Y"], pts["Z"]]).astype(np.float64) * scale + offset

    missing = [name for name, _, _ in EXTRA_FIELDS if name not in extras]
    if missing and require_labels:
        raise LabeledFormatError(f"label fields missing: {', '.join(missing)}")
    if missing:
        warnings.warn(f"label fields missing ({', '.join(missing)}); returning geometry only", stacklevel=2)

    def col(name, dtype):
        return pts[f"eb_{name}"].astype(dtype) if name in extras else np.zeros(n, dtype)

    return PointCloud(
        xyz=xyz,
        semantic=col("semantic", np.uint8),
        instance=col("instance", np.uint32),
        viewpoint=col("viewpoint", np.uint16),
        gps_time=pts["gps_time"].astype(np.float64),
        range=None,
        platform=meta.get("platform", ""),
        plot_id=meta.get("plot_id", ""),
        crs_note=meta.get("crs_note", ""),
        labeled=not missing,
    )
