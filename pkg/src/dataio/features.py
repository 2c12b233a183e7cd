"""
Appearance feature files.

Binary layout (little-endian): a header of magic ``GMTF``, version, feature
width d and record count, then ``count`` records of (frame, index within the
frame, d float32 values). A CSV fallback holds one ``frame,index,v1..vd``
line per detection.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from ..models.data_models import DetectionRecord
from ..models.errors import DataFormatError, DataIoError, Malformed
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
MAGIC = b"GMTF"
VERSION = 1
FORMATS = ("binary", "csv")
HEADER_DTYPE = np.dtype([("magic", "S4"), ("version", "<u4"), ("dim", "<u4"), ("count", "<u8")])


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([("frame", "<i4"), ("index", "<i4"), ("values", "<f4", (dim,))])


@dataclass
class FeatureTable:
    """Feature rows keyed by (frame, detection index within the frame)."""
    dim: int
    rows: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Iterable[Tuple[int, int, np.ndarray]], dim: int = 0) -> "FeatureTable":
        table = cls(dim)
        for frame, index, values in rows:
            values = np.asarray(values, dtype=float).ravel()
            if not table.dim:
                table.dim = len(values)
            if len(values) != table.dim:
                raise DataFormatError(f"feature ({frame}, {index}) has width {len(values)}, expected {table.dim}")
            if (frame, index) in table.rows:
                raise DataFormatError(f"duplicate feature row for frame {frame} index {index}")
            table.rows[int(frame), int(index)] = values
        return table

    def __len__(self) -> int:
        return len(self.rows)

    def ordered(self) -> List[Tuple[int, int, np.ndarray]]:
        return [(f, i, self.rows[f, i]) for f, i in sorted(self.rows)]


def write_features(table: FeatureTable, path: PathLike, fmt: str = "binary") -> None:
    """
    Raises:
        DataIoError: the file cannot be written
    """
    if fmt not in FORMATS:
        raise DataFormatError(f"unknown feature format {fmt!r}")
    rows = table.ordered()
    try:
        if fmt == "csv":
            with open(path, "w", encoding="utf-8") as f:
                for frame, index, values in rows:
                    f.write(",".join([str(frame), str(index)] + [repr(float(v)) for v in values]) + "\n")
        else:
            header = np.array([(MAGIC, VERSION, table.dim, len(rows))], dtype=HEADER_DTYPE)
            body = np.zeros(len(rows), dtype=record_dtype(table.dim))
            for k, (frame, index, values) in enumerate(rows):
                body[k] = (frame, index, values)
            with open(path, "wb") as f:
                f.write(header.tobytes())
                f.write(body.tobytes())
    except OSError as e:
        raise DataIoError(f"cannot write {path}: {e}", path=str(path))
    logger.info(f"Wrote {len(rows)} feature rows (d={table.dim}, {fmt}) to {path}")


def _read_binary(data: bytes, path: str) -> FeatureTable:
    if len(data) < HEADER_DTYPE.itemsize:
        raise DataFormatError(f"{path}: truncated header")
    header = np.frombuffer(data, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise DataFormatError(f"{path}: not a feature file")
    if int(header["version"]) != VERSION:
        raise DataFormatError(f"{path}: unsupported feature file version {int(header['version'])}")
    dim, count = int(header["dim"]), int(header["count"])
    dtype = record_dtype(dim)
    expected = HEADER_DTYPE.itemsize + count * dtype.itemsize
    if len(data) != expected:
        raise DataFormatError(f"{path}: header announces {count} records ({expected} bytes), file has {len(data)}")
    body = np.frombuffer(data, dtype=dtype, count=count, offset=HEADER_DTYPE.itemsize)
    return FeatureTable.from_rows(((int(r["frame"]), int(r["index"]), r["values"]) for r in body), dim)


def _read_csv(lines: Sequence[str], path: str) -> FeatureTable:
    rows = []
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) < 3:
            raise Malformed(number, "expected frame,index and at least one value", path=path)
        try:
            rows.append((int(fields[0]), int(fields[1]), np.array([float(v) for v in fields[2:]])))
        except ValueError as e:
            raise Malformed(number, f"not a number ({e})", path=path)
    return FeatureTable.from_rows(rows)


def read_features(path: PathLike, fmt: str = "binary") -> FeatureTable:
    """
    Raises:
        DataIoError: the file cannot be read
        DataFormatError: bad header, size or width
        Malformed: a CSV line cannot be parsed
    """
    if fmt not in FORMATS:
        raise DataFormatError(f"unknown feature format {fmt!r}")
    try:
        if fmt == "csv":
            with open(path, "r", encoding="utf-8") as f:
                table = _read_csv(f.read().splitlines(), str(path))
        else:
            with open(path, "rb") as f:
                table = _read_binary(f.read(), str(path))
    except OSError as e:
        raise DataIoError(f"cannot read {path}: {e}", path=str(path))
    logger.debug(f"Read {len(table)} feature rows (d={table.dim}) from {path}")
    return table


def pair_detections(records: Sequence[DetectionRecord], table: FeatureTable,
                    ) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """
    Join detections with their feature rows into frame -> (center boxes, raw features).

    Detection k of a frame (in file order) takes feature row (frame, k).

    Raises:
        DataFormatError: a detection without a feature row, or a feature row without a detection
    """
    per_frame: Dict[int, List[DetectionRecord]] = {}
    for r in records:
        per_frame.setdefault(r.frame, []).append(r)
    frames = {}
    used = 0
    for frame in sorted(per_frame):
        boxes, features = [], []
        for index, record in enumerate(per_frame[frame]):
            row = table.rows.get((frame, index))
            if row is None:
                raise DataFormatError(f"detection {index} of frame {frame} has no feature row")
            boxes.append(record.center_box)
            features.append(row)
            used += 1
        frames[frame] = (np.array(boxes, dtype=float), np.array(features, dtype=float))
    if used != len(table):
        raise DataFormatError(f"{len(table) - used} feature rows have no matching detection")
    return frames
