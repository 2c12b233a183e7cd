"""
MOTChallenge-style text files: detections, tracking results and ground truth.

Every line is ``frame,id,x,y,w,h,conf,-1,-1,-1`` with (x, y) the top-left
corner. Boxes are converted to center form on the way in and back to
top-left form on the way out. Floats are written with repr so a written
file parses back to exactly the same numbers.
"""

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from ..models.data_models import DetectionRecord, GtSequence, LabeledBox
from ..models.errors import DataIoError, Malformed
from ..utils.helpers import center_to_tlwh
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
MIN_FIELDS = 7
MAX_FIELDS = 10


def _number(text: str) -> float:
    return float(text.strip())


def _parse_line(line: str, number: int, path: Optional[str]) -> DetectionRecord:
    fields = line.split(",")
    if not MIN_FIELDS <= len(fields) <= MAX_FIELDS:
        raise Malformed(number, f"expected {MIN_FIELDS} to {MAX_FIELDS} fields, got {len(fields)}", path=path)
    try:
        frame_value, id_value = _number(fields[0]), _number(fields[1])
        x, y, w, h, conf = (_number(f) for f in fields[2:7])
        extras = tuple(_number(f) for f in fields[7:])
    except ValueError as e:
        raise Malformed(number, f"not a number ({e})", path=path)
    if frame_value != int(frame_value) or id_value != int(id_value):
        raise Malformed(number, "frame and id must be integers", path=path)
    if frame_value < 1:
        raise Malformed(number, f"frame must be >= 1, got {int(frame_value)}", path=path)
    if not (w > 0 and h > 0):
        raise Malformed(number, f"box size must be positive, got w={w} h={h}", path=path)
    extras = extras + (-1.0,) * (MAX_FIELDS - MIN_FIELDS - len(extras))
    return DetectionRecord(int(frame_value), int(id_value), x, y, w, h, conf, extras)


def parse_records(lines: Iterable[str], path: Optional[str] = None) -> List[DetectionRecord]:
    """Parse record lines; blank lines are skipped but still counted."""
    records = []
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        records.append(_parse_line(line, number, path))
    # sort is stable, so line order survives within a frame
    return sorted(records, key=lambda r: r.frame)


def _read_lines(path: PathLike) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise DataIoError(f"cannot read {path}: {e}", path=str(path))


def _write_text(path: PathLike, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise DataIoError(f"cannot write {path}: {e}", path=str(path))


def parse_detections(path: PathLike) -> List[DetectionRecord]:
    """
    Read a detection (or result) file.

    Returns:
        Records sorted by frame, file order within a frame

    Raises:
        DataIoError: the file cannot be read
        Malformed: a line has the wrong field count or invalid values
    """
    records = parse_records(_read_lines(path), str(path))
    logger.debug(f"Parsed {len(records)} records from {path}")
    return records


def format_record(record: DetectionRecord) -> str:
    values = [str(record.frame), str(record.id)]
    values += [repr(float(v)) for v in (record.x, record.y, record.w, record.h, record.confidence)]
    values += [repr(float(v)) for v in record.extras]
    return ",".join(values)


def write_records(records: Sequence[DetectionRecord], path: PathLike) -> None:
    ordered = sorted(records, key=lambda r: (r.frame, r.id))
    _write_text(path, "".join(format_record(r) + "\n" for r in ordered))
    logger.info(f"Wrote {len(ordered)} records to {path}")


def write_results(records: Sequence[DetectionRecord], path: PathLike) -> None:
    """
    Write tracking output, one line per (frame, track), confidence 1.

    Raises:
        DataIoError: the file cannot be written
    """
    write_records([DetectionRecord(r.frame, r.id, r.x, r.y, r.w, r.h, 1.0) for r in records], path)


def records_to_sequence(records: Iterable[DetectionRecord], first_frame: int = 1,
                        last_frame: int = 0, camera_motion: str = "static") -> GtSequence:
    """Group identity records per frame as center-form LabeledBoxes."""
    frames: Dict[int, List[LabeledBox]] = {}
    for r in records:
        frames.setdefault(r.frame, []).append(LabeledBox(r.id, r.center_box))
    return GtSequence(frames, first_frame=first_frame, last_frame=last_frame, camera_motion=camera_motion)


def sequence_to_records(sequence: GtSequence) -> List[DetectionRecord]:
    records = []
    for frame in sorted(sequence.frames):
        for labeled in sorted(sequence.frames[frame], key=lambda b: b.identity):
            x, y, w, h = center_to_tlwh(labeled.box)
            records.append(DetectionRecord(frame, labeled.identity, float(x), float(y), float(w), float(h), 1.0))
    return records


def read_ground_truth(path: PathLike, first_frame: int = 1, last_frame: int = 0,
                      skip_ignored: bool = True) -> GtSequence:
    """
    Read a ground-truth file into a GtSequence.

    Lines with confidence 0 mark ignored regions and are dropped unless
    skip_ignored is False. When last_frame is not given the range is taken
    from the file.
    """
    records = parse_detections(path)
    if skip_ignored:
        records = [r for r in records if r.confidence != 0]
    return records_to_sequence(records, first_frame, last_frame)


def write_ground_truth(sequence: GtSequence, path: PathLike) -> None:
    write_records(sequence_to_records(sequence), path)


def read_warps(path: PathLike) -> Dict[int, np.ndarray]:
    """
    Per-frame camera warps, one ``frame,a11,a12,tx,a21,a22,ty`` line each,
    mapping the previous frame onto this one.
    """
    warps = {}
    for number, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise Malformed(number, f"expected 7 fields, got {len(fields)}", path=str(path))
        try:
            frame = int(fields[0])
            warps[frame] = np.array([float(v) for v in fields[1:]]).reshape(2, 3)
        except ValueError as e:
            raise Malformed(number, f"not a number ({e})", path=str(path))
    return warps
