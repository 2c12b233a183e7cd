"""
Scenario directories: ``gt.txt``, ``det.txt``, a feature file and ``meta.json``.
"""

from dataclasses import asdict
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
import orjson

from ..models.data_models import GtSequence
from ..models.errors import DataIoError
from ..utils.helpers import ensure_directory_exists
from ..utils.logging_config import get_logger
from .features import FeatureTable, pair_detections, read_features, write_features
from .mot_format import parse_detections, read_ground_truth, write_ground_truth, write_records

logger = get_logger(__name__)

PathLike = Union[str, Path]
GT_FILE = "gt.txt"
DET_FILE = "det.txt"
META_FILE = "meta.json"


def feature_file_name(fmt: str) -> str:
    return "feat.csv" if fmt == "csv" else "feat.bin"


def write_scenario(scenario, directory: PathLike, fmt: str = "binary") -> Path:
    """Write a generated Scenario to a directory, creating it if needed."""
    directory = Path(directory)
    if not ensure_directory_exists(str(directory)):
        raise DataIoError(f"cannot create {directory}", path=str(directory))
    write_ground_truth(scenario.gt, directory / GT_FILE)
    write_records(scenario.detection_records(), directory / DET_FILE)
    write_features(FeatureTable.from_rows(scenario.feature_rows(), scenario.spec.feature_dim),
                   directory / feature_file_name(fmt), fmt)
    meta = {
        "spec": asdict(scenario.spec),
        "first_frame": scenario.gt.first_frame,
        "last_frame": scenario.gt.last_frame,
        "camera_motion": scenario.gt.camera_motion,
        "feature_format": fmt,
    }
    try:
        (directory / META_FILE).write_bytes(orjson.dumps(meta, option=orjson.OPT_INDENT_2))
    except OSError as e:
        raise DataIoError(f"cannot write {directory / META_FILE}: {e}", path=str(directory))
    logger.info(f"Wrote scenario {scenario.spec.name} to {directory}")
    return directory


def read_scenario(directory: PathLike) -> Tuple[GtSequence, Dict[int, Tuple[np.ndarray, np.ndarray]]]:
    """Ground truth and frame -> (center boxes, raw features) from a scenario directory."""
    directory = Path(directory)
    meta_path = directory / META_FILE
    meta = {}
    if meta_path.exists():
        try:
            meta = orjson.loads(meta_path.read_bytes())
        except (OSError, orjson.JSONDecodeError) as e:
            raise DataIoError(f"cannot read {meta_path}: {e}", path=str(meta_path))
    fmt = meta.get("feature_format", "binary")
    gt = read_ground_truth(directory / GT_FILE, meta.get("first_frame", 1), meta.get("last_frame", 0))
    gt.camera_motion = meta.get("camera_motion", gt.camera_motion)
    frames = pair_detections(parse_detections(directory / DET_FILE),
                             read_features(directory / feature_file_name(fmt), fmt))
    return gt, frames
