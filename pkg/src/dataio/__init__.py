"""Data I/O package: MOTChallenge-style text files, feature files and scenario directories."""

from .mot_format import (
    parse_detections, parse_records, write_results, write_records, format_record,
    records_to_sequence, sequence_to_records, read_ground_truth, write_ground_truth, read_warps,
)
from .features import FeatureTable, read_features, write_features, pair_detections
from .scenario_io import read_scenario, write_scenario

__all__ = [
    'parse_detections', 'parse_records', 'write_results', 'write_records', 'format_record',
    'records_to_sequence', 'sequence_to_records', 'read_ground_truth', 'write_ground_truth',
    'FeatureTable', 'read_features', 'write_features', 'pair_detections',
    'read_scenario', 'write_scenario', 'read_warps',
]
