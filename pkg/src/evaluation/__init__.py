"""Evaluation package: tracking metrics, synthetic scenarios and the matcher ablation."""

from .metrics import (
    DEFAULT_IOU_THRESHOLD, clear_mot, idf1, evaluate, aggregate,
    format_table, format_key_value, format_summary, reports_to_json,
)
from .synthetic import (
    Scenario, ScenarioSpec, generate_scenario, standard_suite, long_occlusion_suite,
    disambiguation_candidates, appearance_sweep_spec, OCCLUSION_DESIGNED,
)
from .benchmark import (
    BenchRow, Certificate, bench, compare, format_bench, run_scenario,
    sigma_sweep, delta_sweep, certify_disambiguation,
)

__all__ = [
    'DEFAULT_IOU_THRESHOLD', 'clear_mot', 'idf1', 'evaluate', 'aggregate',
    'format_table', 'format_key_value', 'format_summary', 'reports_to_json',
    'Scenario', 'ScenarioSpec', 'generate_scenario', 'standard_suite', 'long_occlusion_suite',
    'disambiguation_candidates', 'appearance_sweep_spec', 'OCCLUSION_DESIGNED',
    'BenchRow', 'Certificate', 'bench', 'compare', 'format_bench', 'run_scenario',
    'sigma_sweep', 'delta_sweep', 'certify_disambiguation',
]
