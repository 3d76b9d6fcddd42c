"""Benchmark orchestration, case-study pipeline, plotting and CLI support."""
from .casestudy import CaseStudyOptions, ColumnMapping, DataError, read_dataset, run_case_study
from .config import ConfigError, RunConfig, load_config, parse_config, preset_config
from .plots import boxplot_svg, emit_plots, five_number, histogram_svg
from .runner import run_benchmark, run_replication

__all__ = [
    "CaseStudyOptions", "ColumnMapping", "ConfigError", "DataError", "RunConfig",
    "boxplot_svg", "emit_plots", "five_number", "histogram_svg", "load_config",
    "parse_config", "preset_config", "read_dataset", "run_benchmark", "run_case_study",
    "run_replication",
]
