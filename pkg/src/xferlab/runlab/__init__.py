"""Configuration, experiment orchestration, seeding, result emission and the command line."""
from .config import EXPERIMENTS, ExperimentConfig, load_config, schema, validate_config
from .emit import ResultTable, emit, read_csv, table_to_csv, table_to_json
from .experiments import run
from .plot import plot_svg, series_points
from .seeds import StreamAudit, experiment_stream

__all__ = ["EXPERIMENTS", "ExperimentConfig", "ResultTable", "StreamAudit", "emit", "experiment_stream",
           "load_config", "plot_svg", "read_csv", "run", "schema", "series_points", "table_to_csv",
           "table_to_json", "validate_config"]
