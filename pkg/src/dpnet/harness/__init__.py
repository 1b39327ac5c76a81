"""Experiment configuration, data ingestion, orchestration and the CLI."""

from .config import ExperimentConfig, load_config
from .experiment import compare_baseline, run_experiment
from .ingest import ConsumptionDataset, ingest_consumption
