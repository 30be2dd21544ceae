from hyperlab.experiments.models import CheckRecord, ExperimentConfig, ExperimentReport, SuiteEntry

__all__ = ["CheckRecord", "ExperimentConfig", "ExperimentReport", "SuiteEntry"]
