import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import ValidationError

from hyperlab.experiments.models import ExperimentReport


class ResultStore:
    """File-backed store for experiment reports, one directory per run."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.run_dir = None

    def connect(self, run_name: str) -> Path:
        """Create (or reuse) the run directory"""
        try:
            self.run_dir = self.root / run_name
            self.run_dir.mkdir(parents=True, exist_ok=True)
            logging.info(f"Result store ready at {self.run_dir}")
            return self.run_dir
        except OSError as e:
            logging.error(f"Failed to prepare result directory: {str(e)}")
            raise

    def close(self):
        if self.run_dir:
            logging.info(f"Result store at {self.run_dir} closed")
            self.run_dir = None

    def _path(self, name: str) -> Path:
        if self.run_dir is None:
            raise RuntimeError("ResultStore.connect must be called first")
        return self.run_dir / name

    @staticmethod
    def report_json(report: ExperimentReport) -> str:
        """Canonical JSON text: sorted keys, no wall-clock fields."""
        return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def save_report(self, report: ExperimentReport, markdown: Optional[str] = None) -> bool:
        """Write report.json, timings.json and (when given) report.md"""
        try:
            self._path("report.json").write_text(self.report_json(report))
            self._path("timings.json").write_text(json.dumps(report.timings, sort_keys=True, indent=2) + "\n")
            if markdown is not None:
                self._path("report.md").write_text(markdown)
            logging.info(f"Saved report {report.name!r} to {self.run_dir}")
            return True
        except OSError as e:
            logging.error(f"Error saving report: {str(e)}")
            return False

    def load_report(self, path: Optional[Union[str, Path]] = None) -> Optional[ExperimentReport]:
        path = Path(path) if path else self._path("report.json")
        try:
            return ExperimentReport.model_validate_json(path.read_text())
        except (OSError, ValidationError) as e:
            logging.error(f"Error loading report from {path}: {str(e)}")
            return None

    def list_runs(self) -> List[str]:
        if not self.root.exists():
            return []
        return sorted(path.name for path in self.root.iterdir() if (path / "report.json").exists())

    def get_statistics(self) -> Dict[str, int]:
        """Runs stored under the root, and how many of them passed every check"""
        runs = self.list_runs()
        passed = 0
        for run in runs:
            report = self.load_report(self.root / run / "report.json")
            if report is not None and report.passed:
                passed += 1
        return {"runs": len(runs), "passed": passed}
