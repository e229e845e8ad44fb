"""
Experiment Output Tools
CSV and manifest export, run timing and library provenance for reproducible runs
"""

import json
import logging
import math
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterator, List, Union

import numpy as np
import pandas as pd

from config.constants import CSV_FLOAT_FORMAT, MANIFEST_FILENAME, PROJECT_NAME, PROJECT_VERSION

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ['numpy', 'scipy', 'pandas', 'pydantic', 'matplotlib', 'seaborn', 'python-dotenv']


@dataclass
class RunMetrics:
    """Wall-clock time of one named stage"""
    stage: str
    seconds: float


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays to plain JSON values; NaN and inf become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


class ExperimentTools:
    """
    Output helpers shared by every CLI command
    """

    def __init__(self):
        self.metrics_history: List[RunMetrics] = []

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        """
        Record the wall-clock time of a block in metrics_history

        Args:
            stage: label of the timed block
        """
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.metrics_history.append(RunMetrics(stage, elapsed))
            logger.info("%s took %.2f s", stage, elapsed)

    def export_table(self, frame: pd.DataFrame, path: Union[str, Path]) -> Path:
        """
        Write a table as CSV with a header row and 17 significant digits

        Returns:
            Path of the written file
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
        logger.debug("wrote %d rows to %s", len(frame), path)
        return path

    def export_manifest(self, data: Dict[str, Any], output_dir: Union[str, Path]) -> Path:
        """
        Write the run manifest with sorted keys and no timestamps

        Args:
            data: command, resolved config, seeds and results
            output_dir: run output directory

        Returns:
            Path of the manifest
        """
        path = Path(output_dir) / MANIFEST_FILENAME
        path.parent.mkdir(parents=True, exist_ok=True)
        document = {
            'project': PROJECT_NAME,
            'version': PROJECT_VERSION,
            'python': platform.python_version(),
            'libraries': self.library_versions(),
            **data,
        }
        path.write_text(json.dumps(to_jsonable(document), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @staticmethod
    def library_versions() -> Dict[str, str]:
        versions = {}
        for package in TRACKED_PACKAGES:
            try:
                versions[package] = metadata.version(package)
            except metadata.PackageNotFoundError:
                versions[package] = 'not installed'
        return versions

    def total_runtime(self) -> float:
        return sum(m.seconds for m in self.metrics_history)


# Global instance for easy access
experiment_tools = ExperimentTools()


def get_experiment_tools() -> ExperimentTools:
    """Get the global experiment tools instance"""
    return experiment_tools
