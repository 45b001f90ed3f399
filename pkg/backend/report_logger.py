"""
Report Logger Backend Module

This module collects the SummaryReports of an experiment and writes the run
artifacts: the summary JSON and the CSV tables of traces, paths and samples.
"""

import csv
import json
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .csbp_engine import CsbpPath
from .peeling_engine import PeelTrace, rescale
from .stat_checks import SCHEMA_VERSION, SummaryReport

# Enhanced imports with fallbacks
try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


TRACE_FIELDS = [
    "replicate", "step", "t_rescaled", "p", "p_hat", "v", "v_hat", "h", "h_hat", "event",
]
PATH_FIELDS = ["replicate", "t", "z"]


class ReportLogger:
    """
    Artifact writer for one experiment run.

    This class is responsible for:
    - Collecting reports in the order the experiment produces them
    - Persisting the summary JSON (no timestamps, so reruns are byte-identical)
    - Exporting traces, paths and per-replicate samples as CSV
    - Deriving the exit status from the report verdicts
    """

    def __init__(self, output_dir: str, experiment: str, config: Optional[Dict] = None):
        """
        Initialize the report logger.

        Args:
            output_dir: Root directory of all runs
            experiment: Experiment name; artifacts go to output_dir/experiment
            config: Configuration echo written into the summary
        """
        self.experiment = experiment
        self.run_dir = os.path.join(output_dir, experiment)
        self.config = config or {}
        self.reports: List[SummaryReport] = []

        logger.info(f"ReportLogger initialized for {experiment} in {self.run_dir}")

    def add_report(self, report: SummaryReport) -> None:
        self.reports.append(report)
        logger.info(
            f"{report.id}: estimate={report.estimate:.6g}, reference={report.reference}, "
            f"{report.statistic_name}={report.statistic:.4g} -> {report.verdict}"
        )

    def get_stats(self) -> Dict[str, int]:
        """
        Count reports by verdict.

        Returns:
            Dict: pass / fail / info counts
        """
        stats = {"pass": 0, "fail": 0, "info": 0}
        for report in self.reports:
            stats[report.verdict] += 1
        return stats

    def exit_status(self) -> int:
        return 1 if any(report.failed for report in self.reports) else 0

    def path_for(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def ensure_dir(self) -> bool:
        try:
            os.makedirs(self.run_dir, exist_ok=True)
            return True
        except OSError as e:
            logger.error(f"Error creating output directory {self.run_dir}: {e}")
            return False

    def save_summary(self) -> bool:
        """
        Write summary.json.

        Returns:
            bool: True if written successfully, False otherwise
        """
        if not self.ensure_dir():
            return False
        data = {
            "schema": SCHEMA_VERSION,
            "experiment": self.experiment,
            "config": self.config,
            "reports": [report.to_dict() for report in self.reports],
        }
        try:
            with open(self.path_for("summary.json"), "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, ensure_ascii=False)
                f.write("\n")
            logger.info(f"Saved {len(self.reports)} reports to {self.path_for('summary.json')}")
            return True
        except (IOError, OSError) as e:
            logger.error(f"Error saving summary: {e}")
            return False

    def export_rows(self, name: str, fieldnames: Sequence[str], rows: Iterable[Dict]) -> bool:
        """
        Write rows to a CSV file in the run directory.

        Args:
            name: File name, e.g. "samples.csv"
            fieldnames: Column order
            rows: Dicts keyed by the field names

        Returns:
            bool: True if export successful, False otherwise
        """
        if not self.ensure_dir():
            return False
        path = self.path_for(name)
        try:
            count = 0
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.DictWriter(f, fieldnames=list(fieldnames))
                writer.writeheader()
                for row in rows:
                    writer.writerow(row)
                    count += 1
            logger.info(f"Exported {count} rows to {path}")
            return True
        except (IOError, OSError) as e:
            logger.error(f"Error exporting {path}: {e}")
            return False

    def export_traces(self, traces: Sequence[PeelTrace]) -> bool:
        """Write the rescaled rows of each trace to traces.csv, by replicate."""

        def rows():
            for trace in sorted(traces, key=lambda tr: tr.replicate):
                scaled = rescale(trace)
                for i, row in enumerate(trace.rows):
                    yield {
                        "replicate": trace.replicate,
                        "step": row.step,
                        "t_rescaled": float(scaled.t[i]),
                        "p": row.perimeter,
                        "p_hat": float(scaled.p_hat[i]),
                        "v": row.volume,
                        "v_hat": float(scaled.v_hat[i]),
                        "h": row.height,
                        "h_hat": float(scaled.h_hat[i]),
                        "event": row.event,
                    }

        return self.export_rows("traces.csv", TRACE_FIELDS, rows())

    def export_paths(self, paths: Sequence[Tuple[int, CsbpPath]], stride: int = 1) -> bool:
        """Write (replicate, t, z) rows of each path to paths.csv, every stride-th grid point."""

        def rows():
            for replicate, path in sorted(paths, key=lambda item: item[0]):
                last = len(path.values) - 1
                for i in range(0, len(path.values)):
                    if i % stride == 0 or i == last:
                        yield {"replicate": replicate, "t": i * path.dt, "z": float(path.values[i])}

        return self.export_rows("paths.csv", PATH_FIELDS, rows())

    @staticmethod
    def load_summary(path: str) -> Optional[Dict]:
        """
        Load a summary.json written by save_summary.

        Returns:
            Optional[Dict]: the summary, or None if it cannot be read
        """
        if not os.path.exists(path):
            logger.info(f"No summary found: {path}")
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            logger.error(f"Error loading summary {path}: {e}")
            return None
        if data.get("schema") != SCHEMA_VERSION:
            logger.warning(f"{path} has schema {data.get('schema')}, expected {SCHEMA_VERSION}")
        return data
