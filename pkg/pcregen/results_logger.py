"""
Results Logger - Collects and reports per-pair registration metrics
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Union
from datetime import datetime
import json
import logging

from .errors import EmptyDataset
from .evaluation import DatasetSummary, PairMetrics, dataset_metrics


logger = logging.getLogger(__name__)


def _mean_time(records: List[Dict[str, Any]]) -> Optional[float]:
    """Mean wall time in seconds over the records that carry one"""
    times = [record["time_s"] for record in records if record.get("time_s") is not None]
    return sum(times) / len(times) if times else None


class ResultsLogger:
    """
    Logger for per-pair metric records

    Records are grouped by grid point (outlier ratio, initial pair count) so
    benchmark sweeps can be summarized point by point.
    """

    def __init__(self):
        self.records: List[Dict[str, Any]] = []
        self.metrics: List[PairMetrics] = []
        self.groups: Dict[str, List[PairMetrics]] = {}

    def log_record(self, metrics: PairMetrics, group: str = "all", **context):
        """Log one pair's metrics with free-form context (scene seed, method, ...)"""
        record = {"group": group, **context, **metrics.to_dict()}
        self.records.append(record)
        self.metrics.append(metrics)
        self.groups.setdefault(group, []).append(metrics)

    def get_group(self, group: str) -> List[PairMetrics]:
        return self.groups.get(group, [])

    def summarize(self, group: Optional[str] = None) -> DatasetSummary:
        """Dataset summary over one group, or over every record"""
        metrics = self.metrics if group is None else self.get_group(group)
        return dataset_metrics(metrics)

    def get_statistics(self) -> Dict:
        """Record counts plus the overall and per-group summaries"""
        stats = {
            "total_records": len(self.records),
            "groups": len(self.groups),
            "overall": None,
            "by_group": {},
        }
        if self.metrics:
            stats["overall"] = {**self.summarize().to_dict(), "time_s_mean": _mean_time(self.records)}
        for group, metrics in self.groups.items():
            records = [record for record in self.records if record["group"] == group]
            stats["by_group"][group] = {**dataset_metrics(metrics).to_dict(), "time_s_mean": _mean_time(records)}
        return stats

    def save_to_jsonl(self, filename: Union[str, Path]):
        """One JSON object per pair, in logging order"""
        with open(filename, "w") as f:
            for record in self.records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        logger.info(f"Metric records saved to: {filename}")

    def save_summary_json(self, filename: Union[str, Path]):
        data = {
            "metadata": {"total_records": len(self.records), "groups": sorted(self.groups)},
            "statistics": self.get_statistics(),
        }
        with open(filename, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
        logger.info(f"Metric summary saved to: {filename}")

    def save_to_file(self, filename: Union[str, Path] = "results_report.txt"):
        """Human-readable report"""
        with open(filename, "w") as f:
            f.write("=" * 80 + "\n")
            f.write("REGISTRATION RESULTS REPORT\n")
            f.write(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
            f.write("=" * 80 + "\n\n")
            f.write(f"Total Records: {len(self.records)}\n")
            f.write(f"Groups: {len(self.groups)}\n\n")
            for group, metrics in self.groups.items():
                f.write(f"Group: {group}\n")
                f.write("-" * 80 + "\n")
                f.write(_format_summary(dataset_metrics(metrics)))
                f.write("\n")
        logger.info(f"Results report saved to: {filename}")

    def print_summary(self):
        print("\n" + "=" * 80)
        print("REGISTRATION RESULTS SUMMARY")
        print("=" * 80)
        print(f"\nTotal Records: {len(self.records)}")
        try:
            print(_format_summary(self.summarize()))
        except EmptyDataset:
            print("  (no records)")
        print("=" * 80 + "\n")


def _format_optional(value: Optional[float], unit: str = "") -> str:
    return "n/a" if value is None else f"{value:.4f}{unit}"


def _format_summary(summary: DatasetSummary) -> str:
    return (
        f"  Pairs: {summary.pair_count}\n"
        f"  RR: {summary.rr * 100:.2f}%\n"
        f"  RE (successes): {_format_optional(summary.re_mean, ' deg')}\n"
        f"  TE (successes): {_format_optional(summary.te_mean, ' m')}\n"
        f"  IP: {summary.ip_mean * 100:.2f}%\n"
        f"  IN: {summary.in_mean:.2f}\n"
        f"  INR: {summary.inr_mean * 100:.2f}%\n"
        f"  FMR: {summary.fmr * 100:.2f}%\n"
    )
