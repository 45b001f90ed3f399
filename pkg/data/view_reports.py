#!/usr/bin/env python3
"""
Run Report Viewer

This script prints the reports of previously written experiment runs:
one section per experiment found under the output root, with the verdict,
estimate and reference of every report.
"""

import json
import math
import os
import sys

OUTPUT_ENV = "ANNULUS_LAB_OUTPUT"
VERDICT_MARKS = {"pass": "✓", "fail": "✗", "info": "·"}


def load_summaries(output_dir=None):
    """Load every <output_dir>/<experiment>/summary.json, sorted by experiment."""
    output_dir = output_dir or os.environ.get(OUTPUT_ENV, "results")
    if not os.path.isdir(output_dir):
        print(f"No output directory found: {output_dir}")
        return []

    summaries = []
    for name in sorted(os.listdir(output_dir)):
        path = os.path.join(output_dir, name, "summary.json")
        if not os.path.exists(path):
            continue
        try:
            with open(path, "r", encoding="utf-8") as f:
                summaries.append(json.load(f))
        except Exception as e:
            print(f"Error loading {path}: {e}")
    return summaries


def format_number(value):
    """Format a report number; missing or non-finite values print as n/a."""
    if value is None:
        return "n/a"
    if isinstance(value, float) and not math.isfinite(value):
        return "n/a"
    return f"{value:.6g}"


def count_verdicts(reports):
    counts = {"pass": 0, "fail": 0, "info": 0}
    for report in reports:
        counts[report.get("verdict", "info")] += 1
    return counts


def format_report(report):
    """One line per report: mark, id, estimate vs reference, statistic vs threshold."""
    mark = VERDICT_MARKS.get(report.get("verdict"), "?")
    line = (
        f"   {mark} {report['id']}: estimate {format_number(report.get('estimate'))}"
        f" (ref {format_number(report.get('reference'))}, n={report.get('n', 0)})"
    )
    statistic = f"{report.get('statistic_name', 'statistic')}={format_number(report.get('statistic'))}"
    if report.get("threshold") is not None:
        statistic += f" <= {format_number(report['threshold'])}"
    return f"{line}, {statistic}"


def main(output_dir=None):
    """Display every stored run."""
    print("=" * 60)
    print("ANNULUS LAB REPORTS")
    print("=" * 60)
    print()

    summaries = load_summaries(output_dir)
    if not summaries:
        print("No runs found yet.")
        print("Run an experiment first, e.g. python annulus_lab.py --experiment verify-exact")
        return 1

    failed = 0
    for summary in summaries:
        reports = summary.get("reports", [])
        counts = count_verdicts(reports)
        failed += counts["fail"]
        config = summary.get("config", {})
        print(f"🧪 {summary.get('experiment', 'unknown').upper()} (seed {config.get('seed')}, N {config.get('N')}):")
        print(f"   {counts['pass']} passed, {counts['fail']} failed, {counts['info']} informational")
        for report in reports:
            print(format_report(report))
        print()

    if failed:
        print(f"⚠ {failed} report(s) failed.")
    else:
        print("All checked reports passed.")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else None))
