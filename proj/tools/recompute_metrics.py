#!/usr/bin/env python3
"""Recompute verification metrics from a score CSV and compare with a report.

Usage: recompute_metrics.py SCORES_CSV REPORT_TXT [--tol 1e-12]

The score CSV has the header "label,score" and rows "genuine,<s>" or
"impostor,<s>". The report has "name: value" lines. Every metric is
recomputed by exhaustive counting over all thresholds and pairs.
Exit status 0 when eer, auc and the two TAR values all agree within tol.
"""

import argparse
import csv
import math
import sys


def read_scores(path):
    genuine, impostor = [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["label", "score"]:
            sys.exit(f"{path}: expected header 'label,score'")
        for row in reader:
            target = {"genuine": genuine, "impostor": impostor}.get(row["label"])
            if target is None:
                sys.exit(f"{path}: unknown label {row['label']!r}")
            target.append(float(row["score"]))
    if not genuine or not impostor:
        sys.exit(f"{path}: need genuine and impostor scores")
    return genuine, impostor


def read_report(path):
    values = {}
    with open(path) as f:
        for line in f:
            if ":" in line:
                key, value = line.split(":", 1)
                values[key.strip()] = float(value)
    return values


def operating_points(genuine, impostor):
    """(far, frr) when accepting score >= t, for every distinct score and +inf."""
    points = []
    for t in sorted(set(genuine) | set(impostor)) + [math.inf]:
        far = sum(1 for s in impostor if s >= t) / len(impostor)
        frr = sum(1 for s in genuine if s < t) / len(genuine)
        points.append((far, frr))
    return points


def eer(points):
    for (far0, frr0), (far1, frr1) in zip(points, points[1:]):
        d0, d1 = far0 - frr0, far1 - frr1
        if d0 == 0.0:
            return far0
        if d0 > 0.0 and d1 <= 0.0:
            return far0 + d0 / (d0 - d1) * (far1 - far0)
    return points[-1][0]


def auc(genuine, impostor):
    wins = sum(1.0 if g > i else 0.5 if g == i else 0.0 for g in genuine for i in impostor)
    return wins / (len(genuine) * len(impostor))


def tar_at_far(points, target):
    for far, frr in points:
        if far <= target:
            return 1.0 - frr
    return 0.0


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("scores")
    parser.add_argument("report")
    parser.add_argument("--tol", type=float, default=1e-12)
    args = parser.parse_args()

    genuine, impostor = read_scores(args.scores)
    report = read_report(args.report)
    points = operating_points(genuine, impostor)
    recomputed = {
        "eer": eer(points),
        "auc": auc(genuine, impostor),
        "tar_at_far_1e2": tar_at_far(points, 1e-2),
        "tar_at_far_1e3": tar_at_far(points, 1e-3),
    }
    ok = True
    for key, value in recomputed.items():
        if key not in report:
            print(f"{key}: missing from report")
            ok = False
            continue
        diff = abs(value - report[key])
        status = "ok" if diff <= args.tol else "MISMATCH"
        ok &= diff <= args.tol
        print(f"{key}: report {report[key]:.17g} recomputed {value:.17g} diff {diff:.3g} {status}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
