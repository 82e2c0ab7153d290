#!/usr/bin/env python3
"""Plot `loadcast forecast` or `loadcast online` CSV output.

Usage:
    plot.py forecast forecast.csv [out.png]
    plot.py online batches.csv [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_forecast(path, ax):
    ts, actual, predicted = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ts.append(int(row["timestamp"]))
            actual.append(float(row["actual"]))
            predicted.append(float(row["predicted"]))
    ax.plot(ts, actual, label="actual")
    ax.plot(ts, predicted, label="predicted")
    ax.set_xlabel("timestamp (s)")
    ax.set_ylabel("target")


def plot_online(path, ax):
    series = defaultdict(lambda: ([], []))
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            xs, ys = series[int(row["batch_size"])]
            xs.append(int(row["batch_index"]))
            ys.append(float(row["rmse"]))
    for b in sorted(series):
        xs, ys = series[b]
        ax.plot(xs, ys, marker=".", label=f"B={b}")
    ax.set_xlabel("batch index")
    ax.set_ylabel("batch RMSE (normalized)")


def main(argv):
    if len(argv) < 3 or argv[1] not in ("forecast", "online"):
        print(__doc__, file=sys.stderr)
        return 2
    kind, path = argv[1], argv[2]
    out = argv[3] if len(argv) > 3 else path.rsplit(".", 1)[0] + ".png"
    fig, ax = plt.subplots(figsize=(10, 4))
    (plot_forecast if kind == "forecast" else plot_online)(path, ax)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
