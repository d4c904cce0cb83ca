#!/usr/bin/env python3
"""False-positive rate of one-step-ahead detection on anomaly-free data.

Simulates log-scale random walks (which the naive model describes exactly)
and AR(1) series (fitted by CSS), trains on the first part, and reports the
flag rate on the rest for several interval levels.  A calibrated detector
flags close to ``alpha`` of the clean points.

    python3 scripts/calibration.py --reps 20 --n 5000
"""

import argparse

import numpy as np

from wqad.core import DetectorConfig
from wqad.detect import run_detection
from wqad.forecast import auto_arima, fit_naive
from wqad.synth import generate_base


def flag_rate(kind: str, alpha: float, n: int, train: int, seed: int) -> float:
    frame = generate_base(kind, {"sigma": 0.05, "phi": 0.7}, n, seed)
    y = np.log(frame.values[:train])
    if kind == "random-walk":
        model = fit_naive(y)
    else:
        model, _ = auto_arima(y, 2, 1, 1)
    test = frame.subset(np.arange(n) >= train)
    trace = run_detection(test, model, "AD", config=DetectorConfig(alpha=alpha))
    live = ~trace.warmup
    return float(trace.flagged[live].mean())


def main() -> None:
    ap = argparse.ArgumentParser(description="interval calibration on clean synthetic series")
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--train", type=int, default=1000)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.05, 0.1])
    args = ap.parse_args()

    print(f"{'base':<12}{'alpha':>7}{'mean rate':>11}{'min':>8}{'max':>8}")
    for kind in ("random-walk", "ar1"):
        for alpha in args.alphas:
            rates = [flag_rate(kind, alpha, args.n, args.train, s) for s in range(args.reps)]
            print(f"{kind:<12}{alpha:>7.3f}{np.mean(rates):>11.4f}{min(rates):>8.4f}{max(rates):>8.4f}")


if __name__ == "__main__":
    main()
