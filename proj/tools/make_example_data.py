"""Writes the synthetic three-year daily example to data/flu_daily.csv.

Test volumes follow a winter-peaking season with negative-binomial noise;
positivity rises in cold, dry weather. A handful of cells are left empty to
exercise missing-value handling.
"""

import argparse
import datetime as dt

import numpy as np


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/flu_daily.csv")
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    start = dt.date(2021, 1, 1)
    n = 3 * 365
    t = np.arange(n)
    season = np.cos(2 * np.pi * (t - 15) / 365.25)  # +1 in mid-January

    temperature = 10.0 - 9.0 * season + rng.normal(0.0, 2.5, n)
    humidity = 72.0 + 8.0 * season + rng.normal(0.0, 6.0, n)
    humidity = np.clip(humidity, 30.0, 100.0)

    mean_tests = 45.0 * np.exp(0.55 * season - 0.02 * (temperature - 10.0))
    dispersion = 4.0
    tests = rng.negative_binomial(dispersion, dispersion / (dispersion + mean_tests))
    positivity = 1.0 / (1.0 + np.exp(-(-1.6 + 0.9 * season - 0.01 * (humidity - 72.0))))
    positives = rng.binomial(tests, positivity)
    negatives = tests - positives
    visits = tests + rng.poisson(25.0, n)

    missing_temp = set(rng.choice(n, 6, replace=False).tolist())
    missing_counts = set(rng.choice(n, 3, replace=False).tolist())

    with open(args.out, "w", newline="\n") as f:
        f.write("date,visits,positives,negatives,temperature,humidity\n")
        for i in range(n):
            day = start + dt.timedelta(days=int(i))
            temp = "" if i in missing_temp else f"{temperature[i]:.1f}"
            pos = "" if i in missing_counts else str(positives[i])
            f.write(f"{day.isoformat()},{visits[i]},{pos},{negatives[i]},{temp},{humidity[i]:.1f}\n")


if __name__ == "__main__":
    main()
