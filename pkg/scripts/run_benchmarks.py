#!/usr/bin/env python3
"""Run every benchmark metric over the emitter fixtures and print a table."""

import argparse

from puregate.bench import METRICS, bench
from puregate.fixtures import EMITTERS


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=50)
    parser.add_argument("--warmup", type=int, default=5)
    args = parser.parse_args()

    header = f"{'metric':18s} {'executor':12s} {'median':>12s} {'mean':>12s} {'p99':>12s}"
    print(header)
    print("-" * len(header))
    for metric in METRICS:
        executors = EMITTERS if metric in ("verify_latency", "plan_latency") else EMITTERS[:1]
        for name in executors:
            report = bench(metric, name, args.samples, args.warmup)
            unit = "B" if metric == "cert_size" else ("x" if metric == "cache_speedup" else "us")
            print(
                f"{metric:18s} {name:12s} "
                f"{report.median_us:10.2f} {unit:2s} "
                f"{report.mean_us:10.2f} {unit:2s} "
                f"{report.p99_us:10.2f} {unit:2s}"
            )
            if metric == "cache_speedup":
                print(
                    f"{'':18s} {'':12s}   cold {report.detail['cold_median_us']:.1f} us, "
                    f"warm {report.detail['warm_median_us']:.1f} us, "
                    f"warm crypto verifications: {report.detail['warm_crypto_verifications']}"
                )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
