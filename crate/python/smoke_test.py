#!/usr/bin/env python3
"""Smoke test for the fademac Python extension.

Build the module first, then run this script from the repository root:

    cargo build --release -p fademac-py
    python3 python/smoke_test.py
"""

import math
import pathlib
import sys
from importlib.machinery import ExtensionFileLoader


def load_module():
    root = pathlib.Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "release" / "libfademac.so",
        root / "target" / "debug" / "libfademac.so",
        root / "target" / "release" / "libfademac.dylib",
        root / "target" / "debug" / "libfademac.dylib",
    ]
    for path in candidates:
        if path.exists():
            return ExtensionFileLoader("fademac", str(path)).load_module()
    sys.exit("build the extension first: cargo build --release -p fademac-py")


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol * max(1.0, abs(b)), f"{a} != {b} (tol {tol})"


def main():
    fademac = load_module()

    # fading closed forms
    exp1 = fademac.Fading.exponential(1.0)
    approx(exp1.mean(), 1.0)
    approx(exp1.expected_max_with(1.0), 1.0 + math.exp(-1.0))
    approx(exp1.sample(1.0 - math.exp(-1.0)), 1.0)
    nodes = exp1.quadrature_nodes(16)
    approx(sum(w for _, w in nodes), 1.0, tol=1e-12)
    approx(sum(w * x for x, w in nodes), 1.0, tol=1e-8)

    # water-filling analytic case: level 3 splits 3 J as [2, 1]
    alloc, level = fademac.water_fill([1.0, 2.0], 3.0)
    approx(alloc[0], 2.0)
    approx(alloc[1], 1.0)
    approx(level, 3.0)

    # one-shot thresholds follow the nu + exp(-nu) recursion
    params = fademac.SystemParams(1, 5, 1.0, 1.0, 1.0, [1.0], [exp1])
    (seq,) = fademac.one_shot_thresholds(params)
    nu = [0.0] * 6
    nu[4] = 1.0
    for j in range(3, -1, -1):
        nu[j] = nu[j + 1] + math.exp(-nu[j + 1])
    for got, want in zip(seq, nu):
        approx(got, want, tol=1e-12)

    # offline allocation beats the one-slot rate and satisfies the budget
    params2 = fademac.SystemParams(
        2, 3, 1.0, 1.0, 1.0, [2.0, 1.0], [exp1, fademac.Fading.exponential(2.0)]
    )
    gains = [[1.2, 0.4], [0.3, 0.9], [2.0, 0.1]]
    rows, iterations, trace = fademac.iterative_water_fill(params2, gains)
    assert iterations >= 1
    assert trace == sorted(trace), "objective trace must be non-decreasing"
    for user, budget in enumerate(params2.energy_budgets):
        spent = sum(row[user] for row in rows)
        approx(spent, budget, tol=1e-9)
    levels, stationarity, slackness, budget_res = fademac.verify_kkt(params2, gains, rows)
    assert len(levels) == 2
    assert max(stationarity, slackness, budget_res) <= 1e-6

    # rate formula: 1e6 * log2(4) bits
    mac = fademac.SystemParams(2, 1, 1e6, 1.0, 1.0, [2.0, 1.0], [exp1, exp1])
    approx(fademac.sum_throughput(mac, [2.0, 1.0], [1.0, 1.0]), 2e6, tol=1e-12)

    # small Monte Carlo comparison: offline bounds the causal policies and
    # the equal split trails at low SNR
    sim_params = fademac.SystemParams(2, 5, 1e6, 1.0, 1.0, [1.0, 1.0], [exp1, exp1])
    rows = fademac.run_experiment(
        sim_params,
        ["offline_iwf", "cec", "one_shot", "equal_energy"],
        300,
        12345,
        snr_db_sweep=[-10.0],
    )
    means = {policy: mean for _, policy, mean, _ in rows}
    assert means["offline_iwf"] >= means["cec"]
    assert means["offline_iwf"] >= means["one_shot"]
    assert means["equal_energy"] < means["cec"]
    assert means["equal_energy"] < means["one_shot"]

    print("smoke test passed")


if __name__ == "__main__":
    main()
