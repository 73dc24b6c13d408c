#!/usr/bin/env python3
"""Numeric validation of the guarantees behind the aggregator design.

Three Monte Carlo checkers back the library:

1. the trimmed-mean error bound under adversarial corruption,
2. the probability bound on a dimension's sign consistency dropping below
   a vote-count threshold,
3. the expected-gradient sign analysis connecting feature-label correlation
   to per-client gradient directions, and its federation-level consequence
   for the trigger dimension.
"""

import json

from invagg import (
    check_gradient_sign,
    check_mask_failure_bound,
    check_scenario_consistency,
    check_trimmed_mean_bound,
    gradient_sign_grid,
    two_feature_backdoor_scenario,
)
from invagg.synthdata import GaussianClientSpec

print("== 1. trimmed-mean error bound ==")
for eta in (0.0, 0.01, 0.02):
    report = check_trimmed_mean_bound(N=200, eta=eta, delta=0.1, c=2.0, trials=5000, seed=1)
    p = report.parameters
    print(f"eta={eta}: alpha={p['alpha']:.3f} violations={report.violations}/{report.trials} "
          f"(allowed rate {report.theoretical_bound:.3f}) -> "
          f"{'ok' if report.passed else 'VIOLATED'}")

print("\n== 2. sign-consistency failure bound ==")
for phi in (1.5, 2.0, 3.0):
    report = check_mask_failure_bound(
        N=10, num_malicious=2, tau_count=2, trials=5000, seed=2, phi=phi
    )
    print(f"phi={phi}: below-threshold freq={report.violation_rate:.4f} "
          f"bound={report.theoretical_bound:.4f} -> "
          f"{'ok' if report.passed else 'VIOLATED'}")

print("\n== 3a. per-client expected gradient signs ==")
# a client whose feature k is positively label-correlated (mu=1): whenever
# the weight opposes or ignores that correlation, the expected gradient
# entry is negative, so descent grows the weight toward alignment
spec = GaussianClientSpec(client_id=0, mu=[1.0], sigma=[1.0])
for w in (-0.5, 0.0):
    res = check_gradient_sign(spec, [w], 0, 500_000, seed=3)
    print(f"mu=1, w={w:+.1f}: mean={res.measured_mean:+.4f} "
          f"predicted sign {res.predicted_sign} -> agrees={res.agrees}")

cells = gradient_sign_grid([-1.0, 0.0, 1.0], [-0.5, 0.0, 0.5], 200_000, seed=4)
agree = sum(1 for _, _, r in cells if r.agrees)
print(f"grid: {agree}/{len(cells)} cells agree with the predicted sign")

print("\n== 3b. trigger-dimension consistency across the federation ==")
scenario = two_feature_backdoor_scenario(seed=1)
for w in ([1.0, 0.0], [1.0, -0.5], [0.0, 2.5]):
    res = check_scenario_consistency(scenario, w, 200_000, seed=5)
    print(f"w={w}: q={res.q:.1f} expected {res.case.comparison} "
          f"{res.case.expected_consistency} -> {'ok' if res.passed else 'MISMATCH'}")
    print(f"  per-client signs: {res.client_signs}")

print("\nreports serialize for CI, e.g.:")
report = check_mask_failure_bound(N=10, num_malicious=2, tau_count=0, trials=1000, seed=6, phi=2.0)
print(json.dumps(json.loads(report.to_json()), indent=2)[:400], "...")
