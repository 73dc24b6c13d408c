#!/usr/bin/env python3
"""Tour of the aggregation rules on two hand-built poisoned batches.

The two batches reproduce the classic failure modes:

* outlier batch - benign values agree in sign, two attackers report huge
  opposite values. Averaging flips; trimming fixes it; the mask alone does
  not (the dimension is highly consistent, so it passes).
* split batch - benign values straddle zero (the dimension is uninformative),
  two attackers pile onto one side. Trimming alone stays biased toward the
  attackers; the sign-consistency mask zeroes the dimension.
"""

import numpy as np

from invagg import (
    AggregatorConfig,
    ClientUpdate,
    aggregate,
    sign_consistency,
)


def show(title, updates):
    print(f"\n=== {title} ===")
    vals = [float(u.gradient[0]) for u in updates]
    print(f"values: {vals}")
    print(f"sign consistency: {sign_consistency(updates, 0):.2f}")
    configs = [
        AggregatorConfig(kind="fedavg"),
        AggregatorConfig(kind="trimmed_mean", alpha=0.25),
        AggregatorConfig(kind="and_mask", tau=0.4),
        AggregatorConfig(kind="invariant", tau=0.4, alpha=0.25),
        AggregatorConfig(kind="krum", num_malicious=2),
        AggregatorConfig(kind="multi_krum", num_malicious=2, krum_select=6),
        AggregatorConfig(kind="multi_krum_cosine", num_malicious=2, krum_select=6),
        AggregatorConfig(kind="krum_then_trimmed", num_malicious=2, krum_select=6, alpha=0.25),
        AggregatorConfig(kind="sign_sgd", sign_lr=0.01),
        AggregatorConfig(kind="weak_dp", clip_norm=1.0, noise_std=0.0),
        AggregatorConfig(kind="mv_ratio_mask", mv_threshold=1.0, alpha=0.25),
    ]
    for config in configs:
        out = aggregate(updates, config, seed=0)
        print(f"  {config.kind:18s} -> {out[0]:+.4f}")


def batch(values):
    return [ClientUpdate(client_id=i, gradient=[v]) for i, v in enumerate(values)]


# benign gradients near +0.5, attackers report -20: the mean flips sign,
# outlier-robust rules do not
show("outlier batch (benign consistent, attackers extreme)",
     batch([0.45, 0.52, 0.48, 0.55, 0.41, 0.47, 0.51, 0.44, -20.0, -20.0]))

# benign gradients split around zero, attackers all report -0.6: the trimmed
# mean leans their way, while the low sign consistency trips the mask
show("split batch (benign diverse, attackers one-sided)",
     batch([0.35, -0.33, 0.31, -0.29, 0.27, -0.25, 0.23, -0.21, -0.6, -0.6]))

# The takeaway: neither component is enough on its own. The composition
# trims outliers on consistent dimensions and mutes inconsistent ones.
print("\nnote how only the invariant row is safe in both batches")
