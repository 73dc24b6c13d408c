"""Randomized property drivers for the aggregation rules.

Each driver runs ``trials`` independent randomized cases and returns the
number of failures, so the regular tests and the acceptance suite can share
one implementation (the acceptance gate runs them at 10^3 trials each).
"""

import numpy as np

from invagg.aggregation import (
    AggregatorConfig,
    ClientUpdate,
    aggregate,
    fedavg,
    invariant_aggregate,
    sign_consistency_vector,
    sign_sgd_majority,
    trimmed_mean,
)


def make_updates(rng, n, d, scale=1.0, equal_counts=False):
    return [
        ClientUpdate(
            client_id=i,
            gradient=rng.normal(scale=scale, size=d),
            sample_count=1 if equal_counts else int(rng.integers(1, 20)),
        )
        for i in range(n)
    ]


def _configs_for(n, rng):
    f = int(rng.integers(1, max(2, n // 3)))
    f = min(f, n - 3)
    m = int(rng.integers(1, n + 1))
    return [
        AggregatorConfig(kind="fedavg"),
        AggregatorConfig(kind="trimmed_mean", alpha=float(rng.uniform(0, 0.33))),
        AggregatorConfig(kind="and_mask", tau=float(rng.uniform(0, 1))),
        AggregatorConfig(kind="invariant", tau=float(rng.uniform(0, 1)), alpha=float(rng.uniform(0, 0.33))),
        AggregatorConfig(kind="krum", num_malicious=f),
        AggregatorConfig(kind="multi_krum", num_malicious=f, krum_select=m),
        AggregatorConfig(kind="multi_krum_cosine", num_malicious=f, krum_select=m),
        AggregatorConfig(kind="krum_then_trimmed", num_malicious=f, krum_select=max(3, m), alpha=0.2),
        AggregatorConfig(kind="sign_sgd", sign_lr=0.01),
        AggregatorConfig(kind="weak_dp", clip_norm=1.0, noise_std=0.5),
        AggregatorConfig(kind="mv_ratio_mask", mv_threshold=0.5, alpha=0.2),
    ]


def prop_permutation_invariance(seed, trials):
    """Every aggregator ignores the order of the update list."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(6, 13))
        d = int(rng.integers(1, 5))
        updates = make_updates(rng, n, d)
        perm = rng.permutation(n)
        shuffled = [updates[i] for i in perm]
        for config in _configs_for(n, rng):
            a = aggregate(updates, config, seed=123)
            b = aggregate(shuffled, config, seed=123)
            if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
                failures += 1
    return failures


def prop_breakdown(seed, trials):
    """Corrupting at most ceil(alpha*N) clients cannot drag the trimmed mean
    outside the benign per-coordinate range."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(6, 13))
        d = int(rng.integers(1, 5))
        alpha = float(rng.uniform(0.05, 0.34))
        k = int(np.ceil(alpha * n))
        if n - 2 * k < 1:
            continue
        updates = make_updates(rng, n, d)
        benign = np.stack([u.gradient for u in updates])
        n_bad = int(rng.integers(1, k + 1))
        bad_rows = rng.choice(n, size=n_bad, replace=False)
        corrupted = []
        for i, u in enumerate(updates):
            if i in bad_rows:
                g = rng.choice([-1e9, 1e9], size=d)
                corrupted.append(ClientUpdate(u.client_id, g, u.sample_count))
            else:
                corrupted.append(u)
        benign_vals = benign[[i for i in range(n) if i not in bad_rows]]
        out = trimmed_mean(corrupted, alpha)
        lo = benign_vals.min(axis=0) - 1e-9
        hi = benign_vals.max(axis=0) + 1e-9
        if not np.all((out >= lo) & (out <= hi)):
            failures += 1
    return failures


def prop_masking_soundness(seed, trials):
    """Invariant-aggregate coordinates below the consistency threshold are
    exactly zero."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(5, 13))
        d = int(rng.integers(1, 6))
        updates = make_updates(rng, n, d)
        tau = float(rng.uniform(0.05, 1.0))
        out = invariant_aggregate(updates, tau, 0.1)
        consistency = sign_consistency_vector(updates)
        below = consistency < tau
        if not np.all(out[below] == 0.0):
            failures += 1
    return failures


def prop_composition_identity(seed, trials):
    """tau=0, alpha=0 composition equals plain averaging on unit counts,
    bit for bit."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(2, 13))
        d = int(rng.integers(1, 6))
        updates = make_updates(rng, n, d, equal_counts=True)
        if not np.array_equal(invariant_aggregate(updates, 0.0, 0.0), fedavg(updates)):
            failures += 1
    return failures


def prop_scale_equivariance(seed, trials):
    """Scaling every update by c > 0 scales the trimmed mean by c."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(5, 13))
        d = int(rng.integers(1, 6))
        alpha = float(rng.uniform(0, 0.34))
        if n - 2 * int(np.ceil(alpha * n)) < 1:
            continue
        c = float(rng.uniform(0.01, 50.0))
        updates = make_updates(rng, n, d)
        scaled = [
            ClientUpdate(u.client_id, c * u.gradient, u.sample_count) for u in updates
        ]
        if not np.allclose(trimmed_mean(scaled, alpha), c * trimmed_mean(updates, alpha),
                           rtol=1e-12, atol=0):
            failures += 1
    return failures


def prop_sign_rescale_invariance(seed, trials):
    """Majority-vote output ignores any positive per-client rescaling."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(3, 13))
        d = int(rng.integers(1, 6))
        updates = make_updates(rng, n, d)
        rescaled = [
            ClientUpdate(u.client_id, float(rng.uniform(1e-6, 1e6)) * u.gradient, u.sample_count)
            for u in updates
        ]
        a = sign_sgd_majority(updates, 0.01)
        b = sign_sgd_majority(rescaled, 0.01)
        if not np.array_equal(a, b):
            failures += 1
    return failures


ALL_PROPERTIES = (
    ("permutation_invariance", prop_permutation_invariance),
    ("breakdown", prop_breakdown),
    ("masking_soundness", prop_masking_soundness),
    ("composition_identity", prop_composition_identity),
    ("scale_equivariance", prop_scale_equivariance),
    ("sign_rescale_invariance", prop_sign_rescale_invariance),
)
