"""Tests for the aggregation rules, including brute-force scoring oracles."""

import numpy as np
import pytest

from invagg.aggregation import (
    AggregatorConfig,
    ClientUpdate,
    aggregate,
    and_mask,
    fedavg,
    invariant_aggregate,
    krum,
    krum_then_trimmed,
    multi_krum,
    multi_krum_cosine,
    mv_ratio_mask,
    sign_consistency,
    sign_sgd_majority,
    trimmed_mean,
    trimmed_mean_scalar,
    weak_dp,
)
from helpers_properties import ALL_PROPERTIES, make_updates


def ups(*vectors, counts=None):
    counts = counts or [1] * len(vectors)
    return [
        ClientUpdate(client_id=i, gradient=np.atleast_1d(np.asarray(v, dtype=float)), sample_count=c)
        for i, (v, c) in enumerate(zip(vectors, counts))
    ]


# ---------------------------------------------------------------------------
# independent scoring oracle for the Krum family
# ---------------------------------------------------------------------------

def _euclidean_sq(a, b):
    diff = np.asarray(a) - np.asarray(b)
    return float(diff @ diff)


def _cosine_distance(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0  # zero vectors have similarity 0 to everything
    return 1.0 - float(np.asarray(a) @ np.asarray(b)) / (na * nb)


def oracle_krum_order(updates, f, distance):
    """Exhaustive O(N^2) scoring: sum of distances to the N-f-2 nearest."""
    n = len(updates)
    nb = n - f - 2
    scores = []
    for i, u in enumerate(updates):
        dists = sorted(
            distance(u.gradient, v.gradient) for j, v in enumerate(updates) if j != i
        )
        scores.append(sum(dists[:nb]))
    return sorted(range(n), key=lambda i: (scores[i], updates[i].client_id))


class TestFedavg:
    def test_equal_counts_mean(self):
        assert np.allclose(fedavg(ups([1, 1], [3, 3])), [2, 2])

    def test_zeros(self):
        assert np.allclose(fedavg(ups([0, 0], [0, 0], [0, 0])), [0, 0])

    def test_weighted(self):
        assert np.allclose(fedavg(ups([0], [4], counts=[1, 3])), [3.0])

    def test_errors(self):
        with pytest.raises(ValueError):
            fedavg([])
        with pytest.raises(ValueError):
            fedavg(ups([1, 2]) + ups([1, 2, 3]))


class TestSignConsistency:
    def test_unanimous(self):
        assert sign_consistency(ups([2], [0.5], [1], [3]), 0) == 1.0

    def test_cancellation(self):
        assert sign_consistency(ups([1], [-1], [2], [-2]), 0) == 0.0

    def test_with_zero_vote(self):
        u = ups([2.0], [0.5], [1.0], [-3.0], [0.0])
        assert sign_consistency(u, 0) == pytest.approx(0.4)

    def test_unweighted(self):
        u = ups([1], [-1], counts=[100, 1])
        assert sign_consistency(u, 0) == 0.0


class TestAndMask:
    def test_tau_zero_all_ones(self):
        u = ups([1, -1], [-1, 1], [1, 1])
        assert np.array_equal(and_mask(u, 0.0), [1.0, 1.0])

    def test_tau_one_requires_unanimity(self):
        u = ups([1, 1], [1, -1], [1, 1])
        assert np.array_equal(and_mask(u, 1.0), [1.0, 0.0])

    def test_threshold_boundary(self):
        u = ups([2.0], [0.5], [1.0], [-3.0], [0.0])  # consistency 0.4
        assert and_mask(u, 0.4)[0] == 1.0
        assert and_mask(u, 0.41)[0] == 0.0

    def test_tau_range(self):
        with pytest.raises(ValueError):
            and_mask(ups([1]), 1.5)


class TestTrimmedMean:
    def test_scalar_example(self):
        assert trimmed_mean_scalar([1, 2, 3, 4, 100], 0.2) == pytest.approx(3.0)

    def test_scalar_alpha_zero_is_mean(self):
        vals = [3.0, -1.0, 7.0, 2.5]
        assert trimmed_mean_scalar(vals, 0.0) == pytest.approx(np.mean(vals))

    def test_scalar_constant(self):
        assert trimmed_mean_scalar([5, 5, 5, 5], 0.25) == 5.0

    def test_scalar_over_trimming(self):
        with pytest.raises(ValueError):
            trimmed_mean_scalar([1.0, 2.0], 0.5)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            trimmed_mean_scalar([1.0, 2.0, 3.0], -0.1)
        with pytest.raises(ValueError):
            trimmed_mean(ups([1], [2], [3]), -0.1)

    def test_vector_alpha_zero_equals_fedavg_bitwise(self):
        rng = np.random.default_rng(0)
        u = make_updates(rng, 8, 3, equal_counts=True)
        assert np.array_equal(trimmed_mean(u, 0.0), fedavg(u))

    def test_single_outlier_bounded(self):
        rng = np.random.default_rng(1)
        vals = list(rng.uniform(-1, 1, size=9))
        u = ups(*[[v] for v in vals], [1e6])
        out = trimmed_mean(u, 0.25)
        assert -1 <= out[0] <= 1

    def test_vector_matches_scalar_per_coordinate(self):
        u = ups([1, 10], [2, 20], [3, 30], [4, 40], [100, -5])
        out = trimmed_mean(u, 0.2)
        assert out[0] == pytest.approx(trimmed_mean_scalar([1, 2, 3, 4, 100], 0.2))
        assert out[1] == pytest.approx(trimmed_mean_scalar([10, 20, 30, 40, -5], 0.2))


class TestInvariantAggregate:
    def test_identity_composition(self):
        rng = np.random.default_rng(2)
        u = make_updates(rng, 6, 4, equal_counts=True)
        assert np.array_equal(invariant_aggregate(u, 0.0, 0.0), fedavg(u))

    def test_masked_coordinate_exact_zero(self):
        u = ups([1, 1], [1, -1], [1, 1], [1, -1])  # dim 1 consistency 0
        out = invariant_aggregate(u, 0.5, 0.0)
        assert out[1] == 0.0
        assert out[0] != 0.0

    def test_pass_through_with_trim(self):
        u = ups([1], [2], [3], [4], [100])  # consistency 1 in dim 0
        out = invariant_aggregate(u, 0.6, 0.2)
        assert out[0] == pytest.approx(3.0)


class TestKrumFamily:
    def test_outlier_rejected(self):
        base = [1.0, 2.0]
        u = ups(base, base, base, base, [50.0, 50.0])
        assert np.allclose(krum(u, 1), base)

    def test_all_identical(self):
        u = ups([2, 2], [2, 2], [2, 2], [2, 2])
        assert np.allclose(krum(u, 1), [2, 2])

    def test_toy_case_matches_oracle(self):
        u = ups([0.0], [0.1], [0.2], [0.3], [5.0])
        order = oracle_krum_order(u, 1, _euclidean_sq)
        assert np.allclose(krum(u, 1), u[order[0]].gradient)

    def test_exact_tie_broken_by_lower_id(self):
        # dyadic values make the two middle scores exactly equal
        u = ups([0.0], [0.25], [0.5], [0.75], [5.0])
        assert np.allclose(krum(u, 1), [0.25])

    def test_random_sets_match_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(5, 10))
            f = int(rng.integers(1, n - 3))
            m = int(rng.integers(1, n + 1))
            u = make_updates(rng, n, 3)
            order = oracle_krum_order(u, f, _euclidean_sq)
            assert np.allclose(krum(u, f), u[order[0]].gradient)
            chosen = sorted(order[:m], key=lambda i: u[i].client_id)
            expected = np.stack([u[i].gradient for i in chosen]).mean(axis=0)
            assert np.allclose(multi_krum(u, f, m), expected)

    def test_cosine_aligned_multiples(self):
        v = np.array([1.0, 2.0])
        u = ups(1 * v, 2 * v, 3 * v, 4 * v)
        assert np.allclose(multi_krum_cosine(u, 1, 4), 2.5 * v)

    def test_cosine_opposite_direction_rejected(self):
        v = np.array([1.0, 0.5])
        u = ups(1.0 * v, 1.1 * v, 0.9 * v, 1.2 * v, -3.0 * v)
        out = multi_krum_cosine(u, 1, 4)
        expected = np.stack([1.0 * v, 1.1 * v, 0.9 * v, 1.2 * v]).mean(axis=0)
        assert np.allclose(out, expected)

    def test_cosine_random_sets_match_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            n = int(rng.integers(5, 10))
            f = int(rng.integers(1, n - 3))
            m = int(rng.integers(1, n + 1))
            u = make_updates(rng, n, 2)
            order = oracle_krum_order(u, f, _cosine_distance)
            chosen = sorted(order[:m], key=lambda i: u[i].client_id)
            expected = np.stack([u[i].gradient for i in chosen]).mean(axis=0)
            assert np.allclose(multi_krum_cosine(u, f, m), expected)

    def test_too_few_updates(self):
        with pytest.raises(ValueError):
            krum(ups([1], [2], [3]), 1)  # needs N >= f + 3 for >= 1 neighbor


class TestKrumThenTrimmed:
    def test_alpha_zero_equals_multi_krum(self):
        rng = np.random.default_rng(5)
        u = make_updates(rng, 8, 3)
        assert np.array_equal(krum_then_trimmed(u, 1, 5, 0.0), multi_krum(u, 1, 5))

    def test_m_equals_n_equals_trimmed(self):
        rng = np.random.default_rng(6)
        u = make_updates(rng, 8, 3)
        assert np.allclose(krum_then_trimmed(u, 1, 8, 0.2), trimmed_mean(u, 0.2))

    def test_toy_composition(self):
        u = ups([0.0], [0.1], [0.2], [0.3], [5.0])
        order = oracle_krum_order(u, 1, _euclidean_sq)
        survivors = sorted(order[:4], key=lambda i: u[i].client_id)
        vals = [float(u[i].gradient[0]) for i in survivors]
        k = int(np.ceil(0.25 * 4))
        expected = np.mean(sorted(vals)[k:4 - k])
        assert np.allclose(krum_then_trimmed(u, 1, 4, 0.25), [expected])


class TestSignSgd:
    def test_majority(self):
        assert np.allclose(sign_sgd_majority(ups([1], [2], [-1]), 0.01), [0.01])

    def test_balanced_is_zero(self):
        assert np.allclose(sign_sgd_majority(ups([1], [-1]), 0.01), [0.0])

    def test_magnitude_ignored(self):
        assert np.allclose(sign_sgd_majority(ups([100], [-1], [-1]), 0.01), [-0.01])


class TestWeakDp:
    def test_no_noise_no_clip_equals_fedavg(self):
        rng = np.random.default_rng(7)
        u = make_updates(rng, 6, 3, scale=0.1, equal_counts=True)
        out = weak_dp(u, clip_norm=100.0, noise_std=0.0)
        assert np.array_equal(out, fedavg(u))

    def test_clipping_halves_oversized_update(self):
        g = np.array([3.0, 4.0])  # norm 5
        out = weak_dp(ups(g), clip_norm=2.5, noise_std=0.0)
        assert np.allclose(out, g / 2)

    def test_seeded_noise_is_deterministic(self):
        rng = np.random.default_rng(8)
        u = make_updates(rng, 5, 4)
        a = weak_dp(u, 1.0, 0.5, seed=11)
        b = weak_dp(u, 1.0, 0.5, seed=11)
        assert np.array_equal(a, b)
        c = weak_dp(u, 1.0, 0.5, seed=12)
        assert not np.array_equal(a, c)


class TestMvRatioMask:
    def test_identical_nonzero_passes(self):
        u = ups([2, 0], [2, 0], [2, 0])
        assert np.array_equal(mv_ratio_mask(u, 0.5), [1.0, 0.0])

    def test_symmetric_about_zero_blocked(self):
        u = ups([1], [-1], [2], [-2])
        assert mv_ratio_mask(u, 1e-6)[0] == 0.0

    def test_ratio_boundary(self):
        u = ups([1], [1], [1], [-1])  # mean 0.5, sample std 1.0
        assert mv_ratio_mask(u, 0.5)[0] == 1.0
        assert mv_ratio_mask(u, 0.5001)[0] == 0.0

    def test_needs_two_updates(self):
        with pytest.raises(ValueError):
            mv_ratio_mask(ups([1]), 0.5)


class TestAggregateDispatcher:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            AggregatorConfig(kind="nope").validate()

    def test_missing_required_field_named(self):
        with pytest.raises(ValueError, match="aggregator.tau"):
            AggregatorConfig(kind="invariant", alpha=0.2).validate()

    def test_out_of_range_named(self):
        with pytest.raises(ValueError, match="aggregator.tau"):
            AggregatorConfig(kind="invariant", tau=1.5, alpha=0.2).validate()
        with pytest.raises(ValueError, match="aggregator.alpha"):
            AggregatorConfig(kind="trimmed_mean", alpha=0.5).validate()

    def test_dispatch_matches_direct_calls(self):
        rng = np.random.default_rng(9)
        u = make_updates(rng, 8, 3)
        pairs = [
            (AggregatorConfig(kind="fedavg"), fedavg(u)),
            (AggregatorConfig(kind="trimmed_mean", alpha=0.2), trimmed_mean(u, 0.2)),
            (AggregatorConfig(kind="invariant", tau=0.3, alpha=0.2), invariant_aggregate(u, 0.3, 0.2)),
            (AggregatorConfig(kind="krum", num_malicious=2), krum(u, 2)),
            (AggregatorConfig(kind="sign_sgd", sign_lr=0.01), sign_sgd_majority(u, 0.01)),
        ]
        for config, expected in pairs:
            assert np.array_equal(aggregate(u, config), expected)


class TestProperties:
    @pytest.mark.parametrize("name,prop", ALL_PROPERTIES)
    def test_property(self, name, prop):
        assert prop(seed=1234, trials=100) == 0, f"property {name} failed"
