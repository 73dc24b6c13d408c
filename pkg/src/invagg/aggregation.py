"""Server-side aggregation rules.

Implements sample-weighted averaging, coordinate-wise trimmed mean, the
sign-consistency AND-mask, their composition (the invariant aggregator), and
the baselines: Krum and multi-Krum (Euclidean and cosine), Krum followed by
trimming, sign majority vote, norm-clipping with Gaussian noise, and the
mean-variance-ratio mask.

All aggregators are pure functions of their update lists (the clip+noise
baseline additionally of a seed) and are invariant to the order of the list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClientUpdate",
    "AggregatorConfig",
    "AGGREGATOR_KINDS",
    "fedavg",
    "sign_consistency",
    "sign_consistency_vector",
    "and_mask",
    "trimmed_mean_scalar",
    "trimmed_mean",
    "invariant_aggregate",
    "krum",
    "multi_krum",
    "multi_krum_cosine",
    "krum_then_trimmed",
    "sign_sgd_majority",
    "weak_dp",
    "mv_ratio_mask",
    "aggregate",
]


@dataclass(frozen=True)
class ClientUpdate:
    """One client's reported pseudo-gradient plus its sample count."""

    client_id: int
    gradient: np.ndarray
    sample_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=float))
        if self.gradient.ndim != 1:
            raise ValueError("gradient must be a 1-d vector")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("gradient entries must be finite")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")


def _stack(updates: list[ClientUpdate]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate a nonempty update list and return (ids, gradients, counts)."""
    if not updates:
        raise ValueError("update list must be nonempty")
    d = updates[0].gradient.shape[0]
    if any(u.gradient.shape[0] != d for u in updates):
        raise ValueError("all updates must share the gradient dimension")
    ids = np.array([u.client_id for u in updates])
    grads = np.stack([u.gradient for u in updates])
    counts = np.array([u.sample_count for u in updates], dtype=float)
    return ids, grads, counts


def fedavg(updates: list[ClientUpdate]) -> np.ndarray:
    """Sample-count-weighted mean of the updates (the plain federated rule).

    Equal counts reduce to the arithmetic mean, computed as such so the
    tau=0, alpha=0 composition identity holds bit for bit.
    """
    _, grads, counts = _stack(updates)
    if np.all(counts == counts[0]):
        return grads.mean(axis=0)
    return (counts[:, None] * grads).sum(axis=0) / counts.sum()


def sign_consistency_vector(updates: list[ClientUpdate]) -> np.ndarray:
    """Per-dimension |mean of gradient signs| across clients, in [0, 1].

    Each client gets one vote regardless of sample count; exact zeros vote 0.
    """
    _, grads, _ = _stack(updates)
    return np.abs(np.sign(grads).sum(axis=0)) / len(updates)


def sign_consistency(updates: list[ClientUpdate], k: int) -> float:
    """Sign consistency of dimension k (see sign_consistency_vector)."""
    return float(sign_consistency_vector(updates)[k])


def and_mask(updates: list[ClientUpdate], tau: float) -> np.ndarray:
    """0/1 mask keeping dimensions whose sign consistency is >= tau.

    tau is the normalized threshold in [0, 1], so it does not depend on the
    number of participating clients.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return (sign_consistency_vector(updates) >= tau).astype(float)


def trimmed_mean_scalar(values, alpha: float) -> float:
    """Mean after dropping the ceil(alpha*N) smallest and largest values."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("values must be a nonempty 1-d sequence")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    n = arr.size
    k = math.ceil(alpha * n)
    if n - 2 * k < 1:
        raise ValueError(f"over-trimming: {n} values cannot lose {k} per tail")
    if k == 0:
        return float(arr.mean())
    return float(np.sort(arr)[k:n - k].mean())


def trimmed_mean(updates: list[ClientUpdate], alpha: float) -> np.ndarray:
    """Coordinate-wise trimmed mean over the updates.

    Trimming is independent per coordinate (different clients may be dropped
    in different coordinates) and ignores sample counts.
    """
    _, grads, _ = _stack(updates)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    n = grads.shape[0]
    k = math.ceil(alpha * n)
    if n - 2 * k < 1:
        raise ValueError(f"over-trimming: {n} updates cannot lose {k} per tail")
    if k == 0:
        return grads.mean(axis=0)
    return np.sort(grads, axis=0)[k:n - k].mean(axis=0)


def invariant_aggregate(updates: list[ClientUpdate], tau: float, alpha: float) -> np.ndarray:
    """Sign-consistency mask applied elementwise to the trimmed mean.

    Dimensions whose sign consistency falls below tau come out exactly zero;
    the surviving dimensions carry the outlier-resistant trimmed mean.
    """
    return and_mask(updates, tau) * trimmed_mean(updates, alpha)


def _krum_order(ids: np.ndarray, grads: np.ndarray, dist_sq: np.ndarray, num_malicious: int) -> np.ndarray:
    """Indices of updates ordered by Krum score, ties broken by client id."""
    n = grads.shape[0]
    neighbors = n - num_malicious - 2
    if neighbors < 1:
        raise ValueError(
            f"krum needs at least num_malicious + 3 updates, got {n} for f={num_malicious}"
        )
    np.fill_diagonal(dist_sq, np.inf)
    nearest = np.sort(dist_sq, axis=1)[:, :neighbors]
    scores = nearest.sum(axis=1)
    order = sorted(range(n), key=lambda i: (scores[i], ids[i]))
    return np.array(order)


def _euclidean_dist_sq(grads: np.ndarray) -> np.ndarray:
    # direct differences rather than the gram-matrix identity: the straight
    # formula keeps exact ties exact, so the id tie-break stays meaningful
    diff = grads[:, None, :] - grads[None, :, :]
    return (diff * diff).sum(axis=2)


def _cosine_dist(grads: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(grads, axis=1)
    unit = np.zeros_like(grads)
    nz = norms > 0
    unit[nz] = grads[nz] / norms[nz, None]
    # zero vectors keep a zero unit row: similarity 0 to everything
    sim = unit @ unit.T
    return 1.0 - sim


def _krum_survivors(
    updates: list[ClientUpdate], num_malicious: int, m: int, cosine: bool
) -> list[ClientUpdate]:
    ids, grads, _ = _stack(updates)
    if not 1 <= m <= len(updates):
        raise ValueError("m must satisfy 1 <= m <= number of updates")
    dist = _cosine_dist(grads) if cosine else _euclidean_dist_sq(grads)
    order = _krum_order(ids, grads, dist, num_malicious)
    chosen = sorted(order[:m], key=lambda i: ids[i])
    return [updates[i] for i in chosen]


def krum(updates: list[ClientUpdate], num_malicious: int) -> np.ndarray:
    """The single update closest (in summed squared distance) to its peers.

    Each update is scored by the sum of squared Euclidean distances to its
    N - f - 2 nearest neighbors; the lowest score wins, ties broken by the
    lower client id.
    """
    return _krum_survivors(updates, num_malicious, 1, cosine=False)[0].gradient.copy()


def multi_krum(updates: list[ClientUpdate], num_malicious: int, m: int) -> np.ndarray:
    """Uniform average of the m lowest-scoring updates under the Krum score."""
    survivors = _krum_survivors(updates, num_malicious, m, cosine=False)
    return np.stack([u.gradient for u in survivors]).mean(axis=0)


def multi_krum_cosine(updates: list[ClientUpdate], num_malicious: int, m: int) -> np.ndarray:
    """Multi-Krum with distance 1 - cosine similarity instead of Euclidean."""
    survivors = _krum_survivors(updates, num_malicious, m, cosine=True)
    return np.stack([u.gradient for u in survivors]).mean(axis=0)


def krum_then_trimmed(
    updates: list[ClientUpdate], num_malicious: int, m: int, alpha: float
) -> np.ndarray:
    """Multi-Krum selection of m survivors, then coordinate-wise trimming."""
    survivors = _krum_survivors(updates, num_malicious, m, cosine=False)
    return trimmed_mean(survivors, alpha)


def sign_sgd_majority(updates: list[ClientUpdate], sign_lr: float) -> np.ndarray:
    """Majority vote over gradient signs, scaled by a fixed step size.

    Per coordinate the output is sign_lr * sign(sum_i sign(g_i)); magnitudes
    are ignored entirely, and a perfectly split vote yields zero.
    """
    if sign_lr <= 0:
        raise ValueError("sign_lr must be positive")
    _, grads, _ = _stack(updates)
    return sign_lr * np.sign(np.sign(grads).sum(axis=0))


def weak_dp(
    updates: list[ClientUpdate], clip_norm: float, noise_std: float, seed=0
) -> np.ndarray:
    """Norm-clip every update, average, then add seeded Gaussian noise.

    Each gradient is scaled by min(1, clip_norm / ||g||_2) before a uniform
    average; iid Normal(0, noise_std) noise is added per coordinate.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    _, grads, _ = _stack(updates)
    norms = np.linalg.norm(grads, axis=1)
    factors = np.ones_like(norms)
    over = norms > clip_norm
    factors[over] = clip_norm / norms[over]
    mean = (grads * factors[:, None]).mean(axis=0)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        mean = mean + rng.normal(0.0, noise_std, size=mean.shape)
    return mean


def mv_ratio_mask(updates: list[ClientUpdate], mv_threshold: float) -> np.ndarray:
    """0/1 mask keeping dimensions with |sample mean| / sample std >= threshold.

    Needs at least two updates for the sample standard deviation. Degenerate
    coordinates with zero variance pass iff their common value is nonzero.
    """
    if mv_threshold <= 0:
        raise ValueError("mv_threshold must be positive")
    _, grads, _ = _stack(updates)
    if grads.shape[0] < 2:
        raise ValueError("mv_ratio_mask needs at least 2 updates")
    means = grads.mean(axis=0)
    stds = grads.std(axis=0, ddof=1)
    mask = np.zeros(grads.shape[1])
    nz = stds > 0
    mask[nz] = (np.abs(means[nz]) / stds[nz] >= mv_threshold).astype(float)
    mask[~nz] = (means[~nz] != 0).astype(float)
    return mask


AGGREGATOR_KINDS = (
    "fedavg",
    "trimmed_mean",
    "and_mask",
    "invariant",
    "krum",
    "multi_krum",
    "multi_krum_cosine",
    "krum_then_trimmed",
    "sign_sgd",
    "weak_dp",
    "mv_ratio_mask",
)

# Which config fields each kind consumes (everything else must stay unset).
_REQUIRED_FIELDS = {
    "fedavg": (),
    "trimmed_mean": ("alpha",),
    "and_mask": ("tau",),
    "invariant": ("tau", "alpha"),
    "krum": ("num_malicious",),
    "multi_krum": ("num_malicious", "krum_select"),
    "multi_krum_cosine": ("num_malicious", "krum_select"),
    "krum_then_trimmed": ("num_malicious", "krum_select", "alpha"),
    "sign_sgd": ("sign_lr",),
    "weak_dp": ("clip_norm", "noise_std"),
    "mv_ratio_mask": ("mv_threshold", "alpha"),
}


@dataclass
class AggregatorConfig:
    """Aggregator selection plus the hyper-parameters the chosen kind needs.

    The mask thresholds follow the conventions above: tau is the normalized
    sign-consistency threshold of the AND-mask, alpha the trimmed fraction
    per tail, mv_threshold the mean-to-std ratio cutoff. ``mv_ratio_mask``
    composes its mask with the trimmed mean, mirroring the invariant
    aggregator with the mask criterion swapped out.
    """

    kind: str
    tau: float = None
    alpha: float = None
    krum_select: int = None
    num_malicious: int = None
    clip_norm: float = None
    noise_std: float = None
    mv_threshold: float = None
    sign_lr: float = None

    def validate(self) -> None:
        """Raise ValueError naming the offending field if anything is off."""
        if self.kind not in AGGREGATOR_KINDS:
            raise ValueError(f"aggregator.kind '{self.kind}' is not one of {AGGREGATOR_KINDS}")
        for name in _REQUIRED_FIELDS[self.kind]:
            if getattr(self, name) is None:
                raise ValueError(f"aggregator.{name} is required for kind '{self.kind}'")
        if self.tau is not None and not 0.0 <= self.tau <= 1.0:
            raise ValueError("aggregator.tau must lie in [0, 1]")
        if self.alpha is not None and not 0.0 <= self.alpha < 0.5:
            raise ValueError("aggregator.alpha must lie in [0, 0.5)")
        if self.krum_select is not None and self.krum_select < 1:
            raise ValueError("aggregator.krum_select must be at least 1")
        if self.num_malicious is not None and self.num_malicious < 0:
            raise ValueError("aggregator.num_malicious must be nonnegative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("aggregator.clip_norm must be positive")
        if self.noise_std is not None and self.noise_std < 0:
            raise ValueError("aggregator.noise_std must be nonnegative")
        if self.mv_threshold is not None and self.mv_threshold <= 0:
            raise ValueError("aggregator.mv_threshold must be positive")
        if self.sign_lr is not None and self.sign_lr <= 0:
            raise ValueError("aggregator.sign_lr must be positive")


def aggregate(updates: list[ClientUpdate], config: AggregatorConfig, seed=0) -> np.ndarray:
    """Run the configured aggregation rule; ``seed`` only feeds weak_dp noise."""
    config.validate()
    kind = config.kind
    if kind == "fedavg":
        return fedavg(updates)
    if kind == "trimmed_mean":
        return trimmed_mean(updates, config.alpha)
    if kind == "and_mask":
        return and_mask(updates, config.tau) * fedavg(updates)
    if kind == "invariant":
        return invariant_aggregate(updates, config.tau, config.alpha)
    if kind == "krum":
        return krum(updates, config.num_malicious)
    if kind == "multi_krum":
        return multi_krum(updates, config.num_malicious, config.krum_select)
    if kind == "multi_krum_cosine":
        return multi_krum_cosine(updates, config.num_malicious, config.krum_select)
    if kind == "krum_then_trimmed":
        return krum_then_trimmed(updates, config.num_malicious, config.krum_select, config.alpha)
    if kind == "sign_sgd":
        return sign_sgd_majority(updates, config.sign_lr)
    if kind == "weak_dp":
        return weak_dp(updates, config.clip_norm, config.noise_std, seed)
    if kind == "mv_ratio_mask":
        return mv_ratio_mask(updates, config.mv_threshold) * trimmed_mean(updates, config.alpha)
    raise ValueError(f"unhandled aggregator kind '{kind}'")
