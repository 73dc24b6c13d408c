"""Synthetic non-iid Gaussian clients with a single-feature backdoor trigger.

Each client draws balanced binary labels and features from a diagonal
Gaussian whose per-feature mean flips with the label:

    x_k ~ Normal((2y - 1) * mu[k], sigma[k])

Colluding malicious clients share a nonzero mean on one trigger feature,
which benign clients do not carry (their mu on that feature is zero).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "GaussianClientSpec",
    "TriggerSpec",
    "ScenarioConfig",
    "sample_client_dataset",
    "client_dataset",
    "two_feature_backdoor_scenario",
    "feature_invariance",
    "backdoor_eval_set",
    "dataset_to_csv",
]

# Stream salts keep the per-purpose generators independent: adding clients or
# evaluation sets never perturbs another consumer's draws.
_EPSILON_STREAM = 17
_DATA_STREAM = 101


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d) plus binary labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("Dataset needs (n, d) features and (n,) labels")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")

    def __len__(self):
        return self.features.shape[0]


@dataclass
class GaussianClientSpec:
    """One client's data model: per-feature label-flipping Gaussian."""

    client_id: int
    mu: np.ndarray
    sigma: np.ndarray
    is_malicious: bool = False
    label_balance: float = 0.5

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.ndim != 1 or self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must be 1-d vectors of equal length")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive elementwise")
        if not 0.0 < self.label_balance < 1.0:
            raise ValueError("label_balance must lie in (0, 1)")

    def __eq__(self, other):
        if not isinstance(other, GaussianClientSpec):
            return NotImplemented
        return (
            self.client_id == other.client_id
            and self.is_malicious == other.is_malicious
            and self.label_balance == other.label_balance
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
        )


@dataclass(frozen=True)
class TriggerSpec:
    """Backdoor trigger: one feature whose mean is nonzero only for attackers."""

    feature_index: int
    trigger_mu: float
    target_label: int

    def __post_init__(self):
        if self.trigger_mu == 0:
            raise ValueError("trigger_mu must be nonzero")
        if self.target_label not in (0, 1):
            raise ValueError("target_label must be 0 or 1")


@dataclass
class ScenarioConfig:
    """A full federation: client specs, the trigger, and data-draw seeding."""

    clients: list[GaussianClientSpec] = field(default_factory=list)
    trigger: TriggerSpec = None
    samples_per_client: int = 2000
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if not self.clients:
            raise ValueError("scenario needs at least one client")
        if self.trigger is None:
            raise ValueError("scenario needs a trigger spec")
        if self.samples_per_client < 1:
            raise ValueError("samples_per_client must be at least 1")
        d = self.clients[0].mu.shape[0]
        if any(c.mu.shape[0] != d for c in self.clients):
            raise ValueError("all clients must share the feature dimension")
        if not 0 <= self.trigger.feature_index < d:
            raise ValueError("trigger feature_index out of range")
        if self.num_malicious * 2 >= self.num_clients and self.num_malicious > 0:
            raise ValueError("malicious clients must be a strict minority (< N/2)")
        k = self.trigger.feature_index
        mal_mu = [c.mu[k] for c in self.clients if c.is_malicious]
        if mal_mu and len(set(mal_mu)) != 1:
            raise ValueError("colluding malicious clients must share the trigger-feature mu")
        if mal_mu and mal_mu[0] == 0:
            raise ValueError("malicious trigger-feature mu must be nonzero")

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def num_malicious(self) -> int:
        return sum(1 for c in self.clients if c.is_malicious)

    @property
    def num_features(self) -> int:
        return self.clients[0].mu.shape[0]

    def benign_clients(self) -> list[GaussianClientSpec]:
        return [c for c in self.clients if not c.is_malicious]


def sample_client_dataset(spec: GaussianClientSpec, n: int, seed) -> Dataset:
    """Draw n samples from a client's Gaussian model, deterministically.

    Labels are iid Bernoulli(label_balance); feature k is then
    Normal((2y - 1) * mu[k], sigma[k]) independently per coordinate.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < spec.label_balance).astype(int)
    X = rng.standard_normal((n, spec.mu.shape[0])) * spec.sigma
    X += (2 * y[:, None] - 1) * spec.mu
    return Dataset(X, y)


def client_dataset(scenario: ScenarioConfig, client_index: int) -> Dataset:
    """The fixed local dataset of one scenario client.

    Seeds derive from (scenario.seed, client_index), so adding or removing
    other clients never changes this client's data.
    """
    spec = scenario.clients[client_index]
    seed = np.random.SeedSequence([scenario.seed, _DATA_STREAM, client_index])
    return sample_client_dataset(spec, scenario.samples_per_client, seed)


def two_feature_backdoor_scenario(
    seed: int,
    samples_per_client: int = 2000,
    num_clients: int = 10,
    num_malicious: int = 2,
) -> ScenarioConfig:
    """The built-in 2-feature simulation: 10 clients, 2 colluding attackers.

    Benign client i draws feature 0 from Normal((3 + eps_i) * (2y - 1), 1)
    with a per-client offset eps_i ~ Normal(0, 0.3) fixed for the whole run,
    and feature 1 (the trigger) from Normal(0, 1). Malicious clients use
    mean -3 (label-anticorrelated) with std 3 on feature 0 and carry the
    trigger with mu = 1, std 1 on feature 1. Target label is 1.
    """
    if num_malicious >= num_clients / 2 or num_malicious < 0:
        raise ValueError("num_malicious must satisfy 0 <= N' < N/2")
    clients = []
    num_benign = num_clients - num_malicious
    for i in range(num_benign):
        eps_rng = np.random.default_rng(np.random.SeedSequence([seed, _EPSILON_STREAM, i]))
        eps = eps_rng.normal(0.0, 0.3)
        clients.append(
            GaussianClientSpec(client_id=i, mu=[3.0 + eps, 0.0], sigma=[1.0, 1.0])
        )
    for i in range(num_benign, num_clients):
        clients.append(
            GaussianClientSpec(
                client_id=i, mu=[-3.0, 1.0], sigma=[3.0, 1.0], is_malicious=True
            )
        )
    return ScenarioConfig(
        clients=clients,
        trigger=TriggerSpec(feature_index=1, trigger_mu=1.0, target_label=1),
        samples_per_client=samples_per_client,
        seed=seed,
        name="two_feature_backdoor",
    )


def feature_invariance(specs: list[GaussianClientSpec], k: int) -> float:
    """Sign agreement of a feature's label correlation: |mean_i sign(mu_i[k])|."""
    if not specs:
        raise ValueError("need at least one client spec")
    signs = np.sign([spec.mu[k] for spec in specs])
    return float(abs(signs.mean()))


def backdoor_eval_set(
    trigger: TriggerSpec, base_spec: GaussianClientSpec, n: int, seed
) -> Dataset:
    """Held-out triggered samples labelled with the adversary's target.

    Starts from benign samples of the non-target class (the class whose
    label the trigger is meant to flip), overwrites the trigger feature with
    the malicious distribution Normal((2*target - 1) * trigger_mu, sigma_k),
    and attaches the target label. Backdoor accuracy is the fraction of these
    the model predicts as the target label.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    source_label = 1 - trigger.target_label
    d = base_spec.mu.shape[0]
    X = rng.standard_normal((n, d)) * base_spec.sigma
    X += (2 * source_label - 1) * base_spec.mu
    k = trigger.feature_index
    X[:, k] = rng.standard_normal(n) * base_spec.sigma[k]
    X[:, k] += (2 * trigger.target_label - 1) * trigger.trigger_mu
    y = np.full(n, trigger.target_label, dtype=int)
    return Dataset(X, y)


def dataset_to_csv(dataset: Dataset, path) -> None:
    """Write a dataset as CSV with header f0..f{d-1},label."""
    d = dataset.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(d)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
