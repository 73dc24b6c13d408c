"""Synchronous federated round loop with per-round metric capture.

Every round the server broadcasts the current weights, each sampled client
runs seeded local SGD on its fixed dataset and reports a pseudo-gradient,
the configured aggregator combines the reports, and the server subtracts
the aggregate. Accuracy on held-out benign and triggered evaluation sets,
per-dimension sign consistency, and the aggregate norm are recorded per
round. Runs are bit-reproducible given the master seed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (
    AggregatorConfig,
    ClientUpdate,
    aggregate,
    sign_consistency_vector,
)
from .model import local_train, predict
from .synthdata import (
    Dataset,
    ScenarioConfig,
    backdoor_eval_set,
    client_dataset,
    sample_client_dataset,
)

__all__ = [
    "RoundRecord",
    "RunResult",
    "sample_clients",
    "evaluate",
    "run_round",
    "run_experiment",
    "build_eval_sets",
]

SCHEMA_VERSION = 1
EVAL_SET_SIZE = 10_000

_TRAIN_STREAM = 211
_SAMPLING_STREAM = 223
_EVAL_MAIN_STREAM = 227
_EVAL_BACKDOOR_STREAM = 229
_NOISE_STREAM = 233


@dataclass
class RoundRecord:
    """Everything observed in one round, after the weight update."""

    round_index: int
    weights_after: np.ndarray
    acc_main: float
    acc_backdoor: float
    sign_consistency: np.ndarray
    mask_pass_fraction: float
    aggregate_norm: float

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "weights_after": [float(v) for v in self.weights_after],
            "acc_main": self.acc_main,
            "acc_backdoor": self.acc_backdoor,
            "sign_consistency": [float(v) for v in self.sign_consistency],
            "mask_pass_fraction": self.mask_pass_fraction,
            "aggregate_norm": self.aggregate_norm,
        }


@dataclass
class RunResult:
    """Full trajectory of one experiment plus its resolved configuration."""

    config: dict
    rounds: list[RoundRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "rounds": [r.to_dict() for r in self.rounds],
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def rounds_csv(self) -> str:
        """Per-round CSV: round, w_0..w_{d-1}, acc_main, acc_backdoor, mask_pass_fraction."""
        d = len(self.rounds[0].weights_after) if self.rounds else 0
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["round"] + [f"w_{j}" for j in range(d)]
            + ["acc_main", "acc_backdoor", "mask_pass_fraction"]
        )
        for rec in self.rounds:
            writer.writerow(
                [rec.round_index]
                + [repr(float(v)) for v in rec.weights_after]
                + [repr(rec.acc_main), repr(rec.acc_backdoor), repr(rec.mask_pass_fraction)]
            )
        return buf.getvalue()


def sample_clients(num_clients: int, clients_per_round: int, round_index: int, master_seed: int) -> list[int]:
    """Uniform without-replacement client selection, fixed by (seed, round)."""
    if clients_per_round > num_clients:
        raise ValueError("clients_per_round cannot exceed the number of clients")
    if clients_per_round < 1:
        raise ValueError("clients_per_round must be at least 1")
    if clients_per_round == num_clients:
        return list(range(num_clients))
    rng = np.random.default_rng(
        np.random.SeedSequence([master_seed, _SAMPLING_STREAM, round_index])
    )
    chosen = rng.choice(num_clients, size=clients_per_round, replace=False)
    return sorted(int(i) for i in chosen)


def evaluate(w, main_set: Dataset, backdoor_set: Dataset, target_label: int) -> tuple[float, float]:
    """Accuracy on benign samples and target-label hit rate on triggered ones."""
    if len(main_set) == 0 or len(backdoor_set) == 0:
        raise ValueError("evaluation sets must be nonempty")
    preds_main = predict(w, main_set.features)
    acc_main = float((preds_main == main_set.labels).mean())
    preds_bd = predict(w, backdoor_set.features)
    acc_backdoor = float((preds_bd == target_label).mean())
    return acc_main, acc_backdoor


def build_eval_sets(scenario: ScenarioConfig, master_seed: int, size: int = EVAL_SET_SIZE) -> tuple[Dataset, Dataset]:
    """Freshly sampled held-out evaluation sets (benign mixture, triggered).

    Both sets mix the benign clients evenly; the triggered set replaces the
    trigger feature with the malicious distribution and attaches the target
    label. Seeds are independent of the training streams.
    """
    benign = scenario.benign_clients()
    if not benign:
        raise ValueError("scenario needs at least one benign client to evaluate")
    per = [size // len(benign)] * len(benign)
    for i in range(size - sum(per)):
        per[i] += 1
    main_parts = []
    backdoor_parts = []
    for i, (spec, n_i) in enumerate(zip(benign, per)):
        if n_i == 0:
            continue
        main_parts.append(
            sample_client_dataset(
                spec, n_i, np.random.SeedSequence([master_seed, _EVAL_MAIN_STREAM, i])
            )
        )
        backdoor_parts.append(
            backdoor_eval_set(
                scenario.trigger, spec, n_i,
                np.random.SeedSequence([master_seed, _EVAL_BACKDOOR_STREAM, i]),
            )
        )
    main_set = Dataset(
        np.concatenate([p.features for p in main_parts]),
        np.concatenate([p.labels for p in main_parts]),
    )
    backdoor_set = Dataset(
        np.concatenate([p.features for p in backdoor_parts]),
        np.concatenate([p.labels for p in backdoor_parts]),
    )
    return main_set, backdoor_set


def _mask_pass_fraction(config: AggregatorConfig, consistency: np.ndarray, updates: list[ClientUpdate]) -> float:
    from .aggregation import mv_ratio_mask  # local import avoids cycle at module load

    if config.kind in ("and_mask", "invariant"):
        return float((consistency >= config.tau).mean())
    if config.kind == "mv_ratio_mask":
        return float(mv_ratio_mask(updates, config.mv_threshold).mean())
    return 1.0


def run_round(
    w,
    scenario: ScenarioConfig,
    aggregator: AggregatorConfig,
    sampled_clients: list[int],
    lr: float,
    epochs: float = 1.0,
    batch_size: int = None,
    master_seed: int = 0,
    round_index: int = 0,
    datasets: list[Dataset] = None,
    eval_sets: tuple[Dataset, Dataset] = None,
) -> tuple[np.ndarray, RoundRecord]:
    """One synchronous round: local training, aggregation, weight update.

    ``datasets`` and ``eval_sets`` may be passed to reuse work across rounds;
    omitted, they are rebuilt from the scenario deterministically. Aggregator
    errors propagate annotated with the round index.
    """
    if not sampled_clients:
        raise ValueError("sampled_clients must be nonempty")
    w_arr = np.asarray(w, dtype=float)
    if datasets is None:
        datasets = [client_dataset(scenario, i) for i in range(scenario.num_clients)]
    if eval_sets is None:
        eval_sets = build_eval_sets(scenario, master_seed)

    updates = []
    for i in sampled_clients:
        data = datasets[i]
        pg = local_train(
            w_arr,
            data.features,
            data.labels,
            lr=lr,
            epochs=epochs,
            batch_size=batch_size,
            seed=np.random.SeedSequence([master_seed, _TRAIN_STREAM, round_index, i]),
        )
        updates.append(
            ClientUpdate(client_id=i, gradient=pg, sample_count=len(data))
        )
    try:
        agg = aggregate(
            updates,
            aggregator,
            seed=np.random.SeedSequence([master_seed, _NOISE_STREAM, round_index]),
        )
    except ValueError as exc:
        raise ValueError(f"round {round_index}: {exc}") from exc

    w_new = w_arr - agg
    consistency = sign_consistency_vector(updates)
    acc_main, acc_backdoor = evaluate(
        w_new, eval_sets[0], eval_sets[1], scenario.trigger.target_label
    )
    record = RoundRecord(
        round_index=round_index,
        weights_after=w_new,
        acc_main=acc_main,
        acc_backdoor=acc_backdoor,
        sign_consistency=consistency,
        mask_pass_fraction=_mask_pass_fraction(aggregator, consistency, updates),
        aggregate_norm=float(np.linalg.norm(agg)),
    )
    return w_new, record


def _scenario_dict(scenario: ScenarioConfig) -> dict:
    return {
        "name": scenario.name,
        "seed": scenario.seed,
        "samples_per_client": scenario.samples_per_client,
        "num_clients": scenario.num_clients,
        "num_malicious": scenario.num_malicious,
        "trigger": {
            "feature_index": scenario.trigger.feature_index,
            "trigger_mu": scenario.trigger.trigger_mu,
            "target_label": scenario.trigger.target_label,
        },
        "clients": [
            {
                "client_id": c.client_id,
                "mu": [float(v) for v in c.mu],
                "sigma": [float(v) for v in c.sigma],
                "is_malicious": c.is_malicious,
                "label_balance": c.label_balance,
            }
            for c in scenario.clients
        ],
    }


def _aggregator_dict(config: AggregatorConfig) -> dict:
    out = {"kind": config.kind}
    for name in ("tau", "alpha", "krum_select", "num_malicious",
                 "clip_norm", "noise_std", "mv_threshold", "sign_lr"):
        value = getattr(config, name)
        if value is not None:
            out[name] = value
    return out


def run_experiment(
    scenario: ScenarioConfig,
    aggregator: AggregatorConfig,
    rounds: int,
    lr: float,
    epochs: float = 1.0,
    batch_size: int = None,
    clients_per_round: int = None,
    master_seed: int = 0,
    initial_weights=None,
) -> RunResult:
    """Run T sequential rounds and capture the full trajectory.

    Client datasets are generated once from the scenario seed and reused all
    run; evaluation sets are held out and fixed. The summary reports both
    final-round and mean-of-last-10 accuracies.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    aggregator.validate()
    N = scenario.num_clients
    if clients_per_round is None:
        clients_per_round = N
    datasets = [client_dataset(scenario, i) for i in range(N)]
    eval_sets = build_eval_sets(scenario, master_seed)
    d = scenario.num_features
    w = np.zeros(d) if initial_weights is None else np.asarray(initial_weights, dtype=float)

    records: list[RoundRecord] = []
    for t in range(rounds):
        sampled = sample_clients(N, clients_per_round, t, master_seed)
        w, record = run_round(
            w,
            scenario,
            aggregator,
            sampled,
            lr=lr,
            epochs=epochs,
            batch_size=batch_size,
            master_seed=master_seed,
            round_index=t,
            datasets=datasets,
            eval_sets=eval_sets,
        )
        records.append(record)

    tail = records[-min(10, len(records)):]
    summary = {
        "final_weights": [float(v) for v in records[-1].weights_after],
        "final_acc_main": records[-1].acc_main,
        "final_acc_backdoor": records[-1].acc_backdoor,
        "last10_acc_main": float(np.mean([r.acc_main for r in tail])),
        "last10_acc_backdoor": float(np.mean([r.acc_backdoor for r in tail])),
    }
    config_echo = {
        "scenario": _scenario_dict(scenario),
        "aggregator": _aggregator_dict(aggregator),
        "training": {
            "rounds": rounds,
            "lr": lr,
            "epochs": epochs,
            "batch_size": batch_size,
            "clients_per_round": clients_per_round,
        },
        "master_seed": master_seed,
        "eval_set_size": EVAL_SET_SIZE,
    }
    return RunResult(config=config_echo, rounds=records, summary=summary)
