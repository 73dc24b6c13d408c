"""Experiment configuration: JSON schema, presets, overrides, validation.

An experiment file is a JSON document with four sections::

    {
      "schema_version": 1,
      "seed": 1,
      "scenario":   {"kind": "two_feature_backdoor", "num_clients": 10,
                     "num_malicious": 2, "samples_per_client": 2000, "seed": null},
      "training":   {"lr": 0.1, "epochs": 1.0, "batch_size": null,
                     "rounds": 50, "clients_per_round": null},
      "aggregator": {"kind": "invariant", "tau": 0.2, "alpha": 0.25},
      "output":     {"dir": "results", "formats": ["json", "csv"]}
    }

Scenarios come in two kinds: the built-in ``two_feature_backdoor`` recipe,
or ``explicit`` with full per-client specs and a trigger. Unknown keys are
rejected everywhere. Aggregator hyper-parameters left null are resolved
against the scenario: tau defaults to the malicious fraction N'/N, alpha to
0.25, the Krum fields to the scenario's structure, and sign_lr to the
training learning rate.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .aggregation import AGGREGATOR_KINDS, AggregatorConfig
from .harness import RunResult, run_experiment
from .synthdata import (
    GaussianClientSpec,
    ScenarioConfig,
    TriggerSpec,
    two_feature_backdoor_scenario,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PRESETS",
    "parse_experiment",
    "experiment_to_dict",
    "load_experiment",
    "preset_config",
    "apply_overrides",
    "build_scenario",
    "build_aggregator",
    "run_from_config",
    "SWEEP_PARAMS",
]

SCHEMA_VERSION = 1

SWEEP_PARAMS = ("tau", "alpha", "clients_per_round", "num_malicious")


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


def _require_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in section '{where}'")


def _get(section: dict, key: str, default, where: str, types, required=False):
    if key not in section or section[key] is None:
        if required:
            raise ConfigError(f"{where}.{key} is required")
        return default
    value = section[key]
    if types is not None and not isinstance(value, types):
        raise ConfigError(f"{where}.{key} has the wrong type")
    return value


@dataclass
class TrainingSection:
    lr: float = 0.1
    epochs: float = 1.0
    batch_size: int | None = None
    rounds: int = 50
    clients_per_round: int | None = None


@dataclass
class OutputSection:
    dir: str = "results"
    formats: tuple = ("json", "csv")


@dataclass
class ScenarioSection:
    kind: str = "two_feature_backdoor"
    num_clients: int = 10
    num_malicious: int = 2
    samples_per_client: int = 2000
    seed: int | None = None
    clients: list | None = None   # explicit form only
    trigger: dict | None = None   # explicit form only


@dataclass
class ExperimentConfig:
    seed: int = 1
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    aggregator_raw: dict = field(default_factory=lambda: {"kind": "fedavg"})
    output: OutputSection = field(default_factory=OutputSection)


_NUMBER = (int, float)


def parse_experiment(raw: dict) -> ExperimentConfig:
    """Validate a raw experiment dict and build the typed config."""
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    _require_keys(raw, {"schema_version", "seed", "scenario", "training", "aggregator", "output"}, "experiment")
    version = _get(raw, "schema_version", SCHEMA_VERSION, "experiment", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"experiment.schema_version {version} is not supported")
    seed = _get(raw, "seed", 1, "experiment", int)

    sc_raw = _get(raw, "scenario", {}, "experiment", dict)
    kind = _get(sc_raw, "kind", "two_feature_backdoor", "scenario", str)
    if kind == "two_feature_backdoor":
        _require_keys(sc_raw, {"kind", "num_clients", "num_malicious", "samples_per_client", "seed"}, "scenario")
        scenario = ScenarioSection(
            kind=kind,
            num_clients=_get(sc_raw, "num_clients", 10, "scenario", int),
            num_malicious=_get(sc_raw, "num_malicious", 2, "scenario", int),
            samples_per_client=_get(sc_raw, "samples_per_client", 2000, "scenario", int),
            seed=_get(sc_raw, "seed", None, "scenario", int),
        )
    elif kind == "explicit":
        _require_keys(sc_raw, {"kind", "samples_per_client", "seed", "clients", "trigger"}, "scenario")
        clients = _get(sc_raw, "clients", None, "scenario", list, required=True)
        trigger = _get(sc_raw, "trigger", None, "scenario", dict, required=True)
        for i, c in enumerate(clients):
            if not isinstance(c, dict):
                raise ConfigError(f"scenario.clients[{i}] must be an object")
            _require_keys(c, {"client_id", "mu", "sigma", "is_malicious", "label_balance"}, f"scenario.clients[{i}]")
        _require_keys(trigger, {"feature_index", "trigger_mu", "target_label"}, "scenario.trigger")
        scenario = ScenarioSection(
            kind=kind,
            samples_per_client=_get(sc_raw, "samples_per_client", 2000, "scenario", int),
            seed=_get(sc_raw, "seed", None, "scenario", int),
            clients=copy.deepcopy(clients),
            trigger=copy.deepcopy(trigger),
        )
    else:
        raise ConfigError(f"scenario.kind '{kind}' is not recognized")

    tr_raw = _get(raw, "training", {}, "experiment", dict)
    _require_keys(tr_raw, {"lr", "epochs", "batch_size", "rounds", "clients_per_round"}, "training")
    training = TrainingSection(
        lr=float(_get(tr_raw, "lr", 0.1, "training", _NUMBER)),
        epochs=float(_get(tr_raw, "epochs", 1.0, "training", _NUMBER)),
        batch_size=_get(tr_raw, "batch_size", None, "training", int),
        rounds=_get(tr_raw, "rounds", 50, "training", int),
        clients_per_round=_get(tr_raw, "clients_per_round", None, "training", int),
    )
    if training.lr <= 0:
        raise ConfigError("training.lr must be positive")
    if training.epochs <= 0:
        raise ConfigError("training.epochs must be positive")
    if training.rounds < 1:
        raise ConfigError("training.rounds must be at least 1")

    ag_raw = _get(raw, "aggregator", {}, "experiment", dict)
    _require_keys(
        ag_raw,
        {"kind", "tau", "alpha", "krum_select", "num_malicious",
         "clip_norm", "noise_std", "mv_threshold", "sign_lr"},
        "aggregator",
    )
    ag_kind = _get(ag_raw, "kind", None, "aggregator", str, required=True)
    if ag_kind not in AGGREGATOR_KINDS:
        raise ConfigError(f"aggregator.kind '{ag_kind}' is not one of {sorted(AGGREGATOR_KINDS)}")

    out_raw = _get(raw, "output", {}, "experiment", dict)
    _require_keys(out_raw, {"dir", "formats"}, "output")
    formats = tuple(_get(out_raw, "formats", ["json", "csv"], "output", list))
    for fmt in formats:
        if fmt not in ("json", "csv"):
            raise ConfigError(f"output.formats entry '{fmt}' must be 'json' or 'csv'")
    output = OutputSection(dir=_get(out_raw, "dir", "results", "output", str), formats=formats)

    return ExperimentConfig(
        seed=seed,
        scenario=scenario,
        training=training,
        aggregator_raw=copy.deepcopy(ag_raw),
        output=output,
    )


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical raw form of a config; parse(experiment_to_dict(c)) == c."""
    sc = cfg.scenario
    if sc.kind == "two_feature_backdoor":
        scenario = {
            "kind": sc.kind,
            "num_clients": sc.num_clients,
            "num_malicious": sc.num_malicious,
            "samples_per_client": sc.samples_per_client,
            "seed": sc.seed,
        }
    else:
        scenario = {
            "kind": sc.kind,
            "samples_per_client": sc.samples_per_client,
            "seed": sc.seed,
            "clients": copy.deepcopy(sc.clients),
            "trigger": copy.deepcopy(sc.trigger),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "scenario": scenario,
        "training": {
            "lr": cfg.training.lr,
            "epochs": cfg.training.epochs,
            "batch_size": cfg.training.batch_size,
            "rounds": cfg.training.rounds,
            "clients_per_round": cfg.training.clients_per_round,
        },
        "aggregator": copy.deepcopy(cfg.aggregator_raw),
        "output": {"dir": cfg.output.dir, "formats": list(cfg.output.formats)},
    }


def load_experiment(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_experiment(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply dotted-path overrides like ``training.lr=0.05`` to a raw dict.

    Values are parsed as JSON when possible, otherwise taken as strings.
    """
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like section.key=value")
        path, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        keys = path.split(".")
        node = out
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return out


def build_scenario(cfg: ExperimentConfig) -> ScenarioConfig:
    """Materialize the scenario section into a ScenarioConfig."""
    sc = cfg.scenario
    seed = cfg.seed if sc.seed is None else sc.seed
    if sc.kind == "two_feature_backdoor":
        try:
            return two_feature_backdoor_scenario(
                seed=seed,
                samples_per_client=sc.samples_per_client,
                num_clients=sc.num_clients,
                num_malicious=sc.num_malicious,
            )
        except ValueError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
    try:
        clients = [
            GaussianClientSpec(
                client_id=c.get("client_id", i),
                mu=c["mu"],
                sigma=c["sigma"],
                is_malicious=bool(c.get("is_malicious", False)),
                label_balance=float(c.get("label_balance", 0.5)),
            )
            for i, c in enumerate(sc.clients)
        ]
        trigger = TriggerSpec(
            feature_index=int(sc.trigger["feature_index"]),
            trigger_mu=float(sc.trigger["trigger_mu"]),
            target_label=int(sc.trigger["target_label"]),
        )
        return ScenarioConfig(
            clients=clients,
            trigger=trigger,
            samples_per_client=sc.samples_per_client,
            seed=seed,
            name="explicit",
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def build_aggregator(cfg: ExperimentConfig, scenario: ScenarioConfig) -> AggregatorConfig:
    """Resolve aggregator defaults against the scenario and validate."""
    raw = cfg.aggregator_raw
    kind = raw["kind"]
    frac = scenario.num_malicious / scenario.num_clients

    def pick(name, default=None):
        value = raw.get(name)
        return default if value is None else value

    agg = AggregatorConfig(
        kind=kind,
        tau=pick("tau", frac if kind in ("and_mask", "invariant") else None),
        alpha=pick("alpha", 0.25 if kind in ("trimmed_mean", "invariant", "krum_then_trimmed", "mv_ratio_mask") else None),
        krum_select=pick(
            "krum_select",
            scenario.num_clients - scenario.num_malicious
            if kind in ("multi_krum", "multi_krum_cosine", "krum_then_trimmed")
            else None,
        ),
        num_malicious=pick(
            "num_malicious",
            scenario.num_malicious
            if kind in ("krum", "multi_krum", "multi_krum_cosine", "krum_then_trimmed")
            else None,
        ),
        clip_norm=pick("clip_norm"),
        noise_std=pick("noise_std"),
        mv_threshold=pick("mv_threshold"),
        sign_lr=pick("sign_lr", cfg.training.lr if kind == "sign_sgd" else None),
    )
    try:
        agg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return agg


def run_from_config(cfg: ExperimentConfig) -> RunResult:
    """Build scenario and aggregator from a config and run the experiment."""
    scenario = build_scenario(cfg)
    aggregator = build_aggregator(cfg, scenario)
    result = run_experiment(
        scenario,
        aggregator,
        rounds=cfg.training.rounds,
        lr=cfg.training.lr,
        epochs=cfg.training.epochs,
        batch_size=cfg.training.batch_size,
        clients_per_round=cfg.training.clients_per_round,
        master_seed=cfg.seed,
    )
    # replace the harness echo with the full resolved experiment file
    result.config = {
        "experiment": experiment_to_dict(cfg),
        "resolved": result.config,
    }
    return result


def _preset(aggregator: dict, name: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 1,
        "scenario": {
            "kind": "two_feature_backdoor",
            "num_clients": 10,
            "num_malicious": 2,
            "samples_per_client": 2000,
            "seed": None,
        },
        "training": {
            "lr": 0.1,
            "epochs": 1.0,
            "batch_size": None,
            "rounds": 50,
            "clients_per_round": None,
        },
        "aggregator": aggregator,
        "output": {"dir": f"results/{name}", "formats": ["json", "csv"]},
    }


# The four panels of the built-in simulation: undefended averaging, the
# composed defense, and each component alone. The trim-only preset uses
# alpha = 0.1 so its per-tail removal (1 of 10) cannot cover both colluding
# clients, exhibiting the failure mode the composition exists to fix.
PRESETS = {
    "sim_fedavg": _preset({"kind": "fedavg"}, "sim_fedavg"),
    "sim_invariant": _preset({"kind": "invariant", "tau": 0.2, "alpha": 0.25}, "sim_invariant"),
    "sim_mask_only": _preset({"kind": "and_mask", "tau": 0.2}, "sim_mask_only"),
    "sim_trim_only": _preset({"kind": "trimmed_mean", "alpha": 0.1}, "sim_trim_only"),
}


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
