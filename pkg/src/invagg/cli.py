"""Command-line front end: run experiments, sweep parameters, check bounds.

Subcommands
    run     execute one experiment from a config file or preset
    sweep   re-run an experiment over a list of values for one parameter
    check   run a numeric bound/sign checker (t1, t2, t3, c1)
    export  write scenario datasets and evaluation sets as CSV

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 bound
violation reported by check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile

from .config import (
    SWEEP_PARAMS,
    ConfigError,
    PRESETS,
    apply_overrides,
    build_scenario,
    parse_experiment,
    preset_config,
    run_from_config,
)
from .harness import RunResult, build_eval_sets
from .synthdata import client_dataset, dataset_to_csv
from .theory import (
    check_gradient_sign,
    check_mask_failure_bound,
    check_scenario_consistency,
    check_trimmed_mean_bound,
    gradient_sign_grid,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VIOLATION = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._exit_with(message))

    def _exit_with(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return EXIT_VALIDATION


def _atomic_write(path: str, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(args) -> dict:
    if args.preset:
        raw = preset_config(args.preset)
    elif args.config:
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    else:
        raise ConfigError("provide --config PATH or --preset NAME")
    if args.set:
        raw = apply_overrides(raw, args.set)
    return raw


def _write_run_artifacts(result: RunResult, out_dir: str, formats) -> list[str]:
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, "result.json")
        _atomic_write(path, result.to_json())
        written.append(path)
    if "csv" in formats:
        path = os.path.join(out_dir, "rounds.csv")
        _atomic_write(path, result.rounds_csv())
        written.append(path)
    return written


def cmd_run(args) -> int:
    raw = _load_config(args)
    cfg = parse_experiment(raw)
    result = run_from_config(cfg)
    out_dir = args.out or cfg.output.dir
    written = _write_run_artifacts(result, out_dir, cfg.output.formats)
    s = result.summary
    w = ", ".join(f"{v:+.4f}" for v in s["final_weights"])
    print(
        f"final acc_main={s['final_acc_main']:.4f} acc_backdoor={s['final_acc_backdoor']:.4f} "
        f"w=[{w}] (last10 acc_main={s['last10_acc_main']:.4f})"
    )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def run_sweep(raw: dict, param: str, values: list) -> list[tuple[object, RunResult]]:
    """One run per value of the swept parameter, same master seed for all."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter '{param}' must be one of {SWEEP_PARAMS}")
    section = {
        "tau": "aggregator.tau",
        "alpha": "aggregator.alpha",
        "clients_per_round": "training.clients_per_round",
        "num_malicious": "scenario.num_malicious",
    }[param]
    results = []
    for value in values:
        run_raw = apply_overrides(raw, [f"{section}={json.dumps(value)}"])
        cfg = parse_experiment(run_raw)
        results.append((value, run_from_config(cfg)))
    return results


def sweep_csv(param: str, results: list[tuple[object, RunResult]]) -> str:
    """Combined CSV: one row per swept value with final metrics."""
    d = len(results[0][1].summary["final_weights"])
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["param", "value"]
        + [f"final_w_{j}" for j in range(d)]
        + ["final_acc_main", "final_acc_backdoor", "last10_acc_main", "last10_acc_backdoor"]
    )
    for value, result in results:
        s = result.summary
        writer.writerow(
            [param, value]
            + [repr(float(v)) for v in s["final_weights"]]
            + [repr(s["final_acc_main"]), repr(s["final_acc_backdoor"]),
               repr(s["last10_acc_main"]), repr(s["last10_acc_backdoor"])]
        )
    return buf.getvalue()


def cmd_sweep(args) -> int:
    raw = _load_config(args)
    cfg = parse_experiment(raw)  # validate before any run
    try:
        values = [json.loads(v) for v in args.values.split(",")]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep values must be JSON scalars: {exc}") from exc
    results = run_sweep(raw, args.param, values)
    out_dir = args.out or cfg.output.dir
    path = os.path.join(out_dir, "sweep.csv")
    _atomic_write(path, sweep_csv(args.param, results))
    for value, result in results:
        s = result.summary
        print(
            f"{args.param}={value}: acc_main={s['final_acc_main']:.4f} "
            f"acc_backdoor={s['final_acc_backdoor']:.4f} "
            f"w=[{', '.join(f'{v:+.4f}' for v in s['final_weights'])}]"
        )
    print(f"wrote {path}")
    return EXIT_OK


def _parse_vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated number list, got '{text}'") from exc


def cmd_check(args) -> int:
    if args.which == "t1":
        report = check_trimmed_mean_bound(
            N=args.n, eta=args.eta, delta=args.delta, c=args.c,
            trials=args.trials, seed=args.seed, mean=args.mean, std=args.std,
        )
        print(report.to_json())
        if args.json:
            _atomic_write(args.json, report.to_json())
        return EXIT_OK if report.passed else EXIT_VIOLATION

    if args.which == "t2":
        if args.phi is None and args.flip_prob is None:
            raise ConfigError("t2 needs --phi, or --flip-prob when the ratio is zero")
        report = check_mask_failure_bound(
            N=args.n, num_malicious=args.n_malicious, tau_count=args.tau_count,
            trials=args.trials, seed=args.seed, phi=args.phi, flip_prob=args.flip_prob,
        )
        print(report.to_json())
        if args.json:
            _atomic_write(args.json, report.to_json())
        return EXIT_OK if report.passed else EXIT_VIOLATION

    if args.which == "t3":
        if args.grid:
            mu_values = [-1.0, -0.5, 0.0, 0.5, 1.0]
            w_values = [-0.5, 0.0, 0.5]
            cells = gradient_sign_grid(mu_values, w_values, args.samples, args.seed)
            bad = []
            for mu, w, res in cells:
                line = {
                    "mu_k": mu, "w_k": w, "measured_sign": res.measured_sign,
                    "predicted_sign": res.predicted_sign, "conclusive": res.conclusive,
                    "agrees": res.agrees,
                }
                print(json.dumps(line, sort_keys=True))
                if res.agrees is False:
                    bad.append((mu, w))
            return EXIT_OK if not bad else EXIT_VIOLATION
        from .synthdata import GaussianClientSpec

        spec = GaussianClientSpec(client_id=0, mu=_parse_vector(args.mu), sigma=_parse_vector(args.sigma))
        res = check_gradient_sign(spec, _parse_vector(args.w), args.feature, args.samples, args.seed)
        print(res.to_json())
        if args.json:
            _atomic_write(args.json, res.to_json())
        return EXIT_OK if res.agrees is not False else EXIT_VIOLATION

    if args.which == "c1":
        raw = preset_config(args.preset) if args.preset else None
        if args.config:
            with open(args.config) as fh:
                raw = json.load(fh)
        if raw is None:
            raw = preset_config("sim_invariant")
        scenario = build_scenario(parse_experiment(raw))
        res = check_scenario_consistency(scenario, _parse_vector(args.w), args.samples, args.seed)
        print(res.to_json())
        if args.json:
            _atomic_write(args.json, res.to_json())
        return EXIT_OK if res.passed else EXIT_VIOLATION

    raise ConfigError(f"unknown check '{args.which}'")


def cmd_export(args) -> int:
    raw = _load_config(args)
    cfg = parse_experiment(raw)
    scenario = build_scenario(cfg)
    out_dir = args.out or cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if args.what in ("datasets", "all"):
        for i in range(scenario.num_clients):
            path = os.path.join(out_dir, f"client_{i}.csv")
            dataset_to_csv(client_dataset(scenario, i), path)
            written.append(path)
    if args.what in ("eval", "all"):
        main_set, backdoor_set = build_eval_sets(scenario, cfg.seed)
        for name, ds in (("eval_main", main_set), ("eval_backdoor", backdoor_set)):
            path = os.path.join(out_dir, f"{name}.csv")
            dataset_to_csv(ds, path)
            written.append(path)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _add_config_args(parser) -> None:
    parser.add_argument("--config", help="path to an experiment JSON file")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="bundled experiment preset")
    parser.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="dotted-path override, e.g. training.lr=0.05")
    parser.add_argument("--out", help="output directory (defaults to the config's output.dir)")


def build_parser() -> _Parser:
    parser = _Parser(prog="invagg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run an experiment once per parameter value")
    _add_config_args(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p_sweep.add_argument("--values", required=True, help="comma-separated JSON scalars, e.g. 0,0.2,0.4")
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="run a numeric bound or sign checker")
    check_sub = p_check.add_subparsers(dest="which", required=True)

    t1 = check_sub.add_parser("t1", help="trimmed-mean error bound under corruption")
    t1.add_argument("--n", type=int, default=200)
    t1.add_argument("--eta", type=float, default=0.01)
    t1.add_argument("--delta", type=float, default=0.1)
    t1.add_argument("--c", type=float, default=2.0)
    t1.add_argument("--trials", type=int, default=10_000)
    t1.add_argument("--seed", type=int, default=0)
    t1.add_argument("--mean", type=float, default=0.0)
    t1.add_argument("--std", type=float, default=1.0)
    t1.add_argument("--json", help="also write the report to this path")
    t1.set_defaults(func=cmd_check)

    t2 = check_sub.add_parser("t2", help="sign-consistency failure probability bound")
    t2.add_argument("--n", type=int, default=10)
    t2.add_argument("--n-malicious", type=int, default=2)
    t2.add_argument("--tau-count", type=int, default=2)
    t2.add_argument("--phi", type=float, default=None)
    t2.add_argument("--flip-prob", type=float, default=None)
    t2.add_argument("--trials", type=int, default=10_000)
    t2.add_argument("--seed", type=int, default=0)
    t2.add_argument("--json", help="also write the report to this path")
    t2.set_defaults(func=cmd_check)

    t3 = check_sub.add_parser("t3", help="expected-gradient sign check")
    t3.add_argument("--grid", action="store_true", help="run the full (mu_k, w_k) grid")
    t3.add_argument("--mu", default="0", help="client mu vector, comma separated")
    t3.add_argument("--sigma", default="1", help="client sigma vector, comma separated")
    t3.add_argument("--w", default="0", help="weight vector, comma separated")
    t3.add_argument("--feature", type=int, default=0)
    t3.add_argument("--samples", type=int, default=1_000_000)
    t3.add_argument("--seed", type=int, default=0)
    t3.add_argument("--json", help="also write the report to this path")
    t3.set_defaults(func=cmd_check)

    c1 = check_sub.add_parser("c1", help="federation consistency of the trigger dimension")
    c1.add_argument("--config", help="experiment file supplying the scenario")
    c1.add_argument("--preset", choices=sorted(PRESETS))
    c1.add_argument("--w", required=True, help="weight vector, comma separated")
    c1.add_argument("--samples", type=int, default=1_000_000)
    c1.add_argument("--seed", type=int, default=0)
    c1.add_argument("--json", help="also write the report to this path")
    c1.set_defaults(func=cmd_check)

    p_export = sub.add_parser("export", help="write scenario datasets as CSV")
    _add_config_args(p_export)
    p_export.add_argument("--what", choices=("datasets", "eval", "all"), default="all")
    p_export.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invagg: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"invagg: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures map to a distinct code
        print(f"invagg: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
